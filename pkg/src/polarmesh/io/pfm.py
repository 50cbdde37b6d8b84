"""PFM (portable float map) reader/writer.

Little-endian, scale -1.0, rows stored bottom-to-top as usual for PFM.
'Pf' holds one channel, 'PF' three.
"""

from __future__ import annotations

import numpy as np


class PFMError(IOError):
    pass


def write_pfm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        header = b"Pf"
    elif image.ndim == 3 and image.shape[2] == 3:
        header = b"PF"
    else:
        raise PFMError(f"expected HxW or HxWx3 array, got shape {image.shape}")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(image[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise PFMError(f"{path}: not a PFM file (header {header!r})")
        dims = f.readline().split()
        if len(dims) != 2:
            raise PFMError(f"{path}: bad dimension line")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        count = w * h * channels
        data = np.frombuffer(f.read(count * 4), dtype=dtype)
        if data.size != count:
            raise PFMError(f"{path}: truncated payload")
    img = data.reshape(h, w, channels)[::-1]
    if abs(scale) not in (0.0, 1.0):
        img = img * abs(scale)
    return np.ascontiguousarray(img[..., 0] if channels == 1 else img)
