from .pfm import read_pfm, write_pfm
from .ply import read_obj, read_ply, write_ply

__all__ = ["read_pfm", "write_pfm", "read_ply", "write_ply", "read_obj"]
