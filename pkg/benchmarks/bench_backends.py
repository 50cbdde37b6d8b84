"""Timing comparison of the compiled loop kernels against the numpy fallback.

Run:  python3 benchmarks/bench_backends.py [--cameras N] [--subdivisions K]

Measures the full cost evaluation (data terms + smoothness terms) and the
sparse gradient on a synthetic sphere scene with both backends. The
compiled path is skipped when numba is unavailable or disabled via
POLARMESH_DISABLE_NUMBA=1.
"""

import argparse
import time

import numpy as np


def _build(n_cameras, subdivisions):
    from polarmesh.cost import CostOptions, CostProblem, ParamState, ViewImages
    from polarmesh.mesh import compute_visibility, icosphere
    from polarmesh.synth import SyntheticScene, render_views

    scene = SyntheticScene(n_cameras=n_cameras)
    sets, _, cams = render_views(scene)
    mesh = icosphere(subdivisions, scene.radius)
    compute_visibility(mesh, cams, min_facing=0.25)
    images = ViewImages.from_sets(sets)
    problem = CostProblem(mesh, cams, images, CostOptions())
    rng = np.random.default_rng(0)
    state = ParamState(
        mesh.vertices + rng.normal(scale=2e-3, size=mesh.vertices.shape),
        rng.uniform(0.2, 0.8, size=(mesh.n_vertices, 3)),
        np.tile(np.concatenate([scene.illumination.basis, scene.illumination.scale]),
                (len(cams), 1)))
    return problem, state


def _time(fn, repeats):
    fn()  # warm-up (JIT compilation on the compiled path)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench(backend_label, n_cameras, subdivisions, repeats):
    problem, state = _build(n_cameras, subdivisions)
    t_cost = _time(lambda: problem.breakdown(state), repeats)
    t_grad = _time(lambda: problem.gradient(state), max(2, repeats // 3))
    n_samples = len(problem.vis_cam)
    print(f"{backend_label:>8}: {problem.mesh.n_vertices:5d} vertices, "
          f"{n_samples:6d} samples | cost {1e3 * t_cost:8.2f} ms | "
          f"gradient {1e3 * t_grad:8.2f} ms")
    return t_cost, t_grad


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cameras", type=int, default=20)
    ap.add_argument("--subdivisions", type=int, default=3)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    import os
    import subprocess
    import sys

    # each backend must be measured in a fresh process: the choice is
    # frozen at import time
    if os.environ.get("_POLARMESH_BENCH_CHILD"):
        from polarmesh.kernels import USE_NUMBA
        label = "numba" if USE_NUMBA else "numpy"
        bench(label, args.cameras, args.subdivisions, args.repeats)
        return

    results = {}
    for label, disable in (("numba", ""), ("numpy", "1")):
        env = dict(os.environ, _POLARMESH_BENCH_CHILD="1",
                   POLARMESH_DISABLE_NUMBA=disable)
        proc = subprocess.run([sys.executable, __file__] + sys.argv[1:],
                              env=env, capture_output=True, text=True)
        out = proc.stdout.strip()
        print(out)
        if proc.returncode != 0:
            print(proc.stderr, end="")
        results[label] = out

    if "numba" in results and "numpy" in results:
        try:
            def ms(line, field):
                return float(line.split("cost")[1].split("ms")[0]) if field == "cost" \
                    else float(line.split("gradient")[1].split("ms")[0])
            speed_c = ms(results["numpy"], "cost") / ms(results["numba"], "cost")
            speed_g = ms(results["numpy"], "grad") / ms(results["numba"], "grad")
            print(f"speedup: cost {speed_c:.1f}x, gradient {speed_g:.1f}x")
        except (IndexError, ValueError):
            pass


if __name__ == "__main__":
    main()
