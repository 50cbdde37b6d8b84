"""Three-stage refinement driver: initialization, L-BFGS descent, pipeline.

Each stage freezes visibility and the albedo-smoothness weights, then
minimizes the total cost over vertex positions, albedos and per-image
illumination with numeric gradients. Positions are scaled by the bounding
box diagonal inside the solver so all parameter blocks are roughly
unit-free. The line search enforces monotone descent (Armijo with
halving), so each stage's final cost never exceeds its initial cost.
"""

from __future__ import annotations

import json
import logging
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .camera import Camera
from .cost import CostBreakdown, CostOptions, CostProblem, ParamState, ViewImages
from .mesh import TriMesh, compute_visibility, sqrt3_subdivide

log = logging.getLogger(__name__)

ARMIJO_C = 1e-4
MAX_HALVINGS = 30
LBFGS_MEMORY = 8
# max per-coordinate move at line-search start, in scaled units (positions
# are divided by the bbox diagonal): keeps the first raw-gradient steps
# from teleporting geometry across the image
MAX_STEP_INF = 0.02


@dataclass
class Stage:
    tau1: float
    tau2: float
    tau3: float
    t: float
    k: float = 0.5
    max_iterations: int = 100
    convergence_tol: float = 1e-6
    grad_tol: float = 1e-8

    def __post_init__(self):
        if min(self.tau1, self.tau2, self.tau3) < 0 or self.k <= 0 or self.t <= 0:
            raise ValueError("stage weights must be >= 0 and k, t > 0")


@dataclass
class StageSchedule:
    stages: list

    def __post_init__(self):
        if not self.stages:
            raise ValueError("schedule needs at least one stage")

    @classmethod
    def default(cls) -> "StageSchedule":
        return cls([Stage(60.0, 0.1, 2.0, 2.2),
                    Stage(120.0, 0.1, 2.0, 2.8),
                    Stage(360.0, 0.1, 2.0, 3.4)])


@dataclass
class StageReport:
    iterations: int = 0
    initial: dict = field(default_factory=dict)
    final: dict = field(default_factory=dict)
    cost_history: list = field(default_factory=list)
    grad_norm_history: list = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        # wall_time stays in memory only: serialized reports must be
        # byte-identical across reruns of the same inputs
        return {"iterations": self.iterations, "initial": self.initial,
                "final": self.final, "cost_history": self.cost_history,
                "grad_norm_history": self.grad_norm_history}


@dataclass
class SolverReport:
    stages: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"stages": [s.to_dict() for s in self.stages]}


# ---------------------------------------------------------------------------
# Initialization

def initialize(mesh: TriMesh, cameras: list[Camera], images: ViewImages) -> ParamState:
    """Albedo = mean observed color over visible cameras; uniform illumination.

    Vertices no camera sees borrow the albedo of the nearest vertex (in
    edge hops) that has one.
    """
    m = mesh.n_vertices
    albedo = np.zeros((m, 3))
    have = np.zeros(m, dtype=bool)
    for i in range(m):
        vals = []
        for c in mesh.visibility[i]:
            cam = cameras[int(c)]
            px, py, z = cam.project(mesh.vertices[i])
            if not (z > 0 and 0 <= px <= cam.width - 1 and 0 <= py <= cam.height - 1):
                continue
            img = images.rgb[int(c)]
            x0 = min(int(px), cam.width - 2)
            y0 = min(int(py), cam.height - 2)
            fx, fy = px - x0, py - y0
            vals.append((1 - fx) * (1 - fy) * img[y0, x0] + fx * (1 - fy) * img[y0, x0 + 1]
                        + (1 - fx) * fy * img[y0 + 1, x0] + fx * fy * img[y0 + 1, x0 + 1])
        if vals:
            albedo[i] = np.mean(vals, axis=0)
            have[i] = True

    if not have.all():
        if not have.any():
            raise ValueError("no vertex is visible from any camera")
        indptr, idx = mesh.vertex_neighbors
        frontier = deque(np.flatnonzero(have).tolist())
        while frontier:
            i = frontier.popleft()
            for p in range(indptr[i], indptr[i + 1]):
                j = idx[p]
                if not have[j]:
                    albedo[j] = albedo[i]
                    have[j] = True
                    frontier.append(j)
        if not have.all():
            # disconnected component with no visibility at all
            albedo[~have] = albedo[have].mean(axis=0)

    n = len(cameras)
    illum = np.zeros((n, 12))
    illum[:, 0] = 1.0
    illum[:, 9:] = 1.0
    return ParamState(mesh.vertices.copy(), albedo, illum)


# ---------------------------------------------------------------------------
# Generic numeric gradient (used by the solver contract tests)

def numeric_gradient(f, x, eps_rel: float = 1e-6, step_floor: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector.

    Falls back to a one-sided difference when a probe goes non-finite;
    raises if both sides are bad.
    """
    x = np.asarray(x, dtype=np.float64)
    f0 = None
    g = np.zeros_like(x)
    for i in range(x.size):
        h = eps_rel * max(abs(x[i]), step_floor)
        xp = x.copy(); xp[i] += h
        xm = x.copy(); xm[i] -= h
        fp, fm = f(xp), f(xm)
        if np.isfinite(fp) and np.isfinite(fm):
            g[i] = (fp - fm) / (2.0 * h)
            continue
        if f0 is None:
            f0 = f(x)
        if np.isfinite(fp):
            g[i] = (fp - f0) / h
        elif np.isfinite(fm):
            g[i] = (f0 - fm) / h
        else:
            raise FloatingPointError(f"non-finite probes around parameter {i}")
    return g


# ---------------------------------------------------------------------------
# Stage minimization (L-BFGS with Armijo backtracking)

def _pack(state: ParamState, pos_scale: float) -> np.ndarray:
    return np.concatenate([state.vertices.ravel() / pos_scale,
                           state.albedo.ravel(), state.illum.ravel()])


def _unpack(x: np.ndarray, m: int, n: int, pos_scale: float) -> ParamState:
    v = x[:3 * m].reshape(m, 3) * pos_scale
    a = x[3 * m:6 * m].reshape(m, 3)
    L = x[6 * m:].reshape(n, 12)
    return ParamState(v, a, L)


def _lbfgs_direction(g, s_hist, y_hist):
    q = -g.copy()
    alphas = []
    for s, y, rho in reversed(list(zip(s_hist, y_hist, _rhos(s_hist, y_hist)))):
        a = rho * s.dot(q)
        alphas.append(a)
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= s.dot(y) / y.dot(y)
    for (s, y, rho), a in zip(zip(s_hist, y_hist, _rhos(s_hist, y_hist)), reversed(alphas)):
        b = rho * y.dot(q)
        q += (a - b) * s
    return q


def _rhos(s_hist, y_hist):
    return [1.0 / s.dot(y) for s, y in zip(s_hist, y_hist)]


def minimize_stage(problem: CostProblem, state: ParamState,
                   stage: Stage) -> tuple[ParamState, StageReport]:
    """Monotone descent on the stage's total cost; returns the refined state."""
    report = StageReport()
    t_start = time.perf_counter()
    m = state.vertices.shape[0]
    n = state.illum.shape[0]
    D = problem.bbox_diag

    def cost_of(x) -> CostBreakdown:
        return problem.breakdown(_unpack(x, m, n, D))

    def grad_of(x) -> np.ndarray:
        st = _unpack(x, m, n, D)
        gp, ga, gl = problem.gradient(st)
        return np.concatenate([gp.ravel() * D, ga.ravel(), gl.ravel()])

    x = _pack(state, D)
    bd = cost_of(x)
    if not np.isfinite(bd.total):
        raise FloatingPointError("non-finite cost at stage start")
    n_samples = max(len(problem.vis_cam), 1)
    if bd.dropped > 0.01 * n_samples:
        log.warning("%.1f%% of observation samples project outside their images; "
                    "visibility may be stale", 100.0 * bd.dropped / n_samples)
    report.initial = bd.to_dict()
    report.cost_history.append(bd.total)
    f_cur = bd.total

    s_hist: deque = deque(maxlen=LBFGS_MEMORY)
    y_hist: deque = deque(maxlen=LBFGS_MEMORY)
    g = grad_of(x)

    for it in range(stage.max_iterations):
        gnorm = float(np.abs(g).max())
        report.grad_norm_history.append(gnorm)
        if gnorm < stage.grad_tol:
            break

        accepted = False
        for attempt in range(2):
            d = _lbfgs_direction(g, list(s_hist), list(y_hist)) if attempt == 0 and s_hist else -g
            slope = g.dot(d)
            if slope >= 0:
                continue
            dmax = float(np.abs(d).max())
            step = min(1.0, MAX_STEP_INF / dmax) if dmax > 0 else 1.0
            for _ in range(MAX_HALVINGS):
                x_new = x + step * d
                f_new = cost_of(x_new).total
                if np.isfinite(f_new) and f_new <= f_cur + ARMIJO_C * step * slope:
                    accepted = True
                    break
                step *= 0.5
            if accepted:
                break
        if not accepted:
            break

        g_new = grad_of(x_new)
        s = x_new - x
        y = g_new - g
        if s.dot(y) > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s)
            y_hist.append(y)
        rel = (f_cur - f_new) / max(abs(f_cur), 1e-30)
        x, g, f_cur = x_new, g_new, f_new
        report.cost_history.append(f_cur)
        report.iterations = it + 1
        if rel < stage.convergence_tol:
            break

    final = cost_of(x)
    report.final = final.to_dict()
    report.wall_time = time.perf_counter() - t_start
    return _unpack(x, m, n, D), report


# ---------------------------------------------------------------------------
# Full pipeline

def run_pipeline(mesh: TriMesh, cameras: list[Camera], image_sets,
                 schedule: StageSchedule | None = None,
                 max_pixel_area: float = 16.0,
                 use_min: bool = True, use_dop_weight: bool = True,
                 subdivide: bool = True, min_facing: float = 0.25,
                 jsonl_path=None,
                 progress=None) -> tuple[TriMesh, ParamState, SolverReport]:
    """visibility -> subdivision -> initialize -> staged descent.

    `image_sets` is a list of PolarizationImageSet (one per camera).
    Visibility and smoothness weights are recomputed between stages.
    min_facing rejects grazing observations whose interpolated samples
    straddle the object boundary. Returns the refined mesh (with albedo
    attached), the final parameter state and the solver report.
    """
    schedule = schedule or StageSchedule.default()
    images = ViewImages.from_sets(image_sets, use_min=use_min)
    mesh = mesh.copy()
    compute_visibility(mesh, cameras, min_facing=min_facing)
    if subdivide:
        mesh = sqrt3_subdivide(mesh, cameras, max_pixel_area)
    state = initialize(mesh, cameras, images)
    report = SolverReport()
    sink = open(jsonl_path, "w") if jsonl_path else None
    try:
        for s_idx, stage in enumerate(schedule.stages):
            mesh.vertices = state.vertices.copy()
            mesh.invalidate()
            compute_visibility(mesh, cameras, min_facing=min_facing)
            options = CostOptions(stage.tau1, stage.tau2, stage.tau3,
                                  stage.k, stage.t, use_dop_weight)
            problem = CostProblem(mesh, cameras, images, options)
            state, stage_report = minimize_stage(problem, state, stage)
            report.stages.append(stage_report)
            if progress:
                progress(s_idx, stage_report)
            if sink:
                sink.write(json.dumps({"stage": s_idx, **stage_report.to_dict()}) + "\n")
                sink.flush()
            log.info("stage %d: %d iterations, cost %.6g -> %.6g", s_idx,
                     stage_report.iterations, stage_report.initial.get("total", np.nan),
                     stage_report.final["total"])
    finally:
        if sink:
            sink.close()
    mesh.vertices = state.vertices.copy()
    mesh.albedo = state.albedo.copy()
    mesh.invalidate()
    return mesh, state, report
