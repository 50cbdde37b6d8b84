import numpy as np
import pytest

from polarmesh.cost import CostOptions, CostProblem, ParamState, ViewImages
from polarmesh.mesh import compute_visibility
from polarmesh.optimizer import initialize
from polarmesh.synth import SyntheticScene, render_views


def sphere_rms(verts, radius=1.0, center=(0.0, 0.0, 0.0)):
    """RMS distance from vertices to an analytic sphere surface."""
    r = np.linalg.norm(np.asarray(verts) - np.asarray(center), axis=1)
    return float(np.sqrt(((r - radius) ** 2).mean()))


@pytest.fixture(scope="session")
def small_scene():
    """A small noise-free sphere dataset shared by cheap tests."""
    scene = SyntheticScene(n_cameras=8, image_size=(64, 64), focal=80.0,
                           gt_subdivisions=2)
    sets, gt, cams = render_views(scene)
    compute_visibility(gt, cams, min_facing=0.25)
    return scene, sets, gt, cams


@pytest.fixture(scope="session")
def small_problem(small_scene):
    scene, sets, gt, cams = small_scene
    images = ViewImages.from_sets(sets)
    gt_state = ParamState(
        gt.vertices.copy(), gt.albedo.copy(),
        np.tile(np.concatenate([scene.illumination.basis, scene.illumination.scale]),
                (len(cams), 1)))
    problem = CostProblem(gt, cams, images, CostOptions())
    return problem, gt_state
