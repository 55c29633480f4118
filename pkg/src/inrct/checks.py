"""Numerical self-checks: adjointness, finite differences, unbiasedness.

These back the ``gradcheck`` CLI command and the acceptance suite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gradient import exact_gradient, forward_pass, projector_for, stochastic_gradient
from .grid import FovMask, VoxelGrid, covering_det_spacing, full_circle_angles, make_fov_mask
from .grid import ConeBeamGeometry, FanBeamGeometry
from .inr import InrModel, flatten_params, init_model, unflatten_params, weighted_param_grad
from .objective import LossKind
from .phantoms import shepp_logan_2d, simulate_measurements


@dataclass(frozen=True, eq=False)
class TinyPipeline:
    model: InrModel
    mask: FovMask
    geom: FanBeamGeometry
    y: np.ndarray

    def loss(self, kind: LossKind, theta: np.ndarray | None = None) -> float:
        model = self.model if theta is None else unflatten_params(self.model, theta)
        return forward_pass(model, self.mask, self.geom, self.y, kind).loss


def tiny_pipeline(seed: int = 0, grid_size: int = 8, num_views: int = 4, num_det: int = 8,
                  width: int = 8) -> TinyPipeline:
    """8x8 grid, 4 views, 8 detectors, width-8 FFN with randomly drawn parameters."""
    rng = np.random.default_rng(seed)
    grid = VoxelGrid((grid_size, grid_size), 1.0)
    sod, sdd = 40.0, 80.0
    geom = FanBeamGeometry(full_circle_angles(num_views), sod, sdd, num_det,
                           covering_det_spacing(grid, sod, sdd, num_det))
    fine = grid.refined(2)
    y = simulate_measurements(shepp_logan_2d(grid.half_extent[0]), geom, fine, grid).values
    model = init_model("ffn", 2, rng, hidden_width=width, hidden_layers=2, num_features=width, sigma=1.0)
    # O(1) parameters move ReLU pre-activations away from their kinks
    model = unflatten_params(model, rng.uniform(-0.5, 0.5, model.num_params))
    return TinyPipeline(model, make_fov_mask(grid, "inscribed"), geom, y)


def central_differences(fun, theta: np.ndarray, step: float, order: int = 2) -> np.ndarray:
    """Componentwise central differences of ``fun`` at ``theta``.

    ``order=4`` uses the five-point stencil, which tolerates a larger step
    and so loses less to cancellation.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    out = np.empty_like(theta)

    def at(k, h):
        t = theta.copy()
        t[k] += h
        return fun(t)

    for k in range(theta.size):
        if order == 2:
            out[k] = (at(k, step) - at(k, -step)) / (2 * step)
        else:
            out[k] = (8 * (at(k, step) - at(k, -step)) - (at(k, 2 * step) - at(k, -2 * step))) / (12 * step)
    return out


def network_gradcheck(model: InrModel, coords: np.ndarray, weights: np.ndarray, step: float = 1e-5,
                      floor: float = 1e-8) -> float:
    """Worst relative error of the weighted parameter gradient over ``|g| > floor``.

    The reference is a five-point stencil evaluated in long double.  A
    stencil whose points straddle a ReLU kink does not measure a derivative,
    so the step is halved until every stencil point shares the sign pattern
    of the base point.
    """
    xl = np.asarray(coords, dtype=np.longdouble)
    wl = np.asarray(weights, dtype=np.longdouble)
    theta = flatten_params(model).astype(np.longdouble)
    base = model.relu_pattern(coords)
    g = weighted_param_grad(model, coords, weights)
    worst = 0.0
    for k in np.flatnonzero(np.abs(g) > floor):
        h = step
        while True:
            models = {}
            for j in (-2, -1, 1, 2):
                t = theta.copy()
                t[k] += j * h
                models[j] = unflatten_params(model, t)
            if all(np.array_equal(m.relu_pattern(coords), base) for m in models.values()) or h < 1e-9:
                break
            h /= 2
        f = {j: wl @ m.eval(xl) for j, m in models.items()}
        fd = float((8 * (f[1] - f[-1]) - (f[2] - f[-2])) / (12 * h))
        worst = max(worst, abs(g[k] - fd) / abs(g[k]))
    return worst


def relative_errors(g: np.ndarray, ref: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Componentwise ``|g - ref| / |g|`` where ``|g| > floor``."""
    big = np.abs(g) > floor
    return np.abs(g - ref)[big] / np.abs(g)[big]


def pipeline_gradcheck(tp: TinyPipeline, kind: LossKind, step: float = 1e-5) -> float:
    """Worst relative error of :func:`exact_gradient` against central differences."""
    g = exact_gradient(tp.model, tp.mask, tp.geom, tp.y, kind)
    fd = central_differences(lambda th: tp.loss(kind, th), flatten_params(tp.model), step)
    return float(relative_errors(g, fd).max())


def adjoint_mismatch(grid: VoxelGrid, geom, pairs: int = 20, seed: int = 0) -> float:
    """Worst ``|<Px, y> - <x, P^T y>| / (|Px| |y|)`` over random pairs."""
    P = projector_for(grid, geom)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        x = rng.standard_normal(grid.shape)
        y = rng.standard_normal(geom.sino_shape)
        px = P.forward(x)
        lhs = float(np.vdot(px, y))
        rhs = float(np.vdot(x, P.back(y)))
        worst = max(worst, abs(lhs - rhs) / (np.linalg.norm(px) * np.linalg.norm(y)))
    return worst


def adjoint_fixtures():
    """The 2D fan and 3D cone fixtures used for adjoint testing."""
    g2 = VoxelGrid((64, 64), 1.0)
    fan = FanBeamGeometry(full_circle_angles(30), 100.0, 200.0, 96, covering_det_spacing(g2, 100.0, 200.0, 96))
    g3 = VoxelGrid((32, 32, 32), 1.0)
    du = covering_det_spacing(g3, 80.0, 160.0, 48)
    cone = ConeBeamGeometry(full_circle_angles(20), 80.0, 160.0, 48, du, 32, du)
    return (g2, fan), (g3, cone)


@dataclass(frozen=True)
class UnbiasednessReport:
    draws: int
    max_z: float  # largest |mean - exact| / standard error over components
    worst_component: int


def unbiasedness(tp: TinyPipeline, kind: LossKind, batch_size: int, draws: int,
                 seed: int = 0) -> UnbiasednessReport:
    """Monte Carlo mean of the estimator vs the exact gradient, in standard errors.

    Components with zero sample variance must match the exact value to
    rounding error; they are reported with a z score of 0 when they do.
    """
    rng = np.random.default_rng(seed)
    exact = exact_gradient(tp.model, tp.mask, tp.geom, tp.y, kind)
    s1 = np.zeros_like(exact)
    s2 = np.zeros_like(exact)
    for _ in range(draws):
        g = stochastic_gradient(tp.model, tp.mask, tp.geom, tp.y, kind, batch_size, rng).grad
        s1 += g
        s2 += g * g
    mean = s1 / draws
    var = np.maximum(s2 / draws - mean * mean, 0.0) * draws / (draws - 1)
    se = np.sqrt(var / draws)
    dev = np.abs(mean - exact)
    tol = 1e-12 * max(1.0, float(np.abs(exact).max()))
    z = np.where(se > 0, dev / np.where(se > 0, se, 1.0), np.where(dev <= tol, 0.0, np.inf))
    k = int(np.argmax(z))
    return UnbiasednessReport(draws, float(z[k]), k)
