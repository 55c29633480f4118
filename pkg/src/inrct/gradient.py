"""Stochastic Jacobian-vector gradient estimation for INR-based CT fitting.

With ``z = P E{f}`` and ``v = P^T dL/dz`` the loss gradient is
``sum_i v_i grad f(x_i)`` over the ``n`` coordinates inside the FOV mask.
The estimator keeps ``v`` fixed (it is computed with plain numeric passes)
and backpropagates through the network on a random coordinate subset only,
rescaled by ``n / |I|``.  The projector never sees any differentiation
machinery: it is a linear map applied to arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .grid import FovMask, IndexBatch, mask_coordinates, sample_index_batch
from .inr import InrModel, flatten_params, weighted_param_grad
from .objective import LossKind, loss_value, residual_grad
from .projector import Projector, Sinogram


@lru_cache(maxsize=16)
def projector_for(grid, geom) -> Projector:
    return Projector(grid, geom)


@lru_cache(maxsize=16)
def coords_for(mask: FovMask) -> np.ndarray:
    coords = mask_coordinates(mask)
    coords.setflags(write=False)
    return coords


@dataclass(frozen=True, eq=False)
class ForwardPass:
    """Steps 1-2: image samples, loss, and backprojected residual weights."""

    values: np.ndarray  # f at the n mask coordinates
    loss: float
    weights: np.ndarray  # v restricted to the mask, length n


@dataclass(frozen=True, eq=False)
class GradEstimate:
    grad: np.ndarray
    batch: IndexBatch
    scale: float
    loss: float


@dataclass(frozen=True)
class MemoryProxyReport:
    tracked_values_exact: int
    tracked_values_stochastic: int
    ratio: float


def _y_values(y) -> np.ndarray:
    return y.values if isinstance(y, Sinogram) else np.asarray(y, dtype=np.float64)


def _pass_from_values(values, mask: FovMask, geom, y, kind: LossKind) -> ForwardPass:
    P = projector_for(mask.grid, geom)
    yv = _y_values(y)
    z = P.forward(mask.scatter(values))
    r = residual_grad(z, yv, kind)
    v = mask.gather(P.back(r))
    return ForwardPass(values, loss_value(z, yv, kind), v)


def forward_pass(model: InrModel, mask: FovMask, geom, y, kind: LossKind) -> ForwardPass:
    """Evaluate ``z = P E{f}`` and ``v = P^T dL/dz`` with no gradient tracking."""
    return _pass_from_values(model.eval(coords_for(mask)), mask, geom, y, kind)


def exact_step(model: InrModel, mask: FovMask, geom, y, kind: LossKind) -> tuple[ForwardPass, np.ndarray]:
    """Forward pass and full gradient, keeping activations for all ``n`` coordinates."""
    values, tape = model.eval_taped(coords_for(mask))
    fp = _pass_from_values(values, mask, geom, y, kind)
    return fp, flatten_params(model.taped_param_grad(tape, fp.weights))


def exact_gradient(model: InrModel, mask: FovMask, geom, y, kind: LossKind) -> np.ndarray:
    """Full gradient of ``L(P E{f_theta}, y)``: all ``n`` coordinates, weights ``v``."""
    return exact_step(model, mask, geom, y, kind)[1]


def estimate_from_pass(model: InrModel, mask: FovMask, fp: ForwardPass, batch: IndexBatch) -> np.ndarray:
    """Gradient of the virtual loss ``(n/|I|) sum_{i in I} v_i f(x_i)``."""
    idx = batch.indices
    scale = batch.n_total / len(idx)
    return scale * weighted_param_grad(model, coords_for(mask)[idx], fp.weights[idx])


def stochastic_gradient(model: InrModel, mask: FovMask, geom, y, kind: LossKind,
                        batch_size: int, rng: np.random.Generator) -> GradEstimate:
    if not 1 <= int(batch_size) <= mask.n:
        raise ValueError(f"batch_size must be in [1, {mask.n}], got {batch_size}")
    fp = forward_pass(model, mask, geom, y, kind)
    batch = sample_index_batch(mask, batch_size, rng)
    grad = estimate_from_pass(model, mask, fp, batch)
    return GradEstimate(grad, batch, mask.n / len(batch), fp.loss)


def restrict_views(geom, y, views: Sequence[int]):
    """Geometry and data restricted to the rows of the selected views."""
    if len(views) == 0:
        raise ValueError("view subset must be nonempty")
    views = np.unique(np.asarray(views, dtype=np.int64))
    sub = geom.subset(views)
    return sub, _y_values(y)[views]


def stochastic_gradient_subset_views(model: InrModel, mask: FovMask, geom, y, kind: LossKind,
                                     batch_size: int, rng: np.random.Generator,
                                     view_subset: Sequence[int]) -> GradEstimate:
    """Estimator for the loss restricted to the rays of ``view_subset``."""
    sub, ysub = restrict_views(geom, y, view_subset)
    return stochastic_gradient(model, mask, sub, ysub, kind, batch_size, rng)


def exact_gradient_subset_views(model: InrModel, mask: FovMask, geom, y, kind: LossKind,
                                view_subset: Sequence[int]) -> np.ndarray:
    sub, ysub = restrict_views(geom, y, view_subset)
    return exact_gradient(model, mask, sub, ysub, kind)


def memory_proxy(model: InrModel, mask: FovMask, geom, batch_size: int) -> MemoryProxyReport:
    """Network values retained for the reverse sweep: full pass vs minibatch.

    End-to-end differentiation keeps activations for every one of the ``n``
    evaluations; the estimator keeps them for ``batch_size`` evaluations.
    ``geom`` is accepted for interface symmetry; the proxy does not count
    projector storage.
    """
    if not 1 <= int(batch_size) <= mask.n:
        raise ValueError(f"batch_size must be in [1, {mask.n}], got {batch_size}")
    per_eval = model.activations_per_eval()
    exact = per_eval * mask.n
    stoch = per_eval * int(batch_size)
    return MemoryProxyReport(exact, stoch, exact / stoch)
