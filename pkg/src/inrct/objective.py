"""Least squares (LS) and ramp-filtered least squares (FLS) data losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .projector import RampFilter, Sinogram, apply_ramp, ramp_for_geometry


@dataclass(frozen=True, eq=False)
class LossKind:
    """``tag`` is ``"ls"`` or ``"fls"``; FLS carries its ramp filter."""

    tag: str
    filter: RampFilter | None = None

    def __post_init__(self):
        if self.tag not in ("ls", "fls"):
            raise ValueError(f"loss must be 'ls' or 'fls', got {self.tag!r}")
        if self.tag == "fls" and self.filter is None:
            raise ValueError("FLS loss needs a ramp filter")

    @classmethod
    def ls(cls) -> "LossKind":
        return cls("ls")

    @classmethod
    def fls(cls, geom_or_filter) -> "LossKind":
        filt = geom_or_filter if isinstance(geom_or_filter, RampFilter) else ramp_for_geometry(geom_or_filter)
        return cls("fls", filt)

    @classmethod
    def make(cls, tag: str, geom) -> "LossKind":
        return cls.fls(geom) if tag == "fls" else cls.ls()


def _values(z, y):
    if isinstance(z, Sinogram) and isinstance(y, Sinogram) and z.geometry is not y.geometry:
        if z.geometry.sino_shape != y.geometry.sino_shape or not np.array_equal(z.geometry.angles, y.geometry.angles):
            raise ValueError("sinograms come from different geometries")
    zv = z.values if isinstance(z, Sinogram) else np.asarray(z, dtype=np.float64)
    yv = y.values if isinstance(y, Sinogram) else np.asarray(y, dtype=np.float64)
    if zv.shape != yv.shape:
        raise ValueError(f"shape mismatch {zv.shape} vs {yv.shape}")
    return zv, yv


def _filtered(r, kind: LossKind):
    return r if kind.tag == "ls" else apply_ramp(r, kind.filter)


def loss_value(z, y, kind: LossKind) -> float:
    """LS: ``0.5 |z - y|^2``; FLS: ``0.5 (z - y)^T F (z - y)``."""
    zv, yv = _values(z, y)
    r = zv - yv
    return 0.5 * float(np.vdot(r, _filtered(r, kind)))


def residual_grad(z, y, kind: LossKind):
    """Gradient of :func:`loss_value` with respect to ``z``."""
    zv, yv = _values(z, y)
    g = _filtered(zv - yv, kind)
    if isinstance(z, Sinogram):
        return Sinogram(z.geometry, g)
    return g
