"""Joseph forward projector, its exact adjoint, the ramp filter and FBP/FDK."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Union

import numpy as np

from ._backend import kernels
from .grid import ConeBeamGeometry, FanBeamGeometry, VoxelGrid

Geometry = Union[FanBeamGeometry, ConeBeamGeometry]


@dataclass(frozen=True, eq=False)
class ImageVec:
    """Voxel values on a grid, stored with the grid's numpy shape."""

    grid: VoxelGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).reshape(self.grid.shape)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, grid: VoxelGrid) -> "ImageVec":
        return cls(grid, np.zeros(grid.shape))


@dataclass(frozen=True, eq=False)
class Sinogram:
    """Line integrals, shape ``(views, det)`` or ``(views, rows, det)``."""

    geometry: Geometry
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.size != self.geometry.num_rays:
            raise ValueError(f"sinogram has {vals.size} values, geometry needs {self.geometry.num_rays}")
        object.__setattr__(self, "values", vals.reshape(self.geometry.sino_shape))

    @classmethod
    def zeros(cls, geometry: Geometry) -> "Sinogram":
        return cls(geometry, np.zeros(geometry.sino_shape))


def _check_pair(grid: VoxelGrid, geom: Geometry) -> None:
    if grid.ndim != geom.ndim:
        raise ValueError(f"{grid.ndim}D grid does not match {geom.ndim}D geometry")
    corner = float(np.hypot(*grid.half_extent[:2]))
    if corner >= geom.source_to_iso:
        raise ValueError("grid extends beyond the source orbit")


class Projector:
    """Discrete projection matrix ``P`` for one (grid, geometry) pair.

    Ray setup is computed once; :meth:`forward` and :meth:`back` work on
    plain arrays and are exact transposes of each other.
    """

    def __init__(self, grid: VoxelGrid, geom: Geometry):
        _check_pair(grid, geom)
        self.grid = grid
        self.geom = geom
        src, end = geom.rays()
        origin = grid.origin
        spacing = np.asarray(grid.spacing)
        direction = end - src
        self._start = np.ascontiguousarray((src - origin) / spacing)
        self._dir = np.ascontiguousarray(direction / spacing)
        self._axis = np.ascontiguousarray(np.argmax(np.abs(self._dir), axis=1).astype(np.int_))
        dom = np.abs(self._dir[np.arange(len(self._axis)), self._axis])
        self._weight = np.ascontiguousarray(np.linalg.norm(direction, axis=1) / dom)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.geom.num_rays, self.grid.size)

    def forward(self, image: np.ndarray, kernels=kernels) -> np.ndarray:
        vol = np.ascontiguousarray(np.asarray(image, dtype=np.float64).reshape(self.grid.shape))
        fn = kernels.forward_2d if self.grid.ndim == 2 else kernels.forward_3d
        out = fn(vol, self._start, self._dir, self._axis, self._weight)
        return np.asarray(out).reshape(self.geom.sino_shape)

    def back(self, sino: np.ndarray, kernels=kernels) -> np.ndarray:
        s = np.ascontiguousarray(np.asarray(sino, dtype=np.float64).reshape(-1))
        if s.size != self.geom.num_rays:
            raise ValueError("sinogram size does not match geometry")
        fn = kernels.back_2d if self.grid.ndim == 2 else kernels.back_3d
        out = fn(s, self._start, self._dir, self._axis, self._weight, *self.grid.shape)
        return np.asarray(out).reshape(self.grid.shape)

    def matrix(self) -> np.ndarray:
        """Dense ``P`` built column by column; for small test problems only."""
        cols = np.empty(self.shape)
        e = np.zeros(self.grid.size)
        for j in range(self.grid.size):
            e[j] = 1.0
            cols[:, j] = self.forward(e).ravel()
            e[j] = 0.0
        return cols


def forward_project(image: ImageVec, geom: Geometry) -> Sinogram:
    return Sinogram(geom, Projector(image.grid, geom).forward(image.values))


def back_project(sino: Sinogram, grid: VoxelGrid) -> ImageVec:
    return ImageVec(grid, Projector(grid, sino.geometry).back(sino.values))


@dataclass(frozen=True, eq=False)
class RampFilter:
    """Discrete Ram-Lak filter for a detector with ``num_det`` columns.

    ``kernel[k + num_det - 1]`` holds ``h(k)`` for ``|k| < num_det``:
    ``h(0) = 1 / (4 d^2)``, ``h(k) = 0`` for even ``k``, and
    ``h(k) = -1 / (pi k d)^2`` for odd ``k``, with ``d = det_spacing``.
    Filtering convolves each detector row with ``d * h``.
    """

    num_det: int
    det_spacing: float

    @cached_property
    def kernel(self) -> np.ndarray:
        k = np.arange(-(self.num_det - 1), self.num_det)
        d = self.det_spacing
        h = np.zeros(k.size)
        h[k == 0] = 1.0 / (4 * d * d)
        odd = (k % 2) == 1
        h[odd] = -1.0 / (np.pi * k[odd] * d) ** 2
        return h

    @cached_property
    def matrix(self) -> np.ndarray:
        """Symmetric Toeplitz matrix acting on one detector row."""
        i = np.arange(self.num_det)
        return self.det_spacing * self.kernel[(i[:, None] - i[None, :]) + self.num_det - 1]


def ramp_for_geometry(geom: Geometry) -> RampFilter:
    """Ramp filter in the isocenter-scaled detector frame, as used by FBP."""
    return RampFilter(geom.num_det, geom.det_spacing / geom.magnification)


def apply_ramp(sino, filt: RampFilter) -> np.ndarray | Sinogram:
    """Filter every detector row (the last axis).  Accepts arrays or Sinograms."""
    vals = sino.values if isinstance(sino, Sinogram) else np.asarray(sino, dtype=np.float64)
    if vals.shape[-1] != filt.num_det:
        raise ValueError(f"filter built for {filt.num_det} columns, sinogram has {vals.shape[-1]}")
    out = vals @ filt.matrix  # matrix is symmetric
    if isinstance(sino, Sinogram):
        return Sinogram(sino.geometry, out)
    return out


def _view_weights(angles: np.ndarray) -> np.ndarray:
    """Angular integration weights, assuming the views span a full circle."""
    if angles.size == 1:
        return np.array([2 * np.pi])
    nxt = np.roll(angles, -1)
    nxt[-1] += 2 * np.pi
    prv = np.roll(angles, 1)
    prv[0] -= 2 * np.pi
    return 0.5 * (nxt - prv)


def fbp_reconstruct(sino: Sinogram, grid: VoxelGrid) -> ImageVec:
    """Fan-beam FBP (2D) or FDK (3D) for a full circular scan.

    Cosine pre-weighting, ramp filtering in the isocenter frame, and
    distance-weighted pixel-driven backprojection with linear interpolation
    on the detector.
    """
    geom = sino.geometry
    if geom.num_views < 2:
        raise ValueError("FBP needs at least 2 views")
    _check_pair(grid, geom)
    sod = geom.source_to_iso
    mag = geom.magnification
    u = geom.det_u() / mag
    du = geom.det_spacing / mag
    is3d = grid.ndim == 3
    vals = sino.values
    if is3d:
        v = geom.det_v() / mag
        dv = geom.det_row_spacing / mag
        pre = sod / np.sqrt(sod ** 2 + u[None, :] ** 2 + v[:, None] ** 2)
    else:
        pre = sod / np.sqrt(sod ** 2 + u ** 2)
    filt = RampFilter(geom.num_det, du)
    q = apply_ramp(vals * pre, filt)

    centers = grid.centers()
    x, y = centers[:, 0], centers[:, 1]
    out = np.zeros(grid.size)
    for b, (beta, wb) in enumerate(zip(geom.angles, _view_weights(geom.angles))):
        c, s = np.cos(beta), np.sin(beta)
        dist = (sod - (x * c + y * s)) / sod
        uu = (-x * s + y * c) / dist
        if is3d:
            vv = centers[:, 2] / dist
            val = _bilinear(q[b], (uu - u[0]) / du, (vv - v[0]) / dv)
        else:
            val = np.interp(uu, u, q[b], left=0.0, right=0.0)
        out += wb * val / dist ** 2
    return ImageVec(grid, 0.5 * out)


def _bilinear(img: np.ndarray, fx: np.ndarray, fy: np.ndarray) -> np.ndarray:
    """Bilinear lookup of ``img[row, col]`` at fractional (col, row), zero outside."""
    nr, nc = img.shape
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    ax = fx - x0
    ay = fy - y0
    out = np.zeros(fx.shape)
    for dy, wy in ((0, 1 - ay), (1, ay)):
        for dx, wx in ((0, 1 - ax), (1, ax)):
            xi = x0 + dx
            yi = y0 + dy
            ok = (xi >= 0) & (xi < nc) & (yi >= 0) & (yi < nr)
            out += np.where(ok, wx * wy * img[np.clip(yi, 0, nr - 1), np.clip(xi, 0, nc - 1)], 0.0)
    return out
