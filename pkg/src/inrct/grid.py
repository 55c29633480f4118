"""Voxel grids, acquisition geometries, FOV masks and index sampling.

Conventions
-----------
* Axes are ordered ``(x, y)`` or ``(x, y, z)`` in every physical quantity
  (dims, spacing, coordinates).  Arrays are stored row-major with x fastest,
  i.e. numpy shape ``(ny, nx)`` or ``(nz, ny, nx)``.
* The grid center sits at the rotation isocenter (the physical origin).
* The source rotates in the xy-plane.  For view angle ``beta`` the source sits
  at ``sod * (cos beta, sin beta)`` and the flat detector is perpendicular to
  the central ray, at distance ``sdd`` from the source.  Detector column ``k``
  lies at ``u_k = (k - (num_det - 1) / 2) * det_spacing`` along
  ``(-sin beta, cos beta)``; cone-beam rows run along +z.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class VoxelGrid:
    """Axis-aligned regular grid centered at the isocenter.

    Parameters
    ----------
    dims : tuple of int
        Voxel count per axis, ``(nx, ny)`` or ``(nx, ny, nz)``.
    spacing : tuple of float
        Voxel size in mm per axis.
    """

    dims: tuple[int, ...]
    spacing: tuple[float, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if isinstance(self.spacing, (int, float)):
            spacing = (float(self.spacing),) * len(dims)
        else:
            spacing = tuple(float(s) for s in self.spacing)
        if len(dims) not in (2, 3):
            raise ValueError(f"grid must have 2 or 3 axes, got {len(dims)}")
        if len(spacing) != len(dims):
            raise ValueError("spacing and dims must have the same length")
        if any(d < 1 for d in dims):
            raise ValueError(f"dims must be >= 1, got {dims}")
        if any(not s > 0 for s in spacing):
            raise ValueError(f"spacing must be > 0, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def shape(self) -> tuple[int, ...]:
        """numpy array shape (slowest axis first)."""
        return tuple(reversed(self.dims))

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def origin(self) -> np.ndarray:
        """mm coordinates of the center of voxel (0, ..., 0)."""
        return -0.5 * (np.asarray(self.dims) - 1) * np.asarray(self.spacing)

    @property
    def half_extent(self) -> np.ndarray:
        """Distance from the grid center to its outer faces, per axis."""
        return 0.5 * np.asarray(self.dims) * np.asarray(self.spacing)

    def axis_centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.spacing[axis] * np.arange(self.dims[axis])

    def centers(self) -> np.ndarray:
        """All voxel centers in mm, shape ``(size, ndim)``, row-major order."""
        axes = [self.axis_centers(a) for a in range(self.ndim)]
        mesh = np.meshgrid(*reversed(axes), indexing="ij")
        return np.stack([m.ravel() for m in reversed(mesh)], axis=1)

    def refined(self, factor: int) -> "VoxelGrid":
        """Same physical extent with ``factor`` times more voxels per axis."""
        return VoxelGrid(
            tuple(d * factor for d in self.dims),
            tuple(s / factor for s in self.spacing),
        )


@dataclass(frozen=True, eq=False)
class FanBeamGeometry:
    """2D fan-beam acquisition with a flat, centered detector."""

    angles: np.ndarray
    source_to_iso: float
    source_to_detector: float
    num_det: int
    det_spacing: float

    ndim = 2

    def __post_init__(self):
        angles = np.asarray(self.angles, dtype=np.float64).ravel()
        angles.setflags(write=False)
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "num_det", int(self.num_det))
        if angles.size == 0:
            raise ValueError("geometry needs at least one view")
        if np.any(np.diff(angles) <= 0):
            raise ValueError("angles must be strictly ascending")
        if not self.source_to_detector > self.source_to_iso > 0:
            raise ValueError("need source_to_detector > source_to_iso > 0")
        if self.num_det < 1 or not self.det_spacing > 0:
            raise ValueError("num_det must be >= 1 and det_spacing > 0")

    @property
    def num_views(self) -> int:
        return self.angles.size

    @property
    def sino_shape(self) -> tuple[int, ...]:
        return (self.num_views, self.num_det)

    @property
    def num_rays(self) -> int:
        return int(np.prod(self.sino_shape))

    @property
    def magnification(self) -> float:
        return self.source_to_detector / self.source_to_iso

    def det_u(self) -> np.ndarray:
        return (np.arange(self.num_det) - 0.5 * (self.num_det - 1)) * self.det_spacing

    def source_positions(self) -> np.ndarray:
        """Source location per view, shape ``(num_views, 3)`` (z = 0)."""
        c, s = np.cos(self.angles), np.sin(self.angles)
        return np.stack([self.source_to_iso * c, self.source_to_iso * s, np.zeros_like(c)], axis=1)

    def _detector_points(self) -> np.ndarray:
        c, s = np.cos(self.angles)[:, None], np.sin(self.angles)[:, None]
        back = self.source_to_detector - self.source_to_iso
        u = self.det_u()[None, :]
        return np.stack([-back * c - u * s, -back * s + u * c], axis=-1)

    def rays(self) -> tuple[np.ndarray, np.ndarray]:
        """Ray start (source) and end (detector cell) points, each ``(m, 2)``."""
        end = self._detector_points().reshape(-1, 2)
        src = np.repeat(self.source_positions()[:, :2], self.num_det, axis=0)
        return src, end

    def subset(self, views: Sequence[int]) -> "FanBeamGeometry":
        return FanBeamGeometry(self.angles[_check_views(views, self.num_views)],
                               self.source_to_iso, self.source_to_detector,
                               self.num_det, self.det_spacing)

    def describe(self) -> dict:
        return {
            "geometry": "fan",
            "num_views": self.num_views,
            "angle_first": float(self.angles[0]),
            "angle_last": float(self.angles[-1]),
            "source_to_iso": self.source_to_iso,
            "source_to_detector": self.source_to_detector,
            "num_det": self.num_det,
            "det_spacing": self.det_spacing,
        }


@dataclass(frozen=True, eq=False)
class ConeBeamGeometry(FanBeamGeometry):
    """Circular cone-beam acquisition; the fan geometry plus detector rows."""

    num_det_rows: int = 1
    det_row_spacing: float = 1.0

    ndim = 3

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "num_det_rows", int(self.num_det_rows))
        if self.num_det_rows < 1 or not self.det_row_spacing > 0:
            raise ValueError("num_det_rows must be >= 1 and det_row_spacing > 0")

    @property
    def sino_shape(self) -> tuple[int, ...]:
        return (self.num_views, self.num_det_rows, self.num_det)

    def det_v(self) -> np.ndarray:
        return (np.arange(self.num_det_rows) - 0.5 * (self.num_det_rows - 1)) * self.det_row_spacing

    def rays(self) -> tuple[np.ndarray, np.ndarray]:
        pts = self._detector_points()  # (views, det, 2)
        nv, nr, nd = self.sino_shape
        end = np.empty((nv, nr, nd, 3))
        end[..., 0] = pts[:, None, :, 0]
        end[..., 1] = pts[:, None, :, 1]
        end[..., 2] = self.det_v()[None, :, None]
        src = np.repeat(self.source_positions(), nr * nd, axis=0)
        return src, end.reshape(-1, 3)

    def subset(self, views: Sequence[int]) -> "ConeBeamGeometry":
        return ConeBeamGeometry(self.angles[_check_views(views, self.num_views)],
                                self.source_to_iso, self.source_to_detector,
                                self.num_det, self.det_spacing,
                                self.num_det_rows, self.det_row_spacing)

    def describe(self) -> dict:
        out = super().describe()
        out.update(geometry="cone", num_det_rows=self.num_det_rows,
                   det_row_spacing=self.det_row_spacing)
        return out


def _check_views(views, num_views) -> np.ndarray:
    views = np.unique(np.asarray(views, dtype=np.int64))
    if views.size == 0:
        raise ValueError("view subset must be nonempty")
    if views[0] < 0 or views[-1] >= num_views:
        raise ValueError("view index out of range")
    return views


def full_circle_angles(num_views: int, start: float = 0.0) -> np.ndarray:
    """``num_views`` equispaced angles over a 360 degree arc."""
    return start + 2 * np.pi * np.arange(num_views) / num_views


def covering_det_spacing(grid: VoxelGrid, sod: float, sdd: float, num_det: int,
                         margin: float = 1.05) -> float:
    """Detector pitch whose fan just covers the grid's inscribed circle."""
    radius = margin * float(np.min(grid.half_extent[:2]))
    if radius >= sod:
        raise ValueError("field of view does not fit inside the source orbit")
    half_width = sdd * np.tan(np.arcsin(radius / sod))
    return 2 * half_width / num_det


@dataclass(frozen=True, eq=False)
class FovMask:
    """Boolean field-of-view mask over a grid.

    ``inside`` has the grid's numpy shape.  ``n`` is the number of voxels
    inside; these are the INR evaluation points.
    """

    grid: VoxelGrid
    inside: np.ndarray = field(repr=False)

    def __post_init__(self):
        inside = np.asarray(self.inside, dtype=bool)
        if inside.shape != self.grid.shape:
            raise ValueError(f"mask shape {inside.shape} != grid shape {self.grid.shape}")
        inside = inside.copy()
        inside.setflags(write=False)
        object.__setattr__(self, "inside", inside)
        flat = np.flatnonzero(inside)
        flat.setflags(write=False)
        object.__setattr__(self, "_flat", flat)

    @property
    def n(self) -> int:
        return int(self._flat.size)

    @property
    def flat_indices(self) -> np.ndarray:
        """Row-major flat voxel indices of the inside voxels."""
        return self._flat

    def to_normalized(self, mm: np.ndarray) -> np.ndarray:
        """Map mm coordinates to the INR input cube ``[-1, 1]^d``."""
        return np.asarray(mm, dtype=np.float64) / self.grid.half_extent

    def to_mm(self, coords: np.ndarray) -> np.ndarray:
        return np.asarray(coords, dtype=np.float64) * self.grid.half_extent

    def gather(self, image: np.ndarray) -> np.ndarray:
        """Values of a full-grid array at the inside voxels."""
        return np.asarray(image).reshape(-1)[self._flat]

    def scatter(self, values: np.ndarray) -> np.ndarray:
        """Full-grid array holding ``values`` inside and zero outside."""
        out = np.zeros(self.grid.size, dtype=np.float64)
        out[self._flat] = values
        return out.reshape(self.grid.shape)


def make_fov_mask(grid: VoxelGrid, shape: str = "inscribed") -> FovMask:
    """Build the FOV mask.

    ``inscribed`` keeps voxel centers within the largest circle inscribed in
    the xy cross-section (a cylinder in 3D); ``full`` keeps every voxel.
    """
    if shape == "full":
        return FovMask(grid, np.ones(grid.shape, dtype=bool))
    if shape != "inscribed":
        raise ValueError(f"unknown mask shape {shape!r}")
    radius = float(np.min(grid.half_extent[:2]))
    x = grid.axis_centers(0)
    y = grid.axis_centers(1)
    disk = (x[None, :] ** 2 + y[:, None] ** 2) <= radius ** 2
    if grid.ndim == 3:
        disk = np.broadcast_to(disk, grid.shape)
    return FovMask(grid, disk)


def mask_coordinates(mask: FovMask) -> np.ndarray:
    """Normalized coordinates of inside voxels, shape ``(n, d)``, row-major order."""
    centers = mask.grid.centers()[mask.flat_indices]
    return mask.to_normalized(centers)


@dataclass(frozen=True, eq=False)
class IndexBatch:
    indices: np.ndarray
    n_total: int

    def __len__(self):
        return int(self.indices.size)


def sample_index_batch(mask_or_n, batch_size: int, rng: np.random.Generator) -> IndexBatch:
    """Uniform random subset of ``batch_size`` distinct indices in ``[0, n)``.

    Indices are returned sorted, so a batch covering every index is exactly
    ``arange(n)`` and reproduces full-batch summation order.
    """
    n = mask_or_n.n if isinstance(mask_or_n, FovMask) else int(mask_or_n)
    batch_size = int(batch_size)
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch_size must be in [1, {n}], got {batch_size}")
    idx = np.sort(rng.choice(n, size=batch_size, replace=False))
    return IndexBatch(idx, n)
