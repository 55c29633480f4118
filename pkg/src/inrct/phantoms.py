"""Additive ellipse / ellipsoid phantoms and measurement simulation."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import VoxelGrid
from .projector import Geometry, ImageVec, Projector, Sinogram

# Modified (Toft) Shepp-Logan contrast: cx cy ax ay angle_deg value
_SHEPP_LOGAN_2D = [
    (0.0, 0.0, 0.69, 0.92, 0.0, 1.0),
    (0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8),
    (0.22, 0.0, 0.11, 0.31, -18.0, -0.2),
    (-0.22, 0.0, 0.16, 0.41, 18.0, -0.2),
    (0.0, 0.35, 0.21, 0.25, 0.0, 0.1),
    (0.0, 0.1, 0.046, 0.046, 0.0, 0.1),
    (0.0, -0.1, 0.046, 0.046, 0.0, 0.1),
    (-0.08, -0.605, 0.046, 0.023, 0.0, 0.1),
    (0.0, -0.606, 0.023, 0.023, 0.0, 0.1),
    (0.06, -0.605, 0.023, 0.046, 0.0, 0.1),
]

# cx cy cz ax ay az angle_deg value
_ELLIPSOIDS_3D = [
    (0.0, 0.0, 0.0, 0.69, 0.92, 0.81, 0.0, 1.0),
    (0.0, -0.0184, 0.0, 0.6624, 0.874, 0.78, 0.0, -0.8),
    (0.22, 0.0, 0.0, 0.11, 0.31, 0.22, -18.0, -0.2),
    (-0.22, 0.0, 0.0, 0.16, 0.41, 0.28, 18.0, -0.2),
    (0.0, 0.35, -0.15, 0.21, 0.25, 0.41, 0.0, 0.1),
    (0.0, 0.1, 0.25, 0.046, 0.046, 0.05, 0.0, 0.1),
    (0.0, -0.1, 0.25, 0.046, 0.046, 0.05, 0.0, 0.1),
    (-0.08, -0.605, 0.0, 0.046, 0.023, 0.05, 0.0, 0.1),
    (0.0, -0.606, 0.0, 0.023, 0.023, 0.02, 0.0, 0.1),
    (0.06, -0.605, 0.0, 0.023, 0.046, 0.02, 0.0, 0.1),
]

# peak attenuation in mm^-1
ATTENUATION_SCALE = 0.022


@dataclass(frozen=True, eq=False)
class EllipsePhantom:
    """Sum of constant-valued ellipses (2D) or ellipsoids (3D).

    ``centers`` and ``axes`` are ``(k, d)`` arrays in mm, ``angles`` rotate
    each component about the z axis (radians), ``values`` are in mm^-1.
    """

    centers: np.ndarray
    axes: np.ndarray
    angles: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=np.float64)
        d = centers.shape[1] if centers.ndim == 2 else 2
        centers = centers.reshape(-1, d)
        axes = np.asarray(self.axes, dtype=np.float64).reshape(-1, d)
        angles = np.asarray(self.angles, dtype=np.float64).ravel()
        values = np.asarray(self.values, dtype=np.float64).ravel()
        if not (len(centers) == len(axes) == len(angles) == len(values)):
            raise ValueError("component arrays must have equal length")
        if np.any(axes <= 0):
            raise ValueError("semi-axes must be positive")
        if not np.all(np.isfinite(values)):
            raise ValueError("component values must be finite")
        for name, arr in (("centers", centers), ("axes", axes), ("angles", angles), ("values", values)):
            object.__setattr__(self, name, arr)

    @property
    def ndim(self) -> int:
        return self.centers.shape[1]

    def __len__(self):
        return len(self.values)

    @classmethod
    def empty(cls, ndim: int = 2) -> "EllipsePhantom":
        return cls(np.zeros((0, ndim)), np.ones((0, ndim)), np.zeros(0), np.zeros(0))

    def scaled(self, length: float = 1.0, value: float = 1.0) -> "EllipsePhantom":
        """Stretch all lengths by ``length`` and all values by ``value``."""
        return EllipsePhantom(self.centers * length, self.axes * length, self.angles, self.values * value)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Phantom value at ``(npts, d)`` points in mm."""
        points = np.asarray(points, dtype=np.float64)
        out = np.zeros(len(points))
        for c, a, th, val in zip(self.centers, self.axes, self.angles, self.values):
            rel = points - c
            cs, sn = np.cos(th), np.sin(th)
            # rotate into the component frame
            u = rel[:, 0] * cs + rel[:, 1] * sn
            v = -rel[:, 0] * sn + rel[:, 1] * cs
            r2 = (u / a[0]) ** 2 + (v / a[1]) ** 2
            if self.ndim == 3:
                r2 += (rel[:, 2] / a[2]) ** 2
            out += np.where(r2 <= 1.0, val, 0.0)
        return out


def shepp_logan_2d(scale: float = 1.0) -> EllipsePhantom:
    """10-ellipse Shepp-Logan phantom, peak value 0.022 mm^-1.

    ``scale`` is the mm length of one unit of the classic definition, where
    the outer ellipse spans ``[-0.69, 0.69] x [-0.92, 0.92]``.
    """
    t = np.array(_SHEPP_LOGAN_2D)
    return EllipsePhantom(t[:, 0:2] * scale, t[:, 2:4] * scale, np.deg2rad(t[:, 4]),
                          t[:, 5] * ATTENUATION_SCALE)


def ellipsoid_phantom_3d(scale: float = 1.0) -> EllipsePhantom:
    """Nested-ellipsoid 3D Shepp-Logan variant, peak value 0.022 mm^-1."""
    t = np.array(_ELLIPSOIDS_3D)
    return EllipsePhantom(t[:, 0:3] * scale, t[:, 3:6] * scale, np.deg2rad(t[:, 6]),
                          t[:, 7] * ATTENUATION_SCALE)


def rasterize(phantom: EllipsePhantom, grid: VoxelGrid, supersample: int = 1) -> ImageVec:
    """Average of ``supersample**d`` evenly placed point samples per voxel."""
    supersample = int(supersample)
    if supersample < 1:
        raise ValueError("supersample must be >= 1")
    if len(phantom) and phantom.ndim != grid.ndim:
        raise ValueError("phantom and grid dimensionality differ")
    offs = (np.arange(supersample) + 0.5) / supersample - 0.5
    sub = np.stack(np.meshgrid(*([offs] * grid.ndim), indexing="ij"), -1).reshape(-1, grid.ndim)
    sub = sub * np.asarray(grid.spacing)
    out = np.zeros(grid.size)
    if len(phantom) == 0:
        return ImageVec(grid, out)
    centers = grid.centers()
    chunk = max(1, 2 ** 20 // len(sub))
    for lo in range(0, grid.size, chunk):
        c = centers[lo:lo + chunk]
        pts = (c[:, None, :] + sub[None, :, :]).reshape(-1, grid.ndim)
        out[lo:lo + chunk] = phantom.evaluate(pts).reshape(len(c), len(sub)).mean(axis=1)
    return ImageVec(grid, out)


def downsample(image: ImageVec, factor: int) -> ImageVec:
    """Block-average a fine image onto the grid ``factor`` times coarser."""
    g = image.grid
    if any(d % factor for d in g.dims):
        raise ValueError("grid dims must be divisible by factor")
    coarse = VoxelGrid(tuple(d // factor for d in g.dims), tuple(s * factor for s in g.spacing))
    shape = []
    for n in coarse.shape:
        shape += [n, factor]
    vals = image.values.reshape(shape).mean(axis=tuple(range(1, 2 * g.ndim, 2)))
    return ImageVec(coarse, vals)


def simulate_measurements(phantom: EllipsePhantom, geom: Geometry, sim_grid: VoxelGrid,
                          recon_grid: VoxelGrid, noise_sigma: float = 0.0,
                          rng: np.random.Generator | None = None,
                          supersample: int = 1) -> Sinogram:
    """Project a rasterization on ``sim_grid`` and add Gaussian noise.

    ``sim_grid`` must be at least twice as fine as ``recon_grid`` along
    every axis, so the data never comes from the reconstruction model.
    """
    if sim_grid.ndim != recon_grid.ndim:
        raise ValueError("simulation and reconstruction grids differ in dimensionality")
    ratio = np.asarray(recon_grid.spacing) / np.asarray(sim_grid.spacing)
    if np.any(ratio < 2.0 - 1e-12):
        raise ValueError("sim_grid must be at least 2x finer than recon_grid on every axis")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    fine = rasterize(phantom, sim_grid, supersample)
    vals = Projector(sim_grid, geom).forward(fine.values)
    if noise_sigma > 0:
        if rng is None:
            raise ValueError("a random generator is required when noise_sigma > 0")
        vals = vals + rng.normal(0.0, noise_sigma, size=vals.shape)
    return Sinogram(geom, vals)


def read_phantom(path) -> EllipsePhantom:
    """Read ``cx cy [cz] ax ay [az] angle value`` lines; ``#`` starts a comment."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            rows.append([float(tok) for tok in line.split()])
    if not rows:
        return EllipsePhantom.empty()
    widths = {len(r) for r in rows}
    if widths not in ({6}, {8}):
        raise ValueError("phantom lines must all have 6 (2D) or 8 (3D) fields")
    t = np.array(rows)
    d = 2 if t.shape[1] == 6 else 3
    return EllipsePhantom(t[:, :d], t[:, d:2 * d], t[:, 2 * d], t[:, 2 * d + 1])


def write_phantom(phantom: EllipsePhantom, path) -> None:
    d = phantom.ndim
    head = "cx cy cz ax ay az angle value" if d == 3 else "cx cy ax ay angle value"
    lines = [f"# {head}  (mm, mm, radians, 1/mm)"]
    for c, a, th, v in zip(phantom.centers, phantom.axes, phantom.angles, phantom.values):
        lines.append(" ".join(repr(float(x)) for x in (*c, *a, th, v)))
    Path(path).write_text("\n".join(lines) + "\n")
