"""NumPy fallback for the Joseph projector kernels.

Same signatures and stencil as the compiled ``_joseph`` module; vectorized
over rays, looping over voxel planes.  Used when the extension is not built
or when ``INRCT_PURE_PYTHON=1``.
"""
import numpy as np


def _plane_samples(start, direction, axis, dims, a):
    """Yield (plane, ray ids, other-axis positions) for rays dominant in ``a``."""
    rays = np.flatnonzero(axis == a)
    if rays.size == 0:
        return
    others = [k for k in range(len(dims)) if k != a]
    s_a = start[rays, a]
    d_a = direction[rays, a]
    for i in range(dims[a]):
        t = (i - s_a) / d_a
        pos = [start[rays, k] + t * direction[rays, k] for k in others]
        ok = (t >= 0.0) & (t <= 1.0)
        for k, p in zip(others, pos):
            ok &= (p > -1.0) & (p < dims[k])
        if not ok.any():
            continue
        yield i, rays[ok], [p[ok] for p in pos]


def _stencil(i, pos, dims, a):
    """Flat voxel indices and interpolation weights for one plane.

    Returns a list of ``(flat_index, weight, inside)`` per stencil corner.
    """
    others = [k for k in range(len(dims)) if k != a]
    lo = [np.floor(p).astype(np.int64) for p in pos]
    frac = [p - l for p, l in zip(pos, lo)]
    # row-major strides with x fastest
    strides = [1, dims[0], dims[0] * dims[1]][: len(dims)]
    corners = []
    for bits in range(1 << len(others)):
        idx = i * strides[a]
        w = 1.0
        inside = True
        for b, k in enumerate(others):
            step = (bits >> b) & 1
            c = lo[b] + step
            inside = inside & (c >= 0) & (c < dims[k])
            idx = idx + np.clip(c, 0, dims[k] - 1) * strides[k]
            w = w * (frac[b] if step else 1.0 - frac[b])
        corners.append((idx, w, inside))
    return corners


def _forward(vol, start, direction, axis, weight):
    dims = vol.shape[::-1]
    flat = vol.reshape(-1)
    out = np.zeros(start.shape[0])
    for a in range(len(dims)):
        for i, rays, pos in _plane_samples(start, direction, axis, dims, a):
            acc = np.zeros(rays.size)
            for idx, w, inside in _stencil(i, pos, dims, a):
                acc += np.where(inside, w * flat[idx], 0.0)
            out[rays] += acc
    return out * weight


def _back(sino, start, direction, axis, weight, shape):
    dims = shape[::-1]
    size = int(np.prod(shape))
    s = sino * weight
    acc = np.zeros(size)
    for a in range(len(dims)):
        for i, rays, pos in _plane_samples(start, direction, axis, dims, a):
            for idx, w, inside in _stencil(i, pos, dims, a):
                vals = np.where(inside, w * s[rays], 0.0)
                acc += np.bincount(idx, weights=vals, minlength=size)
    return acc.reshape(shape)


def forward_2d(image, start, direction, axis, weight):
    return _forward(np.asarray(image), start, direction, axis, weight)


def back_2d(sino, start, direction, axis, weight, ny, nx):
    return _back(np.asarray(sino), start, direction, axis, weight, (ny, nx))


def forward_3d(vol, start, direction, axis, weight):
    return _forward(np.asarray(vol), start, direction, axis, weight)


def back_3d(sino, start, direction, axis, weight, nz, ny, nx):
    return _back(np.asarray(sino), start, direction, axis, weight, (nz, ny, nx))
