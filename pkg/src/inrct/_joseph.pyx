# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Joseph projector kernels.

Every ray is given in continuous voxel-index coordinates: ``start`` plus
``direction`` scaled by t in [0, 1].  The ray is sampled once per voxel plane
along its dominant axis ``axis``; neighbours in the remaining axes are
linearly (2D) or bilinearly (3D) interpolated, voxels outside the grid count
as zero.  ``weight`` is the ray length per plane in mm.

The back projection visits exactly the same stencil as the forward pass and
scatters, so the pair is an exact transpose.
"""
from libc.math cimport floor

import numpy as np


def forward_2d(const double[:, ::1] image, const double[:, ::1] start,
               const double[:, ::1] direction, const long[::1] axis,
               const double[::1] weight):
    cdef Py_ssize_t ny = image.shape[0], nx = image.shape[1]
    cdef Py_ssize_t m = start.shape[0]
    out_arr = np.zeros(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t r, i, j0, n_dom, n_oth
    cdef int a, o
    cdef double t, q, f, acc, v0, v1
    with nogil:
        for r in range(m):
            a = <int>axis[r]
            o = 1 - a
            n_dom = nx if a == 0 else ny
            n_oth = ny if a == 0 else nx
            acc = 0.0
            for i in range(n_dom):
                t = (i - start[r, a]) / direction[r, a]
                if t < 0.0 or t > 1.0:
                    continue
                q = start[r, o] + t * direction[r, o]
                if q <= -1.0 or q >= n_oth:
                    continue
                j0 = <Py_ssize_t>floor(q)
                f = q - j0
                v0 = 0.0
                v1 = 0.0
                if a == 0:
                    if j0 >= 0:
                        v0 = image[j0, i]
                    if j0 + 1 < n_oth:
                        v1 = image[j0 + 1, i]
                else:
                    if j0 >= 0:
                        v0 = image[i, j0]
                    if j0 + 1 < n_oth:
                        v1 = image[i, j0 + 1]
                acc = acc + (1.0 - f) * v0 + f * v1
            out[r] = acc * weight[r]
    return out_arr


def back_2d(const double[::1] sino, const double[:, ::1] start,
            const double[:, ::1] direction, const long[::1] axis,
            const double[::1] weight, Py_ssize_t ny, Py_ssize_t nx):
    image_arr = np.zeros((ny, nx), dtype=np.float64)
    cdef double[:, ::1] image = image_arr
    cdef Py_ssize_t m = start.shape[0]
    cdef Py_ssize_t r, i, j0, n_dom, n_oth
    cdef int a, o
    cdef double t, q, f, s
    with nogil:
        for r in range(m):
            s = sino[r] * weight[r]
            if s == 0.0:
                continue
            a = <int>axis[r]
            o = 1 - a
            n_dom = nx if a == 0 else ny
            n_oth = ny if a == 0 else nx
            for i in range(n_dom):
                t = (i - start[r, a]) / direction[r, a]
                if t < 0.0 or t > 1.0:
                    continue
                q = start[r, o] + t * direction[r, o]
                if q <= -1.0 or q >= n_oth:
                    continue
                j0 = <Py_ssize_t>floor(q)
                f = q - j0
                if a == 0:
                    if j0 >= 0:
                        image[j0, i] += (1.0 - f) * s
                    if j0 + 1 < n_oth:
                        image[j0 + 1, i] += f * s
                else:
                    if j0 >= 0:
                        image[i, j0] += (1.0 - f) * s
                    if j0 + 1 < n_oth:
                        image[i, j0 + 1] += f * s
    return image_arr


cdef inline void _others(int a, int* o1, int* o2) noexcept nogil:
    if a == 0:
        o1[0] = 1
        o2[0] = 2
    elif a == 1:
        o1[0] = 0
        o2[0] = 2
    else:
        o1[0] = 0
        o2[0] = 1


def forward_3d(const double[:, :, ::1] vol, const double[:, ::1] start,
               const double[:, ::1] direction, const long[::1] axis,
               const double[::1] weight):
    cdef Py_ssize_t dims[3]
    dims[0] = vol.shape[2]
    dims[1] = vol.shape[1]
    dims[2] = vol.shape[0]
    cdef Py_ssize_t st[3]
    st[0] = 1
    st[1] = dims[0]
    st[2] = dims[0] * dims[1]
    cdef const double* data = &vol[0, 0, 0]
    cdef Py_ssize_t m = start.shape[0]
    out_arr = np.zeros(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t r, i, p0, q0, np_, nq, base
    cdef int a, o1, o2
    cdef double t, p, q, fp, fq, acc, v00, v10, v01, v11
    with nogil:
        for r in range(m):
            a = <int>axis[r]
            _others(a, &o1, &o2)
            np_ = dims[o1]
            nq = dims[o2]
            acc = 0.0
            for i in range(dims[a]):
                t = (i - start[r, a]) / direction[r, a]
                if t < 0.0 or t > 1.0:
                    continue
                p = start[r, o1] + t * direction[r, o1]
                q = start[r, o2] + t * direction[r, o2]
                if p <= -1.0 or p >= np_ or q <= -1.0 or q >= nq:
                    continue
                p0 = <Py_ssize_t>floor(p)
                q0 = <Py_ssize_t>floor(q)
                fp = p - p0
                fq = q - q0
                base = i * st[a] + p0 * st[o1] + q0 * st[o2]
                v00 = 0.0
                v10 = 0.0
                v01 = 0.0
                v11 = 0.0
                if q0 >= 0:
                    if p0 >= 0:
                        v00 = data[base]
                    if p0 + 1 < np_:
                        v10 = data[base + st[o1]]
                if q0 + 1 < nq:
                    if p0 >= 0:
                        v01 = data[base + st[o2]]
                    if p0 + 1 < np_:
                        v11 = data[base + st[o1] + st[o2]]
                acc = acc + ((1.0 - fp) * (1.0 - fq) * v00 + fp * (1.0 - fq) * v10
                             + (1.0 - fp) * fq * v01 + fp * fq * v11)
            out[r] = acc * weight[r]
    return out_arr


def back_3d(const double[::1] sino, const double[:, ::1] start,
            const double[:, ::1] direction, const long[::1] axis,
            const double[::1] weight, Py_ssize_t nz, Py_ssize_t ny, Py_ssize_t nx):
    vol_arr = np.zeros((nz, ny, nx), dtype=np.float64)
    cdef double[:, :, ::1] vol = vol_arr
    cdef Py_ssize_t dims[3]
    dims[0] = nx
    dims[1] = ny
    dims[2] = nz
    cdef Py_ssize_t st[3]
    st[0] = 1
    st[1] = nx
    st[2] = nx * ny
    cdef double* data = &vol[0, 0, 0]
    cdef Py_ssize_t m = start.shape[0]
    cdef Py_ssize_t r, i, p0, q0, np_, nq, base
    cdef int a, o1, o2
    cdef double t, p, q, fp, fq, s
    with nogil:
        for r in range(m):
            s = sino[r] * weight[r]
            if s == 0.0:
                continue
            a = <int>axis[r]
            _others(a, &o1, &o2)
            np_ = dims[o1]
            nq = dims[o2]
            for i in range(dims[a]):
                t = (i - start[r, a]) / direction[r, a]
                if t < 0.0 or t > 1.0:
                    continue
                p = start[r, o1] + t * direction[r, o1]
                q = start[r, o2] + t * direction[r, o2]
                if p <= -1.0 or p >= np_ or q <= -1.0 or q >= nq:
                    continue
                p0 = <Py_ssize_t>floor(p)
                q0 = <Py_ssize_t>floor(q)
                fp = p - p0
                fq = q - q0
                base = i * st[a] + p0 * st[o1] + q0 * st[o2]
                if q0 >= 0:
                    if p0 >= 0:
                        data[base] += (1.0 - fp) * (1.0 - fq) * s
                    if p0 + 1 < np_:
                        data[base + st[o1]] += fp * (1.0 - fq) * s
                if q0 + 1 < nq:
                    if p0 >= 0:
                        data[base + st[o2]] += (1.0 - fp) * fq * s
                    if p0 + 1 < np_:
                        data[base + st[o1] + st[o2]] += fp * fq * s
    return vol_arr
