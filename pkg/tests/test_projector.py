import numpy as np
import pytest

from inrct import _backend
from inrct.grid import ConeBeamGeometry, FanBeamGeometry, VoxelGrid, covering_det_spacing, full_circle_angles
from inrct.projector import (ImageVec, Projector, RampFilter, Sinogram, apply_ramp, back_project,
                             fbp_reconstruct, forward_project)


def fan(grid, views=30, det=96, sod=500.0, sdd=1000.0):
    return FanBeamGeometry(full_circle_angles(views), sod, sdd, det,
                           covering_det_spacing(grid, sod, sdd, det))


def cone(grid, views=20, det=48, rows=32, sod=500.0, sdd=1000.0):
    row = 1.1 * grid.dims[2] * grid.spacing[2] * sdd / (sod - grid.half_extent[0]) / rows
    return ConeBeamGeometry(full_circle_angles(views), sod, sdd, det,
                            covering_det_spacing(grid, sod, sdd, det), rows, row)


@pytest.fixture(scope="module")
def setup2d():
    grid = VoxelGrid((24, 20), (2.0, 2.5))
    return grid, fan(grid, views=12, det=40)


@pytest.fixture(scope="module")
def setup3d():
    grid = VoxelGrid((10, 12, 8), (2.0, 2.0, 2.5))
    return grid, cone(grid, views=6, det=20, rows=12)


def ray_box_length(p0, p1, lo, hi):
    """Slab-method length of segment p0->p1 inside the box [lo, hi]."""
    d = p1 - p0
    t0, t1 = 0.0, 1.0
    for k in range(len(d)):
        if d[k] == 0:
            if not lo[k] <= p0[k] <= hi[k]:
                return 0.0
            continue
        a, b = (lo[k] - p0[k]) / d[k], (hi[k] - p0[k]) / d[k]
        t0, t1 = max(t0, min(a, b)), min(t1, max(a, b))
    return max(0.0, t1 - t0) * np.linalg.norm(d)


def test_zero_image_gives_zero_sinogram(setup2d):
    grid, geom = setup2d
    assert not forward_project(ImageVec.zeros(grid), geom).values.any()
    assert not back_project(Sinogram.zeros(geom), grid).values.any()


@pytest.mark.parametrize("angle", [0.0, 0.3, np.pi / 4, 1.1, 2.0, 3.5])
def test_center_voxel_central_ray_is_intersection_length(angle):
    grid = VoxelGrid((5, 5), (1.0, 1.0))
    img = np.zeros(grid.shape)
    img[2, 2] = 1.0
    geom = FanBeamGeometry(np.array([angle]), 50.0, 100.0, 1, 1.0)
    src, end = geom.rays()
    expected = ray_box_length(src[0], end[0], np.array([-0.5, -0.5]), np.array([0.5, 0.5]))
    got = Projector(grid, geom).forward(img)[0, 0]
    assert got == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("angle", [0.2, 0.9, 2.5])
def test_center_voxel_3d_central_ray(angle):
    grid = VoxelGrid((5, 5, 5), 1.0)
    img = np.zeros(grid.shape)
    img[2, 2, 2] = 1.0
    geom = ConeBeamGeometry(np.array([angle]), 50.0, 100.0, 1, 1.0, 1, 1.0)
    src, end = geom.rays()
    expected = ray_box_length(src[0], end[0], -0.5 * np.ones(3), 0.5 * np.ones(3))
    assert Projector(grid, geom).forward(img).ravel()[0] == pytest.approx(expected, rel=1e-12)


def test_uniform_image_line_integral():
    # central ray through a uniform square slab at angle 0 crosses its full width
    grid = VoxelGrid((16, 16), (1.0, 1.0))
    geom = FanBeamGeometry(np.array([0.0]), 100.0, 200.0, 1, 1.0)
    got = Projector(grid, geom).forward(np.full(grid.shape, 0.02))[0, 0]
    assert got == pytest.approx(0.02 * 16, rel=1e-12)


def test_linearity(setup2d):
    grid, geom = setup2d
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((2,) + grid.shape)
    P = Projector(grid, geom)
    lhs = P.forward(a + 2.5 * b)
    rhs = P.forward(a) + 2.5 * P.forward(b)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(rhs)


@pytest.mark.parametrize("which", ["setup2d", "setup3d"])
def test_adjoint_dot_product(which, request):
    grid, geom = request.getfixturevalue(which)
    P = Projector(grid, geom)
    rng = np.random.default_rng(11)
    for _ in range(5):
        x = rng.standard_normal(grid.shape)
        y = rng.standard_normal(geom.sino_shape)
        Px = P.forward(x)
        err = abs(np.vdot(Px, y) - np.vdot(x, P.back(y)))
        assert err <= 1e-10 * np.linalg.norm(Px) * np.linalg.norm(y)


def test_one_hot_backprojection_is_matrix_row(setup2d):
    grid, geom = setup2d
    P = Projector(grid, geom)
    A = P.matrix()
    for j in (0, 57, geom.num_rays - 1):
        e = np.zeros(geom.num_rays)
        e[j] = 1.0
        np.testing.assert_allclose(P.back(e).ravel(), A[j], rtol=0, atol=1e-14)


@pytest.mark.parametrize("which", ["setup2d", "setup3d"])
def test_python_fallback_matches_compiled(which, request):
    grid, geom = request.getfixturevalue(which)
    P = Projector(grid, geom)
    rng = np.random.default_rng(5)
    x = rng.standard_normal(grid.shape)
    y = rng.standard_normal(geom.sino_shape)
    np.testing.assert_allclose(P.forward(x, _backend.python_kernels), P.forward(x), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(P.back(y, _backend.python_kernels), P.back(y), rtol=1e-12, atol=1e-12)


def test_dimension_mismatch():
    grid3 = VoxelGrid((4, 4, 4), 1.0)
    with pytest.raises(ValueError):
        Projector(grid3, FanBeamGeometry(full_circle_angles(3), 50.0, 100.0, 8, 1.0))
    with pytest.raises(ValueError):
        Projector(VoxelGrid((200, 200), 1.0), FanBeamGeometry(full_circle_angles(3), 50.0, 100.0, 8, 1.0))


def test_resolution_refinement_converges():
    from inrct.phantoms import rasterize, shepp_logan_2d
    # a smooth phantom: wide overlapping ellipses with soft steps replaced by supersampling
    coarse = VoxelGrid((32, 32), 8.0)
    geom = fan(coarse, views=16, det=64)
    ph = shepp_logan_2d(scale=120.0)
    sinos = []
    for f in (1, 2, 4, 8):
        g = coarse.refined(f)
        sinos.append(Projector(g, geom).forward(rasterize(ph, g, 4).values))
    diffs = [np.linalg.norm(sinos[k + 1] - sinos[k]) for k in range(3)]
    assert diffs[0] > diffs[1] > diffs[2]


# --- ramp filter -----------------------------------------------------------

def closed_form_ramlak(k, d):
    if k == 0:
        return 1.0 / (4 * d * d)
    if k % 2 == 0:
        return 0.0
    return -1.0 / (np.pi * k * d) ** 2


@pytest.mark.parametrize("spacing", [1.0, 0.37, 2.5])
def test_ramp_delta_response(spacing):
    nd = 33
    filt = RampFilter(nd, spacing)
    delta = np.zeros((1, nd))
    delta[0, nd // 2] = 1.0 / spacing  # unit-area discrete delta
    out = apply_ramp(delta, filt)[0]
    expected = np.array([closed_form_ramlak(j - nd // 2, spacing) for j in range(nd)])
    assert np.max(np.abs(out - expected)) <= 1e-12 * np.max(np.abs(expected))


def test_ramp_kernel_symmetric():
    filt = RampFilter(17, 0.8)
    np.testing.assert_array_equal(filt.kernel, filt.kernel[::-1])
    np.testing.assert_array_equal(filt.matrix, filt.matrix.T)


def test_ramp_suppresses_dc():
    nd = 256
    filt = RampFilter(nd, 1.0)
    out = apply_ramp(np.ones((1, nd)), filt)[0]
    # truncation leaves a small tail at the row ends; the middle is nearly zero
    assert np.max(np.abs(out[96:160])) < 0.01 * filt.kernel[nd - 1]
    assert np.max(np.abs(out)) < filt.kernel[nd - 1]


def test_ramp_symmetric_operator():
    rng = np.random.default_rng(0)
    filt = RampFilter(40, 1.3)
    a, b = rng.standard_normal((2, 7, 40))
    lhs = np.vdot(apply_ramp(a, filt), b)
    rhs = np.vdot(a, apply_ramp(b, filt))
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_ramp_size_mismatch():
    with pytest.raises(ValueError):
        apply_ramp(np.ones((3, 10)), RampFilter(12, 1.0))


def test_ramp_filters_along_detector_columns_in_3d():
    grid = VoxelGrid((4, 4, 4), 1.0)
    geom = ConeBeamGeometry(full_circle_angles(2), 50.0, 100.0, 9, 1.0, 5, 1.0)
    rng = np.random.default_rng(2)
    s = rng.standard_normal(geom.sino_shape)
    filt = RampFilter(9, 1.0)
    out = apply_ramp(Sinogram(geom, s), filt).values
    # each (view, row) is filtered independently
    np.testing.assert_allclose(out[1, 3], apply_ramp(s[1, 3][None], filt)[0], rtol=1e-14)


# --- FBP -------------------------------------------------------------------

def disk_fan_sinogram(geom, radius, value):
    src, end = geom.rays()
    d = end - src
    dist = np.abs(src[:, 0] * d[:, 1] - src[:, 1] * d[:, 0]) / np.linalg.norm(d, axis=1)
    return 2 * value * np.sqrt(np.clip(radius ** 2 - dist ** 2, 0, None)).reshape(geom.sino_shape)


def test_fbp_disk_interior_mean():
    grid = VoxelGrid((128, 128), 1.0)
    geom = fan(grid, views=360, det=256)
    sino = Sinogram(geom, disk_fan_sinogram(geom, 40.0, 0.02))
    rec = fbp_reconstruct(sino, grid).values
    c = grid.centers()
    interior = (np.hypot(c[:, 0], c[:, 1]) < 30.0).reshape(grid.shape)
    assert rec[interior].mean() == pytest.approx(0.02, rel=0.02)


def test_fdk_ball_central_slice():
    grid = VoxelGrid((48, 48, 16), 2.0)
    geom = cone(grid, views=180, det=96, rows=24)
    # a cylinder is exactly reconstructable on the central slice; use the analytic fan
    # integrals of a disk scaled by the ray's in-plane obliquity
    src, end = geom.rays()
    d = end - src
    dxy = d[:, :2]
    dist = np.abs(src[:, 0] * dxy[:, 1] - src[:, 1] * dxy[:, 0]) / np.linalg.norm(dxy, axis=1)
    chord = 2 * np.sqrt(np.clip(30.0 ** 2 - dist ** 2, 0, None))
    lengths = chord * np.linalg.norm(d, axis=1) / np.linalg.norm(dxy, axis=1)
    sino = Sinogram(geom, 0.02 * lengths)
    rec = fbp_reconstruct(sino, grid).values
    c = grid.centers()
    interior = ((np.hypot(c[:, 0], c[:, 1]) < 22.0) & (np.abs(c[:, 2]) < 4.0)).reshape(grid.shape)
    assert rec[interior].mean() == pytest.approx(0.02, rel=0.03)


def test_fbp_zero_and_guard(setup2d):
    grid, geom = setup2d
    assert not fbp_reconstruct(Sinogram.zeros(geom), grid).values.any()
    one_view = FanBeamGeometry(np.array([0.0]), geom.source_to_iso, geom.source_to_detector,
                               geom.num_det, geom.det_spacing)
    with pytest.raises(ValueError):
        fbp_reconstruct(Sinogram.zeros(one_view), grid)


def test_fbp_dense_views_beat_sparse():
    from inrct.phantoms import rasterize, shepp_logan_2d
    grid = VoxelGrid((64, 64), 2.0)
    ph = shepp_logan_2d(scale=60.0)
    truth = rasterize(ph, grid, 4).values
    fine = grid.refined(4)
    fine_img = rasterize(ph, fine, 1).values
    errs = []
    for views in (60, 720):
        geom = fan(grid, views=views, det=128)
        sino = Sinogram(geom, Projector(fine, geom).forward(fine_img))
        errs.append(np.mean((fbp_reconstruct(sino, grid).values - truth) ** 2))
    assert errs[1] < errs[0]
