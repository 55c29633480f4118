import numpy as np
import pytest

from inrct.grid import FanBeamGeometry, VoxelGrid, full_circle_angles, make_fov_mask
from inrct.projector import ImageVec, Projector
from inrct.reconstruct import (METRIC_COLUMNS, AdamState, MetricsLog, ReconConfig, adam_step, build_problem,
                               cgls, image_mse, train_inr)

TINY = dict(grid_size="16", voxel_size="2.0", num_views="8", num_det="24", hidden_width="8",
            hidden_layers="2", num_features="8", sigma="1.0", metrics_every="1")


def tiny_cfg(**kw):
    return ReconConfig.from_mapping({**TINY, **{k: str(v) for k, v in kw.items()}})


def test_adam_first_step_moves_by_lr():
    state = AdamState.zeros(4, lr=0.01)
    g = np.array([3.0, -0.2, 1e-3, 50.0])
    state, theta = adam_step(state, np.zeros(4), g)
    np.testing.assert_allclose(theta, -0.01 * np.sign(g), rtol=1e-4)
    assert state.t == 1


def test_adam_zero_gradient_is_fixed_point():
    state = AdamState.zeros(3)
    theta = np.array([1.0, -2.0, 0.5])
    for _ in range(5):
        state, new = adam_step(state, theta, np.zeros(3))
        np.testing.assert_array_equal(new, theta)


def test_adam_does_not_mutate_inputs():
    state = AdamState.zeros(2)
    theta = np.ones(2)
    adam_step(state, theta, np.ones(2))
    assert state.t == 0 and not state.m.any()
    np.testing.assert_array_equal(theta, 1.0)


def test_adam_length_mismatch():
    with pytest.raises(ValueError):
        adam_step(AdamState.zeros(3), np.zeros(3), np.zeros(4))


def test_cgls_small_dense_system():
    grid = VoxelGrid((6, 6), 1.0)
    geom = FanBeamGeometry(full_circle_angles(24), 30.0, 60.0, 16, 0.8)
    P = Projector(grid, geom).matrix()
    x_true = np.random.default_rng(0).random(36)
    y = (P @ x_true).reshape(geom.sino_shape)
    x, res = cgls(geom, grid, y, 80, return_residuals=True)
    ref = np.linalg.lstsq(P, y.ravel(), rcond=None)[0]
    assert np.linalg.norm(x.values.ravel() - ref) <= 1e-8 * np.linalg.norm(ref)
    # CGLS residual norms never increase
    assert np.all(np.diff(res) <= 1e-12 * res[0])


def test_cgls_zero_data():
    grid = VoxelGrid((4, 4), 1.0)
    geom = FanBeamGeometry(full_circle_angles(4), 30.0, 60.0, 8, 1.0)
    assert not cgls(geom, grid, np.zeros(geom.sino_shape), 5).values.any()
    with pytest.raises(ValueError):
        cgls(geom, grid, np.zeros(geom.sino_shape), 0)


def test_image_mse_matches_loop():
    grid = VoxelGrid((10, 10), 1.0)
    mask = make_fov_mask(grid, "inscribed")
    rng = np.random.default_rng(1)
    a, b = rng.random((2, 10, 10))
    vals = [(a[j, i] - b[j, i]) ** 2 for j in range(10) for i in range(10) if mask.inside[j, i]]
    assert image_mse(a, b, mask) == pytest.approx(np.mean(vals), rel=1e-14)
    assert image_mse(a, a, mask) == 0.0
    with pytest.raises(ValueError):
        image_mse(ImageVec(VoxelGrid((5, 5), 1.0), np.zeros((5, 5))), a, mask)


def test_metrics_log(tmp_path):
    log = MetricsLog()
    log.append(1, 2.0, 0.1, 0.0, 16.0)
    log.append(10, 1.0, 0.05, 1.5, 16.0)
    with pytest.raises(ValueError):
        log.append(10, 1.0, 0.05, 1.5, 16.0)
    log.write_csv(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == ",".join(METRIC_COLUMNS)
    assert len(lines) == 3
    np.testing.assert_array_equal(log.column("iteration"), [1, 10])


def test_config_parsing(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\ngrid_size = 32\nbatch_fraction = 1/16\narch = siren\n")
    cfg = ReconConfig.from_file(p, iterations="7")
    assert cfg.grid_size == 32 and cfg.batch_fraction == 1 / 16 and cfg.iterations == 7
    assert cfg.learning_rate() == 1e-4
    assert ReconConfig.from_mapping({"arch": "ffn"}).learning_rate() == 1e-3
    back = ReconConfig.from_mapping({k: v for k, v in
                                     (l.split(" = ") for l in cfg.to_text().splitlines())})
    assert back == cfg
    with pytest.raises(ValueError):
        ReconConfig.from_mapping({"bogus": "1"})
    with pytest.raises(ValueError):
        ReconConfig.from_mapping({"iterations": "0"})
    with pytest.raises(ValueError):
        ReconConfig.from_mapping({"batch_fraction": "1.5"})


def test_full_batch_training_matches_exact():
    prob = build_problem(tiny_cfg())
    a = train_inr(tiny_cfg(iterations=6, batch_fraction=1), prob)
    b = train_inr(tiny_cfg(iterations=6, estimator="exact"), prob)
    np.testing.assert_allclose(a.log.column("loss"), b.log.column("loss"), rtol=1e-10)
    assert a.log.column("memory_ratio")[0] == 1.0


def test_training_is_reproducible():
    prob = build_problem(tiny_cfg())
    a = train_inr(tiny_cfg(iterations=4, batch_fraction=0.25), prob)
    b = train_inr(tiny_cfg(iterations=4, batch_fraction=0.25), prob)
    np.testing.assert_array_equal(a.image.values, b.image.values)
    assert a.log.column("memory_ratio")[0] == pytest.approx(4.0, rel=0.02)


def test_small_lr_exact_training_is_monotone():
    cfg = tiny_cfg(iterations=100, estimator="exact", lr=1e-4)
    loss = train_inr(cfg).log.column("loss")
    assert np.all(np.diff(loss) <= 0)
    assert loss[-1] < loss[0]


def test_view_subsets_run():
    res = train_inr(tiny_cfg(iterations=4, view_subsets=4))
    assert len(res.log.rows) == 4


def test_outputs_written(tmp_path):
    from inrct import io
    cfg = tiny_cfg(iterations=3, output_dir=str(tmp_path / "run"))
    res = train_inr(cfg)
    out = tmp_path / "run"
    for name in ("run_config.txt", "metrics.csv", "recon.raw", "recon.raw.hdr", "model.arch.txt",
                 "model.theta.raw", "final.txt"):
        assert (out / name).exists(), name
    img = io.read_image(out / "recon.raw")
    np.testing.assert_allclose(img.values, res.image.values, rtol=1e-6, atol=1e-9)
    model = io.load_checkpoint(out / "model")
    x = np.random.default_rng(0).uniform(-1, 1, (20, 2))
    np.testing.assert_array_equal(model.eval(x), res.model.eval(x))
