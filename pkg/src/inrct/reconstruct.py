"""INR training with Adam, the CGLS baseline, metrics and experiment setup."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import io
from .gradient import (coords_for, estimate_from_pass, exact_step, forward_pass, memory_proxy, projector_for,
                       restrict_views)
from .grid import (ConeBeamGeometry, FanBeamGeometry, FovMask, VoxelGrid, covering_det_spacing,
                   full_circle_angles, make_fov_mask, sample_index_batch)
from .inr import InrConfig, InrModel, flatten_params, init_model, unflatten_params
from .objective import LossKind
from .phantoms import (ellipsoid_phantom_3d, downsample, rasterize, read_phantom, shepp_logan_2d,
                       simulate_measurements)
from .projector import ImageVec, Projector, Sinogram, fbp_reconstruct

log = logging.getLogger(__name__)


# --- Adam ------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, p: int, **hyper) -> "AdamState":
        return cls(np.zeros(p), np.zeros(p), **hyper)


def adam_step(state: AdamState, theta: np.ndarray, grad: np.ndarray) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update; returns a new state and new parameters."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if not (theta.shape == grad.shape == state.m.shape):
        raise ValueError(f"length mismatch: theta {theta.shape}, grad {grad.shape}, state {state.m.shape}")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    new_theta = theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, t=t), new_theta


# --- CGLS ------------------------------------------------------------------

def cgls(geom, grid: VoxelGrid, y, iterations: int, return_residuals: bool = False):
    """Conjugate gradients on ``min_x |P x - y|^2`` from ``x = 0``.

    With ``return_residuals`` also returns ``|P x_k - y|`` for k = 0..K.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    P = projector_for(grid, geom)
    yv = (y.values if isinstance(y, Sinogram) else np.asarray(y, dtype=np.float64)).reshape(geom.sino_shape)
    x = np.zeros(grid.shape)
    r = yv.copy()
    s = P.back(r)
    p = s.copy()
    gamma = float(np.vdot(s, s))
    history = [float(np.linalg.norm(r))]
    for _ in range(iterations):
        if gamma == 0.0:
            break
        q = P.forward(p)
        qq = float(np.vdot(q, q))
        if qq == 0.0:
            break
        alpha = gamma / qq
        x += alpha * p
        r -= alpha * q
        s = P.back(r)
        gamma_new = float(np.vdot(s, s))
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
        history.append(float(np.linalg.norm(r)))
    out = ImageVec(grid, x)
    return (out, np.array(history)) if return_residuals else out


# --- metrics ---------------------------------------------------------------

def image_mse(recon, truth, mask: FovMask) -> float:
    """Mean squared difference over voxels inside ``mask``."""
    rv = recon.values if isinstance(recon, ImageVec) else np.asarray(recon)
    tv = truth.values if isinstance(truth, ImageVec) else np.asarray(truth)
    for img in (recon, truth):
        if isinstance(img, ImageVec) and img.grid != mask.grid:
            raise ValueError("image grid does not match the mask grid")
    if rv.shape != mask.grid.shape or tv.shape != mask.grid.shape:
        raise ValueError("image shape does not match the mask grid")
    diff = mask.gather(rv) - mask.gather(tv)
    return float(np.mean(diff * diff))


METRIC_COLUMNS = ("iteration", "loss", "image_mse", "wall_time_s", "memory_ratio")


@dataclass
class MetricsLog:
    rows: list[tuple] = field(default_factory=list)

    def append(self, iteration, loss, mse, wall, ratio):
        if self.rows and iteration <= self.rows[-1][0]:
            raise ValueError("iterations must be strictly increasing")
        self.rows.append((int(iteration), float(loss), float(mse), float(wall), float(ratio)))

    def column(self, name: str) -> np.ndarray:
        return np.array([r[METRIC_COLUMNS.index(name)] for r in self.rows])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(METRIC_COLUMNS)
            for it, loss, mse, wall, ratio in self.rows:
                w.writerow([it, repr(loss), repr(mse), f"{wall:.4f}", repr(ratio)])


# --- configuration ---------------------------------------------------------

_INR_FIELDS = {f.name for f in fields(InrConfig)} - {"arch"}


@dataclass
class ReconConfig:
    """Everything a run needs.  ``None`` means "derive a default"."""

    # acquisition and grid
    ndim: int = 2
    grid_size: int = 128
    voxel_size: float = 2.0
    sim_factor: int = 4
    sim_supersample: int = 1
    num_views: int = 60
    num_det: int = 192
    num_det_rows: int = 1
    det_spacing: float | None = None
    det_row_spacing: float | None = None
    source_to_iso: float = 500.0
    source_to_detector: float = 1000.0
    mask: str = "inscribed"
    noise_sigma: float = 0.0
    phantom: str = "shepp-logan"
    sinogram: str | None = None
    truth: str | None = None
    # model
    arch: str = "ffn"
    hidden_width: int | None = None
    hidden_layers: int | None = None
    num_features: int | None = None
    sigma: float | None = None
    omega0: float | None = None
    levels: int | None = None
    log2_table_size: int | None = None
    features_per_level: int | None = None
    base_resolution: int | None = None
    max_resolution: int | None = None
    output_scale: float = 0.02
    # optimization
    loss: str = "fls"
    estimator: str = "stochastic"
    batch_fraction: float = 1 / 16
    view_subsets: int = 1
    iterations: int = 2000
    lr: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    output_dir: str | None = None
    metrics_every: int = 10

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.ndim not in (2, 3):
            raise ValueError("ndim must be 2 or 3")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 < self.batch_fraction <= 1:
            raise ValueError("batch_fraction must be in (0, 1]")
        if self.loss not in ("ls", "fls"):
            raise ValueError("loss must be 'ls' or 'fls'")
        if self.estimator not in ("stochastic", "exact"):
            raise ValueError("estimator must be 'stochastic' or 'exact'")
        if self.metrics_every < 1:
            raise ValueError("metrics_every must be >= 1")
        if self.view_subsets < 1 or self.view_subsets > self.num_views:
            raise ValueError("view_subsets must be in [1, num_views]")
        if self.sim_factor < 2 and self.sinogram is None:
            raise ValueError("sim_factor must be >= 2 (inverse-crime guard)")
        if self.lr is not None and not self.lr > 0:
            raise ValueError("lr must be > 0")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ReconConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, raw in mapping.items():
            key = key.replace("-", "_")
            if key not in kinds:
                raise ValueError(f"unknown config key {key!r}")
            kw[key] = _coerce(raw, kinds[key])
        return cls(**kw)

    @classmethod
    def from_file(cls, path, **overrides) -> "ReconConfig":
        mapping = io.parse_kv(Path(path).read_text())
        mapping.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(mapping)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items() if v is not None)

    def inr_config(self) -> InrConfig:
        kw = {k: getattr(self, k) for k in _INR_FIELDS if getattr(self, k) is not None}
        if self.arch == "hash":
            kw.setdefault("max_resolution", self.grid_size)
        return InrConfig.default(self.arch, **kw)

    def learning_rate(self) -> float:
        if self.lr is not None:
            return self.lr
        return 1e-4 if self.arch == "siren" else 1e-3


def _coerce(raw, kind: str):
    if not isinstance(raw, str):
        return raw
    if raw.lower() in ("none", ""):
        return None
    base = kind.replace(" | None", "")
    if base == "int":
        return int(raw)
    if base == "float":
        from fractions import Fraction
        return float(Fraction(raw)) if "/" in raw else float(raw)
    return raw


@dataclass(frozen=True, eq=False)
class Problem:
    """Measured data on a reconstruction grid, plus ground truth if known."""

    grid: VoxelGrid
    mask: FovMask
    geom: FanBeamGeometry
    y: Sinogram
    truth: ImageVec | None


def make_geometry(cfg: ReconConfig, grid: VoxelGrid):
    det = cfg.det_spacing or covering_det_spacing(grid, cfg.source_to_iso, cfg.source_to_detector, cfg.num_det)
    angles = full_circle_angles(cfg.num_views)
    if cfg.ndim == 2:
        return FanBeamGeometry(angles, cfg.source_to_iso, cfg.source_to_detector, cfg.num_det, det)
    # rows cover the volume's z extent at its near face, with a 5% margin
    half_z = grid.half_extent[2]
    near = cfg.source_to_iso - float(np.min(grid.half_extent[:2]))
    row = cfg.det_row_spacing or 1.05 * 2 * half_z * cfg.source_to_detector / near / cfg.num_det_rows
    return ConeBeamGeometry(angles, cfg.source_to_iso, cfg.source_to_detector, cfg.num_det, det,
                            cfg.num_det_rows, row)


def make_phantom(cfg: ReconConfig, grid: VoxelGrid):
    if cfg.phantom == "shepp-logan":
        ph = shepp_logan_2d if cfg.ndim == 2 else ellipsoid_phantom_3d
        return ph(scale=float(np.min(grid.half_extent)))
    return read_phantom(cfg.phantom)


def build_problem(cfg: ReconConfig) -> Problem:
    """Recon grid, mask, geometry, data, and truth for a config.

    Synthetic data is projected from a ``sim_factor`` times finer
    rasterization; the truth is that fine image block-averaged to the recon
    grid.
    """
    grid = VoxelGrid((cfg.grid_size,) * cfg.ndim, (cfg.voxel_size,) * cfg.ndim)
    mask = make_fov_mask(grid, cfg.mask)
    truth = io.read_image(cfg.truth) if cfg.truth else None
    if cfg.sinogram:
        y = io.read_sinogram(cfg.sinogram)
        return Problem(grid, mask, y.geometry, y, truth)
    geom = make_geometry(cfg, grid)
    phantom = make_phantom(cfg, grid)
    sim_grid = grid.refined(cfg.sim_factor)
    rng = np.random.default_rng([cfg.seed, 1])
    y = simulate_measurements(phantom, geom, sim_grid, grid, cfg.noise_sigma, rng, cfg.sim_supersample)
    if truth is None:
        fine = rasterize(phantom, sim_grid, cfg.sim_supersample)
        truth = downsample(fine, cfg.sim_factor)
    return Problem(grid, mask, geom, y, truth)


# --- training --------------------------------------------------------------

@dataclass
class TrainResult:
    model: InrModel
    log: MetricsLog
    image: ImageVec

    def __iter__(self):
        return iter((self.model, self.log, self.image))


def train_inr(cfg: ReconConfig, problem: Problem | None = None) -> TrainResult:
    """Fit an INR with Adam on exact or stochastic gradients.

    Row ``k`` of the metrics log describes the parameters entering
    iteration ``k`` (row 1 is the initialization).  The returned image is
    ``E{f}`` after the final update.
    """
    cfg.validate()
    problem = problem or build_problem(cfg)
    mask, geom = problem.mask, problem.geom
    kind = LossKind.make(cfg.loss, geom)
    init_rng, batch_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2))
    model = init_model(cfg.inr_config(), problem.grid.ndim, init_rng)
    theta = flatten_params(model)
    state = AdamState.zeros(theta.size, lr=cfg.learning_rate(), beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    batch_size = max(1, int(round(cfg.batch_fraction * mask.n)))
    stochastic = cfg.estimator == "stochastic"
    ratio = memory_proxy(model, mask, geom, batch_size).ratio if stochastic else 1.0
    subsets = [np.arange(s, geom.num_views, cfg.view_subsets) for s in range(cfg.view_subsets)]
    restricted = [restrict_views(geom, problem.y, v) for v in subsets] if cfg.view_subsets > 1 else None
    coords = coords_for(mask)

    log_ = MetricsLog()
    t0 = time.perf_counter()
    for it in range(1, cfg.iterations + 1):
        if restricted is None:
            g_geom, g_y = geom, problem.y
        else:
            g_geom, g_y = restricted[(it - 1) % cfg.view_subsets]
        if stochastic:
            fp = forward_pass(model, mask, g_geom, g_y, kind)
        else:
            fp, grad = exact_step(model, mask, g_geom, g_y, kind)
        if not np.isfinite(fp.loss):
            raise FloatingPointError(f"non-finite loss {fp.loss} at iteration {it}; "
                                     f"lr={state.lr}, |theta|max={np.abs(theta).max():.3g}")
        if it == 1 or it % cfg.metrics_every == 0 or it == cfg.iterations:
            mse = image_mse(mask.scatter(fp.values), problem.truth, mask) if problem.truth is not None else np.nan
            log_.append(it, fp.loss, mse, time.perf_counter() - t0, ratio)
            log.debug("iter %d loss %.6g mse %.6g", it, fp.loss, mse)
        if stochastic:
            batch = sample_index_batch(mask, batch_size, batch_rng)
            grad = estimate_from_pass(model, mask, fp, batch)
        if restricted is not None:
            grad = cfg.view_subsets * grad
        state, theta = adam_step(state, theta, grad)
        model = unflatten_params(model, theta)

    image = ImageVec(problem.grid, mask.scatter(model.eval(coords)))
    if cfg.output_dir:
        write_outputs(cfg, model, log_, image, problem)
    return TrainResult(model, log_, image)


def write_outputs(cfg: ReconConfig, model: InrModel, log_: MetricsLog, image: ImageVec, problem: Problem) -> None:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.txt").write_text(
        "# resolved configuration; adam defaults are ours, the source method reports none\n"
        + cfg.to_text() + f"learning_rate = {cfg.learning_rate()}\n"
    )
    log_.write_csv(out / "metrics.csv")
    extra = {"arch": cfg.arch, "loss": cfg.loss, "estimator": cfg.estimator,
             "lr": cfg.learning_rate(), "beta1": cfg.beta1, "beta2": cfg.beta2, "eps": cfg.eps}
    io.write_image(out / "recon.raw", image, **extra)
    io.save_checkpoint(out / "model", model)
    if problem.truth is not None:
        mse = image_mse(image, problem.truth, problem.mask)
        (out / "final.txt").write_text(f"final_image_mse = {mse!r}\n")


def fbp_baseline(problem: Problem) -> ImageVec:
    return fbp_reconstruct(problem.y, problem.grid)
