"""Coordinate networks (FFN, SIREN, hash encoding) with hand-written backprop.

All three architectures are an optional input encoding followed by a small
MLP with a single linear output.  Parameters live in an ordered dict; the
order is the flattening order used by the optimizer and checkpoints.

``InrModel.eval`` runs a cache-free forward pass in chunks.
``InrModel.weighted_param_grad`` runs one forward pass with caches and one
reverse sweep, returning the gradient of ``sum_i w_i f(x_i)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

ARCHS = ("ffn", "siren", "hash")
_HASH_PRIMES = (1, 2654435761, 805459861)
_EVAL_CHUNK = 1 << 15


@dataclass(frozen=True)
class InrConfig:
    """Architecture hyperparameters.  Fields irrelevant to ``arch`` are ignored."""

    arch: str = "ffn"
    hidden_width: int = 256
    hidden_layers: int = 3
    # FFN
    num_features: int = 256
    sigma: float = 10.0
    # SIREN
    omega0: float = 30.0
    # hash encoding
    levels: int = 8
    log2_table_size: int = 14
    features_per_level: int = 2
    base_resolution: int = 16
    max_resolution: int = 512
    # fixed (untrained) factor applied to the linear output
    output_scale: float = 1.0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.hidden_width < 1 or self.hidden_layers < 1:
            raise ValueError("hidden_width and hidden_layers must be >= 1")
        if not self.output_scale > 0:
            raise ValueError("output_scale must be > 0")
        if self.arch == "ffn" and (self.num_features < 1 or not self.sigma > 0):
            raise ValueError("num_features must be >= 1 and sigma > 0")
        if self.arch == "hash":
            if self.levels < 1 or self.features_per_level < 1 or self.log2_table_size < 1:
                raise ValueError("invalid hash encoding sizes")
            if self.levels > 1 and not self.max_resolution > self.base_resolution:
                raise ValueError("max_resolution must exceed base_resolution")
            if self.base_resolution < 1:
                raise ValueError("base_resolution must be >= 1")

    @classmethod
    def default(cls, arch: str, **overrides) -> "InrConfig":
        """Architecture defaults (FFN/SIREN 3x256, hash head 2x64)."""
        if arch == "hash":
            overrides.setdefault("hidden_width", 64)
            overrides.setdefault("hidden_layers", 2)
        return cls(arch=arch, **overrides)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "InrConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for k, v in mapping.items():
            if k not in kinds:
                continue
            kw[k] = v if kinds[k] == "str" else (float(v) if kinds[k] == "float" else int(v))
        return cls(**kw)


class FourierEncoding:
    """``x -> [sin(2 pi B x), cos(2 pi B x)]`` with a frozen matrix ``B``."""

    def __init__(self, B: np.ndarray):
        self.B = np.asarray(B, dtype=np.float64)
        self._memo = None

    def cached(self, x):
        """Encoding of a read-only coordinate array, memoized by identity."""
        if x.flags.writeable:
            return self.forward(x)
        if self._memo is None or self._memo[0] is not x:
            self._memo = (x, self.forward(x))
        return self._memo[1]

    @property
    def out_dim(self) -> int:
        return 2 * self.B.shape[0]

    def forward(self, x):
        proj = 2 * np.pi * (x @ self.B.T)
        return np.concatenate([np.sin(proj), np.cos(proj)], axis=1)


class HashEncoding:
    """Multiresolution hash encoding; the tables are trainable parameters.

    Level ``l`` has resolution ``floor(base * b**l)`` with ``b`` chosen so the
    last level reaches ``max_resolution``.  Inputs in ``[-1, 1]^d`` are mapped
    to ``[0, res]^d``; the ``2^d`` surrounding vertices are hashed by XOR of
    prime-multiplied integer coordinates (32-bit wrap), modulo the table size,
    and their features are multi-linearly interpolated.
    """

    def __init__(self, d, levels, table_size, features, base_resolution, max_resolution):
        self.d = d
        self.levels = levels
        self.table_size = table_size
        self.features = features
        if levels == 1:
            growth = 1.0
        else:
            growth = np.exp((np.log(max_resolution) - np.log(base_resolution)) / (levels - 1))
        self.resolutions = np.floor(base_resolution * growth ** np.arange(levels) + 1e-9).astype(np.int64)
        if np.any(np.diff(self.resolutions) <= 0):
            raise ValueError(f"level resolutions not strictly increasing: {self.resolutions}")
        self._corners = np.array([[(c >> k) & 1 for k in range(d)] for c in range(1 << d)])

    @property
    def out_dim(self) -> int:
        return self.levels * self.features

    def hash(self, verts: np.ndarray) -> np.ndarray:
        """Table index of integer vertices ``(..., d)``."""
        v = verts.astype(np.uint64)
        h = np.zeros(v.shape[:-1], dtype=np.uint64)
        for k in range(self.d):
            h ^= (v[..., k] * np.uint64(_HASH_PRIMES[k])) & np.uint64(0xFFFFFFFF)
        return (h % np.uint64(self.table_size)).astype(np.int64)

    def stencil(self, x: np.ndarray, level: int):
        """Table indices ``(npts, 2^d)`` and interpolation weights for one level."""
        pos = 0.5 * (x + 1.0) * self.resolutions[level]
        lo = np.floor(pos)
        frac = pos - lo
        verts = lo.astype(np.int64)[:, None, :] + self._corners[None, :, :]
        idx = self.hash(verts)
        w = np.where(self._corners[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :]).prod(axis=2)
        return idx, w

    def forward(self, x, tables, cache=None):
        out = np.empty((len(x), self.out_dim))
        for lvl in range(self.levels):
            idx, w = self.stencil(x, lvl)
            out[:, lvl * self.features:(lvl + 1) * self.features] = np.einsum("nc,ncf->nf", w, tables[lvl][idx])
            if cache is not None:
                cache.append((idx, w))
        return out

    def backward(self, g_out, cache):
        grad = np.zeros((self.levels, self.table_size, self.features))
        for lvl, (idx, w) in enumerate(cache):
            g = g_out[:, lvl * self.features:(lvl + 1) * self.features]
            flat = idx.ravel()
            for f in range(self.features):
                contrib = (w * g[:, f:f + 1]).ravel()
                grad[lvl, :, f] = np.bincount(flat, weights=contrib, minlength=self.table_size)
        return grad


class InrModel:
    """An INR ``f_theta : [-1, 1]^d -> R``.

    Treat instances as immutable; :meth:`with_params` returns a new model.
    """

    def __init__(self, cfg: InrConfig, d: int, params: dict, encoding=None):
        self.cfg = cfg
        self.d = d
        self.params = params
        self.encoding = encoding
        self.layers = [k[2:] for k in params if k.startswith("W")]
        self._acts = self._activations()

    # --- structure -------------------------------------------------------
    @property
    def arch(self) -> str:
        return self.cfg.arch

    @property
    def in_dim(self) -> int:
        return self.encoding.out_dim if self.encoding is not None else self.d

    def _activations(self):
        n = len(self.layers)
        if self.arch == "siren":
            return ["sine"] * (n - 1) + ["none"]
        return ["relu"] * (n - 1) + ["none"]

    @property
    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(k, v.shape) for k, v in self.params.items()]

    @property
    def num_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def layer_widths(self) -> list[int]:
        return [self.in_dim] + [self.params[f"b_{k}"].size for k in self.layers]

    def activations_per_eval(self) -> int:
        """Values a reverse sweep keeps per evaluated coordinate.

        Input, encoding output, and for each hidden layer both the
        pre-activation and the activation, plus the scalar output.  The hash
        encoding also keeps ``2^d`` indices and weights per level.
        """
        widths = self.layer_widths()
        count = self.d + 2 * sum(widths[1:-1]) + widths[-1]
        if self.encoding is not None:
            count += self.encoding.out_dim
        if isinstance(self.encoding, HashEncoding):
            count += 2 * self.encoding.levels * (1 << self.d)
        return count

    def with_params(self, params: dict) -> "InrModel":
        return InrModel(self.cfg, self.d, params, self.encoding)

    # --- evaluation ------------------------------------------------------
    def _check_coords(self, coords):
        coords = np.asarray(coords)
        # long double passes through so finite-difference oracles can run in extended precision
        coords = coords.astype(np.result_type(coords.dtype, np.float64), copy=False)
        if coords.ndim != 2 or coords.shape[1] != self.d:
            raise ValueError(f"coords must have shape (N, {self.d}), got {coords.shape}")
        return coords

    def _encode(self, x, cache=None):
        if isinstance(self.encoding, HashEncoding):
            return self.encoding.forward(x, self.params["tables"], cache)
        if isinstance(self.encoding, FourierEncoding):
            return self.encoding.forward(x)
        return x

    def _mlp(self, h, cache=None):
        omega = self.cfg.omega0
        scale = self.cfg.output_scale
        for name, act in zip(self.layers, self._acts):
            z = h @ self.params[f"W_{name}"] + self.params[f"b_{name}"]
            if cache is not None:
                cache.append((h, z))
            if act == "relu":
                h = np.maximum(z, 0.0)
            elif act == "sine":
                h = np.sin(omega * z)
            else:
                h = z
        return scale * h[:, 0]

    def eval(self, coords) -> np.ndarray:
        """``f_theta`` at each row of ``coords``; no caches are kept."""
        coords = self._check_coords(coords)
        out = np.empty(len(coords), dtype=np.result_type(coords, self.params[f"W_{self.layers[0]}"]))
        if isinstance(self.encoding, FourierEncoding) and not coords.flags.writeable:
            enc = self.encoding.cached(coords)
            for lo in range(0, len(coords), _EVAL_CHUNK):
                out[lo:lo + _EVAL_CHUNK] = self._mlp(enc[lo:lo + _EVAL_CHUNK])
            return out
        for lo in range(0, len(coords), _EVAL_CHUNK):
            x = coords[lo:lo + _EVAL_CHUNK]
            out[lo:lo + len(x)] = self._mlp(self._encode(x))
        return out

    __call__ = eval

    def relu_pattern(self, coords) -> np.ndarray:
        """Signs of every ReLU pre-activation, concatenated per coordinate."""
        cache = []
        self._mlp(self._encode(self._check_coords(coords)), cache)
        masks = [z > 0 for (_, z), act in zip(cache, self._acts) if act == "relu"]
        return np.concatenate(masks, axis=1) if masks else np.zeros((len(coords), 0), dtype=bool)

    def weighted_param_grad(self, coords, weights) -> dict:
        """Gradient of ``sum_i weights[i] * f_theta(coords[i])`` w.r.t. every parameter."""
        coords = self._check_coords(coords)
        weights = self._check_weights(coords, weights)
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        for lo, x, h0 in self._chunks(coords):
            _, cache, enc_cache = self._record(x, h0)
            self._reverse(cache, enc_cache, weights[lo:lo + len(x)], grads)
        return grads

    def eval_taped(self, coords):
        """Like :meth:`eval`, but also return the activations needed by :meth:`taped_param_grad`.

        The tape holds every layer's activations for every coordinate; this
        is the storage the minibatch estimator avoids.
        """
        coords = self._check_coords(coords)
        out = np.empty(len(coords), dtype=np.result_type(coords, self.params[f"W_{self.layers[0]}"]))
        tape = []
        for lo, x, h0 in self._chunks(coords):
            out[lo:lo + len(x)], cache, enc_cache = self._record(x, h0)
            tape.append((lo, cache, enc_cache))
        return out, tape

    def taped_param_grad(self, tape, weights) -> dict:
        weights = np.asarray(weights, dtype=np.float64).ravel()
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        for lo, cache, enc_cache in tape:
            self._reverse(cache, enc_cache, weights[lo:lo + len(cache[0][0])], grads)
        return grads

    @staticmethod
    def _check_weights(coords, weights):
        weights = np.asarray(weights, dtype=np.float64).ravel()
        if len(weights) != len(coords):
            raise ValueError(f"{len(coords)} coords but {len(weights)} weights")
        return weights

    def _chunks(self, coords):
        enc = None
        if isinstance(self.encoding, FourierEncoding) and not coords.flags.writeable:
            enc = self.encoding.cached(coords)
        for lo in range(0, len(coords), _EVAL_CHUNK):
            x = coords[lo:lo + _EVAL_CHUNK]
            yield lo, x, None if enc is None else enc[lo:lo + _EVAL_CHUNK]

    def _record(self, x, h0=None):
        enc_cache = [] if isinstance(self.encoding, HashEncoding) else None
        if h0 is None:
            h0 = self._encode(x, enc_cache)
        cache = []
        return self._mlp(h0, cache), cache, enc_cache

    def _reverse(self, cache, enc_cache, w, grads):
        omega = self.cfg.omega0
        g = self.cfg.output_scale * w[:, None]
        for name, act, (h, z) in reversed(list(zip(self.layers, self._acts, cache))):
            if act == "relu":
                g = g * (z > 0)
            elif act == "sine":
                g = g * (omega * np.cos(omega * z))
            grads[f"W_{name}"] += h.T @ g
            grads[f"b_{name}"] += g.sum(axis=0)
            g = g @ self.params[f"W_{name}"].T
        if enc_cache is not None:
            grads["tables"] += self.encoding.backward(g, enc_cache)


def init_model(cfg: InrConfig | str, d: int, rng: np.random.Generator, **overrides) -> InrModel:
    """Randomly initialize an INR for ``d``-dimensional coordinates.

    FFN: ``B ~ N(0, sigma^2)``, He-uniform ReLU layers, zero biases.
    SIREN: sine layers with ``omega0`` in every hidden layer, first-layer
    weights ``U(-1/fan_in, 1/fan_in)``, later ``U(+-sqrt(6/fan_in)/omega0)``.
    Hash: tables ``U(-1e-4, 1e-4)`` and a He-uniform ReLU head.
    """
    if isinstance(cfg, str):
        cfg = InrConfig.default(cfg, **overrides)
    elif overrides:
        cfg = replace(cfg, **overrides)
    if d not in (2, 3):
        raise ValueError("d must be 2 or 3")
    params: dict[str, np.ndarray] = {}
    encoding = None
    if cfg.arch == "ffn":
        encoding = FourierEncoding(rng.normal(0.0, cfg.sigma, size=(cfg.num_features, d)))
        in_dim = encoding.out_dim
    elif cfg.arch == "hash":
        T = 1 << cfg.log2_table_size
        encoding = HashEncoding(d, cfg.levels, T, cfg.features_per_level,
                                cfg.base_resolution, cfg.max_resolution)
        params["tables"] = rng.uniform(-1e-4, 1e-4, size=(cfg.levels, T, cfg.features_per_level))
        in_dim = encoding.out_dim
    else:
        in_dim = d
    widths = [in_dim] + [cfg.hidden_width] * cfg.hidden_layers + [1]
    for k in range(len(widths) - 1):
        fan_in, fan_out = widths[k], widths[k + 1]
        if cfg.arch == "siren":
            bound = 1.0 / fan_in if k == 0 else np.sqrt(6.0 / fan_in) / cfg.omega0
            W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = rng.uniform(-1 / np.sqrt(fan_in), 1 / np.sqrt(fan_in), size=fan_out)
        else:
            bound = np.sqrt(6.0 / fan_in)
            W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = np.zeros(fan_out)
        params[f"W_{k}"] = W
        params[f"b_{k}"] = b
    return InrModel(cfg, d, params, encoding)


def flatten_params(model_or_params) -> np.ndarray:
    params = model_or_params.params if isinstance(model_or_params, InrModel) else model_or_params
    return np.concatenate([v.ravel() for v in params.values()])


def unflatten_params(model: InrModel, theta: np.ndarray) -> InrModel:
    """New model whose parameters are read from ``theta`` in layout order."""
    theta = np.asarray(theta)
    theta = theta.astype(np.result_type(theta.dtype, np.float64), copy=False).ravel()
    if theta.size != model.num_params:
        raise ValueError(f"expected {model.num_params} values, got {theta.size}")
    params = {}
    pos = 0
    for name, shape in model.layout:
        size = int(np.prod(shape))
        params[name] = theta[pos:pos + size].reshape(shape).copy()
        pos += size
    return model.with_params(params)


def weighted_param_grad(model: InrModel, coords, weights) -> np.ndarray:
    """Flat gradient of ``sum_i weights[i] * f_theta(coords[i])``."""
    return flatten_params(model.weighted_param_grad(coords, weights))


def config_to_text(model: InrModel) -> str:
    items = {"d": model.d, **asdict(model.cfg)}
    return "".join(f"{k} = {v}\n" for k, v in items.items())
