"""Raw little-endian arrays with ``key = value`` sidecar headers.

``name.raw`` holds the samples row-major with the detector column (sinograms)
or x (images) as the fastest axis; ``name.raw.hdr`` describes them.  Images
and sinograms are stored as float32; checkpoints store float64 so that
parameters round-trip bit for bit.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .grid import ConeBeamGeometry, FanBeamGeometry, VoxelGrid
from .inr import FourierEncoding, InrConfig, InrModel, config_to_text, flatten_params, init_model, unflatten_params
from .projector import ImageVec, Sinogram

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def header_path(path) -> Path:
    return Path(str(path) + ".hdr")


def parse_kv(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def _fmt(v) -> str:
    if isinstance(v, (list, tuple, np.ndarray)):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def write_raw(path, values: np.ndarray, meta: dict, dtype: str = "float32") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(values, dtype=_DTYPES[dtype])
    arr.tofile(path)
    head = {"dtype": dtype, "byte_order": "little", "shape": arr.shape, **meta}
    header_path(path).write_text("".join(f"{k} = {_fmt(v)}\n" for k, v in head.items()))


def read_raw(path) -> tuple[np.ndarray, dict[str, str]]:
    meta = parse_kv(header_path(path).read_text())
    dtype = meta.get("dtype", "float32")
    shape = _ints(meta["shape"])
    arr = np.fromfile(path, dtype=_DTYPES[dtype])
    if arr.size != int(np.prod(shape)):
        raise ValueError(f"{path}: {arr.size} samples, header says shape {shape}")
    return arr.reshape(shape).astype(np.float64), meta


def grid_meta(grid: VoxelGrid) -> dict:
    return {"dims": grid.dims, "spacing": grid.spacing}


def geometry_meta(geom) -> dict:
    meta = {
        "geometry": "cone" if isinstance(geom, ConeBeamGeometry) else "fan",
        "angles": geom.angles,
        "source_to_iso": geom.source_to_iso,
        "source_to_detector": geom.source_to_detector,
        "num_det": geom.num_det,
        "det_spacing": geom.det_spacing,
    }
    if isinstance(geom, ConeBeamGeometry):
        meta.update(num_det_rows=geom.num_det_rows, det_row_spacing=geom.det_row_spacing)
    return meta


def geometry_from_meta(meta: dict):
    common = (_floats(meta["angles"]), float(meta["source_to_iso"]),
              float(meta["source_to_detector"]), int(meta["num_det"]), float(meta["det_spacing"]))
    if meta["geometry"] == "cone":
        return ConeBeamGeometry(*common, int(meta["num_det_rows"]), float(meta["det_row_spacing"]))
    if meta["geometry"] == "fan":
        return FanBeamGeometry(*common)
    raise ValueError(f"unknown geometry id {meta['geometry']!r}")


def write_image(path, image: ImageVec, **extra) -> None:
    write_raw(path, image.values, {"kind": "image", **grid_meta(image.grid), **extra})


def read_image(path) -> ImageVec:
    arr, meta = read_raw(path)
    grid = VoxelGrid(_ints(meta["dims"]), _floats(meta["spacing"]))
    return ImageVec(grid, arr)


def write_sinogram(path, sino: Sinogram, **extra) -> None:
    write_raw(path, sino.values, {"kind": "sinogram", **geometry_meta(sino.geometry), **extra})


def read_sinogram(path) -> Sinogram:
    arr, meta = read_raw(path)
    return Sinogram(geometry_from_meta(meta), arr)


def save_checkpoint(prefix, model: InrModel) -> None:
    """``prefix.theta.raw`` (float64 flat parameters) plus ``prefix.arch.txt``.

    FFN checkpoints also store the frozen Fourier matrix in ``prefix.B.raw``.
    """
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{prefix}.arch.txt").write_text(config_to_text(model))
    write_raw(f"{prefix}.theta.raw", flatten_params(model), {"kind": "theta"}, dtype="float64")
    if isinstance(model.encoding, FourierEncoding):
        write_raw(f"{prefix}.B.raw", model.encoding.B, {"kind": "fourier_matrix"}, dtype="float64")


def load_checkpoint(prefix) -> InrModel:
    meta = parse_kv(Path(f"{prefix}.arch.txt").read_text())
    cfg = InrConfig.from_mapping(meta)
    skeleton = init_model(cfg, int(meta["d"]), np.random.default_rng(0))
    theta, _ = read_raw(f"{prefix}.theta.raw")
    model = unflatten_params(skeleton, theta)
    if isinstance(model.encoding, FourierEncoding):
        B, _ = read_raw(f"{prefix}.B.raw")
        model = InrModel(model.cfg, model.d, model.params, FourierEncoding(B))
    return model
