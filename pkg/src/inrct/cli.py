"""Command line interface: ``inrct <command> [--config FILE] [--set key=value ...]``.

Grid, geometry and model settings come from a ``key = value`` config file
(the fields of :class:`inrct.reconstruct.ReconConfig`); ``--set`` overrides
individual keys.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path


from . import io
from .reconstruct import (ReconConfig, build_problem, cgls, fbp_baseline, image_mse, make_phantom, train_inr)
from .grid import VoxelGrid, make_fov_mask
from .phantoms import rasterize, write_phantom
from .projector import fbp_reconstruct


def _config(args) -> ReconConfig:
    mapping = io.parse_kv(Path(args.config).read_text()) if args.config else {}
    for item in args.set or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        mapping[k.strip()] = v.strip()
    return ReconConfig.from_mapping(mapping)


def _grid(cfg: ReconConfig) -> VoxelGrid:
    return VoxelGrid((cfg.grid_size,) * cfg.ndim, (cfg.voxel_size,) * cfg.ndim)


def _report_mse(image, cfg: ReconConfig, truth_path: str | None) -> None:
    if truth_path:
        truth = io.read_image(truth_path)
        mask = make_fov_mask(image.grid, cfg.mask)
        print(f"image_mse = {image_mse(image, truth, mask)!r}")


def cmd_phantom(args) -> int:
    cfg = _config(args)
    grid = _grid(cfg)
    ph = make_phantom(cfg, grid)
    write_phantom(ph, args.out)
    print(f"wrote {args.out} ({len(ph)} components)")
    if args.raster:
        io.write_image(args.raster, rasterize(ph, grid, args.supersample))
        print(f"wrote {args.raster}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    prob = build_problem(cfg)
    out = Path(args.out_dir)
    io.write_sinogram(out / "sinogram.raw", prob.y)
    io.write_image(out / "truth.raw", prob.truth)
    print(f"wrote {out / 'sinogram.raw'} {prob.geom.sino_shape} and {out / 'truth.raw'} {prob.grid.shape}")
    return 0


def _load_sinogram(args, cfg):
    if args.sinogram:
        return io.read_sinogram(args.sinogram), None
    prob = build_problem(cfg)
    return prob.y, prob.truth


def cmd_fbp(args) -> int:
    cfg = _config(args)
    y, truth = _load_sinogram(args, cfg)
    image = fbp_reconstruct(y, _grid(cfg))
    io.write_image(args.out, image, method="fbp")
    print(f"wrote {args.out}")
    if truth is not None and not args.truth:
        print(f"image_mse = {image_mse(image, truth, make_fov_mask(image.grid, cfg.mask))!r}")
    _report_mse(image, cfg, args.truth)
    return 0


def cmd_cgls(args) -> int:
    cfg = _config(args)
    y, truth = _load_sinogram(args, cfg)
    image, res = cgls(y.geometry, _grid(cfg), y, args.iterations, return_residuals=True)
    io.write_image(args.out, image, method="cgls", iterations=args.iterations)
    print(f"wrote {args.out}; residual {res[0]:.6g} -> {res[-1]:.6g} ({len(res) - 1} iterations)")
    if truth is not None and not args.truth:
        print(f"image_mse = {image_mse(image, truth, make_fov_mask(image.grid, cfg.mask))!r}")
    _report_mse(image, cfg, args.truth)
    return 0


def cmd_recon(args) -> int:
    cfg = _config(args)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    if not cfg.output_dir:
        raise SystemExit("recon needs an output directory (--output-dir or output_dir in the config)")
    prob = build_problem(cfg)
    t0 = time.perf_counter()
    res = train_inr(cfg, prob)
    wall = time.perf_counter() - t0
    last = res.log.rows[-1]
    print(f"{cfg.iterations} iterations in {wall:.1f} s; last logged loss {last[1]:.6g}")
    if prob.truth is not None:
        print(f"final image_mse = {image_mse(res.image, prob.truth, prob.mask)!r}")
        if args.baseline:
            print(f"fbp image_mse = {image_mse(fbp_baseline(prob), prob.truth, prob.mask)!r}")
    print(f"outputs in {cfg.output_dir}")
    return 0


def cmd_gradcheck(args) -> int:
    from .checks import adjoint_fixtures, adjoint_mismatch, pipeline_gradcheck, tiny_pipeline
    from .objective import LossKind

    ok = True

    def line(name, value, tol):
        nonlocal ok
        passed = value <= tol
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: {value:.3e} (tol {tol:.0e})")

    (g2, fan), (g3, cone) = adjoint_fixtures()
    line("adjoint 2d", adjoint_mismatch(g2, fan, args.pairs, args.seed), 1e-10)
    line("adjoint 3d", adjoint_mismatch(g3, cone, args.pairs, args.seed), 1e-10)
    tp = tiny_pipeline(args.seed)
    for tag in ("ls", "fls"):
        line(f"exact_gradient vs finite differences ({tag})",
             pipeline_gradcheck(tp, LossKind.make(tag, tp.geom)), 1e-5)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="inrct", description="CT reconstruction with implicit neural representations.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.set_defaults(func=fn)
        return sp

    sp = add("phantom", cmd_phantom, "write the configured phantom as a text file")
    sp.add_argument("--out", required=True)
    sp.add_argument("--raster", help="also write a rasterization on the recon grid")
    sp.add_argument("--supersample", type=int, default=4)

    sp = add("simulate", cmd_simulate, "simulate a sinogram from a finer grid")
    sp.add_argument("--out-dir", required=True)

    for name, fn, help_ in (("fbp", cmd_fbp, "fan-beam FBP / FDK baseline"),
                            ("cgls", cmd_cgls, "CGLS pixel-space baseline")):
        sp = add(name, fn, help_)
        sp.add_argument("--sinogram", help="measured sinogram (.raw); simulated from the config if omitted")
        sp.add_argument("--truth", help="reference image (.raw) for reporting MSE")
        sp.add_argument("--out", required=True)
        if name == "cgls":
            sp.add_argument("--iterations", type=int, default=50)

    sp = add("recon", cmd_recon, "fit an INR with Adam")
    sp.add_argument("--output-dir")
    sp.add_argument("--baseline", action="store_true", help="also report the FBP baseline MSE")

    sp = add("gradcheck", cmd_gradcheck, "adjoint and finite-difference self-checks")
    sp.add_argument("--pairs", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
