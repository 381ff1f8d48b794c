"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
input, inconsistent shapes), 3 numerical failure (divergence, non-finite loss).
Outputs are written through a temporary file and renamed on success, so a
failed command never leaves a partial output behind.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _atomic(path, write, *args):
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    try:
        write(tmp, *args)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _operator(mask, bands, step):
    from .physics import SensingOperator
    try:
        return SensingOperator(mask, bands, step)
    except ValueError as exc:
        raise DataError(str(exc)) from None


def cmd_simulate(args):
    from .io import read_cube, read_mask, write_measurement
    from .physics import shot_noise
    cube = read_cube(args.cube)
    mask = read_mask(args.mask).astype(np.float64)
    op = _operator(mask, cube.shape[2], args.d)
    if cube.shape[:2] != mask.shape:
        raise DataError(f"cube {cube.shape[:2]} and mask {mask.shape} extents differ")
    y = op.forward(cube.data.astype(np.float64))
    if args.noise_bits:
        y = shot_noise(y, args.noise_bits, seed=args.seed)
    _atomic(args.out, write_measurement, y)


def cmd_train(args):
    from .config import ExperimentConfig
    from .train import train
    cfg = ExperimentConfig.load(args.config)
    result = train(cfg)
    if result.holdout:
        ep, hp, hs = result.holdout[-1]
        print(f"epoch {ep}: held-out PSNR {hp:.2f} dB, SSIM {hs:.4f} (best {result.best_psnr:.2f} dB)")


def cmd_reconstruct(args):
    from .io import read_mask, read_measurement, write_cube
    from .physics import SpectralCube, default_wavelengths
    y = read_measurement(args.measurement).astype(np.float64)
    mask = read_mask(args.mask).astype(np.float64)
    if args.checkpoint:
        from .checkpoint import load_model
        model = load_model(args.checkpoint)
        op = _operator(mask, model.bands, model.step)
        if y.shape != op.measurement_shape:
            raise DataError(f"{args.measurement}: measurement {y.shape} does not match {op.measurement_shape}")
        cube = model.reconstruct(y, op)
    else:
        from .baselines import TVSolverConfig, pgd_tv_reconstruct
        if args.bands is None:
            raise UsageError("--method pgd-tv needs --bands")
        op = _operator(mask, args.bands, args.d)
        if y.shape != op.measurement_shape:
            raise DataError(f"{args.measurement}: measurement {y.shape} does not match {op.measurement_shape}")
        cube = pgd_tv_reconstruct(y, op, TVSolverConfig(iterations=args.iterations, tv_weight=args.tv_weight))
    if not np.all(np.isfinite(cube)):
        raise FloatingPointError("reconstruction contains non-finite values")
    _atomic(args.out, write_cube, SpectralCube(cube, default_wavelengths(cube.shape[2])))


def cmd_eval(args):
    from .io import read_cube
    from .metrics import MetricReport
    ref, test = read_cube(args.ref), read_cube(args.test)
    if ref.shape != test.shape:
        raise DataError(f"shape mismatch: {args.ref} {ref.shape} vs {args.test} {test.shape}")
    report = MetricReport()
    row = report.add(Path(args.test).stem, ref.data.astype(np.float64), test.data.astype(np.float64), args.peak)
    _atomic(args.report, report.write_csv)
    print(f"PSNR {row['psnr_db']:.4f} dB  SSIM {row['ssim']:.6f}  spectral corr {row['spectral_corr']:.6f}")


def cmd_gradcheck(args):
    from .gradcheck import run_suite
    results = run_suite(full=args.full, seeds=range(args.seeds), report=print)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_NUMERIC


def cmd_export_bands(args):
    from .io import read_cube, write_pgm16
    cube = read_cube(args.cube)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for b in range(cube.shape[2]):
        name = f"band{b:02d}_{cube.wavelengths[b]:.0f}nm.pgm"
        _atomic(out / name, write_pgm16, cube.data[:, :, b])
    print(f"wrote {cube.shape[2]} bands to {out}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cassirecon", description="CASSI simulation, reconstruction and evaluation")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="render a coded, dispersed measurement from a cube")
    s.add_argument("--cube", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--d", type=int, required=True, help="dispersion step in pixels per band")
    s.add_argument("--noise-bits", type=int, default=0, help="Poisson shot noise at this bit depth (0 = off)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="train the unfolding model from a config file")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("reconstruct", help="reconstruct a cube from a measurement")
    s.add_argument("--measurement", required=True)
    s.add_argument("--mask", required=True)
    how = s.add_mutually_exclusive_group(required=True)
    how.add_argument("--checkpoint")
    how.add_argument("--method", choices=["pgd-tv"])
    s.add_argument("--bands", type=int, help="band count (pgd-tv only; checkpoints carry their own)")
    s.add_argument("--d", type=int, default=2, help="dispersion step (pgd-tv only)")
    s.add_argument("--tv-weight", type=float, default=0.02)
    s.add_argument("--iterations", type=int, default=300)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("eval", help="compare a reconstruction against a reference cube")
    s.add_argument("--ref", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--peak", type=float, default=1.0)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference verification of all gradients")
    s.add_argument("--full", action="store_true", help="include the full DST and two-stage model")
    s.add_argument("--seeds", type=int, default=5)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("export-bands", help="write each band as a 16-bit PGM")
    s.add_argument("--cube", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_export_bands)
    return p


def main(argv=None) -> int:
    from .baselines import DivergenceError
    from .config import ConfigError
    from .io import FormatError
    from .train import NumericalError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        code = args.func(args)
        return EXIT_OK if code is None else code
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, DivergenceError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
