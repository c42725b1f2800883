"""Command line entry point.

Exit codes: 0 success, 1 invalid input, 2 training aborted on a non-finite
value, 3 gradient check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..data import CifarFormatError, TEST_FILE, TRAIN_FILES, write_cifar_records
from .config import ConfigError, ExperimentConfig, parse_config, with_updates
from .gradcheck import GROUPS, run_gradcheck
from .presets import PRESETS, preset
from .train import (
    METRICS_COLUMNS,
    RHO_COLUMNS,
    SNR_COLUMNS,
    SWEEP_ACTIVATIONS,
    TrainingAborted,
    run_sweep_rho,
    run_sweep_snr,
    run_train,
    timer,
    write_csv,
)

EXIT_OK, EXIT_INVALID, EXIT_ABORTED, EXIT_GRADCHECK = 0, 1, 2, 3

log = logging.getLogger("oacsl")


class InvalidInput(Exception):
    pass


def _load(path: str, seed: int | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise InvalidInput(f"cannot read config {path}: {e.strerror}") from None
    cfg = parse_config(text)
    return with_updates(cfg, {"seed": seed}) if seed is not None else cfg


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _names(text: str) -> list[str]:
    names = [v.strip() for v in text.split(",") if v.strip()]
    bad = [n for n in names if n not in SWEEP_ACTIVATIONS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown activation {bad[0]!r}")
    return names


def cmd_train(args) -> int:
    cfg = _load(args.config, args.seed)
    try:
        result = run_train(cfg, clock=timer if args.timing else None)
        code = EXIT_OK
    except TrainingAborted as e:
        print(f"training aborted: {e}", file=sys.stderr)
        result, code = e.result, EXIT_ABORTED
    write_csv(args.out, result.rows, METRICS_COLUMNS)
    if args.snapshot:
        result.save_snapshot(args.snapshot)
    if result.rows:
        print(f"best test accuracy {result.best_test_acc:.4f} over {len(result.rows)} epochs")
    return code


def _sweep(args, fn, columns) -> int:
    cfg = _load(args.config, args.seed)
    points = args.points
    if len(points) < 2:
        raise InvalidInput("a sweep needs at least two points")
    try:
        rows = fn(cfg, points, activations=args.activations)
    except TrainingAborted as e:
        print(f"training aborted: {e}", file=sys.stderr)
        return EXIT_ABORTED
    write_csv(args.out, rows, columns)
    for r in rows:
        print(f"{r.point:g}\t{r.activation}\t{r.best_test_acc:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _load(args.config, args.seed)
    report = run_gradcheck(cfg, corrupt=args.corrupt_group, instances=args.instances)
    print(report.format())
    print("gradcheck passed" if report.passed else "gradcheck FAILED")
    return EXIT_OK if report.passed else EXIT_GRADCHECK


def cmd_data_synth(args) -> int:
    """Write random CIFAR-10-format batch files (for wiring tests, not learning)."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    for name in [*TRAIN_FILES, TEST_FILE]:
        labels = rng.integers(0, 10, args.records)
        images = rng.integers(0, 256, size=(args.records, 3, 32, 32), dtype=np.uint8)
        write_cifar_records(out / name, images, labels)
    print(f"wrote {len(TRAIN_FILES) + 1} files of {args.records} records to {out}")
    return EXIT_OK


def cmd_preset(args) -> int:
    text = json.dumps(preset(args.name), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oacsl", description="Over-the-air split learning simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one configuration and write per-epoch metrics")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True, help="metrics CSV path")
    t.add_argument("--seed", type=int)
    t.add_argument("--timing", action="store_true", help="fill wall_ms (makes output time-dependent)")
    t.add_argument("--snapshot", help="write final parameters to this .npz path")
    t.set_defaults(func=cmd_train)

    sw = sub.add_parser("sweep", help="best accuracy across SNR or mobility points")
    swsub = sw.add_subparsers(dest="axis", required=True)
    for axis, flag, fn, cols in (("snr", "--snrs", run_sweep_snr, SNR_COLUMNS),
                                 ("rho", "--rhos", run_sweep_rho, RHO_COLUMNS)):
        a = swsub.add_parser(axis)
        a.add_argument("--config", required=True)
        a.add_argument(flag, dest="points", type=_floats, required=True,
                       help="comma-separated values; write negatives as --snrs=-5,0")
        a.add_argument("--out", required=True)
        a.add_argument("--seed", type=int)
        a.add_argument("--activations", type=_names, default=list(SWEEP_ACTIVATIONS))
        a.set_defaults(func=lambda args, fn=fn, cols=cols: _sweep(args, fn, cols))

    g = sub.add_parser("gradcheck", help="compare analytic gradients with references")
    g.add_argument("--config", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--instances", type=int, default=20)
    g.add_argument("--corrupt-group", choices=GROUPS, help="flip one gradient group (self-test)")
    g.set_defaults(func=cmd_gradcheck)

    d = sub.add_parser("data", help="dataset utilities")
    dsub = d.add_subparsers(dest="action", required=True)
    s = dsub.add_parser("synth", help="write random CIFAR-10-format files")
    s.add_argument("--out", required=True)
    s.add_argument("--records", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_data_synth)

    pr = sub.add_parser("preset", help="print a named configuration as JSON")
    pr.add_argument("name", choices=sorted(PRESETS))
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_preset)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidInput, CifarFormatError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
