"""Command line entry point: ``dualnilm <verb> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training divergence
(or an interrupted cross-validation).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import storage
from .experiment import (ConfigError, Interrupted, collect_reports, load_config, run_crossval, run_evaluate,
                         run_train, summarize, write_summary)
from .manifest import build_household, load_manifest
from .metrics import write_report
from .pipeline import DataError, WindowPlan, window_arrays, write_household, write_windows
from .pvsim import CoverageGapError, PvConfig
from .training import TrainingDivergence

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
PROVENANCE_VERSION = 1

log = logging.getLogger("dualnilm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def cmd_synthesize(args) -> int:
    out = Path(args.out or "synthesized")
    if args.toy:
        from .toy import write_toy_dataset

        manifest_path = write_toy_dataset(out / "toy_inputs", seed=args.seed or 0)
    elif args.config:
        manifest_path = Path(args.config)
    else:
        raise UsageError("synthesize needs --config MANIFEST or --toy")
    m = load_manifest(manifest_path)
    pv = m.pv
    if args.p_rated is not None:
        pv = replace(pv, p_rated=args.p_rated)
    h = build_household(m, irradiance_path=args.irradiance, pv=pv)
    out.mkdir(parents=True, exist_ok=True)
    write_household(out / "household.dnilm", h)
    if args.window_stride:
        write_windows(out / "windows.dnilm", window_arrays(h, WindowPlan(args.window_length, args.window_stride)))

    inputs = m.input_files()
    if args.irradiance:
        inputs = [p for p in inputs if p != m.irradiance] + [Path(args.irradiance)]
    provenance = {
        "format_version": PROVENANCE_VERSION,
        "container": storage.DATASET_MAGIC.decode(),
        "inputs": {p.name if args.toy else str(p): _sha256(p) for p in inputs},
        "manifest": m.raw,
        "pv": asdict(pv),
        "split": asdict(m.split),
        "windows": {"length": args.window_length, "stride": args.window_stride},
        "samples": len(h),
        "period": h.aggregate.period,
        "appliances": list(h.appliance_names),
    }
    (out / "provenance.json").write_text(json.dumps(provenance, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out / 'household.dnilm'} ({len(h)} samples, {len(h.appliance_names)} appliances)")
    return EXIT_OK


def _experiment(args):
    if not args.config:
        raise UsageError(f"{args.verb} needs --config")
    cfg = load_config(args.config)
    over = {}
    for key in ("seed", "epochs", "lr", "batch", "model"):
        v = getattr(args, key, None)
        if v is not None:
            over[key] = v
    if args.out:
        over["out"] = Path(args.out)
    if args.split:
        from .pipeline import SplitMode

        over["split"] = SplitMode(args.split, (cfg.split.test_days if cfg.split else 1.0))
    try:
        return replace(cfg, **over)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_train(args) -> int:
    cfg = _experiment(args)
    _, trace = run_train(cfg, args.fold)
    rows = len(trace.epochs) if trace is not None else 0
    print(f"wrote {cfg.out / f'fold{args.fold}' / 'model.ckpt'} ({rows} epochs)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _experiment(args)
    rows = run_evaluate(cfg, args.checkpoint, args.fold)
    for r in rows:
        if r["appliance"] in ("macro", "injection"):
            vals = {k: r[k] for k in ("f1", "rmse_norm") if r.get(k) is not None}
            print(f"{r['appliance']}: " + ", ".join(f"{k}={v:.4f}" for k, v in vals.items()))
    return EXIT_OK


def cmd_crossval(args) -> int:
    cfg = _experiment(args)
    run_crossval(cfg)
    print(f"wrote {cfg.out / 'metrics.csv'} and {cfg.out / 'summary.csv'}")
    return EXIT_OK


def cmd_report(args) -> int:
    paths = [Path(p) for p in args.paths]
    files = [p / "metrics.csv" if p.is_dir() else p for p in paths]
    missing = [str(p) for p in files if not p.exists()]
    if missing:
        raise DataError(f"missing report(s): {', '.join(missing)}")
    rows = collect_reports(files)
    report, table = summarize(rows)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_report(out / "metrics.csv", rows + report)
        write_summary(out / "summary.csv", table)
    width = max((len(t["appliance"]) for t in table), default=9)
    for t in table:
        print(f"{t['dataset']:<10} {t['appliance']:<{width}} {t['metric']:<10} {t['cell']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dualnilm", description="State recognition and injection estimation experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="experiment config (YAML)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        sp.add_argument("--model")
        sp.add_argument("--split", help="chronological | test_initial | test_middle | leave_one_day_out")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--batch", type=int)

    s = sub.add_parser("synthesize", help="build an augmented household from a manifest")
    s.add_argument("--config", help="household manifest (YAML)")
    s.add_argument("--toy", action="store_true", help="generate the built-in toy inputs first")
    s.add_argument("--irradiance", help="override the manifest's irradiance CSV")
    s.add_argument("--p-rated", type=float, help="override the PV rated capacity (W)")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--window-length", type=int, default=300)
    s.add_argument("--window-stride", type=int, default=0, help="also write windows.dnilm when > 0")
    s.set_defaults(func=cmd_synthesize)

    for verb, func, hlp in (("train", cmd_train, "train one fold"),
                            ("evaluate", cmd_evaluate, "evaluate a checkpoint on one fold"),
                            ("crossval", cmd_crossval, "train and evaluate every fold")):
        sp = sub.add_parser(verb, help=hlp)
        common(sp)
        if verb != "crossval":
            sp.add_argument("--fold", type=int, default=0)
        if verb == "evaluate":
            sp.add_argument("--checkpoint")
        sp.set_defaults(func=func)

    r = sub.add_parser("report", help="merge metric CSVs into a mean/std table")
    r.add_argument("paths", nargs="+", help="run directories or metrics.csv files")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    threads = os.environ.get("DNILM_THREADS")
    try:
        args = build_parser().parse_args(argv)
        if threads:
            import torch

            torch.set_num_threads(max(1, int(threads)))
        if args.verb is None:
            raise UsageError("a verb is required: synthesize, train, evaluate, crossval or report")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ValueError:
        print(f"DNILM_THREADS must be an integer, got {threads!r}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except Interrupted as exc:
        print(f"cross-validation interrupted: {exc}", file=sys.stderr)
        return EXIT_DIVERGED if isinstance(exc.__cause__, TrainingDivergence) else EXIT_DATA
    except (DataError, CoverageGapError, storage.FormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
