"""``tlforecast`` command line: ``run``, ``synth`` and ``gradcheck``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from .dataset import SynthConfig, SynthConfigError, merge, save_csv, synthesize
from .experiment import MODES, ConfigError, ScenarioConfig, resolve_out_dir, run_scenario
from .gradcheck import GRADCHECK_TOLERANCE, random_gradient_checks

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _mode_list(text: str) -> tuple[str, ...]:
    modes = tuple(s.strip() for s in text.split(",") if s.strip())
    bad = [m for m in modes if m not in MODES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown modes {bad}; choose from {', '.join(MODES)}")
    return modes


def cmd_run(args) -> int:
    try:
        cfg = ScenarioConfig.from_json(args.config)
        overrides = {}
        if args.seeds:
            overrides["seeds"] = args.seeds
        if args.modes:
            overrides["modes"] = args.modes
        if overrides:
            cfg = dataclasses.replace(cfg, **overrides)
    except (OSError, ConfigError, SynthConfigError) as exc:
        print(f"tlforecast: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out_dir = resolve_out_dir(cfg, args.out_dir)
    result = run_scenario(cfg, out_dir)
    for row in result.rows:
        mark = "*" if row.best else " "
        print(
            f"{mark} {row.mode:<24} train best {row.train_best_mse:.9f} @ {row.train_best_epoch:6.1f} "
            f"init {row.train_initial_mse:.9f} | val best {row.val_best_mse:.9f} @ {row.val_best_epoch:6.1f} "
            f"init {row.val_initial_mse:.9f}"
        )
    print(f"results written to {out_dir}")
    if result.failures:
        print(f"{len(result.failures)} run(s) failed; see {out_dir / 'failures.json'}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = SynthConfig.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError, SynthConfigError, TypeError) as exc:
        print(f"tlforecast: {exc}", file=sys.stderr)
        return EXIT_USAGE
    ds = merge(list(synthesize(cfg).values()))
    save_csv(ds, args.out)
    print(f"wrote {len(ds)} days x {ds.n_features} features to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = random_gradient_checks(n_nets=args.nets, seed=args.seed, eps=args.eps)
    worst = 0.0
    for r in results:
        status = "ok  " if r.max_rel_error < GRADCHECK_TOLERANCE else "FAIL"
        print(f"{status} hidden={r.hidden_dims} B={r.window} F={r.features} max_rel_err={r.max_rel_error:.3e}")
        worst = max(worst, r.max_rel_error)
    ok = worst < GRADCHECK_TOLERANCE
    print(f"{'PASS' if ok else 'FAIL'}: worst relative error {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:g})")
    return EXIT_OK if ok else EXIT_PARTIAL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tlforecast", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a comparison scenario")
    r.add_argument("--config", required=True)
    r.add_argument("--out-dir")
    r.add_argument("--seeds", type=_int_list)
    r.add_argument("--modes", type=_mode_list)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("synth", help="write synthetic station data as CSV")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    g = sub.add_parser("gradcheck", help="compare BPTT gradients with finite differences")
    g.add_argument("--nets", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--eps", type=float, default=1e-5)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
