"""Command-line entry point.

Exit codes: 0 completed, 2 configuration error, 3 divergence (the metrics
CSV written so far is kept). BLAS thread pools are pinned to one thread
before numpy loads so byte-identical output does not depend on the
parallelism knob.
"""

import argparse
import os
import sys


def _pin_blas_threads():
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, "1")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gossipsum",
        description="Run a decentralized momentum SGD experiment from a TOML config.")
    parser.add_argument("--config", required=True, help="path to the run config")
    parser.add_argument("--seed", type=int, default=None, help="override the seed")
    parser.add_argument("--algo", choices=("vanilla", "dsum", "gtdsum"),
                        default=None, help="override the algorithm")
    parser.add_argument("--out", default="metrics.csv", help="metrics CSV path")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override any config key (repeatable)")
    parser.add_argument("--sweep", default=None, metavar="eta=V1,V2,...",
                        help="run once per learning-rate value, suffixing --out")
    return parser


def main(argv=None) -> int:
    _pin_blas_threads()
    args = _build_parser().parse_args(argv)

    from .config import ConfigError, load_config, parse_override

    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.algo is not None:
        overrides.append(f"algo={args.algo}")

    sweep_values = None
    if args.sweep is not None:
        key, raw = (args.sweep.split("=", 1) + [""])[:2]
        if key.strip() != "eta":
            print(f"error: only 'eta' sweeps are supported, got {key!r}", file=sys.stderr)
            return 2
        try:
            sweep_values = [float(v) for v in raw.split(",") if v.strip()]
        except ValueError:
            print(f"error: cannot parse sweep values {raw!r}", file=sys.stderr)
            return 2
        if not sweep_values:
            print("error: empty sweep value list", file=sys.stderr)
            return 2
        _ = parse_override  # sweep values reuse the same override machinery below

    try:
        if sweep_values is None:
            cfg = load_config(args.config, overrides)
            return _run_one(cfg, args.out)
        worst = 0
        for value in sweep_values:
            cfg = load_config(args.config, overrides + [f"hyper.eta={value}"])
            out = _sweep_path(args.out, value)
            worst = max(worst, _run_one(cfg, out))
        return worst
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


def _sweep_path(out: str, eta: float) -> str:
    root, ext = os.path.splitext(out)
    return f"{root}_eta{eta:g}{ext or '.csv'}"


def _run_one(cfg, out_path: str) -> int:
    from .diagnostics import CSV_HEADER, format_record
    from .errors import DivergenceError
    from .harness import build_experiment, run_experiment

    exp = build_experiment(cfg)
    phases = ", ".join(
        f"[{e.start},{e.stop}) rho={e.matrix.rho:.12g}"
        for e in exp.cohort.schedule.entries)
    print(f"eta={cfg.hyper.eta:g} algo={cfg.hyper.algo.value} {phases}",
          file=sys.stderr)

    code = 0
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")

        def on_record(rec):
            fh.write(format_record(rec) + "\n")
            fh.flush()

        try:
            run_experiment(exp, on_record=on_record)
        except DivergenceError as err:
            print(f"diverged: {err}", file=sys.stderr)
            code = 3
    return code


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
