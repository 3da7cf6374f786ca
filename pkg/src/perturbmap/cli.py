"""Command-line entry point: ``perturbmap <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

from . import harness
from .crf import dataset_to_text, gen_denoise_dataset
from .mapsolve import METHODS, auto_method, solve_map
from .model import ModelError, SpinGlassConfig, gen_spin_glass, load_model, model_to_text
from .oracle import exact_log_partition, exact_map, exact_marginals


def _rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([harness._fmt(v) for v in row])
    return buf.getvalue()


def _emit(text: str, out) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _settings(pairs):
    out = []
    for p in pairs or ():
        k, eq, v = p.partition("=")
        if not eq or not k:
            raise SystemExit(f"error: setting {p!r} is not key=value")
        out.append((k, v))
    return tuple(out)


def cmd_gen(args) -> str:
    if args.kind == "spin":
        cfg = SpinGlassConfig(args.rows, args.cols, args.field, args.coupling, args.mode, args.seed)
        return model_to_text(gen_spin_glass(cfg))
    ds = gen_denoise_dataset(args.rows, args.cols, args.train, args.test, args.flip_prob, args.seed)
    return dataset_to_text(ds)


def cmd_exact(args) -> str:
    model = load_model(args.model)
    labels, value = exact_map(model)
    rows = [("log_z", exact_log_partition(model)), ("map_value", value),
            ("map_assignment", " ".join(map(str, labels)))]
    if args.marginals:
        for i, p in enumerate(exact_marginals(model)):
            rows.append((f"marginal_{i}", " ".join(repr(float(v)) for v in p)))
    return _rows_to_csv(("quantity", "value"), rows)


def cmd_map(args) -> str:
    model = load_model(args.model)
    method = auto_method(model) if args.method == "auto" else args.method
    opts = {"max_iters": args.mplp_iters, "tol": args.mplp_tol} if method == "mplp" else {}
    res = solve_map(model, method, **opts)
    return _rows_to_csv(
        ("solver", "value", "dual_bound", "iterations", "assignment"),
        [(res.solver_id, res.value, res.dual_bound, res.iterations, " ".join(map(str, res.assignment)))],
    )


def cmd_estimate(args) -> str:
    model = load_model(args.model)
    est, se, status = harness.run_estimator(model, args.estimator, _settings(args.set), args.seed)
    settings = " ".join(f"{k}={v}" for k, v in _settings(args.set))
    return _rows_to_csv(("estimator", "estimate", "std_error", "seed", "status", "settings"),
                        [(args.estimator, est, se, args.seed, status, settings)])


def cmd_sweep(args) -> str:
    spec = harness.load_spec(args.spec)
    if args.seed is not None:
        spec = harness.ExperimentSpec(**{**spec.__dict__, "seed": args.seed})
    text = harness.sweep_to_csv(harness.run_estimation_sweep(spec, timing=args.timing))
    if args.out is None and spec.output:
        args.out = spec.output
    return text


def cmd_learn(args) -> str:
    cfg = harness.LearnConfig(args.rows, args.cols, args.train, args.test, args.flip_prob,
                              args.seed, args.epochs, args.step, args.m, args.solver)
    return harness.learning_to_csv(harness.run_learning_experiment(cfg))


def cmd_chart(args) -> None:
    if args.out in (None, "-"):
        raise SystemExit("error: chart needs --out PATH.svg")
    harness.render_chart(Path(args.csv).read_text(), args.out)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    common.add_argument("--out", default=None, help="output file (default stdout)")
    common.add_argument("--format", choices=["csv"], default="csv")

    p = argparse.ArgumentParser(prog="perturbmap", parents=[common],
                                description="Perturbed-MAP partition function estimates and bounds.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a spin glass model or denoising dataset")
    g.add_argument("kind", choices=["spin", "denoise"])
    g.add_argument("--rows", type=int, default=3)
    g.add_argument("--cols", type=int, default=3)
    g.add_argument("--field", type=float, default=1.0)
    g.add_argument("--coupling", type=float, default=1.0)
    g.add_argument("--mode", choices=["attractive", "mixed"], default="mixed")
    g.add_argument("--train", type=int, default=10)
    g.add_argument("--test", type=int, default=10)
    g.add_argument("--flip-prob", type=float, default=0.1)
    g.set_defaults(func=cmd_gen)

    e = sub.add_parser("exact", parents=[common], help="exhaustive log Z and MAP")
    e.add_argument("model")
    e.add_argument("--marginals", action="store_true")
    e.set_defaults(func=cmd_exact)

    m = sub.add_parser("map", parents=[common], help="solve one MAP problem")
    m.add_argument("model")
    m.add_argument("--method", choices=("auto",) + METHODS, default="auto")
    m.add_argument("--mplp-iters", type=int, default=1000)
    m.add_argument("--mplp-tol", type=float, default=1e-8)
    m.set_defaults(func=cmd_map)

    s = sub.add_parser("estimate", parents=[common], help="run one estimator on one model")
    s.add_argument("model")
    s.add_argument("--estimator", choices=sorted(harness.ESTIMATORS), default="upper_bound")
    s.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="estimator setting, e.g. m=100 or solver=mplp (repeatable)")
    s.set_defaults(func=cmd_estimate)

    w = sub.add_parser("sweep", parents=[common], help="error-vs-coupling sweep from a spec file")
    w.add_argument("spec")
    w.add_argument("--timing", action="store_true", help="fill wall_ms (output no longer reproducible)")
    w.set_defaults(func=cmd_sweep)

    lr = sub.add_parser("learn", parents=[common], help="denoising CRF experiment")
    lr.add_argument("--rows", type=int, default=16)
    lr.add_argument("--cols", type=int, default=16)
    lr.add_argument("--train", type=int, default=10)
    lr.add_argument("--test", type=int, default=10)
    lr.add_argument("--flip-prob", type=float, default=0.1)
    lr.add_argument("--epochs", type=int, default=20)
    lr.add_argument("--step", type=float, default=0.1)
    lr.add_argument("--m", type=int, default=1)
    lr.add_argument("--solver", choices=["graphcut", "mplp", "brute"], default="graphcut")
    lr.set_defaults(func=cmd_learn)

    c = sub.add_parser("chart", parents=[common], help="render a sweep CSV as SVG")
    c.add_argument("csv")
    c.set_defaults(func=cmd_chart)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    sweep_seed = args.seed
    if args.seed is None:
        args.seed = 0
    if args.command == "sweep":
        args.seed = sweep_seed
    try:
        text = args.func(args)
    except (ModelError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if text is not None:
        _emit(text, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
