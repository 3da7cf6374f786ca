"""Experiment orchestration: estimation sweeps, the denoising experiment, charts.

Outputs are plain CSV with every setting echoed in ``# spec:`` comment
lines, so a results file describes the run that produced it.  Floats are
written with ``repr`` and timings are opt-in, which keeps re-runs
byte-identical.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import bp_log_partition, trbp_log_partition
from .bounds import (
    InflationConfig, LowerBoundConfig, PerturbationScheme,
    approx_logZ_inflation, lower_bound_logZ, upper_bound_logZ,
)
from .crf import DenoiseFeatureMap, TrainConfig, gen_denoise_dataset, pixel_error, train
from .mapsolve import SolverPreconditionError
from .model import SpinGlassConfig, gen_spin_glass
from .oracle import StateSpaceTooLarge, exact_log_partition
from .perturb import estimate_logZ_full, estimate_logZ_sequential
from .rng import derive_seed

SWEEP_COLUMNS = ("estimator", "coupling", "trial", "estimate", "oracle_logz", "abs_error", "wall_ms", "status")
LEARN_COLUMNS = ("method", "epoch", "loss", "grad_norm", "train_error", "test_error")
DEFAULT_COUPLINGS = (0.1, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
# oracle columns are left empty above this many joint states
ORACLE_CAP = 2**20


class SpecError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


# -- estimators -------------------------------------------------------------------


def _num(v: str):
    try:
        return int(v)
    except ValueError:
        return float(v)


# settings each estimator falls back to; echoed into sweep CSV headers
ESTIMATOR_DEFAULTS = {
    "full": {"m": 1000},
    "sequential": {"m": 10},
    "upper_bound": {"m": 100, "solver": "auto"},
    "lower_bound": {"m": 200, "solver": "auto"},
    "inflation": {"m": 16, "variant": "exact_average", "solver": "auto"},
    "bp": {"max_iters": 2000, "damping": 0.5},
    "trbp": {"max_iters": 2000, "damping": 0.5},
}


def _est_full(model, seed, s):
    r = estimate_logZ_full(model, int(s["m"]), seed)
    return r.mean, r.std_error, True


def _est_sequential(model, seed, s):
    return estimate_logZ_sequential(model, int(s["m"]), seed), None, True


def _est_upper(model, seed, s):
    r = upper_bound_logZ(model, PerturbationScheme.unary(), s["solver"], int(s["m"]), seed)
    return r.mean, r.std_error, True


def _est_lower(model, seed, s):
    r = lower_bound_logZ(model, PerturbationScheme.unary(), s["solver"], LowerBoundConfig(m=int(s["m"])), seed)
    return r.bound, r.std_error, True


def _est_inflation(model, seed, s):
    beta = s.get("beta")
    cfg = InflationConfig(int(s["m"]), s["variant"], None if beta is None else float(beta), s["solver"])
    r = approx_logZ_inflation(model, cfg, seed)
    return r.mean, r.std_error, True


def _est_bp(model, seed, s):
    r = bp_log_partition(model, int(s["max_iters"]), float(s["damping"]))
    return r.log_z, None, r.converged


def _est_trbp(model, seed, s):
    r = trbp_log_partition(model, None, int(s["max_iters"]), float(s["damping"]))
    return r.log_z, None, r.converged


def parse_settings(settings) -> dict:
    return {k: v if k in ("solver", "variant") else _num(v) for k, v in settings}


def resolved_settings(name: str, settings=()) -> dict:
    """Defaults for ``name`` overridden by the given ``(key, value)`` pairs."""
    return {**ESTIMATOR_DEFAULTS[name], **parse_settings(settings)}


def run_estimator(model, name: str, settings=(), seed: int = 0):
    """``(estimate, std_error, status)`` for one named estimator."""
    if name not in ESTIMATORS:
        raise ValueError(f"unknown estimator {name!r}; known: {', '.join(sorted(ESTIMATORS))}")
    try:
        est, se, converged = ESTIMATORS[name](model, seed, resolved_settings(name, settings))
    except SKIP_ERRORS:
        return None, None, "skipped"
    return float(est), None if se is None else float(se), "ok" if converged else "unconverged"


ESTIMATORS = {
    "full": _est_full,
    "sequential": _est_sequential,
    "upper_bound": _est_upper,
    "lower_bound": _est_lower,
    "inflation": _est_inflation,
    "bp": _est_bp,
    "trbp": _est_trbp,
}

# failures that mean "this estimator does not apply here", not a bug
SKIP_ERRORS = (SolverPreconditionError, StateSpaceTooLarge)


# -- spec files --------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    rows: int = 3
    cols: int = 3
    field_strength: float = 1.0
    couplings: tuple = DEFAULT_COUPLINGS
    coupling_mode: str = "attractive"
    trials: int = 20
    estimators: tuple = (("upper_bound", ()), ("trbp", ()))
    seed: int = 0
    output: str | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise SpecError("trials must be >= 1")
        if not self.couplings:
            raise SpecError("coupling grid is empty")
        if not self.estimators:
            raise SpecError("no estimators listed")
        names = [name for name, _ in self.estimators]
        if len(set(names)) != len(names):
            raise SpecError("each estimator may be listed once")
        for name in names:
            if name not in ESTIMATORS:
                raise SpecError(f"unknown estimator {name!r}; known: {', '.join(sorted(ESTIMATORS))}")
        try:
            SpinGlassConfig(self.rows, self.cols, self.field_strength, 1.0, self.coupling_mode)
        except ValueError as exc:
            raise SpecError(str(exc)) from None

    def header_lines(self) -> list[str]:
        lines = [
            f"grid {self.rows} {self.cols}",
            f"field {self.field_strength!r}",
            "couplings " + " ".join(repr(float(c)) for c in self.couplings),
            f"mode {self.coupling_mode}",
            f"trials {self.trials}",
            f"seed {self.seed}",
        ]
        for name, settings in self.estimators:
            lines.append(" ".join(["estimator", name] + [f"{k}={v}" for k, v in settings]))
        return lines

    def to_text(self) -> str:
        return "sweep v1\n" + "\n".join(self.header_lines()) + "\n"


def parse_spec(text: str) -> ExperimentSpec:
    """Parse a line-oriented sweep spec (``sweep v1`` header, one key per line)."""
    kw: dict = {}
    estimators = []
    seen_header = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        key, args = toks[0], toks[1:]
        try:
            if not seen_header:
                if toks != ["sweep", "v1"]:
                    raise SpecError("expected header 'sweep v1'", lineno)
                seen_header = True
            elif key == "grid" and len(args) == 2:
                kw["rows"], kw["cols"] = int(args[0]), int(args[1])
            elif key == "field" and len(args) == 1:
                kw["field_strength"] = float(args[0])
            elif key == "couplings" and args:
                kw["couplings"] = tuple(float(a) for a in args)
            elif key == "mode" and len(args) == 1:
                kw["coupling_mode"] = args[0]
            elif key == "trials" and len(args) == 1:
                kw["trials"] = int(args[0])
            elif key == "seed" and len(args) == 1:
                kw["seed"] = int(args[0])
            elif key == "output" and len(args) == 1:
                kw["output"] = args[0]
            elif key == "estimator" and args:
                settings = []
                for a in args[1:]:
                    k, eq, v = a.partition("=")
                    if not eq or not k:
                        raise SpecError(f"estimator setting {a!r} is not key=value", lineno)
                    settings.append((k, v))
                estimators.append((args[0], tuple(settings)))
            else:
                raise SpecError(f"unrecognised line {line!r}", lineno)
        except SpecError:
            raise
        except ValueError as exc:
            raise SpecError(str(exc), lineno) from None
    if not seen_header:
        raise SpecError("empty spec")
    if estimators:
        kw["estimators"] = tuple(estimators)
    return ExperimentSpec(**kw)


def load_spec(path) -> ExperimentSpec:
    return parse_spec(Path(path).read_text())


# -- sweep -------------------------------------------------------------------------


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    spec: ExperimentSpec | None = None

    def aggregate(self, estimator: str, coupling: float):
        return self.aggregates[(estimator, float(coupling))]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def run_estimation_sweep(spec: ExperimentSpec, timing: bool = False) -> SweepResult:
    """Run every estimator on every ``(coupling, trial)`` spin glass.

    The model seed is ``derive_seed(spec.seed, c_index, trial)`` and every
    estimator of a cell shares one estimator seed, so all of them see the
    same instance.
    """
    out = SweepResult(spec=spec)
    errors: dict = {}
    for ci, c in enumerate(spec.couplings):
        for trial in range(spec.trials):
            mseed = derive_seed(spec.seed, ci, trial)
            model = gen_spin_glass(SpinGlassConfig(
                spec.rows, spec.cols, spec.field_strength, float(c), spec.coupling_mode, mseed))
            oracle = float(exact_log_partition(model)) if model.num_states <= ORACLE_CAP else None
            eseed = derive_seed(spec.seed, ci, trial, 1)
            for name, settings in spec.estimators:
                t0 = time.perf_counter()
                est, _, status = run_estimator(model, name, settings, eseed)
                wall = (time.perf_counter() - t0) * 1e3 if timing else None
                err = abs(est - oracle) if est is not None and oracle is not None else None
                if err is not None:
                    errors.setdefault((name, float(c)), []).append(err)
                out.rows.append((name, float(c), trial, est, oracle, err, wall, status))
    for name, _ in spec.estimators:
        for c in spec.couplings:
            e = np.array(errors.get((name, float(c)), []))
            if e.size:
                se = float(e.std(ddof=1) / math.sqrt(e.size)) if e.size > 1 else math.nan
                out.aggregates[(name, float(c))] = (float(e.mean()), se, "ok")
            else:
                out.aggregates[(name, float(c))] = (None, None, "skipped")
    return out


def sweep_to_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    for line in result.spec.header_lines():
        buf.write(f"# spec: {line}\n")
    for name, settings in result.spec.estimators:
        full = " ".join(f"{k}={v}" for k, v in resolved_settings(name, settings).items())
        buf.write(f"# resolved: {name} {full}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for row in result.rows:
        w.writerow([_fmt(v) for v in row])
    for (name, c), (mean, se, status) in result.aggregates.items():
        w.writerow([name, _fmt(c), "agg", _fmt(mean), "", _fmt(se), "", status])
    return buf.getvalue()


def read_sweep_csv(text: str):
    """Split a sweep CSV into ``(trial_rows, aggregate_rows)`` of dicts."""
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    if not lines:
        raise ValueError("no CSV header found")
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) != SWEEP_COLUMNS:
        raise ValueError(f"expected columns {','.join(SWEEP_COLUMNS)}")
    trials, aggs = [], []
    for k, row in enumerate(reader, start=2):
        if None in row or any(v is None for v in row.values()):
            raise ValueError(f"row {k}: wrong number of fields")
        (aggs if row["trial"] == "agg" else trials).append(row)
    return trials, aggs


# -- learning experiment --------------------------------------------------------------


@dataclass(frozen=True)
class LearnConfig:
    rows: int = 16
    cols: int = 16
    num_train: int = 10
    num_test: int = 10
    flip_prob: float = 0.1
    seed: int = 0
    epochs: int = 20
    step: float = 0.1
    m: int = 1
    solver: str = "graphcut"

    def header_lines(self) -> list[str]:
        return [f"{k} {getattr(self, k)!r}" if isinstance(getattr(self, k), float)
                else f"{k} {getattr(self, k)}" for k in self.__dataclass_fields__]


@dataclass
class LearnResult:
    rows: list
    test_error: dict
    config: LearnConfig


def run_learning_experiment(config: LearnConfig) -> LearnResult:
    """Train the perturbed CRF and the unperturbed ablation on one dataset."""
    ds = gen_denoise_dataset(config.rows, config.cols, config.num_train, config.num_test,
                             config.flip_prob, config.seed)
    fm = DenoiseFeatureMap(config.rows, config.cols)
    tc = TrainConfig(epochs=config.epochs, step=config.step, m=config.m, seed=config.seed,
                     solver=config.solver, nonneg_pairwise=config.solver == "graphcut")
    rows, test_error = [], {}
    for method, scheme in (("perturbed", PerturbationScheme.unary()), ("none", None)):
        res = train(ds.train_pairs(), fm, scheme, tc)
        for epoch, loss, gnorm in res.history:
            rows.append((method, epoch, float(loss), float(gnorm), None, None))
        tr = pixel_error(res.params, ds.train_pairs(), config.solver)
        te = pixel_error(res.params, ds.test_pairs(), config.solver)
        test_error[method] = te
        rows.append((method, "final", float(res.history[-1][1]), float(res.history[-1][2]), tr, te))
    return LearnResult(rows, test_error, config)


def learning_to_csv(result: LearnResult) -> str:
    buf = io.StringIO()
    for line in result.config.header_lines():
        buf.write(f"# spec: {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LEARN_COLUMNS)
    for row in result.rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


# -- charts ---------------------------------------------------------------------------


def chart_series(text: str) -> dict:
    """``{estimator: [(coupling, mean_abs_error, stderr), ...]}`` from aggregate rows."""
    _, aggs = read_sweep_csv(text)
    series: dict = {}
    for row in aggs:
        if row["status"] != "ok":
            continue
        try:
            point = (float(row["coupling"]), float(row["estimate"]),
                     float(row["abs_error"]) if row["abs_error"] else math.nan)
        except ValueError as exc:
            raise ValueError(f"malformed aggregate row: {exc}") from None
        series.setdefault(row["estimator"], []).append(point)
    if not series:
        raise ValueError("sweep CSV has no aggregate rows to plot")
    return {k: sorted(v) for k, v in series.items()}


def render_chart(csv_text: str, out_path) -> Path:
    """Error-vs-coupling SVG with one error-bar series per estimator."""
    series = chart_series(csv_text)
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "perturbmap", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for name, pts in series.items():
            x, y, se = (np.array(v) for v in zip(*pts))
            ax.errorbar(x, y, yerr=np.nan_to_num(se), marker="o", capsize=3, label=name, gid=f"series-{name}")
        ax.set_xlabel("coupling strength c")
        ax.set_ylabel("mean |estimate - log Z|")
        ax.legend()
        fig.tight_layout()
        out_path = Path(out_path)
        fig.savefig(out_path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return out_path
