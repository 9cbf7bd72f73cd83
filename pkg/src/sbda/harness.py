"""Run configuration, trace files, sweeps and the ``sbda`` command line.

A run is described by a JSON config validated against :data:`CONFIG_SCHEMA`
(unknown keys are rejected at every level). Traces are CSV text with a
versioned comment line followed by a header row; rows are only ever appended.

Exit codes: 0 success, 1 usage or configuration error, 2 a lemma check failed.
The master seed can be overridden with the ``SBDA_SEED`` environment variable.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .blocks import BlockParams
from .checks import run_checks
from .geometry import Regularizer
from .oracles import (
    GENERATORS,
    default_probes,
    estimate_params,
    load_instance,
    reference_optimum,
    save_instance,
)
from .schedules import (
    AdaptiveConvex,
    ConstantConvex,
    SamplingDistribution,
    SBDARAdaptive,
    SBDARConstant,
    ScheduleError,
    StronglyConvexAggressive,
    StronglyConvexSimple,
    optimal_sampling,
)
from .solvers import (
    RunResult,
    UnsupportedConfiguration,
    baseline_da,
    baseline_md,
    baseline_sbmd,
    sbda_r,
    sbda_u,
    sbmd_stepsize,
)

SEED_ENV = "SBDA_SEED"
TRACE_MAGIC = "# sbda-trace 1"
TRACE_COLUMNS = ("run_id", "algo", "seed", "t", "queries", "passes", "objective", "ms")

EXIT_OK, EXIT_USAGE, EXIT_CHECK = 0, 1, 2

ALGORITHMS = ("sbda_u", "sbda_r", "da", "md", "sbmd")
SCHEDULES = ("const_convex", "adaptive_convex", "strong_simple", "strong_aggressive",
             "r_const", "r_adaptive")


class ConfigError(ValueError):
    pass


_number = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["problem", "algorithm", "T"],
    "properties": {
        "run_id": {"type": "string"},
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "instance": {"type": "string"},
                "generator": {"enum": sorted(GENERATORS)},
                "params": {"type": "object"},
                "seed": {"type": "integer", "minimum": 0},
                "regularizer": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["zero", "l1", "sql2", "box"]},
                        "weight": {"type": "number", "minimum": 0},
                        "lo": _number,
                        "hi": _number,
                    },
                },
            },
            "oneOf": [{"required": ["instance"]}, {"required": ["generator"]}],
        },
        "algorithm": {"enum": list(ALGORITHMS)},
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"enum": list(SCHEDULES)},
                "lam": {"type": "number", "exclusiveMinimum": 0},
                "rho": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "stepsize": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rule": {"enum": ["SM1", "SM2", "constant", "sqrt", "theory"]},
                "scale": {"type": "number", "exclusiveMinimum": 0},
                "stochastic": {"type": "boolean"},
            },
        },
        "sampler": {
            "oneOf": [
                {"enum": ["uniform", "optimal"]},
                {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
            ]
        },
        "estimate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "probes": _pos_int,
                "samples": _pos_int,
                "radius": {"type": "number", "exclusiveMinimum": 0},
                "distance": {"enum": ["radius", "exact"]},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "T": _pos_int,
        "seed": {"type": "integer", "minimum": 0},
        "averaging": {"enum": ["algorithm", "uniform", "linear"]},
        "log_every": _pos_int,
        "record_time": {"type": "boolean"},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"trace": {"type": "string"}},
        },
    },
}

DEFAULTS = {
    "schedule": {"name": "adaptive_convex", "rho": 1.0},
    "stepsize": {"rule": "theory", "scale": 1.0, "stochastic": True},
    "sampler": "uniform",
    "estimate": {"probes": 5, "samples": 2000, "radius": 1.0, "distance": "radius", "seed": 0},
    "seed": 0,
    "averaging": "algorithm",
    "record_time": False,
}


@dataclass
class RunConfig:
    """Validated run description; ``data`` holds the config with defaults filled in."""

    data: dict

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        try:
            jsonschema.validate(raw, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"invalid config at {where}: {exc.message}") from None
        data = copy.deepcopy(raw)
        for key, default in DEFAULTS.items():
            if isinstance(default, dict):
                data[key] = {**default, **data.get(key, {})}
            else:
                data.setdefault(key, default)
        return cls(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(raw)

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=2)

    def with_seed(self, seed: int) -> "RunConfig":
        data = copy.deepcopy(self.data)
        data["seed"] = int(seed)
        return RunConfig(data)

    def with_horizon(self, T: int) -> "RunConfig":
        data = copy.deepcopy(self.data)
        data["T"] = int(T)
        return RunConfig(data)

    @property
    def run_id(self) -> str:
        if "run_id" in self.data:
            return self.data["run_id"]
        name = self.data.get("schedule", {}).get("name", "")
        algo = self.data["algorithm"]
        return f"{algo}-{name}" if algo in ("sbda_u", "sbda_r") else algo


def master_seed(default: int | None = None) -> int | None:
    """Seed from ``SBDA_SEED`` if set, else ``default``."""
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be a nonnegative integer, got {raw!r}") from None
    if value < 0:
        raise ConfigError(f"{SEED_ENV} must be a nonnegative integer, got {raw!r}")
    return value


def derive_seed(master: int, index: int) -> int:
    """Independent run seed for sweep member ``index``."""
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1)[0])


# -- building blocks from a config ------------------------------------------


def build_oracle(problem: dict):
    if "instance" in problem:
        oracle = load_instance(problem["instance"])
    else:
        gen = GENERATORS[problem["generator"]]
        kwargs = dict(problem.get("params", {}))
        if "seed" in problem:
            kwargs["seed"] = problem["seed"]
        try:
            oracle = gen(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad generator parameters: {exc}") from None
    if "regularizer" in problem:
        reg = problem["regularizer"]
        oracle = oracle.with_regularizer(Regularizer(
            reg["kind"], float(reg.get("weight", 0.0)),
            float(reg.get("lo", -np.inf)), float(reg.get("hi", np.inf))))
    return oracle


def build_params(oracle, est: dict) -> BlockParams:
    probes = default_probes(oracle, est["probes"], seed=est["seed"])
    x_star = None
    if est["distance"] == "exact":
        if oracle.x_star is None:
            raise ConfigError("exact distance mode needs an instance with a planted solution")
        x_star = oracle.x_star
    return estimate_params(oracle, probes, est["samples"], est["radius"], rng=est["seed"],
                           x_star=x_star)


def build_sampler(spec, params: BlockParams) -> SamplingDistribution:
    if spec == "uniform":
        return SamplingDistribution.uniform(params.n_blocks)
    if spec == "optimal":
        return optimal_sampling(params)
    if len(spec) != params.n_blocks:
        raise ConfigError("explicit sampler needs one probability per block")
    return SamplingDistribution(np.asarray(spec, dtype=float))


def build_schedule(sched: dict, oracle, params: BlockParams, T: int, sampler=None):
    name, rho = sched["name"], sched.get("rho", 1.0)
    n = oracle.partition.n_blocks
    lam = sched.get("lam", oracle.regularizer.strong_convexity)
    if name == "const_convex":
        return ConstantConvex(params, T, rho)
    if name == "adaptive_convex":
        return AdaptiveConvex(params, rho)
    if name in ("strong_simple", "strong_aggressive"):
        if not lam > 0:
            raise ConfigError(f"{name} needs a strongly convex regularizer or an explicit lam")
        if name == "strong_simple":
            return StronglyConvexSimple(lam, n, rho)
        return StronglyConvexAggressive(lam, n, T, rho)
    if sampler is None:
        sampler = SamplingDistribution.uniform(n)
    if name == "r_const":
        return SBDARConstant(params, T, sampler, rho)
    return SBDARAdaptive(params, sampler, rho)


def execute(cfg: RunConfig, oracle=None) -> RunResult:
    """Run one configuration and return its result."""
    d = cfg.data
    oracle = build_oracle(d["problem"]) if oracle is None else oracle
    T, seed, algo = d["T"], d["seed"], d["algorithm"]
    common = {"log_every": d.get("log_every"), "record_time": d["record_time"]}
    step = d["stepsize"]
    try:
        if algo == "da":
            scale = step["scale"]
            beta = (lambda t: scale * math.sqrt(t + 1.0)) if step["rule"] in ("sqrt", "theory") else scale
            return baseline_da(oracle, beta, T, seed, stochastic=step["stochastic"], **common)
        if algo == "md":
            rule = step["rule"] if step["rule"] in ("SM1", "SM2") else "SM1"
            return baseline_md(oracle, rule, T, seed, scale=step["scale"],
                               stochastic=step["stochastic"], **common)
        params = build_params(oracle, d["estimate"])
        sampler = build_sampler(d["sampler"], params)
        if algo == "sbmd":
            eta = step["scale"] * (sbmd_stepsize(params, T) if step["rule"] == "theory" else 1.0)
            return baseline_sbmd(oracle, eta, T, seed, sampler, **common)
        schedule = build_schedule(d["schedule"], oracle, params, T, sampler)
        if algo == "sbda_u":
            if d["sampler"] != "uniform":
                raise ConfigError("sbda_u samples blocks uniformly; use sbda_r for other samplers")
            return sbda_u(oracle, schedule, T, seed, averaging=d["averaging"], **common)
        return sbda_r(oracle, schedule, sampler, T, seed, **common)
    except (UnsupportedConfiguration, ScheduleError) as exc:
        raise ConfigError(str(exc)) from None


# -- traces ---------------------------------------------------------------------


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def trace_rows(run_id: str, result: RunResult):
    algo, seed = result.metadata["algorithm"], result.metadata["seed"]
    for p in result.trace:
        yield [run_id, algo, seed, p.t, p.queries, _fmt(p.passes), _fmt(p.objective), _fmt(p.ms)]


def write_trace(path, run_id: str, result: RunResult) -> int:
    """Append the run's rows to ``path`` (creating it with a header). Returns rows written."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    rows = list(trace_rows(run_id, result))
    with open(path, "a", newline="") as fh:
        if new:
            fh.write(TRACE_MAGIC + "\n")
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(TRACE_COLUMNS)
        w.writerows(rows)
    return len(rows)


def read_trace(path) -> list[dict]:
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != TRACE_MAGIC:
            raise ValueError(f"{path} is not a trace file (got {first!r})")
        rows = []
        for r in csv.DictReader(fh):
            rows.append({"run_id": r["run_id"], "algo": r["algo"], "seed": int(r["seed"]),
                         "t": int(r["t"]), "queries": int(r["queries"]),
                         "passes": float(r["passes"]), "objective": float(r["objective"]),
                         "ms": float(r["ms"])})
    return rows


# -- sweeps ---------------------------------------------------------------------


def instance_fingerprint(oracle) -> str:
    h = hashlib.sha256(oracle.kind.encode())
    h.update(json.dumps(list(oracle.partition.sizes)).encode())
    for name, arr in sorted(oracle.arrays().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


def loglog_slope(T, err) -> float:
    """Least-squares slope of ``log err`` against ``log T``; nan when undefined."""
    T = np.asarray(T, dtype=float)
    err = np.asarray(err, dtype=float)
    ok = err > 0
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(T[ok]), np.log(err[ok]), 1)[0])


def compare(configs: list[RunConfig], seeds: list[int], horizons: list[int] | None = None,
            reference: float | None = None) -> dict:
    """Run every config for every seed and horizon.

    Returns ``{"curves": rows, "finals": rows, "slopes": {run_id: slope}, "reference": phi*}``.
    Curves are per-row means and standard errors over seeds at the largest horizon.
    """
    if not configs or not seeds:
        raise ConfigError("compare needs at least one config and one seed")
    oracles = [build_oracle(c.data["problem"]) for c in configs]
    prints = {instance_fingerprint(o) for o in oracles}
    if len(prints) != 1:
        raise ConfigError("configs refer to different problem instances")
    if reference is None:
        try:
            reference = reference_optimum(oracles[0])[1]
        except NotImplementedError:
            reference = None
    curves, finals, slopes = [], [], {}
    for cfg, oracle in zip(configs, oracles):
        Ts = sorted(horizons) if horizons else [cfg.data["T"]]
        means = []
        for T in Ts:
            results = [execute(cfg.with_horizon(T).with_seed(s), oracle) for s in seeds]
            obj = np.array([r.final_objective for r in results])
            se = obj.std(ddof=1) / math.sqrt(len(obj)) if len(obj) > 1 else 0.0
            err = obj.mean() - reference if reference is not None else float("nan")
            means.append(err)
            finals.append({"run_id": cfg.run_id, "T": T, "seeds": len(seeds),
                           "mean": float(obj.mean()), "stderr": float(se), "error": float(err)})
            if T == Ts[-1]:
                curves.extend(_curve_rows(cfg.run_id, results))
        slopes[cfg.run_id] = loglog_slope(Ts, means) if reference is not None else float("nan")
    return {"curves": curves, "finals": finals, "slopes": slopes, "reference": reference}


def _curve_rows(run_id, results):
    traces = [r.trace for r in results]
    rows = []
    for k in range(len(traces[0])):
        obj = np.array([tr[k].objective for tr in traces])
        passes = np.mean([tr[k].passes for tr in traces])
        se = obj.std(ddof=1) / math.sqrt(len(obj)) if len(obj) > 1 else 0.0
        rows.append({"run_id": run_id, "t": traces[0][k].t, "passes": float(passes),
                     "mean": float(obj.mean()), "stderr": float(se)})
    return rows


def write_summary(summary: dict, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, rows, cols in (
        ("curves.csv", summary["curves"], ("run_id", "t", "passes", "mean", "stderr")),
        ("finals.csv", summary["finals"], ("run_id", "T", "seeds", "mean", "stderr", "error")),
    ):
        p = out / name
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in rows:
                w.writerow([_fmt(r[c]) for c in cols])
        paths.append(p)
    p = out / "slopes.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("run_id", "slope"))
        for k, v in summary["slopes"].items():
            w.writerow((k, _fmt(v)))
    paths.append(p)
    p = out / "plot.py"
    p.write_text(PLOT_SCRIPT)
    paths.append(p)
    return paths


PLOT_SCRIPT = '''"""Plot objective against data passes from curves.csv (mean +- stderr)."""
import csv
import sys
from collections import defaultdict

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "curves.csv"
series = defaultdict(list)
with open(path) as fh:
    for row in csv.DictReader(fh):
        series[row["run_id"]].append(
            (float(row["passes"]), float(row["mean"]), float(row["stderr"])))

fig, ax = plt.subplots(figsize=(5, 4))
for name, pts in series.items():
    x, m, s = zip(*pts)
    ax.plot(x, m, label=name)
    ax.fill_between(x, [a - b for a, b in zip(m, s)], [a + b for a, b in zip(m, s)], alpha=0.2)
ax.set_xlabel("passes over the data")
ax.set_ylabel("objective")
ax.set_yscale("log")
ax.legend()
fig.tight_layout()
fig.savefig("objective_vs_passes.png", dpi=150)
'''


# -- command line -----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sbda", description="Stochastic block dual averaging experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a problem instance file")
    g.add_argument("--problem", required=True, choices=sorted(GENERATORS))
    g.add_argument("--out", required=True)
    g.add_argument("--m", type=int)
    g.add_argument("--n", type=int, help="dimension")
    g.add_argument("--blocks", type=int)
    g.add_argument("--scaling", default=None)
    g.add_argument("--heavy", type=int, default=None, help="heavy blocks (l1reg)")
    g.add_argument("--noise", type=float, default=None)
    g.add_argument("--rescale", type=float, default=None, help="row rescale factor (ls)")
    g.add_argument("--lam", type=float, default=None, help="l1 penalty (lasso)")
    g.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("run", help="run one config and append its trace")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--trace")
    r.add_argument("--time", action="store_true", help="record wall time (makes traces nondeterministic)")

    c = sub.add_parser("compare", help="sweep configs over seeds and horizons")
    c.add_argument("configs", nargs="+")
    c.add_argument("--seeds", type=int, default=5, help="number of seeds")
    c.add_argument("--horizons", type=_int_list, default=None)
    c.add_argument("--out", required=True, help="output directory")

    k = sub.add_parser("check", help="run the lemma oracles")
    k.add_argument("--only", nargs="*", default=None)
    return p


def _gen_kwargs(args) -> dict:
    names = {"l1reg": {"m": "m", "n": "n_features", "blocks": "n_blocks", "scaling": "scaling",
                       "heavy": "heavy_blocks", "noise": "noise"},
             "ls": {"m": "m", "n": "n_features", "blocks": "n_blocks", "rescale": "rescale"},
             "lasso": {"m": "m", "n": "n_features", "blocks": "n_blocks", "lam": "lam"}}[args.problem]
    kwargs = {"seed": args.seed}
    for flag in ("m", "n", "blocks", "scaling", "heavy", "noise", "rescale", "lam"):
        value = getattr(args, flag)
        if value is None:
            continue
        if flag not in names:
            raise ConfigError(f"--{flag} does not apply to {args.problem}")
        kwargs[names[flag]] = value
    if args.problem == "l1reg" and ("m" not in kwargs or "n_features" not in kwargs):
        raise ConfigError("l1reg needs --m and --n")
    return kwargs


def cmd_gen(args) -> int:
    oracle = GENERATORS[args.problem](**_gen_kwargs(args))
    save_instance(oracle, args.out)
    est = estimate_params(oracle, default_probes(oracle), 2000, rng=0,
                          x_star=oracle.x_star if oracle.x_star is not None else None)
    print(f"wrote {args.out}: {oracle.kind}, dim {oracle.dim}, {oracle.partition.n_blocks} blocks")
    print(f"{'block':>5} {'size':>5} {'M_i':>12} {'D_i':>12}")
    for i, (M, D) in enumerate(zip(est.M, est.D)):
        print(f"{i:>5} {oracle.partition.sizes[i]:>5} {M:>12.6g} {D:>12.6g}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = RunConfig.load(args.config)
    seed = args.seed if args.seed is not None else master_seed(cfg.data["seed"])
    cfg = cfg.with_seed(seed)
    if args.time:
        cfg.data["record_time"] = True
    result = execute(cfg)
    trace = args.trace or cfg.data.get("output", {}).get("trace")
    if trace:
        n = write_trace(trace, cfg.run_id, result)
        print(f"{cfg.run_id} seed {seed}: {n} rows -> {trace}")
    print(f"final objective {result.final_objective:.10g} after {result.metadata['passes']:.4g} passes")
    return EXIT_OK


def cmd_compare(args) -> int:
    configs = [RunConfig.load(p) for p in args.configs]
    master = master_seed(0)
    seeds = [derive_seed(master, k) for k in range(args.seeds)]
    summary = compare(configs, seeds, args.horizons)
    paths = write_summary(summary, args.out)
    for k, v in summary["slopes"].items():
        print(f"{k}: slope {v:.4f}")
    print("wrote " + ", ".join(str(p) for p in paths))
    return EXIT_OK


def cmd_check(args) -> int:
    try:
        results = run_checks(args.only)
    except KeyError as exc:
        raise ConfigError(f"unknown check {exc}") from None
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: margin {r.margin:.3e} over {r.cases} cases {r.detail}".rstrip())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "compare": cmd_compare, "check": cmd_check}


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"sbda {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
