"""Command-line experiment runner.

Subcommands::

    robust-miso solve --config exp.yaml [--seed S] [--trials N] [--out DIR] [--jobs J] [--mc-samples M]
    robust-miso certify DESIGN.json [--strict]
    robust-miso plotdata [RESULTS_DIR]

Each flag can also come from the environment (``WCUM_CONFIG``, ``WCUM_SEED``,
``WCUM_TRIALS``, ``WCUM_OUT``, ``WCUM_JOBS``, ``WCUM_MC_SAMPLES``); a flag wins
over the environment, which wins over the config file.

Exit codes: 0 success, 1 usage error, 2 partial failure, 3 total failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import evaluate, wcum
from .model import ChannelSet, CovarianceSet, SystemConfig, Utility, sample_channels

log = logging.getLogger("robust_miso")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_PARTIAL, EXIT_FAILURE = 0, 1, 2, 3
ALGORITHMS = ("wcum", "naive")
ENV_PREFIX = "WCUM_"

TRIALS_FILE = "trials.jsonl"
AGGREGATE_FILE = "aggregate.csv"
MANIFEST_FILE = "manifest.json"
AGGREGATE_FIELDS = [
    "radius", "algorithm", "n_trials", "n_included", "n_failed",
    "mean_worst_utility_included", "mean_worst_utility_all", "mean_mc_utility_included",
]


class UsageError(Exception):
    """Bad command line, configuration or input file."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------
@dataclass
class ExperimentConfig:
    system: SystemConfig
    radii_sweep: list
    n_trials: int = 100
    seed: int = 0
    epsilon: float = 1e-3
    max_iters: int = 200
    mc_samples: int = 0
    algorithms: list = field(default_factory=lambda: list(ALGORITHMS))
    output_dir: str = "results"
    power_db: float = 10.0

    def __post_init__(self):
        if not self.radii_sweep:
            raise ValueError("radii_sweep must be nonempty")
        if any(r < 0 for r in self.radii_sweep):
            raise ValueError("radii must be nonnegative")
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.mc_samples < 0:
            raise ValueError("mc_samples must be >= 0")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad or not self.algorithms:
            raise ValueError(f"algorithms must be a nonempty subset of {list(ALGORITHMS)}, got {self.algorithms}")

    def to_dict(self) -> dict:
        sysd = self.system.to_dict()
        sysd.pop("power_budget")
        sysd["power_db"] = self.power_db
        return {
            "system": sysd,
            "radii_sweep": list(self.radii_sweep),
            "n_trials": self.n_trials,
            "seed": self.seed,
            "epsilon": self.epsilon,
            "max_iters": self.max_iters,
            "mc_samples": self.mc_samples,
            "algorithms": list(self.algorithms),
            "output_dir": str(self.output_dir),
        }


_SYSTEM_KEYS = {"n_tx", "n_users", "power_db", "noise_powers", "utility"}
_TOP_KEYS = {"system", "radii_sweep", "n_trials", "seed", "epsilon", "max_iters", "mc_samples",
             "algorithms", "output_dir"}


def _key_lines(node, prefix=()):
    """Map key paths of a composed YAML mapping to 1-based line numbers."""
    out = {}
    if isinstance(node, yaml.MappingNode):
        for knode, vnode in node.value:
            path = prefix + (knode.value,)
            out[path] = knode.start_mark.line + 1
            out.update(_key_lines(vnode, path))
    return out


def parse_experiment(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse a YAML experiment description, reporting errors with line numbers."""
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark is not None else source
        raise UsageError(f"{where}: cannot parse config: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(data, dict):
        raise UsageError(f"{source}:1: config must be a mapping")
    lines = _key_lines(node)

    def fail(path, msg):
        line = lines.get(tuple(path))
        raise UsageError(f"{source}:{line if line else '?'}: {'.'.join(path)}: {msg}")

    for key in data:
        if key not in _TOP_KEYS:
            fail([key], f"unknown key (expected one of {sorted(_TOP_KEYS)})")
    if "system" not in data or not isinstance(data["system"], dict):
        fail(["system"], "missing or not a mapping")
    sysd = data["system"]
    for key in sysd:
        if key not in _SYSTEM_KEYS:
            fail(["system", key], f"unknown key (expected one of {sorted(_SYSTEM_KEYS)})")
    for key in ("n_tx", "n_users"):
        if key not in sysd:
            fail(["system"], f"missing {key}")

    def num(path, value, kind):
        try:
            if kind is int:
                if isinstance(value, bool) or int(value) != value:
                    raise ValueError
                return int(value)
            return float(value)
        except (TypeError, ValueError):
            fail(path, f"expected {kind.__name__}, got {value!r}")

    try:
        power_db = num(["system", "power_db"], sysd.get("power_db", 10.0), float)
        noise = sysd.get("noise_powers", 0.01)
        noise = [num(["system", "noise_powers"], v, float) for v in noise] if isinstance(noise, list) \
            else num(["system", "noise_powers"], noise, float)
        util = Utility.from_dict(sysd.get("utility", "sum-rate"))
    except (ValueError, KeyError, TypeError) as exc:
        fail(["system"], str(exc))
    try:
        system = SystemConfig(
            n_tx=num(["system", "n_tx"], sysd["n_tx"], int),
            n_users=num(["system", "n_users"], sysd["n_users"], int),
            power_budget=10.0 ** (power_db / 10.0),
            noise_powers=noise,
            utility=util,
        )
    except ValueError as exc:
        fail(["system"], str(exc))

    radii = data.get("radii_sweep")
    if not isinstance(radii, list):
        fail(["radii_sweep"], "expected a list of radii")
    radii = [num(["radii_sweep"], r, float) for r in radii]
    algos = data.get("algorithms", list(ALGORITHMS))
    if not isinstance(algos, list):
        fail(["algorithms"], "expected a list")
    kwargs = dict(
        system=system,
        radii_sweep=radii,
        n_trials=num(["n_trials"], data.get("n_trials", 100), int),
        seed=num(["seed"], data.get("seed", 0), int),
        epsilon=num(["epsilon"], data.get("epsilon", 1e-3), float),
        max_iters=num(["max_iters"], data.get("max_iters", 200), int),
        mc_samples=num(["mc_samples"], data.get("mc_samples", 0), int),
        algorithms=[str(a) for a in algos],
        output_dir=str(data.get("output_dir", "results")),
        power_db=power_db,
    )
    try:
        return ExperimentConfig(**kwargs)
    except ValueError as exc:
        msg = str(exc)
        key = next((k for k in _TOP_KEYS if k in msg), None)
        fail([key] if key else [], msg)


def load_experiment(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_experiment(text, str(path))


# ---------------------------------------------------------------------------
# Trials
# ---------------------------------------------------------------------------
def trial_seed(seed: int, trial: int) -> np.random.SeedSequence:
    """Seed of trial ``trial``; independent of how many trials are run."""
    return np.random.SeedSequence(seed, spawn_key=(trial,))


def _mc_seed(seed: int, trial: int, radius_index: int, algorithm: str) -> int:
    ss = np.random.SeedSequence(seed, spawn_key=(trial, 1 + radius_index, ALGORITHMS.index(algorithm)))
    return int(ss.generate_state(1)[0])


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def design_record(state: wcum.WcumState, channels: ChannelSet, config: SystemConfig, **extra) -> dict:
    """Self-contained design description understood by ``certify``."""
    rec = {
        "schema_version": SCHEMA_VERSION,
        "kind": "design",
        "system": config.to_dict(),
        "channels": channels.to_dict(),
        "covariances": state.covs.to_dict(),
        "t": state.t.tolist(),
        "lambda": state.lambdas.tolist() if state.lambdas is not None else None,
        "z": state.slacks.tolist() if state.slacks is not None else None,
        "iteration": state.iteration,
    }
    rec.update(extra)
    return _jsonable(rec)


def _tag(trial, radius_index, algorithm):
    return f"trial{trial:04d}_r{radius_index}_{algorithm}"


def run_trial(exp: ExperimentConfig, trial: int) -> dict:
    """Run every radius and algorithm of one trial.

    Returns ``{"records": [...], "traces": {tag: [...]}, "designs": {tag: {...}}}``;
    nothing is written here so trials can run in worker processes.
    """
    cfg = exp.system
    estimates = sample_channels(cfg, trial_seed(exp.seed, trial))
    records, traces, designs = [], {}, {}

    naive = None
    if "naive" in exp.algorithms:
        try:
            covs, tr = evaluate.naive_design(ChannelSet(estimates, 0.0), cfg, return_trace=True,
                                             epsilon=exp.epsilon, max_iters=exp.max_iters)
            naive = (covs, tr, None)
        except Exception as exc:  # recorded per trial, never fatal
            naive = (None, None, f"{type(exc).__name__}: {exc}")

    for j, radius in enumerate(exp.radii_sweep):
        channels = ChannelSet(estimates, radius)
        for alg in exp.algorithms:
            tag = _tag(trial, j, alg)
            base = {"schema_version": SCHEMA_VERSION, "trial": trial, "radius_index": j,
                    "radius": radius, "algorithm": alg}
            try:
                if alg == "wcum":
                    tr = wcum.run(channels, cfg, epsilon=exp.epsilon, max_iters=exp.max_iters)
                    covs = tr.final.covs
                    if covs is None:
                        raise wcum.SolverFailure(tr.message or "no design produced")
                    design_channels = channels
                else:
                    covs, tr, err = naive
                    if err is not None:
                        raise RuntimeError(err)
                    design_channels = channels.with_radii(0.0)
                rep = evaluate.worst_case_report(covs, channels, cfg, exp.mc_samples,
                                                 _mc_seed(exp.seed, trial, j, alg))
                rec = dict(base, status="ok", converged=tr.converged, stop_reason=tr.stop_reason,
                           iterations=tr.iterations, t_final=tr.final.t.tolist(),
                           utility_targets=tr.final.utility_value, psi_final=tr.final.psi,
                           certificate=tr.certificate.to_dict() if tr.certificate else None,
                           report=rep.to_dict(), error=tr.message or None)
                if alg == "wcum" or j == 0:
                    traces[tag] = tr.to_records()
                    designs[tag] = design_record(tr.final, design_channels, cfg, algorithm=alg,
                                                 trial=trial, evaluated_radius=radius)
            except Exception as exc:
                rec = dict(base, status="failed", converged=False, stop_reason=wcum.SOLVER_FAILURE,
                           iterations=None, t_final=None, utility_targets=None, psi_final=None,
                           certificate=None, report=None, error=f"{type(exc).__name__}: {exc}")
            records.append(_jsonable(rec))
    return {"records": records, "traces": traces, "designs": designs}


def aggregate(records: list, exp: ExperimentConfig) -> list:
    """Mean worst-case utility per radius and algorithm.

    ``included`` rows are trials that converged by the epsilon criterion;
    ``all`` rows use every trial that produced a design.
    """
    rows = []
    for j, radius in enumerate(exp.radii_sweep):
        for alg in exp.algorithms:
            sel = [r for r in records if r["radius_index"] == j and r["algorithm"] == alg]
            ok = [r for r in sel if r["status"] == "ok"]
            inc = [r for r in ok if r["converged"]]

            def mean(rs, key):
                vals = [r["report"][key] for r in rs]
                if not vals or any(v is None for v in vals):
                    return None
                return float(np.mean(vals))

            rows.append({
                "radius": radius, "algorithm": alg, "n_trials": len(sel), "n_included": len(inc),
                "n_failed": len(sel) - len(ok),
                "mean_worst_utility_included": mean(inc, "utility_exact"),
                "mean_worst_utility_all": mean(ok, "utility_exact"),
                "mean_mc_utility_included": mean(inc, "utility_mc") if exp.mc_samples > 0 else None,
            })
    return rows


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_aggregate(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=AGGREGATE_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row[k]) for k in AGGREGATE_FIELDS})


def read_aggregate(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out = {}
            for k, v in row.items():
                if k == "algorithm":
                    out[k] = v
                elif k.startswith("n_"):
                    out[k] = int(v)
                else:
                    out[k] = float(v) if v != "" else None
            rows.append(out)
    return rows


def cmd_solve(exp: ExperimentConfig, jobs: int = 1) -> int:
    """Run all trials, write results under ``exp.output_dir`` and return an exit code."""
    out = Path(exp.output_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "designs").mkdir(parents=True, exist_ok=True)
    trials = range(exp.n_trials)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_trial, [exp] * exp.n_trials, trials))
    else:
        results = []
        for i in trials:
            results.append(run_trial(exp, i))
            log.info("trial %d/%d done", i + 1, exp.n_trials)

    records = [rec for res in results for rec in res["records"]]
    with open(out / TRIALS_FILE, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    for res in results:
        for tag, recs in res["traces"].items():
            with open(out / "traces" / f"{tag}.jsonl", "w") as fh:
                for r in recs:
                    fh.write(json.dumps(_jsonable(r), sort_keys=True) + "\n")
        for tag, design in res["designs"].items():
            (out / "designs" / f"{tag}.json").write_text(json.dumps(design, sort_keys=True, indent=1))
    rows = aggregate(records, exp)
    write_aggregate(rows, out / AGGREGATE_FILE)
    n_failed = sum(r["status"] != "ok" for r in records)
    manifest = {"schema_version": SCHEMA_VERSION, "config": exp.to_dict(), "n_records": len(records),
                "n_failed": n_failed, "files": {"trials": TRIALS_FILE, "aggregate": AGGREGATE_FILE,
                                                "traces": "traces", "designs": "designs"}}
    (out / MANIFEST_FILE).write_text(json.dumps(_jsonable(manifest), sort_keys=True, indent=1))
    if n_failed == len(records):
        return EXIT_FAILURE
    return EXIT_PARTIAL if n_failed else EXIT_OK


# ---------------------------------------------------------------------------
# certify
# ---------------------------------------------------------------------------
def load_design(path):
    try:
        data = json.loads(Path(path).read_text())
        config = SystemConfig.from_dict(data["system"])
        channels = ChannelSet.from_dict(data["channels"])
        covs = CovarianceSet.from_dict(data["covariances"])
        channels.check(config)
        if covs.matrices.shape != (config.n_users, config.n_tx, config.n_tx):
            raise ValueError("covariances do not match the system")
    except OSError as exc:
        raise UsageError(f"cannot read design {path}: {exc.strerror}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"malformed design file {path}: {type(exc).__name__}: {exc}") from None
    return data, config, channels, covs


def certify_design(data: dict, config: SystemConfig, channels: ChannelSet, covs: CovarianceSet,
                   strict: bool = False) -> tuple[bool, list]:
    """Run all checks on a design; returns ``(passed, checks)``.

    Feasibility and target consistency always count. The stationarity checks
    (zero slack, Pareto probe) only count with ``strict``.
    """
    K = config.n_users
    worst = [evaluate.exact_worst_sinr(covs, channels, config, k) for k in range(K)]
    if data.get("t") is not None:
        t = np.asarray(data["t"], dtype=float)
    else:
        t = np.array(worst)
    if data.get("lambda") is not None:
        lambdas = np.asarray(data["lambda"], dtype=float)
    else:
        lambdas = np.array([evaluate.certifying_multiplier(t[k], covs, channels, config, k)[0] for k in range(K)])
    slacks = np.asarray(data["z"], dtype=float) if data.get("z") is not None else None
    state = wcum.WcumState(int(data.get("iteration", 0)), t, lambdas, slacks, covs, 0.0, None)
    cert = wcum.certify_limit(state, channels, config, probe=strict)
    checks = []
    for c in cert.checks:
        counts = c.name == "feasibility" or strict
        checks.append({"name": c.name, "passed": c.passed, "margin": c.margin, "counts": counts})
    gap = float(np.max(t - np.asarray(worst)))
    checks.append({"name": "worst-case-targets", "passed": gap <= 1e-5, "margin": gap - 1e-5, "counts": True,
                   "exact_worst_sinr": worst})
    passed = all(c["passed"] for c in checks if c["counts"])
    return passed, checks


def cmd_certify(path, strict: bool = False, stream=None) -> int:
    stream = stream or sys.stdout
    data, config, channels, covs = load_design(path)
    passed, checks = certify_design(data, config, channels, covs, strict)
    for c in checks:
        flag = "PASS" if c["passed"] else "FAIL"
        note = "" if c["counts"] else " (informational)"
        print(f"{flag} {c['name']}: margin {c['margin']:.3e}{note}", file=stream)
    rates = [math.log2(1.0 + s) for s in checks[-1]["exact_worst_sinr"]]
    print("worst-case rates: " + ", ".join(f"{r:.6f}" for r in rates), file=stream)
    print("certificate " + ("passed" if passed else "FAILED"), file=stream)
    return EXIT_OK if passed else EXIT_PARTIAL


# ---------------------------------------------------------------------------
# plotdata
# ---------------------------------------------------------------------------
def cmd_plotdata(results_dir, stream=None) -> int:
    """Write ``plot_<algorithm>.csv`` (radius, mean worst-case utility) series.

    Values are copied from the aggregate table. Cells expected from the
    manifest but absent or empty are listed and give exit code 2.
    """
    stream = stream or sys.stdout
    rdir = Path(results_dir)
    agg_path = rdir / AGGREGATE_FILE
    if not rdir.is_dir() or not agg_path.exists():
        raise UsageError(f"no results in {rdir}: {AGGREGATE_FILE} not found")
    rows = read_aggregate(agg_path)
    expected = None
    if (rdir / MANIFEST_FILE).exists():
        cfgd = json.loads((rdir / MANIFEST_FILE).read_text())["config"]
        expected = [(r, a) for r in cfgd["radii_sweep"] for a in cfgd["algorithms"]]
    have = {(r["radius"], r["algorithm"]): r for r in rows}
    if expected is None:
        expected = list(have)
    algs = list(dict.fromkeys(a for _, a in expected))
    missing = []
    for alg in algs:
        for suffix, col in (("", "mean_worst_utility_included"), ("_all", "mean_worst_utility_all")):
            with open(rdir / f"plot_{alg}{suffix}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["radius", f"{alg}_{col}"])
                for r, a in expected:
                    if a != alg:
                        continue
                    row = have.get((r, a))
                    if row is None or row[col] is None:
                        if suffix == "":
                            missing.append((r, a))
                        continue
                    w.writerow([repr(r), repr(row[col])])
    for alg in algs:
        print(f"wrote {rdir / f'plot_{alg}.csv'}", file=stream)
    if missing:
        print("missing cells:", file=sys.stderr)
        for r, a in missing:
            print(f"  radius={r} algorithm={a}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------
class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="robust-miso", description="Robust multiuser MISO transmit design experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="run the configured experiment")
    s.add_argument("--config", help="YAML experiment file")
    s.add_argument("--seed", type=int)
    s.add_argument("--trials", type=int)
    s.add_argument("--out", help="output directory")
    s.add_argument("--jobs", type=int, help="worker processes (default 1)")
    s.add_argument("--mc-samples", type=int, dest="mc_samples")

    c = sub.add_parser("certify", help="check a design file")
    c.add_argument("design", nargs="?", help="design JSON written by solve")
    c.add_argument("--strict", action="store_true", help="also require zero slack and a passing Pareto probe")

    d = sub.add_parser("plotdata", help="emit plot-ready tables from a results directory")
    d.add_argument("results", nargs="?", help="results directory (default: --out / WCUM_OUT)")
    d.add_argument("--out", help=argparse.SUPPRESS)
    return p


def _env(name, cast=str):
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None or raw == "":
        return None
    try:
        return cast(raw)
    except ValueError:
        raise UsageError(f"environment variable {ENV_PREFIX}{name}={raw!r} is not a valid {cast.__name__}") from None


def _pick(flag, env_name, cast=str):
    return flag if flag is not None else _env(env_name, cast)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "solve":
            path = _pick(args.config, "CONFIG")
            if path is None:
                raise UsageError("solve needs --config or WCUM_CONFIG")
            exp = load_experiment(path)
            overrides = {
                "seed": _pick(args.seed, "SEED", int),
                "n_trials": _pick(args.trials, "TRIALS", int),
                "output_dir": _pick(args.out, "OUT"),
                "mc_samples": _pick(args.mc_samples, "MC_SAMPLES", int),
            }
            fields = exp.to_dict()
            fields.pop("system")
            fields.update({k: v for k, v in overrides.items() if v is not None})
            try:
                exp = ExperimentConfig(system=exp.system, power_db=exp.power_db, **fields)
            except ValueError as exc:
                raise UsageError(str(exc)) from None
            jobs = _pick(args.jobs, "JOBS", int) or 1
            if jobs < 1:
                raise UsageError("--jobs must be >= 1")
            return cmd_solve(exp, jobs)
        if args.command == "certify":
            if args.design is None:
                raise UsageError("certify needs a design file")
            return cmd_certify(args.design, args.strict)
        results = args.results or _pick(args.out, "OUT")
        if results is None:
            raise UsageError("plotdata needs a results directory")
        return cmd_plotdata(results)
    except UsageError as exc:
        print(f"robust-miso: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
