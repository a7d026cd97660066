"""Experiment orchestration: config, seed sweeps, tables, plot-ready CSVs.

A sweep cell is one (task, regime, algorithm, seed) run. Cells are
independent and fully determined by the config, so reruns produce
byte-identical tables; wall-clock timings go to meta.json only. A cell
that raises is recorded as failed and the sweep continues.

Artifacts written under the output directory:

* runs/<task>__<regime>__<algo>__s<seed>.jsonl — per-step training log
* results.csv / results.md — the aggregated score table
* weights__<task>__<regime>.csv — min-max-normalized weight trajectories
* uncertainty__<task>__<regime>.csv — per-algorithm ensemble-std series
* theory__<suite>.jsonl — optional verification suites
* meta.json — timings, errors, output hashes (the only non-deterministic file)

Environment overrides: PARLAB_OUT (output directory), PARLAB_WORKERS
(worker-pool size); nothing else is read from the environment.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datagen import MODES, REGIMES, BehaviorSpec, make_behavior, sample_dataset
from .decmdp import DecMdp, QTable
from .errors import ValidationError
from .learners import (
    LearnerConfig,
    TrainLog,
    train_icql_qs,
    train_joint_cql_baseline,
    train_spacql,
)
from .policies import FactorizedPolicy, exact_marginals
from .tasks import TASK_BUILDERS, task_mdp
from .theory import spacql_bound, verify_theory

KNOWN_ALGOS = ("spacql", "icql-qs", "jointcql")


def _fmt(x) -> str:
    """Deterministic CSV cell: shortest round-trip float repr, blank for None/NaN."""
    if x is None:
        return ""
    if isinstance(x, float) and np.isnan(x):
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


@dataclass
class ExperimentConfig:
    """One sweep: tasks x regimes x algorithms x seeds, plus theory toggles."""

    tasks: list = field(default_factory=lambda: list(TASK_BUILDERS))
    regimes: list = field(default_factory=lambda: ["random"])
    algorithms: dict = field(default_factory=lambda: {a: {} for a in KNOWN_ALGOS})
    seeds: list = field(default_factory=lambda: [0, 1])
    sizes: dict = field(default_factory=dict)   # task -> dataset size
    default_size: int = 400
    mode: str = "trajectory"
    out_dir: str = "parlab_out"
    theory_suites: list = field(default_factory=list)
    theory_instances: int = 25

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.tasks or not self.regimes or not self.algorithms or not self.seeds:
            raise ValidationError("tasks, regimes, algorithms, and seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValidationError(f"seeds must be unique, got {self.seeds}")
        for algo in self.algorithms:
            if algo not in KNOWN_ALGOS:
                raise ValidationError(f"unknown algorithm {algo!r}; known: {KNOWN_ALGOS}")
        for regime in self.regimes:
            if regime not in REGIMES:
                raise ValidationError(f"unknown regime {regime!r}; known: {REGIMES}")
        if self.mode not in MODES:
            raise ValidationError(f"unknown sampling mode {self.mode!r}")
        for task in self.tasks:
            if task not in TASK_BUILDERS and not Path(task).is_file():
                raise ValidationError(
                    f"task {task!r} is neither a built-in ({tuple(TASK_BUILDERS)}) "
                    "nor an existing mdp file"
                )
        for task, size in self.sizes.items():
            if int(size) < 1:
                raise ValidationError(f"dataset size for {task!r} must be >= 1")
        if self.default_size < 1:
            raise ValidationError("default_size must be >= 1")
        for suite in self.theory_suites:
            if suite not in ("lemmas", "bounds", "gradients", "all"):
                raise ValidationError(f"unknown theory suite {suite!r}")
        # surface bad learner overrides at load time, not mid-sweep
        for algo, overrides in self.algorithms.items():
            LearnerConfig(**overrides)

    def size_for(self, task: str) -> int:
        return int(self.sizes.get(task, self.default_size))

    def to_json(self) -> dict:
        return {
            "tasks": list(self.tasks),
            "regimes": list(self.regimes),
            "algorithms": {k: dict(v) for k, v in self.algorithms.items()},
            "seeds": [int(s) for s in self.seeds],
            "sizes": {k: int(v) for k, v in self.sizes.items()},
            "default_size": self.default_size,
            "mode": self.mode,
            "out_dir": self.out_dir,
            "theory_suites": list(self.theory_suites),
            "theory_instances": self.theory_instances,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ValidationError(f"unknown config fields: {sorted(extra)}")
        return cls(**doc)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def config_hash(self) -> str:
        # Identify the experiment, not where it lands on disk: two sweeps
        # with identical settings must hash equal even when written to
        # different directories, so provenance headers stay reproducible.
        payload = self.to_json()
        payload.pop("out_dir")
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class ResultsTable:
    """Aggregated rows keyed by (task, regime, algorithm)."""

    rows: list
    config_hash: str
    mdp_hashes: dict

    COLUMNS = (
        "task", "regime", "algorithm", "n_seeds", "n_failed",
        "score_mean", "score_std", "value_mean", "value_std",
        "final_k_eff", "mean_u", "w_first", "w_last", "bound_slack",
    )

    def _provenance(self) -> list[str]:
        lines = [f"# config={self.config_hash}"]
        for task in sorted(self.mdp_hashes):
            lines.append(f"# mdp={task}:{self.mdp_hashes[task]}")
        return lines

    def to_csv(self) -> str:
        lines = self._provenance()
        lines.append(",".join(self.COLUMNS))
        for row in self.rows:
            lines.append(",".join(_fmt(row.get(c)) for c in self.COLUMNS))
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        lines = self._provenance()
        lines.append("")
        lines.append("| task | regime | algorithm | score | value | k_eff | seeds |")
        lines.append("|---|---|---|---|---|---|---|")
        for row in self.rows:
            if row["n_seeds"] == 0:
                score = value = "failed"
            else:
                def stat(mean_key, std_key):
                    mean = row.get(mean_key)
                    if mean is None or (isinstance(mean, float) and np.isnan(mean)):
                        return "-"
                    if row["n_seeds"] < 2:
                        return f"{mean:.2f} (single-seed)"
                    return f"{mean:.2f} +/- {row[std_key]:.2f}"
                score = stat("score_mean", "score_std")
                value = stat("value_mean", "value_std")
            k_eff = row.get("final_k_eff")
            k_txt = "-" if k_eff is None or (isinstance(k_eff, float) and np.isnan(k_eff)) \
                else f"{k_eff:.2f}"
            lines.append(
                f"| {row['task']} | {row['regime']} | {row['algorithm']} "
                f"| {score} | {value} | {k_txt} | {row['n_seeds']} |"
            )
        return "\n".join(lines) + "\n"


def _load_task(task: str) -> DecMdp:
    if task in TASK_BUILDERS:
        return task_mdp(task)
    with open(task) as fh:
        return DecMdp.from_json(json.load(fh))


def _task_label(task: str) -> str:
    if task in TASK_BUILDERS:
        return task
    return Path(task).stem.replace("__", "-")


_TRAINERS = {
    "spacql": train_spacql,
    "icql-qs": train_icql_qs,
    "jointcql": train_joint_cql_baseline,
}


def _behavior_marginals(behavior, counts) -> FactorizedPolicy:
    if isinstance(behavior, FactorizedPolicy):
        return behavior
    return exact_marginals(behavior, counts)


def _run_cell(config: ExperimentConfig, task: str, regime: str, algo: str, seed: int,
              runs_dir: Path, config_hash: str):
    """Train one cell and write its log; returns the per-seed summary dict."""
    t0 = time.perf_counter()
    mdp = _load_task(task)
    spec = BehaviorSpec(regime, seed=seed)
    behavior = make_behavior(mdp, spec)
    dataset = sample_dataset(
        mdp, behavior, config.size_for(task), mode=config.mode, seed=seed,
        behavior_spec=spec,
    )
    learner = LearnerConfig(seed=seed, **config.algorithms[algo])
    result = _TRAINERS[algo](dataset, learner, mdp)
    table_or_ensemble, policies, log = result

    label = _task_label(task)
    log_path = runs_dir / f"{label}__{regime}__{algo}__s{seed}.jsonl"
    log.to_jsonl(log_path, header={
        "config": config_hash, "mdp": mdp.content_hash(),
        "task": label, "regime": regime, "seed": seed,
    })

    first = table_or_ensemble.member(0) if hasattr(table_or_ensemble, "member") \
        else table_or_ensemble
    slack = None
    try:
        per_state, glob = log.state_weights()
        report = spacql_bound(
            mdp, policies.policy(), _behavior_marginals(behavior, mdp.action_counts),
            QTable(first.values, mdp.gamma), per_state, glob,
        )
        slack = report.slack
    except (ValidationError, ValueError):
        pass  # degenerate trace; slack stays unreported

    n = log.n_agents
    return {
        "task": label, "regime": regime, "algorithm": algo, "seed": seed,
        "value": float(log.value[-1]),
        "score": None if np.isnan(log.score[-1]) else float(log.score[-1]),
        "final_k_eff": float(log.k_eff[-1]),
        "mean_u": float(log.u.mean()),
        "w_first": float(log.w[:, 0].mean()),
        "w_last": float(log.w[:, n - 1].mean()),
        "final_target_std": float(log.target_std[-1]),
        "bound_slack": slack,
        "elapsed": time.perf_counter() - t0,
        "log_path": str(log_path),
    }


def _aggregate(cells: list, errors: list) -> list:
    """Collapse per-seed cell results into (task, regime, algorithm) rows."""
    by_key = {}
    for cell in cells:
        by_key.setdefault((cell["task"], cell["regime"], cell["algorithm"]), []).append(cell)
    failed_by_key = {}
    for err in errors:
        failed_by_key.setdefault((err["task"], err["regime"], err["algorithm"]), []).append(err)

    rows = []
    for key in sorted(set(by_key) | set(failed_by_key)):
        group = by_key.get(key, [])
        n_ok = len(group)
        row = {
            "task": key[0], "regime": key[1], "algorithm": key[2],
            "n_seeds": n_ok, "n_failed": len(failed_by_key.get(key, [])),
        }
        if n_ok:
            def agg(name):
                vals = [c[name] for c in group if c[name] is not None]
                if not vals:
                    return None, None
                mean = float(np.mean(vals))
                std = float(np.std(vals, ddof=1)) if len(vals) >= 2 else None
                return mean, std
            row["score_mean"], row["score_std"] = agg("score")
            row["value_mean"], row["value_std"] = agg("value")
            row["final_k_eff"] = agg("final_k_eff")[0]
            row["mean_u"] = agg("mean_u")[0]
            row["w_first"] = agg("w_first")[0]
            row["w_last"] = agg("w_last")[0]
            row["bound_slack"] = agg("bound_slack")[0]
        rows.append(row)
    return rows


def _minmax_normalize(series: np.ndarray) -> np.ndarray:
    series = np.asarray(series, dtype=np.float64)
    lo, hi = series.min(), series.max()
    if hi - lo <= 0.0:
        return np.full_like(series, 0.5)
    return (series - lo) / (hi - lo)


def report_weights(log: TrainLog) -> dict:
    """Min-max normalized per-k weight series (constant series map to 0.5)."""
    if log.steps == 0:
        raise ValidationError("cannot report weights from an empty training log")
    out = {"step": np.arange(log.steps)}
    for k in range(log.n_agents):
        out[f"w_{k + 1}"] = _minmax_normalize(log.w[:, k])
    return out


def report_uncertainty(logs: dict) -> dict:
    """Aligned per-algorithm ensemble-std series; mismatched step grids are
    resampled to the coarsest grid (noted in the output)."""
    if not logs:
        raise ValidationError("no training logs supplied")
    lengths = {log.steps for log in logs.values()}
    if 0 in lengths:
        raise ValidationError("cannot report uncertainty from an empty training log")
    coarse = min(lengths)
    resampled = len(lengths) > 1
    series = {}
    for name in sorted(logs):
        log = logs[name]
        if log.steps == coarse:
            series[name] = log.target_std.copy()
        else:
            src = np.linspace(0.0, 1.0, log.steps)
            dst = np.linspace(0.0, 1.0, coarse)
            series[name] = np.interp(dst, src, log.target_std)
    return {"step": np.arange(coarse), "series": series, "resampled": resampled}


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _series_csv(prov: list[str], columns: list[str], arrays: list[np.ndarray]) -> str:
    lines = list(prov)
    lines.append(",".join(columns))
    for t in range(len(arrays[0])):
        lines.append(",".join(
            str(int(a[t])) if a.dtype.kind in "iu" else repr(float(a[t]))
            for a in arrays
        ))
    return "\n".join(lines) + "\n"


def run_experiment(config: ExperimentConfig, out_dir=None) -> ResultsTable:
    """Execute the sweep, write all artifacts, return the aggregated table."""
    out = Path(os.environ.get("PARLAB_OUT", out_dir or config.out_dir))
    workers = int(os.environ.get("PARLAB_WORKERS", "1"))
    runs_dir = out / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)
    config_hash = config.config_hash()
    t_start = time.perf_counter()

    cells = [
        (task, regime, algo, int(seed))
        for task in config.tasks
        for regime in config.regimes
        for algo in sorted(config.algorithms)
        for seed in config.seeds
    ]

    results, errors = [], []

    def attempt(cell):
        task, regime, algo, seed = cell
        try:
            return _run_cell(config, task, regime, algo, seed, runs_dir, config_hash), None
        except Exception as exc:  # failed cells never abort the sweep
            return None, {
                "task": _task_label(task), "regime": regime, "algorithm": algo,
                "seed": seed, "error": f"{type(exc).__name__}: {exc}",
            }

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(attempt, cells))
    else:
        outcomes = [attempt(cell) for cell in cells]
    for ok, err in outcomes:
        if ok is not None:
            results.append(ok)
        else:
            errors.append(err)

    mdp_hashes = {
        _task_label(task): _load_task(task).content_hash() for task in config.tasks
    }
    table = ResultsTable(
        rows=_aggregate(results, errors),
        config_hash=config_hash,
        mdp_hashes=mdp_hashes,
    )
    _write_text(out / "results.csv", table.to_csv())
    _write_text(out / "results.md", table.to_markdown())

    # plot-ready series: seed-averaged weight and uncertainty trajectories
    by_tr = {}
    for cell in results:
        by_tr.setdefault((cell["task"], cell["regime"]), []).append(cell)
    for (task, regime), group in sorted(by_tr.items()):
        prov = [f"# config={config_hash}", f"# mdp={task}:{mdp_hashes[task]}"]
        logs_by_algo = {}
        for cell in sorted(group, key=lambda c: (c["algorithm"], c["seed"])):
            logs_by_algo.setdefault(cell["algorithm"], []).append(
                _load_log(cell["log_path"])
            )
        if "spacql" in logs_by_algo:
            stack = np.mean([log.w for log in logs_by_algo["spacql"]], axis=0)
            n = stack.shape[1]
            cols = ["step"] + [f"w_{k + 1}" for k in range(n)]
            arrays = [np.arange(stack.shape[0])] + [
                _minmax_normalize(stack[:, k]) for k in range(n)
            ]
            _write_text(out / f"weights__{task}__{regime}.csv",
                        _series_csv(prov, cols, arrays))
        algo_names = sorted(logs_by_algo)
        std_series = {
            a: np.mean([log.target_std for log in logs_by_algo[a]], axis=0)
            for a in algo_names
        }
        steps = min(len(s) for s in std_series.values())
        cols = ["step"] + algo_names
        arrays = [np.arange(steps)] + [std_series[a][:steps] for a in algo_names]
        _write_text(out / f"uncertainty__{task}__{regime}.csv",
                    _series_csv(prov, cols, arrays))

    for suite in config.theory_suites:
        verify_theory(suite, config.theory_instances, seed=int(config.seeds[0]),
                      out=out / f"theory__{suite}.jsonl")

    # meta.json is the only artifact carrying wall-clock data
    hashes = {}
    for path in sorted(out.rglob("*")):
        if path.is_file() and path.name != "meta.json":
            hashes[str(path.relative_to(out))] = hashlib.sha256(
                path.read_bytes()
            ).hexdigest()
    meta = {
        "config": config.to_json(),
        "config_hash": config_hash,
        "mdp_hashes": mdp_hashes,
        "elapsed_seconds": time.perf_counter() - t_start,
        "cell_seconds": {
            f"{c['task']}__{c['regime']}__{c['algorithm']}__s{c['seed']}": c["elapsed"]
            for c in results
        },
        "errors": errors,
        "output_hashes": hashes,
        "workers": workers,
    }
    with open(out / "meta.json", "w", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return table


def _load_log(path) -> TrainLog:
    """Rehydrate a TrainLog written by TrainLog.to_jsonl (weight-trace
    accumulators are not serialized and come back empty)."""
    with open(path) as fh:
        header = json.loads(fh.readline())
        records = [json.loads(line) for line in fh if line.strip()]
    if header.get("kind") != "trainlog":
        raise ValidationError(f"{path} is not a training log")
    steps = len(records)
    n = len(records[0]["w"]) if steps else 1
    log = TrainLog(
        algo=header["algo"], gamma=float(header["gamma"]),
        td=np.array([r["td"] for r in records]),
        penalty=np.array([r["penalty"] for r in records]),
        u=np.array([r["u"] for r in records]).reshape(steps, n),
        w=np.array([r["w"] for r in records]).reshape(steps, n),
        k_eff=np.array([r["k_eff"] for r in records]),
        target_std=np.array([r["target_std"] for r in records]),
        q_range=np.array([r["q_range"] for r in records]),
        value=np.array([np.nan if r["value"] is None else r["value"] for r in records]),
        score=np.array([np.nan if r["score"] is None else r["score"] for r in records]),
        state_w_sum=np.zeros((0, n)), state_w_count=np.zeros(0),
    )
    return log


def load_train_log(path) -> TrainLog:
    return _load_log(path)


def default_benchmark_config(out_dir: str = "parlab_out") -> ExperimentConfig:
    """The stock sweep: 3 built-in tasks x 4 regimes x 3 algorithms x 5 seeds.

    Hyperparameters deviate from LearnerConfig defaults where tabular
    desk scale demands it: a faster Polyak rate so bootstrap values
    propagate within the step budget, and a cooler policy ascent
    (high temperature, small rate) so target-policy draws stay
    exploratory — with point-mass policies every deviation count
    bootstraps through the same handful of entries and ensemble
    disagreement carries no signal.
    """
    overrides = {
        "tau": 0.05,
        "steps": 400,
        "lr_pi": 0.02,
        "temperature": 4.0,
        "eval_every": 10,
    }
    return ExperimentConfig(
        tasks=["meet", "switch", "penalty"],
        regimes=["random", "medium", "medium_replay", "expert"],
        algorithms={a: dict(overrides) for a in KNOWN_ALGOS},
        seeds=[0, 1, 2, 3, 4],
        sizes={"meet": 240, "switch": 320, "penalty": 200},
        default_size=400,
        mode="trajectory",
        out_dir=out_dir,
    )
