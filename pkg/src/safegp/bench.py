"""Config-driven experiment harness.

One JSON config describes the instance family, the algorithms to compare,
and the run shape.  Every (seed, algorithm) pair produces one trace CSV;
all algorithms share the per-seed instance so comparisons are paired.
A summary JSON aggregates per-round mean and population standard deviation
of cumulative and per-step regret, total violations, resolved exploration
lengths, and a report of the theoretical constants for the first instance.

Outputs are deterministic: reruns of the same config are byte-identical.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .algorithms import (
    AlgoConfig,
    TPrimePolicy,
    run_naive_sgp_ucb,
    run_oracle_gp_ucb,
    run_safeopt_mc,
    run_sgp_ucb,
    run_stageopt,
    run_uncertainty_sampling,
)
from .analysis import build_bound_report
from .environment import (
    InstanceConfig,
    instance_to_json,
    sample_instance,
)
from .errors import AggregationError, ConfigError, InstanceGenerationError
from .kernels import KernelSpec

TRACE_COLUMNS = [
    "seed",
    "algorithm",
    "round",
    "action_index",
    "instant_regret",
    "cumulative_regret",
    "g_value",
    "violation",
    "safe_set_size",
    "phase",
]

ALGORITHMS = {
    "sgp_ucb": run_sgp_ucb,
    "naive_sgp_ucb": run_naive_sgp_ucb,
    "oracle_gp_ucb": run_oracle_gp_ucb,
    "safeopt_mc": run_safeopt_mc,
    "stageopt": run_stageopt,
    "uncertainty_sampling": run_uncertainty_sampling,
}


@dataclass(frozen=True)
class AlgoEntry:
    name: str
    config: AlgoConfig


@dataclass(frozen=True)
class ExperimentConfig:
    instance: InstanceConfig
    algos: tuple[AlgoEntry, ...]
    T: int
    n_seeds: int
    base_seed: int
    output_dir: str
    raw: dict = field(repr=False, default_factory=dict)


def _require_keys(block: dict, allowed, required, where):
    for key in block:
        if key not in allowed:
            raise ConfigError(f"unknown key {where}.{key}")
    for key in required:
        if key not in block:
            raise ConfigError(f"missing key {where}.{key}")


def _parse_kernel(block, dim, where):
    _require_keys(
        block,
        allowed={"family", "lengthscale", "degree", "scale"},
        required={"family"},
        where=where,
    )
    try:
        return KernelSpec(
            family=block["family"],
            ambient_dim=dim,
            lengthscale=float(block.get("lengthscale", 1.0)),
            degree=int(block.get("degree", 2)),
            scale=float(block.get("scale", 0.5)),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_tprime(block, where):
    if block is None:
        return TPrimePolicy.plateau()
    _require_keys(
        block,
        allowed={"kind", "value", "window", "cap", "qff_nodes"},
        required={"kind"},
        where=where,
    )
    kind = block["kind"]
    if kind == "fixed":
        if "value" not in block:
            raise ConfigError(f"missing key {where}.value")
        return TPrimePolicy.fixed(int(block["value"]))
    if kind == "plateau":
        return TPrimePolicy.plateau(
            window=int(block.get("window", 20)), cap=int(block.get("cap", 100))
        )
    if kind == "theoretical_finite":
        return TPrimePolicy.theoretical_finite()
    if kind == "theoretical_infinite":
        return TPrimePolicy.theoretical_infinite(
            qff_nodes=int(block.get("qff_nodes", 2))
        )
    raise ConfigError(f"{where}.kind: unknown policy {kind!r}")


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a raw config document; unknown keys are an error."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    _require_keys(
        doc,
        allowed={"instance", "algos", "run"},
        required={"instance", "algos", "run"},
        where="config",
    )
    inst = doc["instance"]
    _require_keys(
        inst,
        allowed={
            "n",
            "d",
            "kernel_f",
            "kernel_g",
            "noise_std",
            "epsilon",
            "threshold_quantile",
            "seed_size_band",
        },
        required={"n", "d", "kernel_f", "kernel_g", "noise_std", "epsilon"},
        where="instance",
    )
    run = doc["run"]
    _require_keys(
        run,
        allowed={"T", "n_seeds", "base_seed", "output_dir"},
        required={"T", "n_seeds", "base_seed", "output_dir"},
        where="run",
    )
    d = int(inst["d"])
    try:
        instance_cfg = InstanceConfig(
            n=int(inst["n"]),
            d=d,
            kernel_f=_parse_kernel(inst["kernel_f"], d, "instance.kernel_f"),
            kernel_g=_parse_kernel(inst["kernel_g"], d, "instance.kernel_g"),
            noise_std=float(inst["noise_std"]),
            epsilon=float(inst["epsilon"]),
            threshold_quantile=float(inst.get("threshold_quantile", 0.6)),
            seed_size_band=tuple(inst.get("seed_size_band", (21, 25))),
        )
    except ValueError as exc:
        raise ConfigError(f"instance: {exc}") from exc

    algos_raw = doc["algos"]
    if not isinstance(algos_raw, list) or not algos_raw:
        raise ConfigError("algos must be a nonempty list")
    T = int(run["T"])
    entries = []
    for k, ab in enumerate(algos_raw):
        where = f"algos[{k}]"
        _require_keys(
            ab,
            allowed={"name", "delta", "phase1_rule", "tprime_policy",
                     "switch_cap"},
            required={"name", "delta"},
            where=where,
        )
        name = ab["name"]
        if name not in ALGORITHMS:
            raise ConfigError(
                f"{where}.name: unknown algorithm {name!r}; available: "
                + ", ".join(sorted(ALGORITHMS))
            )
        try:
            cfg = AlgoConfig(
                delta=float(ab["delta"]),
                epsilon=instance_cfg.epsilon,
                T=T,
                phase1_rule=ab.get("phase1_rule", "uniform"),
                tprime=_parse_tprime(
                    ab.get("tprime_policy"), f"{where}.tprime_policy"
                ),
                switch_cap=int(ab.get("switch_cap", 100)),
            )
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
        entries.append(AlgoEntry(name=name, config=cfg))
    if len({e.name for e in entries}) != len(entries):
        raise ConfigError("algos: duplicate algorithm names")

    return ExperimentConfig(
        instance=instance_cfg,
        algos=tuple(entries),
        T=T,
        n_seeds=int(run["n_seeds"]),
        base_seed=int(run["base_seed"]),
        output_dir=str(run["output_dir"]),
        raw=doc,
    )


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(doc)


def _fmt(value):
    return repr(float(value))


def trace_rows(trace, seed):
    """CSV rows (as string lists) for one run, schema order."""
    cum = trace.cumulative_regret
    rows = []
    for k in range(len(trace)):
        rows.append(
            [
                str(seed),
                trace.algorithm,
                str(k + 1),
                str(trace.actions[k]),
                _fmt(trace.instant_regret[k]),
                _fmt(cum[k]),
                _fmt(trace.g_values[k]),
                str(int(trace.violations[k])),
                str(trace.safe_set_sizes[k]),
                trace.phases[k],
            ]
        )
    return rows


def _write_trace(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        writer.writerows(rows)


def _run_one_seed(args):
    cfg, seed = args
    try:
        instance = sample_instance(cfg.instance, seed)
    except InstanceGenerationError as exc:
        return seed, None, str(exc), {}
    results = {}
    for entry in cfg.algos:
        trace = ALGORITHMS[entry.name](instance, entry.config, seed)
        results[entry.name] = trace
    return seed, instance, None, results


def run_experiment(cfg: ExperimentConfig, out_dir=None, n_seeds=None,
                   parallel=1):
    """Run every (seed, algorithm) pair and write traces plus summary.

    Returns the summary dict.  Seeds whose instance generation fails after
    its retry budget are recorded and skipped; the run continues.
    """
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    seeds = [cfg.base_seed + k for k in range(
        cfg.n_seeds if n_seeds is None else int(n_seeds)
    )]
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "instances").mkdir(parents=True, exist_ok=True)

    jobs = [(cfg, seed) for seed in seeds]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            outcomes = list(pool.map(_run_one_seed, jobs))
    else:
        outcomes = [_run_one_seed(job) for job in jobs]

    skipped = {}
    bound_report = None
    for seed, instance, error, results in outcomes:
        if instance is None:
            skipped[seed] = error
            continue
        (out / "instances" / f"seed{seed:04d}.json").write_text(
            instance_to_json(instance)
        )
        if bound_report is None:
            delta = cfg.algos[0].config.delta
            bound_report = build_bound_report(instance, delta, cfg.T)
        for name, trace in results.items():
            _write_trace(
                out / "traces" / f"{name}_seed{seed:04d}.csv",
                trace_rows(trace, seed),
            )

    report_doc = bound_report.to_dict() if bound_report is not None else None
    (out / "bound_report.json").write_text(
        json.dumps(report_doc, sort_keys=True, indent=2) + "\n"
    )
    if skipped:
        (out / "skipped_seeds.json").write_text(
            json.dumps({str(k): v for k, v in skipped.items()},
                       sort_keys=True, indent=2) + "\n"
        )
    summary = aggregate_traces(out)
    (out / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n"
    )
    return summary


def _read_trace(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TRACE_COLUMNS:
            raise AggregationError(f"{path}: unexpected columns {header}")
        rows = list(reader)
    if not rows:
        raise AggregationError(f"{path}: empty trace")
    algorithm = rows[0][1]
    seed = int(rows[0][0])
    step = np.array([float(r[4]) for r in rows])
    cum = np.array([float(r[5]) for r in rows])
    violations = sum(int(r[7]) for r in rows)
    tprime = sum(1 for r in rows if r[9] == "explore")
    rounds = [int(r[2]) for r in rows]
    if rounds != list(range(1, len(rows) + 1)):
        raise AggregationError(f"{path}: rounds are not 1..T")
    return algorithm, seed, step, cum, violations, tprime


def aggregate_traces(trace_dir) -> dict:
    """Combine a directory of traces into the summary document.

    Per algorithm: per-round mean and population standard deviation of the
    cumulative regret and the per-step regret (cumulative divided by the
    round number), total violations, and the per-seed resolved exploration
    lengths.  A bound_report.json sitting next to the traces is folded in.
    """
    trace_dir = Path(trace_dir)
    files = sorted((trace_dir / "traces").glob("*.csv"))
    if not files:
        files = sorted(trace_dir.glob("*.csv"))
    if not files:
        raise AggregationError(f"no trace files under {trace_dir}")

    per_algo = {}
    lengths = {}
    for path in files:
        algorithm, seed, _, cum, violations, tprime = _read_trace(path)
        lengths.setdefault(len(cum), []).append(path.name)
        per_algo.setdefault(algorithm, []).append(
            (seed, cum, violations, tprime)
        )
    if len(lengths) > 1:
        raise AggregationError(
            "traces disagree on T: "
            + "; ".join(
                f"T={T}: {', '.join(names[:3])}" for T, names in
                sorted(lengths.items())
            )
        )

    T = next(iter(lengths))
    rounds = np.arange(1, T + 1)
    algorithms = {}
    for name, runs in sorted(per_algo.items()):
        runs.sort(key=lambda item: item[0])
        cum_matrix = np.stack([cum for _, cum, _, _ in runs])
        step_matrix = cum_matrix / rounds[None, :]
        algorithms[name] = {
            "seeds": [int(seed) for seed, _, _, _ in runs],
            "mean_cum_regret": cum_matrix.mean(axis=0).tolist(),
            "std_cum_regret": cum_matrix.std(axis=0).tolist(),
            "mean_step_regret": step_matrix.mean(axis=0).tolist(),
            "std_step_regret": step_matrix.std(axis=0).tolist(),
            "violations_total": int(sum(v for _, _, v, _ in runs)),
            "tprime_resolved": [int(tp) for _, _, _, tp in runs],
        }

    report_path = trace_dir / "bound_report.json"
    bound_report = (
        json.loads(report_path.read_text()) if report_path.exists() else None
    )
    return {
        "T": int(T),
        "algorithms": algorithms,
        "bound_report": bound_report,
    }
