"""Shared fixtures: the benchmark-scale Monte-Carlo runs are expensive,
so each band is computed once per session and reused by the module tests
and the acceptance suite."""

import numpy as np
import pytest

from safegp import (
    AlgoConfig,
    InstanceConfig,
    KernelSpec,
    TPrimePolicy,
    run_naive_sgp_ucb,
    run_oracle_gp_ucb,
    run_safeopt_mc,
    run_sgp_ucb,
    run_stageopt,
    sample_instance,
)

N_SEEDS = 30
BENCH_T = 500


def bench_instance_config(seed_band):
    return InstanceConfig(
        n=100,
        d=2,
        kernel_f=KernelSpec("se", 2, lengthscale=1.0),
        kernel_g=KernelSpec("se", 2, lengthscale=0.1),
        noise_std=0.1,
        epsilon=0.01,
        seed_size_band=seed_band,
    )


def bench_algo_config():
    return AlgoConfig(
        delta=0.01, epsilon=0.01, T=BENCH_T, tprime=TPrimePolicy.plateau()
    )


def _run_band(seed_band, runners):
    cfg = bench_algo_config()
    out = {"instances": [], **{name: [] for name in runners}}
    for seed in range(N_SEEDS):
        instance = sample_instance(bench_instance_config(seed_band), seed)
        out["instances"].append(instance)
        for name, runner in runners.items():
            out[name].append(runner(instance, cfg, seed))
    return out


@pytest.fixture(scope="session")
def bench_runs_large():
    """Seed band [21, 25]: the well-seeded regime, all four comparators."""
    return _run_band(
        (21, 25),
        {
            "sgp_ucb": run_sgp_ucb,
            "naive_sgp_ucb": run_naive_sgp_ucb,
            "oracle_gp_ucb": run_oracle_gp_ucb,
            "safeopt_mc": run_safeopt_mc,
        },
    )


@pytest.fixture(scope="session")
def bench_runs_mid():
    """Seed band [11, 20]: where staged expansion pays off."""
    return _run_band(
        (11, 20), {"sgp_ucb": run_sgp_ucb, "stageopt": run_stageopt}
    )


@pytest.fixture(scope="session")
def bench_runs_small():
    """Seed band [1, 10]: too few seeds to expand the safe set."""
    return _run_band((1, 10), {"sgp_ucb": run_sgp_ucb})


def final_step_regret(traces):
    return np.array([trace.step_regret[-1] for trace in traces])
