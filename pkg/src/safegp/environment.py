"""Synthetic problem instances, the noisy observation oracle, and regret records.

An instance fixes a finite decision set inside the unit ball, ground-truth
reward and safety values drawn from two independent GP priors, a safety
threshold (a quantile of the safety values), the slack-adjusted safe set
that hosts the benchmark optimum, and a known-safe seed set (the points
with the highest safety values).  Instances are immutable and fully
determined by their configuration and seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InstanceGenerationError
from .kernels import SE, KernelSpec

REWARD = "reward"
SAFETY = "safety"

_TRUTH_JITTER = 1e-8
_MIN_SEPARATION = 1e-9
_MAX_ATTEMPTS = 100


@dataclass(frozen=True)
class DecisionSet:
    """Finite action set: an (n, d) array of pairwise-distinct unit-ball points."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 2:
            raise ValueError("decision set needs at least two points")
        if np.max(np.linalg.norm(pts, axis=1)) > 1.0 + 1e-9:
            raise ValueError("all points must lie in the unit ball")
        if _min_pairwise_distance(pts) <= _MIN_SEPARATION:
            raise ValueError("decision-set points must be pairwise distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


def _min_pairwise_distance(pts):
    sq = (
        np.sum(pts**2, axis=1)[:, None]
        + np.sum(pts**2, axis=1)[None, :]
        - 2.0 * (pts @ pts.T)
    )
    np.fill_diagonal(sq, np.inf)
    return float(np.sqrt(max(np.min(sq), 0.0)))


@dataclass(frozen=True)
class InstanceConfig:
    """Recipe for sampling a ProblemInstance."""

    n: int
    d: int
    kernel_f: KernelSpec
    kernel_g: KernelSpec
    noise_std: float
    epsilon: float
    threshold_quantile: float = 0.6
    seed_size_band: tuple[int, int] = (21, 25)
    points: Optional[np.ndarray] = None  # fixed decision set, skips sampling

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if not 0 < self.threshold_quantile < 1:
            raise ValueError("threshold_quantile must lie in (0, 1)")
        lo, hi = self.seed_size_band
        if not 1 <= lo <= hi:
            raise ValueError("seed_size_band must satisfy 1 <= lo <= hi")


@dataclass(frozen=True)
class ProblemInstance:
    """Ground truth for one benchmark run; immutable once built."""

    decision_set: DecisionSet
    kernel_f: KernelSpec
    kernel_g: KernelSpec
    f_true: np.ndarray
    g_true: np.ndarray
    h: float
    epsilon: float
    noise_std: float
    seed_indices: np.ndarray
    safe_indices: np.ndarray
    eps_safe_indices: np.ndarray
    opt_index: int
    rng_seed: Optional[int]

    def __post_init__(self):
        for name in ("f_true", "g_true", "seed_indices", "safe_indices",
                     "eps_safe_indices"):
            arr = np.asarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.decision_set.n
        if self.f_true.shape != (n,) or self.g_true.shape != (n,):
            raise ValueError("truth vectors must have one value per action")
        if self.eps_safe_indices.size == 0 or self.seed_indices.size == 0:
            raise ValueError("seed set and slack-safe set must be nonempty")
        if not np.all(self.g_true[self.seed_indices] >= self.h + self.epsilon):
            raise ValueError("seed set must lie in the slack-safe set")
        if self.opt_index not in set(self.eps_safe_indices.tolist()):
            raise ValueError("optimum must lie in the slack-safe set")

    @property
    def n(self):
        return self.decision_set.n


def sample_unit_ball(rng, n, d):
    """n i.i.d. points uniform in the d-dimensional unit ball."""
    directions = rng.standard_normal((n, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = rng.random(n) ** (1.0 / d)
    return directions * radii[:, None]


def draw_gp_sample(points, kernel: KernelSpec, rng):
    """One draw from GP(0, k) restricted to the given points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    cov = kernel.gram(pts) + _TRUTH_JITTER * np.eye(pts.shape[0])
    return rng.multivariate_normal(
        np.zeros(pts.shape[0]), cov, method="cholesky"
    )


def make_instance(
    points,
    f_true,
    g_true,
    h,
    epsilon,
    noise_std,
    seed_indices,
    kernel_f=None,
    kernel_g=None,
    rng_seed=None,
):
    """Assemble an instance from explicit truths (used for hand fixtures)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = pts.shape[1]
    kernel_f = kernel_f or KernelSpec(SE, d)
    kernel_g = kernel_g or KernelSpec(SE, d)
    f_true = np.asarray(f_true, dtype=float)
    g_true = np.asarray(g_true, dtype=float)
    safe = np.flatnonzero(g_true >= h)
    eps_safe = np.flatnonzero(g_true >= h + epsilon)
    if eps_safe.size == 0:
        raise InstanceGenerationError("slack-safe set is empty")
    opt = int(eps_safe[int(np.argmax(f_true[eps_safe]))])
    return ProblemInstance(
        decision_set=DecisionSet(pts),
        kernel_f=kernel_f,
        kernel_g=kernel_g,
        f_true=f_true,
        g_true=g_true,
        h=float(h),
        epsilon=float(epsilon),
        noise_std=float(noise_std),
        seed_indices=np.asarray(seed_indices, dtype=int),
        safe_indices=safe,
        eps_safe_indices=eps_safe,
        opt_index=opt,
        rng_seed=rng_seed,
    )


def sample_instance(cfg: InstanceConfig, seed: int) -> ProblemInstance:
    """Deterministically sample an instance; resample degenerate draws.

    Up to 100 attempts are made before giving up: a draw is degenerate when
    the slack-safe set is smaller than the requested seed-set size or the
    sampled points nearly coincide.
    """
    rng = np.random.default_rng(seed)
    for _ in range(_MAX_ATTEMPTS):
        if cfg.points is not None:
            pts = np.asarray(cfg.points, dtype=float)
        else:
            pts = sample_unit_ball(rng, cfg.n, cfg.d)
        if _min_pairwise_distance(pts) <= _MIN_SEPARATION:
            continue
        f_true = draw_gp_sample(pts, cfg.kernel_f, rng)
        g_true = draw_gp_sample(pts, cfg.kernel_g, rng)
        h = float(np.quantile(g_true, cfg.threshold_quantile))
        eps_safe = np.flatnonzero(g_true >= h + cfg.epsilon)
        lo, hi = cfg.seed_size_band
        if eps_safe.size < lo:
            continue
        size = int(rng.integers(lo, hi + 1))
        size = min(size, eps_safe.size)
        # Most conservatively safe seeds: highest safety values first,
        # index order breaking ties.
        order = np.lexsort((eps_safe, -g_true[eps_safe]))
        seeds = np.sort(eps_safe[order[:size]])
        opt = int(eps_safe[int(np.argmax(f_true[eps_safe]))])
        return ProblemInstance(
            decision_set=DecisionSet(pts),
            kernel_f=cfg.kernel_f,
            kernel_g=cfg.kernel_g,
            f_true=f_true,
            g_true=g_true,
            h=h,
            epsilon=cfg.epsilon,
            noise_std=cfg.noise_std,
            seed_indices=seeds,
            safe_indices=np.flatnonzero(g_true >= h),
            eps_safe_indices=eps_safe,
            opt_index=opt,
            rng_seed=seed,
        )
    raise InstanceGenerationError(
        f"no acceptable instance after {_MAX_ATTEMPTS} attempts (seed {seed})"
    )


def observe(instance: ProblemInstance, idx: int, channel: str, rng):
    """Noisy observation of one channel at action ``idx``."""
    if channel == REWARD:
        truth = instance.f_true[idx]
    elif channel == SAFETY:
        truth = instance.g_true[idx]
    else:
        raise ValueError(f"unknown channel {channel!r}")
    if instance.noise_std == 0.0:
        return float(truth)
    return float(truth + instance.noise_std * rng.standard_normal())


def regret_of(instance: ProblemInstance, idx: int):
    """Instantaneous regret against the benchmark optimum and a violation flag.

    The regret may be negative for actions that are safe but outside the
    slack-safe set while having a higher reward than the benchmark.
    """
    r = float(instance.f_true[instance.opt_index] - instance.f_true[idx])
    return r, bool(instance.g_true[idx] < instance.h)


EXPLORE = "explore"
EXPLOIT = "exploit"


@dataclass
class RegretTrace:
    """Per-round record of one algorithm run."""

    algorithm: str
    seed: int
    tprime: int = 0
    actions: list = field(default_factory=list)
    instant_regret: list = field(default_factory=list)
    g_values: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    safe_set_sizes: list = field(default_factory=list)
    phases: list = field(default_factory=list)
    fallback_rounds: list = field(default_factory=list)
    opt_in_safe_set: list = field(default_factory=list)
    action_in_safe_set: list = field(default_factory=list)

    def record(self, instance, idx, phase, safe_set_size, fallback=False,
               opt_in_safe=None, action_in_safe=None):
        r, violation = regret_of(instance, idx)
        self.actions.append(int(idx))
        self.instant_regret.append(r)
        self.g_values.append(float(instance.g_true[idx]))
        self.violations.append(violation)
        self.safe_set_sizes.append(int(safe_set_size))
        self.phases.append(phase)
        self.opt_in_safe_set.append(opt_in_safe)
        self.action_in_safe_set.append(action_in_safe)
        if fallback:
            self.fallback_rounds.append(len(self.actions))

    def __len__(self):
        return len(self.actions)

    @property
    def cumulative_regret(self):
        return np.cumsum(self.instant_regret)

    @property
    def step_regret(self):
        """Average per-step regret R_t / t at each round."""
        t = np.arange(1, len(self.actions) + 1)
        return self.cumulative_regret / t

    @property
    def n_violations(self):
        return int(np.sum(self.violations))


def instance_to_json(instance: ProblemInstance) -> str:
    """Serialize an instance (points, truths, threshold, seeds) to JSON."""

    def kernel_dict(k):
        out = {"family": k.family, "ambient_dim": k.ambient_dim}
        if k.family == SE:
            out["lengthscale"] = k.lengthscale
        if k.family == "polynomial":
            out["degree"] = k.degree
            out["scale"] = k.scale
        return out

    doc = {
        "points": instance.decision_set.points.tolist(),
        "f_true": instance.f_true.tolist(),
        "g_true": instance.g_true.tolist(),
        "h": instance.h,
        "epsilon": instance.epsilon,
        "noise_std": instance.noise_std,
        "seed_indices": instance.seed_indices.tolist(),
        "safe_indices": instance.safe_indices.tolist(),
        "eps_safe_indices": instance.eps_safe_indices.tolist(),
        "opt_index": instance.opt_index,
        "rng_seed": instance.rng_seed,
        "kernel_f": kernel_dict(instance.kernel_f),
        "kernel_g": kernel_dict(instance.kernel_g),
    }
    return json.dumps(doc, sort_keys=True)


def instance_from_json(text: str) -> ProblemInstance:
    doc = json.loads(text)

    def kernel_from(d):
        return KernelSpec(
            family=d["family"],
            ambient_dim=d["ambient_dim"],
            lengthscale=d.get("lengthscale", 1.0),
            degree=d.get("degree", 2),
            scale=d.get("scale", 0.5),
        )

    return ProblemInstance(
        decision_set=DecisionSet(np.asarray(doc["points"], dtype=float)),
        kernel_f=kernel_from(doc["kernel_f"]),
        kernel_g=kernel_from(doc["kernel_g"]),
        f_true=np.asarray(doc["f_true"], dtype=float),
        g_true=np.asarray(doc["g_true"], dtype=float),
        h=doc["h"],
        epsilon=doc["epsilon"],
        noise_std=doc["noise_std"],
        seed_indices=np.asarray(doc["seed_indices"], dtype=int),
        safe_indices=np.asarray(doc["safe_indices"], dtype=int),
        eps_safe_indices=np.asarray(doc["eps_safe_indices"], dtype=int),
        opt_index=doc["opt_index"],
        rng_seed=doc["rng_seed"],
    )
