"""Safe GP bandit algorithms and their baselines.

The main runner keeps two independent GP posteriors (reward and safety)
and proceeds in two phases: a pure exploration phase confined to the
known-safe seed set, then a UCB phase restricted to the estimated safe
set (actions whose safety lower confidence bound clears the threshold).
The exploration length is either computed from the eigenvalue-based
theory or resolved online by a plateau heuristic on the estimated safe
set's size.

Baselines: a naive variant with no exploration phase, GP-UCB with oracle
access to the true slack-safe set, SafeOpt-MC and StageOpt built on
Lipschitz reachability sets, and a pure maximum-variance sampler over a
known safe set (the rule whose failure mode motivates the UCB phase).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .environment import (
    EXPLOIT,
    EXPLORE,
    REWARD,
    SAFETY,
    ProblemInstance,
    RegretTrace,
    observe,
)
from .errors import AssumptionViolationError, CapacityError
from .gp import GPPosterior, beta
from .kernels import SE, FeatureMapSpec, explicit_map, qff_map

_MIN_MODEL_NOISE_VAR = 1e-10

UNIFORM = "uniform"
MAX_VARIANCE = "max_variance"


@dataclass(frozen=True)
class TPrimePolicy:
    """How the exploration-phase length gets resolved.

    kind is one of "fixed", "plateau", "theoretical_finite",
    "theoretical_infinite".  ``value`` is the fixed length; ``window`` and
    ``cap`` parameterize the plateau rule; ``qff_nodes`` sets the
    per-dimension quadrature size used when the safety kernel needs a
    Fourier-feature approximation.
    """

    kind: str
    value: int | None = None
    window: int = 20
    cap: int = 100
    qff_nodes: int = 2

    @staticmethod
    def fixed(value: int) -> "TPrimePolicy":
        return TPrimePolicy(kind="fixed", value=int(value))

    @staticmethod
    def plateau(window: int = 20, cap: int = 100) -> "TPrimePolicy":
        return TPrimePolicy(kind="plateau", window=window, cap=cap)

    @staticmethod
    def theoretical_finite() -> "TPrimePolicy":
        return TPrimePolicy(kind="theoretical_finite")

    @staticmethod
    def theoretical_infinite(qff_nodes: int = 2) -> "TPrimePolicy":
        return TPrimePolicy(kind="theoretical_infinite", qff_nodes=qff_nodes)


@dataclass(frozen=True)
class AlgoConfig:
    """Shared run parameters for every algorithm in this module."""

    delta: float
    epsilon: float
    T: int
    phase1_rule: str = UNIFORM
    tprime: TPrimePolicy = field(default_factory=TPrimePolicy.plateau)
    switch_cap: int = 100  # SafeOpt-MC greedy switch, mirrors the plateau cap

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.phase1_rule not in (UNIFORM, MAX_VARIANCE):
            raise ValueError(f"unknown phase1_rule {self.phase1_rule!r}")
        if self.tprime.kind == "fixed" and self.tprime.value > self.T:
            raise ValueError("fixed exploration length must not exceed T")
        if self.tprime.window < 1 or self.tprime.cap < 1:
            raise ValueError("plateau window and cap must be >= 1")


def _as_rng(seed):
    if isinstance(seed, (int, np.integer)):
        return np.random.default_rng(int(seed))
    return seed


class _Channel:
    """One observation channel: posterior plus cached decision-set kernels."""

    def __init__(self, kernel, points, noise_var):
        self.post = GPPosterior(kernel, noise_var)
        self.points = points
        self.K0 = kernel.gram(points)
        self.diag0 = kernel.diag(points)
        self.obs_idx: list[int] = []

    def observe_at(self, i, value):
        k_vec = (
            self.K0[self.obs_idx, i] if self.obs_idx else np.empty(0)
        )
        self.post.update(
            self.points[i], value, k_vec=k_vec, k_xx=float(self.K0[i, i])
        )
        self.obs_idx.append(int(i))

    def moments(self, idx=None):
        """Posterior (means, variances) over the whole set or given indices."""
        if idx is None:
            cross = self.K0[self.obs_idx, :]
            return self.post.predict_batch(
                self.points, k_cross=cross, k_diag=self.diag0
            )
        cross = self.K0[np.ix_(self.obs_idx, idx)]
        return self.post.predict_batch(
            self.points[idx], k_cross=cross, k_diag=self.diag0[idx]
        )


def _model_noise_var(instance):
    return max(instance.noise_std**2, _MIN_MODEL_NOISE_VAR)


def estimated_safe_set(g_post: GPPosterior, beta_t: float, points, h, moments=None):
    """Indices whose safety lower confidence bound reaches the threshold."""
    if moments is None:
        moments = g_post.predict_batch(points)
    means, variances = moments
    lower = means - math.sqrt(beta_t) * np.sqrt(variances)
    return np.flatnonzero(lower >= h)


def phase2_select(f_post: GPPosterior, beta_t: float, points, safe_indices,
                  moments=None):
    """Argmax of the reward upper confidence bound over the safe indices.

    Ties resolve to the lowest index (safe_indices must be sorted).
    """
    safe_indices = np.asarray(safe_indices)
    if safe_indices.size == 0:
        raise ValueError("safe_indices must be nonempty")
    if moments is None:
        moments = f_post.predict_batch(points[safe_indices])
    means, variances = moments
    upper = means + math.sqrt(beta_t) * np.sqrt(variances)
    return int(safe_indices[int(np.argmax(upper))])


def lambda_minus(seed_points, feature_map: FeatureMapSpec):
    """Minimum eigenvalue of the seed set's second-moment feature matrix.

    The uniform distribution over a finite seed set makes the expectation
    E[phi(x) phi(x)^T] exact: it is the average of the outer products.
    """
    pts = np.atleast_2d(np.asarray(seed_points, dtype=float))
    if pts.shape[0] == 0:
        raise ValueError("seed_points must be nonempty")
    Phi = feature_map.apply(pts)
    second_moment = (Phi.T @ Phi) / Phi.shape[0]
    return float(np.linalg.eigvalsh(second_moment)[0])


def t_prime_finite(lam: float, d_g: int, eps: float, delta: float,
                   beta_T: float, sigma: float):
    """Theoretical exploration length for a finite-dimensional safety RKHS.

    Ceiling of max(8 sigma^2 beta_T / (lam eps^2), 8/lam log(d_g/delta)).
    """
    if lam <= 0:
        raise AssumptionViolationError(
            "the seed second-moment matrix must have a positive minimum "
            "eigenvalue"
        )
    t_eps = 8.0 * sigma**2 * beta_T / (lam * eps**2)
    t_delta = (8.0 / lam) * math.log(d_g / delta)
    return math.ceil(max(t_eps, t_delta))


def t_prime_infinite(lam_tilde: float, D_g: int, eps: float, delta: float,
                     beta_T: float, sigma: float, T: int):
    """Theoretical exploration length under a finite-basis approximation.

    Returns (T', eps0_max) where eps0_max = eps^2 sigma^2 / (32 T^3 beta_T)
    is the largest admissible uniform approximation error; the chosen
    feature construction must meet it for the guarantee to apply.
    """
    if lam_tilde <= 0:
        raise AssumptionViolationError(
            "the approximate seed second-moment matrix must have a positive "
            "minimum eigenvalue"
        )
    if beta_T <= 0:
        raise ValueError("beta_T must be positive")
    t_eps = 16.0 * sigma**2 * beta_T / (lam_tilde * eps**2)
    t_delta = (8.0 / lam_tilde) * math.log(D_g / delta)
    eps0_max = eps**2 * sigma**2 / (32.0 * T**3 * beta_T)
    return math.ceil(max(t_eps, t_delta)), eps0_max


def plateau_stop(safe_set_sizes, window: int, cap: int):
    """First round whose trailing ``window`` sizes are constant, capped.

    Returns ``cap`` when no plateau of that length appears in the list.
    """
    if window < 1 or cap < 1:
        raise ValueError("window and cap must be >= 1")
    sizes = list(safe_set_sizes)
    for t in range(window, len(sizes) + 1):
        tail = sizes[t - window:t]
        if all(s == tail[0] for s in tail):
            return min(t, cap)
    return cap


def lipschitz_constant(instance: ProblemInstance, channel: str):
    """Largest pairwise slope of the channel's ground truth."""
    values = instance.f_true if channel == REWARD else instance.g_true
    pts = instance.decision_set.points
    dist = _distance_matrix(pts)
    diff = np.abs(values[:, None] - values[None, :])
    iu = np.triu_indices(pts.shape[0], k=1)
    return float(np.max(diff[iu] / dist[iu]))


def _distance_matrix(pts):
    sq = (
        np.sum(pts**2, axis=1)[:, None]
        + np.sum(pts**2, axis=1)[None, :]
        - 2.0 * (pts @ pts.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.sqrt(sq)


def reachability_closure(points, g_vals, h, L, eps, s0, max_steps=1000):
    """Fixed point of the one-step Lipschitz reachability operator.

    One step adds every x with g(x') - eps - L d(x, x') >= h for some x'
    already in the set.  Iterates until stable or ``max_steps``; the result
    grows monotonically and always contains the start set.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    g_vals = np.asarray(g_vals, dtype=float)
    dist = _distance_matrix(pts)
    mask = np.zeros(pts.shape[0], dtype=bool)
    mask[np.asarray(list(s0), dtype=int)] = True
    if not mask.any():
        raise ValueError("s0 must be nonempty")
    for _ in range(max_steps):
        inside = np.flatnonzero(mask)
        best = np.max(g_vals[inside, None] - eps - L * dist[inside, :], axis=0)
        new_mask = mask | (best >= h)
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
    return np.flatnonzero(mask)


def _resolve_theoretical_tprime(instance, cfg):
    """Exploration length from the eigenvalue theory, clamped to T."""
    seeds = instance.decision_set.points[instance.seed_indices]
    sigma = instance.noise_std
    beta_T = beta(cfg.T, instance.n, cfg.delta)
    if cfg.tprime.kind == "theoretical_finite":
        fmap = explicit_map(instance.kernel_g)
        lam = lambda_minus(seeds, fmap)
        tp = t_prime_finite(
            lam, fmap.output_dim, cfg.epsilon, cfg.delta, beta_T, sigma
        )
        return min(tp, cfg.T)
    if instance.kernel_g.family != SE:
        raise AssumptionViolationError(
            "theoretical_infinite needs a stationary safety kernel"
        )
    fmap = qff_map(
        instance.kernel_g.lengthscale,
        cfg.tprime.qff_nodes,
        instance.decision_set.dim,
        rescale_from_unit_ball=True,
    )
    lam = lambda_minus(seeds, fmap)
    tp, eps0_max = t_prime_infinite(
        lam, fmap.output_dim, cfg.epsilon, cfg.delta, beta_T, sigma, cfg.T
    )
    if fmap.epsilon0 > eps0_max:
        warnings.warn(
            "no quadrature size within the feature budget meets the "
            f"admissible approximation error {eps0_max:.3e} "
            f"(achieved {fmap.epsilon0:.3e}); the guarantee does not apply",
            RuntimeWarning,
            stacklevel=3,
        )
    return min(tp, cfg.T)


def run_sgp_ucb(instance: ProblemInstance, cfg: AlgoConfig, seed,
                algorithm_name="sgp_ucb") -> RegretTrace:
    """Two-phase safe GP-UCB.

    Rounds 1..T' sample the seed set (uniformly, or by maximum posterior
    safety variance); the remaining rounds run UCB on the reward upper
    bound restricted to the estimated safe set.  Both channels are observed
    every round.  An empty estimated safe set falls back to the most
    plausibly safe seed and flags the round.
    """
    rng = _as_rng(seed)
    pts = instance.decision_set.points
    n = instance.n
    noise_var = _model_noise_var(instance)
    f_chan = _Channel(instance.kernel_f, pts, noise_var)
    g_chan = _Channel(instance.kernel_g, pts, noise_var)
    seeds = np.asarray(instance.seed_indices)
    trace = RegretTrace(algorithm=algorithm_name,
                        seed=seed if isinstance(seed, (int, np.integer)) else -1)

    policy = cfg.tprime
    if policy.kind == "fixed":
        tprime = min(policy.value, cfg.T)
    elif policy.kind == "plateau":
        tprime = None  # resolved online
    else:
        tprime = _resolve_theoretical_tprime(instance, cfg)
    cap = min(policy.cap, cfg.T)

    def observe_both(i):
        f_chan.observe_at(i, observe(instance, i, REWARD, rng))
        g_chan.observe_at(i, observe(instance, i, SAFETY, rng))

    # Exploration phase.  The safe-set size is recorded with the posterior
    # available at the start of each round (beta_t, t-1 observations), the
    # same convention the exploitation phase uses.
    sizes = []
    t = 0
    while True:
        if tprime is not None and t >= tprime:
            break
        if tprime is None and t >= cap:
            tprime = t
            break
        t += 1
        beta_t = beta(t, n, cfg.delta)
        g_moments = g_chan.moments()
        safe = estimated_safe_set(
            g_chan.post, beta_t, pts, instance.h, moments=g_moments
        )
        sizes.append(safe.size)
        if cfg.phase1_rule == MAX_VARIANCE:
            i = int(seeds[int(np.argmax(g_moments[1][seeds]))])
        else:
            i = int(seeds[int(rng.integers(len(seeds)))])
        observe_both(i)
        trace.record(instance, i, EXPLORE, safe.size)
        if tprime is None and len(sizes) >= policy.window:
            tail = sizes[-policy.window:]
            if all(s == tail[0] for s in tail):
                tprime = t
    trace.tprime = int(tprime)

    # Safe exploration-exploitation phase.
    for t in range(int(tprime) + 1, cfg.T + 1):
        beta_t = beta(t, n, cfg.delta)
        g_means, g_vars = g_chan.moments()
        safe = estimated_safe_set(
            g_chan.post, beta_t, pts, instance.h,
            moments=(g_means, g_vars),
        )
        fallback = safe.size == 0
        if fallback:
            lower = g_means - math.sqrt(beta_t) * np.sqrt(g_vars)
            i = int(seeds[int(np.argmax(lower[seeds]))])
        else:
            i = phase2_select(
                f_chan.post, beta_t, pts, safe,
                moments=f_chan.moments(safe),
            )
        observe_both(i)
        trace.record(
            instance, i, EXPLOIT, safe.size, fallback=fallback,
            opt_in_safe=bool(np.isin(instance.opt_index, safe)),
            action_in_safe=bool(np.isin(i, safe)),
        )
    return trace


def run_naive_sgp_ucb(instance, cfg: AlgoConfig, seed) -> RegretTrace:
    """SGP-UCB without an exploration phase (T' = 0)."""
    naive_cfg = replace(cfg, tprime=TPrimePolicy.fixed(0))
    return run_sgp_ucb(instance, naive_cfg, seed,
                       algorithm_name="naive_sgp_ucb")


def run_oracle_gp_ucb(instance, cfg: AlgoConfig, seed) -> RegretTrace:
    """GP-UCB given oracle access to the true slack-safe set."""
    rng = _as_rng(seed)
    pts = instance.decision_set.points
    noise_var = _model_noise_var(instance)
    f_chan = _Channel(instance.kernel_f, pts, noise_var)
    safe = np.asarray(instance.eps_safe_indices)
    trace = RegretTrace(algorithm="oracle_gp_ucb",
                        seed=seed if isinstance(seed, (int, np.integer)) else -1)
    for t in range(1, cfg.T + 1):
        beta_t = beta(t, instance.n, cfg.delta)
        i = phase2_select(
            f_chan.post, beta_t, pts, safe, moments=f_chan.moments(safe)
        )
        f_chan.observe_at(i, observe(instance, i, REWARD, rng))
        trace.record(instance, i, EXPLOIT, safe.size)
    return trace


def run_uncertainty_sampling(instance, cfg: AlgoConfig, seed) -> RegretTrace:
    """Pure maximum-variance sampling over a known safe set.

    The relaxed setting: the true slack-safe set is handed to the sampler,
    which always queries its most uncertain member (largest posterior
    standard deviation on either channel).  Good at exploring, with no
    mechanism to stop paying for it.
    """
    rng = _as_rng(seed)
    pts = instance.decision_set.points
    noise_var = _model_noise_var(instance)
    f_chan = _Channel(instance.kernel_f, pts, noise_var)
    g_chan = _Channel(instance.kernel_g, pts, noise_var)
    safe = np.asarray(instance.eps_safe_indices)
    trace = RegretTrace(algorithm="uncertainty_sampling",
                        seed=seed if isinstance(seed, (int, np.integer)) else -1)
    for _ in range(cfg.T):
        _, f_vars = f_chan.moments(safe)
        _, g_vars = g_chan.moments(safe)
        i = int(safe[int(np.argmax(np.maximum(f_vars, g_vars)))])
        f_chan.observe_at(i, observe(instance, i, REWARD, rng))
        g_chan.observe_at(i, observe(instance, i, SAFETY, rng))
        trace.record(instance, i, EXPLORE, safe.size)
    return trace


def _lipschitz_expand(mask, lower_g_members, L, dist, h):
    members = np.flatnonzero(mask)
    best = np.max(lower_g_members[:, None] - L * dist[members, :], axis=0)
    return mask | (best >= h)


def _expanders(members, upper_g_members, mask, L, dist, h):
    outside = np.flatnonzero(~mask)
    if outside.size == 0:
        return np.empty(0, dtype=int)
    min_dist_out = np.min(dist[np.ix_(members, outside)], axis=1)
    return members[upper_g_members - L * min_dist_out >= h]


def run_safeopt_mc(instance, cfg: AlgoConfig, seed) -> RegretTrace:
    """SafeOpt-MC: uncertainty sampling over expanders and maximizers.

    The safe set grows from the seed set by Lipschitz reachability using
    the safety lower bound (the Lipschitz constant is computed from the
    ground truth, matching how the baselines are usually evaluated).
    Sampling maximizes the larger posterior standard deviation of the two
    channels over expanders-union-maximizers until the first round whose
    maximum confidence width drops to epsilon (capped at ``switch_cap``),
    then greedily picks the best reward lower bound inside the safe set.
    """
    rng = _as_rng(seed)
    pts = instance.decision_set.points
    noise_var = _model_noise_var(instance)
    f_chan = _Channel(instance.kernel_f, pts, noise_var)
    g_chan = _Channel(instance.kernel_g, pts, noise_var)
    L = lipschitz_constant(instance, SAFETY)
    dist = _distance_matrix(pts)
    mask = np.zeros(instance.n, dtype=bool)
    mask[instance.seed_indices] = True
    trace = RegretTrace(algorithm="safeopt_mc",
                        seed=seed if isinstance(seed, (int, np.integer)) else -1)
    switched = False
    cap = min(cfg.switch_cap, cfg.T)
    for t in range(1, cfg.T + 1):
        beta_t = beta(t, instance.n, cfg.delta)
        root_beta = math.sqrt(beta_t)

        members = np.flatnonzero(mask)
        g_means, g_vars = g_chan.moments(members)
        lower_g = g_means - root_beta * np.sqrt(g_vars)
        mask = _lipschitz_expand(mask, lower_g, L, dist, instance.h)
        members = np.flatnonzero(mask)

        g_means, g_vars = g_chan.moments(members)
        g_std = np.sqrt(g_vars)
        upper_g = g_means + root_beta * g_std
        f_means, f_vars = f_chan.moments(members)
        f_std = np.sqrt(f_vars)
        upper_f = f_means + root_beta * f_std
        lower_f = f_means - root_beta * f_std

        expanders = _expanders(members, upper_g, mask, L, dist, instance.h)
        maximizers = members[upper_f >= np.max(lower_f)]
        pool = np.union1d(expanders, maximizers)

        fallback = False
        if not switched:
            member_pos = {int(m): k for k, m in enumerate(members)}
            pool_pos = np.array([member_pos[int(i)] for i in pool], dtype=int)
            if t > cap:
                switched = True
            elif pool.size:
                width = 2.0 * root_beta * np.maximum(
                    f_std[pool_pos], g_std[pool_pos]
                )
                if np.max(width) <= cfg.epsilon:
                    switched = True
        if switched:
            i = int(members[int(np.argmax(lower_f))])
        elif pool.size == 0:
            fallback = True
            i = int(members[int(np.argmax(
                np.maximum(f_std, g_std)
            ))])
        else:
            sigma_pool = np.maximum(f_std[pool_pos], g_std[pool_pos])
            i = int(pool[int(np.argmax(sigma_pool))])

        f_chan.observe_at(i, observe(instance, i, REWARD, rng))
        g_chan.observe_at(i, observe(instance, i, SAFETY, rng))
        trace.record(
            instance, i, EXPLOIT if switched else EXPLORE, members.size,
            fallback=fallback,
        )
    return trace


def run_stageopt(instance, cfg: AlgoConfig, seed) -> RegretTrace:
    """StageOpt: widest-band expander sampling, then UCB inside the safe set.

    Phase one samples the expander with the widest safety confidence band
    until every expander band is narrower than epsilon, the expander set
    empties, the safe-set size plateaus, or the cap is hit; phase two runs
    UCB on the reward upper bound restricted to the Lipschitz safe set.
    """
    rng = _as_rng(seed)
    pts = instance.decision_set.points
    noise_var = _model_noise_var(instance)
    f_chan = _Channel(instance.kernel_f, pts, noise_var)
    g_chan = _Channel(instance.kernel_g, pts, noise_var)
    L = lipschitz_constant(instance, SAFETY)
    dist = _distance_matrix(pts)
    mask = np.zeros(instance.n, dtype=bool)
    mask[instance.seed_indices] = True
    trace = RegretTrace(algorithm="stageopt",
                        seed=seed if isinstance(seed, (int, np.integer)) else -1)
    in_phase2 = False
    cap = min(cfg.tprime.cap, cfg.T)
    window = cfg.tprime.window
    sizes = []
    for t in range(1, cfg.T + 1):
        beta_t = beta(t, instance.n, cfg.delta)
        root_beta = math.sqrt(beta_t)

        members = np.flatnonzero(mask)
        g_means, g_vars = g_chan.moments(members)
        lower_g = g_means - root_beta * np.sqrt(g_vars)
        mask = _lipschitz_expand(mask, lower_g, L, dist, instance.h)
        members = np.flatnonzero(mask)

        g_means, g_vars = g_chan.moments(members)
        g_width = 2.0 * root_beta * np.sqrt(g_vars)
        upper_g = g_means + g_width / 2.0
        expanders = _expanders(members, upper_g, mask, L, dist, instance.h)

        if not in_phase2:
            plateaued = (
                len(sizes) >= window
                and all(s == sizes[-1] for s in sizes[-window:])
            )
            member_pos = {int(m): k for k, m in enumerate(members)}
            exp_pos = np.array(
                [member_pos[int(i)] for i in expanders], dtype=int
            )
            if (
                t > cap
                or plateaued
                or expanders.size == 0
                or np.max(g_width[exp_pos]) <= cfg.epsilon
            ):
                in_phase2 = True
        if not in_phase2:
            i = int(expanders[int(np.argmax(g_width[exp_pos]))])
        else:
            f_means, f_vars = f_chan.moments(members)
            upper_f = f_means + root_beta * np.sqrt(f_vars)
            i = int(members[int(np.argmax(upper_f))])

        sizes.append(members.size)
        f_chan.observe_at(i, observe(instance, i, REWARD, rng))
        g_chan.observe_at(i, observe(instance, i, SAFETY, rng))
        trace.record(
            instance, i, EXPLOIT if in_phase2 else EXPLORE, members.size
        )
    return trace
