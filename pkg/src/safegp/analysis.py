"""Computable constants of the regret analysis and their empirical checks.

Everything here is either a closed-form constant (information-gain bound,
reward-range constant B, C1, theorem right-hand sides) or a Monte-Carlo
audit of a concentration statement (minimum-eigenvalue bound of the
feature Gram matrix, posterior-variance approximation gap).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import AssumptionViolationError
from .gp import GPPosterior, variance_via_features
from .kernels import SE, FeatureMapSpec, KernelSpec

_PSD_TOL = 1e-8


def info_gain_bound(t: int, n_actions: int, sigma: float, k_max: float):
    """Finite-set information-gain bound |D0| log(1 + t |D0| k_max / sigma^2).

    Returns 0 for t = 0 by convention.
    """
    if t < 0 or n_actions < 1:
        raise ValueError("t must be >= 0 and n_actions >= 1")
    if sigma <= 0 or k_max <= 0 or k_max > 1:
        raise ValueError("need sigma > 0 and 0 < k_max <= 1")
    if t == 0:
        return 0.0
    return n_actions * math.log(1.0 + sigma**-2 * t * n_actions * k_max)


def info_gain_empirical(gram, sigma: float):
    """Realized mutual information 1/2 log det(I + K / sigma^2)."""
    K = np.asarray(gram, dtype=float)
    if K.size == 0:
        return 0.0
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError("gram must be square")
    if not np.allclose(K, K.T, atol=_PSD_TOL):
        raise ValueError("gram must be symmetric")
    eigs = np.linalg.eigvalsh(K)
    if eigs[0] < -_PSD_TOL:
        raise ValueError("gram must be positive semidefinite")
    sign, logdet = np.linalg.slogdet(
        np.eye(K.shape[0]) + K / sigma**2
    )
    if sign <= 0:
        raise ValueError("I + K / sigma^2 must be positive definite")
    return 0.5 * float(logdet)


def b_constant(kernel: KernelSpec, delta: float, decision_points):
    """High-probability range of a prior draw over the decision set.

    SE kernels use sqrt(2 l d) diam(D0) / delta (universal constant taken
    as one, so this is a reporting constant rather than a tuned bound);
    every other family uses 2 sqrt(2 log(2 |D0|)) / delta.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    pts = np.atleast_2d(np.asarray(decision_points, dtype=float))
    if kernel.family == SE:
        sq = (
            np.sum(pts**2, axis=1)[:, None]
            + np.sum(pts**2, axis=1)[None, :]
            - 2.0 * pts @ pts.T
        )
        diam = math.sqrt(max(float(np.max(sq)), 0.0))
        return (
            math.sqrt(2.0 * kernel.lengthscale * kernel.ambient_dim)
            * diam
            / delta
        )
    return 2.0 * math.sqrt(2.0 * math.log(2.0 * pts.shape[0])) / delta


def c1_constant(sigma: float):
    """Regret-decomposition constant 8 / log(1 + sigma^-2)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return 8.0 / math.log(1.0 + sigma**-2)


def regret_rhs(B: float, t_prime: int, C1: float, T: int, beta_T: float,
               gamma_T: float):
    """Theorem-style regret bound B T' + sqrt(C1 T beta_T gamma_T)."""
    if min(B, t_prime, C1, T, beta_T, gamma_T) < 0:
        raise ValueError("all inputs must be nonnegative")
    return B * t_prime + math.sqrt(C1 * T * beta_T * gamma_T)


def chernoff_trial(seed_points, feature_map: FeatureMapSpec, t_prime: int,
                   sigma: float, trials: int, rng):
    """Empirical failure rate of the feature-Gram eigenvalue bound.

    Each trial draws ``t_prime`` uniform samples from the seed set (as
    multinomial counts), forms Phi^T Phi + sigma^2 I, and checks the
    minimum eigenvalue against sigma^2 + lambda_min T' / 2.
    """
    from .algorithms import lambda_minus

    if t_prime < 0 or trials < 1:
        raise ValueError("t_prime must be >= 0 and trials >= 1")
    pts = np.atleast_2d(np.asarray(seed_points, dtype=float))
    lam = lambda_minus(pts, feature_map)
    if lam <= 0:
        raise AssumptionViolationError(
            "the seed second-moment matrix must have a positive minimum "
            "eigenvalue"
        )
    Phi = feature_map.apply(pts)
    dim = Phi.shape[1]
    threshold = sigma**2 + lam * t_prime / 2.0
    failures = 0
    probs = np.full(pts.shape[0], 1.0 / pts.shape[0])
    for _ in range(trials):
        counts = rng.multinomial(t_prime, probs)
        gram = (Phi.T * counts) @ Phi + sigma**2 * np.eye(dim)
        if np.linalg.eigvalsh(gram)[0] < threshold - 1e-12:
            failures += 1
    return failures / trials


def approx_variance_gap(exact_post: GPPosterior, feature_map: FeatureMapSpec,
                        sigma: float, x):
    """Exact-minus-approximate posterior variance at x, with its bound check.

    The gap must not exceed 4 t^3 eps0 / sigma^2 (eps0 the map's uniform
    approximation error); a violation raises.  Negative gaps are fine: the
    bound is one-sided.
    """
    if feature_map.epsilon0 is None:
        raise ValueError("feature map must carry a deterministic error bound")
    x = np.asarray(x, dtype=float)
    _, exact_var = exact_post.predict(x)
    t = exact_post.n_obs
    Phi = feature_map.apply(exact_post.obs_points) if t else np.empty((0, 0))
    phi_x = feature_map.apply(x[None, :])[0]
    approx_var = variance_via_features(Phi, sigma**2, phi_x)
    gap = exact_var - approx_var
    bound = 4.0 * t**3 * feature_map.epsilon0 / sigma**2
    if gap > bound + 1e-8:
        raise AssumptionViolationError(
            f"variance gap {gap:.3e} exceeds its bound {bound:.3e}"
        )
    return gap


@dataclass(frozen=True)
class BoundReport:
    """All computable pieces of the theoretical regret bound."""

    kernel_regime: str  # "finite" or "infinite"
    lambda_minus: float
    feature_dim: int
    t_eps: float
    t_delta: float
    t_prime: int
    eps0_max: float | None
    eps0_achieved: float | None
    approx_feasible: bool | None
    B: float
    beta_T: float
    gamma_T_bound: float
    C1: float
    regret_rhs: float

    def to_dict(self):
        return asdict(self)


def build_bound_report(instance, delta: float, T: int,
                       qff_nodes: int = 2) -> BoundReport:
    """Evaluate every theorem constant for one instance.

    Safety kernels with an exact finite feature map use the
    finite-dimensional phase-length rule; stationary kernels go through a
    quadrature Fourier approximation (``qff_nodes`` nodes per dimension,
    inputs rescaled from the unit ball).
    """
    from .algorithms import (
        lambda_minus,
        t_prime_finite,
        t_prime_infinite,
    )
    from .gp import beta
    from .kernels import explicit_map, qff_map

    pts = instance.decision_set.points
    seeds = pts[instance.seed_indices]
    sigma = instance.noise_std
    beta_T = beta(T, instance.n, delta)
    gamma_bound = info_gain_bound(T, instance.n, sigma, 1.0)
    B = b_constant(instance.kernel_f, delta, pts)
    C1 = c1_constant(sigma)

    if instance.kernel_g.family == SE:
        fmap = qff_map(
            instance.kernel_g.lengthscale,
            qff_nodes,
            instance.decision_set.dim,
            rescale_from_unit_ball=True,
        )
        lam = lambda_minus(seeds, fmap)
        tp, eps0_max = t_prime_infinite(
            lam, fmap.output_dim, instance.epsilon, delta, beta_T, sigma, T
        )
        t_eps = 16.0 * sigma**2 * beta_T / (lam * instance.epsilon**2)
        t_delta = (8.0 / lam) * math.log(fmap.output_dim / delta)
        report = BoundReport(
            kernel_regime="infinite",
            lambda_minus=lam,
            feature_dim=fmap.output_dim,
            t_eps=t_eps,
            t_delta=t_delta,
            t_prime=tp,
            eps0_max=eps0_max,
            eps0_achieved=fmap.epsilon0,
            approx_feasible=bool(fmap.epsilon0 <= eps0_max),
            B=B,
            beta_T=beta_T,
            gamma_T_bound=gamma_bound,
            C1=C1,
            regret_rhs=regret_rhs(B, tp, C1, T, beta_T, gamma_bound),
        )
    else:
        fmap = explicit_map(instance.kernel_g)
        lam = lambda_minus(seeds, fmap)
        tp = t_prime_finite(
            lam, fmap.output_dim, instance.epsilon, delta, beta_T, sigma
        )
        t_eps = 8.0 * sigma**2 * beta_T / (lam * instance.epsilon**2)
        t_delta = (8.0 / lam) * math.log(fmap.output_dim / delta)
        report = BoundReport(
            kernel_regime="finite",
            lambda_minus=lam,
            feature_dim=fmap.output_dim,
            t_eps=t_eps,
            t_delta=t_delta,
            t_prime=tp,
            eps0_max=None,
            eps0_achieved=0.0,
            approx_feasible=True,
            B=B,
            beta_T=beta_T,
            gamma_T_bound=gamma_bound,
            C1=C1,
            regret_rhs=regret_rhs(B, tp, C1, T, beta_T, gamma_bound),
        )
    return report
