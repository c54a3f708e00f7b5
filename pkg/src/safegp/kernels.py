"""Kernel functions, explicit feature maps, and finite Fourier-basis approximations.

Three families are supported on the unit ball: squared-exponential (SE),
linear, and a normalized polynomial kernel.  All of them satisfy
``k(x, x) <= 1`` there; the polynomial keeps that property through its
scale parameter (``(c * x.y + c)**p`` with ``c <= 1/2``).

Linear and polynomial kernels come with exact finite-dimensional feature
maps.  The SE kernel is approximated by quadrature Fourier features (QFF,
tensor Gauss-Hermite nodes) or random Fourier features (RFF), together
with their uniform-error and dimension bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Callable

import numpy as np
from numpy.polynomial.hermite import hermgauss

from .errors import CapacityError, UnsupportedKernelError

SE = "se"
LINEAR = "linear"
POLYNOMIAL = "polynomial"
_FAMILIES = (SE, LINEAR, POLYNOMIAL)

DEFAULT_FEATURE_BUDGET = 1 << 16


@dataclass(frozen=True)
class KernelSpec:
    """Immutable kernel description.

    ``lengthscale`` only applies to the SE family; ``degree`` and ``scale``
    only to the polynomial family.  ``scale`` must stay in (0, 1/2] so the
    kernel variance stays below one on the unit ball.
    """

    family: str
    ambient_dim: int
    lengthscale: float = 1.0
    degree: int = 2
    scale: float = 0.5

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.ambient_dim < 1:
            raise ValueError("ambient_dim must be a positive integer")
        if self.family == SE and self.lengthscale <= 0:
            raise ValueError("SE lengthscale must be positive")
        if self.family == POLYNOMIAL:
            if self.degree < 1:
                raise ValueError("polynomial degree must be >= 1")
            if not 0 < self.scale <= 0.5:
                raise ValueError("polynomial scale must lie in (0, 1/2]")

    @property
    def feature_dim(self):
        """Dimension of the exact feature map, or None for SE."""
        if self.family == LINEAR:
            return self.ambient_dim
        if self.family == POLYNOMIAL:
            return math.comb(self.ambient_dim + self.degree, self.ambient_dim)
        return None

    def eval(self, x, y):
        """Evaluate k(x, y) for a single pair of points."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.shape != (self.ambient_dim,) or y.shape != (self.ambient_dim,):
            raise ValueError(
                f"points must have dimension {self.ambient_dim}, "
                f"got shapes {x.shape} and {y.shape}"
            )
        if self.family == SE:
            d2 = float(np.dot(x - y, x - y))
            return math.exp(-d2 / (2.0 * self.lengthscale**2))
        if self.family == LINEAR:
            return float(np.dot(x, y))
        return float((self.scale * np.dot(x, y) + self.scale) ** self.degree)

    def gram(self, X, Y=None):
        """Kernel matrix between the rows of X and Y (Y defaults to X)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = X if Y is None else np.atleast_2d(np.asarray(Y, dtype=float))
        if X.shape[1] != self.ambient_dim or Y.shape[1] != self.ambient_dim:
            raise ValueError(f"points must have dimension {self.ambient_dim}")
        if self.family == SE:
            sq = (
                np.sum(X**2, axis=1)[:, None]
                + np.sum(Y**2, axis=1)[None, :]
                - 2.0 * (X @ Y.T)
            )
            np.maximum(sq, 0.0, out=sq)
            return np.exp(-sq / (2.0 * self.lengthscale**2))
        if self.family == LINEAR:
            return X @ Y.T
        return (self.scale * (X @ Y.T) + self.scale) ** self.degree

    def diag(self, X):
        """k(x, x) for each row of X."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.family == SE:
            return np.ones(X.shape[0])
        if self.family == LINEAR:
            return np.sum(X**2, axis=1)
        return (self.scale * np.sum(X**2, axis=1) + self.scale) ** self.degree


def _poly_exponents(dim, degree):
    """Multi-indices over dim+1 homogenizing coordinates with total degree p."""
    exps = []
    for combo in combinations_with_replacement(range(dim + 1), degree):
        alpha = [0] * (dim + 1)
        for j in combo:
            alpha[j] += 1
        exps.append(alpha)
    return np.array(exps, dtype=int)


def explicit_features(kernel: KernelSpec, X):
    """Exact feature matrix with phi(x).phi(y) = k(x, y).

    Rows of X map to rows of the output.  Only linear and polynomial
    kernels have a finite-dimensional map; SE raises.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != kernel.ambient_dim:
        raise ValueError(f"points must have dimension {kernel.ambient_dim}")
    if kernel.family == LINEAR:
        return X.copy()
    if kernel.family != POLYNOMIAL:
        raise UnsupportedKernelError(
            "the SE kernel has an infinite-dimensional feature space; "
            "use a QFF or RFF approximation instead"
        )
    p = kernel.degree
    exps = _poly_exponents(kernel.ambient_dim, p)
    # (c * x.y + c)**p  ==  (z.w)**p  with  z = sqrt(c) * (x, 1)
    coeff = np.array(
        [
            math.sqrt(
                math.factorial(p) / math.prod(math.factorial(a) for a in alpha)
            )
            for alpha in exps
        ]
    )
    Z = np.hstack([X, np.ones((X.shape[0], 1))])
    monomials = np.prod(Z[:, None, :] ** exps[None, :, :], axis=2)
    return kernel.scale ** (p / 2.0) * coeff[None, :] * monomials


def qff_feature_map(
    lengthscale: float,
    nodes_per_dim: int,
    dim: int,
    X,
    budget: int = DEFAULT_FEATURE_BUDGET,
):
    """Quadrature Fourier features for the SE kernel on [0, 1]^dim.

    Uses the tensor product of the Gauss-Hermite rule with
    ``nodes_per_dim`` nodes per axis; the output has ``2 * nodes_per_dim**dim``
    entries (cosine block then sine block) and unit Euclidean norm.
    """
    if nodes_per_dim < 1:
        raise ValueError("nodes_per_dim must be >= 1")
    if lengthscale <= 0:
        raise ValueError("lengthscale must be positive")
    n_nodes = nodes_per_dim**dim
    if 2 * n_nodes > budget:
        raise CapacityError(
            f"QFF would need {2 * n_nodes} features, budget is {budget}"
        )
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != dim:
        raise ValueError(f"points must have dimension {dim}")

    nodes, weights = hermgauss(nodes_per_dim)
    grids = np.meshgrid(*([nodes] * dim), indexing="ij")
    omega = np.stack([g.ravel() for g in grids], axis=1)  # (n_nodes, dim)
    wgrids = np.meshgrid(*([weights] * dim), indexing="ij")
    # Gauss-Hermite weights sum to sqrt(pi) per axis; normalize so the
    # node weights sum to one and the feature norm is exactly one.
    nu = np.prod(np.stack([w.ravel() for w in wgrids], axis=1), axis=1)
    nu = nu / math.pi ** (dim / 2.0)

    proj = X @ (math.sqrt(2.0) / lengthscale * omega).T
    root_nu = np.sqrt(nu)[None, :]
    return np.hstack([root_nu * np.cos(proj), root_nu * np.sin(proj)])


def qff_error_bound(dim: int, lengthscale: float, nodes_per_dim: int):
    """Worst-case uniform error of the QFF approximation on [0, 1]^dim.

    Evaluates d * 2**(d-1) / (sqrt(2) * Dbar**Dbar) * (e / (4 l^2))**Dbar
    in log space so large node counts do not overflow.  Decreasing in the
    node count once ``nodes_per_dim > 1 / lengthscale**2``.
    """
    if dim < 1 or nodes_per_dim < 1:
        raise ValueError("dim and nodes_per_dim must be >= 1")
    if lengthscale <= 0:
        raise ValueError("lengthscale must be positive")
    dbar = nodes_per_dim
    log_bound = (
        math.log(dim)
        + (dim - 1) * math.log(2.0)
        - 0.5 * math.log(2.0)
        - dbar * math.log(dbar)
        + dbar * (1.0 - math.log(4.0 * lengthscale**2))
    )
    return math.exp(log_bound)


def rff_feature_map(kernel: KernelSpec, n_features: int, seed: int, X):
    """Random Fourier features for the SE kernel.

    Frequencies are i.i.d. draws from the SE spectral density
    N(0, I / lengthscale^2), fixed by ``seed``.  The output interleaves
    sin/cos pairs, has length ``n_features`` (must be even), and unit norm.
    """
    if kernel.family != SE:
        raise UnsupportedKernelError("RFF requires a stationary (SE) kernel")
    if n_features < 2 or n_features % 2 != 0:
        raise ValueError("n_features must be an even integer >= 2")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != kernel.ambient_dim:
        raise ValueError(f"points must have dimension {kernel.ambient_dim}")
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((n_features // 2, kernel.ambient_dim))
    omega /= kernel.lengthscale
    proj = X @ omega.T
    out = np.empty((X.shape[0], n_features))
    out[:, 0::2] = np.sin(proj)
    out[:, 1::2] = np.cos(proj)
    out *= math.sqrt(2.0 / n_features)
    return out


def rff_dim_bound(delta: float, eps0: float, dim: int, rho: float):
    """Feature count guaranteeing an (eps0, D)-uniform RFF approximation.

    Returns the ceiling of ``8 (d+2) / eps0^2 * log(16 rho sqrt(d) / (eps0
    sqrt(delta)))`` rounded up to the next even integer so the sin/cos
    pairing stays intact.
    """
    if not 0 < delta < 1 or not 0 < eps0 < 1:
        raise ValueError("delta and eps0 must lie in (0, 1)")
    if dim < 1 or rho <= 0:
        raise ValueError("dim must be >= 1 and rho positive")
    raw = (8.0 * (dim + 2) / eps0**2) * math.log(
        16.0 * rho * math.sqrt(dim) / (eps0 * math.sqrt(delta))
    )
    n = max(2, math.ceil(raw))
    return n if n % 2 == 0 else n + 1


def se_rff_rho(dim: int, lengthscale: float):
    """Spectral curvature constant of the SE kernel, sqrt(d) / lengthscale."""
    return math.sqrt(dim) / lengthscale


@dataclass(frozen=True)
class FeatureMapSpec:
    """A concrete feature map together with its approximation quality.

    ``epsilon0`` is the guaranteed uniform error of ``phi(x).phi(y)``
    against the target kernel (0.0 for exact maps, None when only a
    probabilistic guarantee exists, as for RFF).
    """

    kind: str
    output_dim: int
    epsilon0: float | None
    _apply: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    def apply(self, X):
        """Feature matrix for the rows of X (in original coordinates)."""
        return self._apply(np.atleast_2d(np.asarray(X, dtype=float)))


def explicit_map(kernel: KernelSpec) -> FeatureMapSpec:
    """Exact feature map for a linear or polynomial kernel."""
    dim_out = kernel.feature_dim
    if dim_out is None:
        raise UnsupportedKernelError("no exact finite feature map for SE")
    return FeatureMapSpec(
        kind="explicit",
        output_dim=dim_out,
        epsilon0=0.0,
        _apply=lambda X: explicit_features(kernel, X),
    )


def qff_map(
    lengthscale: float,
    nodes_per_dim: int,
    dim: int,
    rescale_from_unit_ball: bool = False,
    budget: int = DEFAULT_FEATURE_BUDGET,
) -> FeatureMapSpec:
    """QFF map for an SE kernel, optionally fed unit-ball coordinates.

    With ``rescale_from_unit_ball`` the inputs are mapped affinely from
    [-1, 1]^dim into [0, 1]^dim first.  That halves distances, so the
    quadrature runs at half the requested lengthscale to keep approximating
    the original kernel; the error bound is evaluated at that effective
    lengthscale.
    """
    eff_ls = lengthscale / 2.0 if rescale_from_unit_ball else lengthscale
    n_nodes = nodes_per_dim**dim
    if 2 * n_nodes > budget:
        raise CapacityError(
            f"QFF would need {2 * n_nodes} features, budget is {budget}"
        )

    def _apply(X):
        U = (X + 1.0) / 2.0 if rescale_from_unit_ball else X
        return qff_feature_map(eff_ls, nodes_per_dim, dim, U, budget=budget)

    return FeatureMapSpec(
        kind="qff",
        output_dim=2 * n_nodes,
        epsilon0=qff_error_bound(dim, eff_ls, nodes_per_dim),
        _apply=_apply,
    )


def rff_map(kernel: KernelSpec, n_features: int, seed: int) -> FeatureMapSpec:
    """RFF map for an SE kernel; error guarantee is probabilistic only."""
    if n_features < 2 or n_features % 2 != 0:
        raise ValueError("n_features must be an even integer >= 2")
    return FeatureMapSpec(
        kind="rff",
        output_dim=n_features,
        epsilon0=None,
        _apply=lambda X: rff_feature_map(kernel, n_features, seed, X),
    )
