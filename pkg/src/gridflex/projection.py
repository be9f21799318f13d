"""Projections onto the admissible price set.

The price signal lives in the ellipsoid ``{z : z' K^-1 z <= 1}`` where
``K = I + lam * D'D`` and ``D`` is the circular first-difference operator
(the wrap row couples the last slot back to the first).  ``K`` is the dual
shaping of a grid objective that charges both magnitude and slot-to-slot
variation, so admissible signals can carry large oscillatory components but
only a modest constant offset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError

# |x' K^-1 x - 1| at the returned boundary point
BOUNDARY_TOL = 1e-8
MAX_BISECT = 200
MAX_BRACKET = 200


def circular_difference(dim: int) -> np.ndarray:
    """First-difference matrix with wrap: row t is p[t+1] - p[t], row dim-1
    wraps to p[0] - p[dim-1]."""
    if dim < 2:
        raise ValidationError(f"difference operator needs dim >= 2, got {dim}")
    d = -np.eye(dim)
    d += np.eye(dim, k=1)
    d[-1, 0] = 1.0
    return d


@dataclass
class SmoothnessMetric:
    """Holds K = I + lam * D'D and its eigendecomposition.

    lam = 0 degrades to the plain Euclidean ball.  The eigendecomposition is
    computed once; projections reuse it, so a single bisection step is O(dim).
    """

    dim: int
    lam: float
    matrix: np.ndarray = field(init=False, repr=False)
    _eigvals: np.ndarray = field(init=False, repr=False)
    _eigvecs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.lam < 0:
            raise ValidationError(f"lam must be >= 0, got {self.lam}")
        d = circular_difference(self.dim)
        k = np.eye(self.dim) + self.lam * (d.T @ d)
        if not np.allclose(k, k.T, atol=1e-12):
            raise ValidationError("K lost symmetry")
        vals, vecs = np.linalg.eigh(k)
        if vals.min() < 1.0 - 1e-9:
            raise ValidationError(f"K has eigenvalue {vals.min()} below 1")
        self.matrix = k
        self._eigvals = vals
        self._eigvecs = vecs

    def quad_form(self, z: np.ndarray) -> float:
        """z' K^-1 z."""
        y = self._eigvecs.T @ z
        return float(np.sum(y * y / self._eigvals))

    def contains(self, z: np.ndarray, tol: float = 1e-9) -> bool:
        return self.quad_form(z) <= 1.0 + tol


def project_ellipsoid(z: np.ndarray, metric: SmoothnessMetric) -> np.ndarray:
    """Euclidean projection onto {x : x' K^-1 x <= 1}.

    Interior and boundary points pass through unchanged.  Outside, the
    minimizer is x = (I + mu K^-1)^-1 z with the unique mu > 0 that lands x
    on the boundary; mu is found by bisection on the monotone boundary gap.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (metric.dim,):
        raise ValidationError(f"shape {z.shape} does not match metric dim {metric.dim}")
    if metric.quad_form(z) <= 1.0:
        return z

    vals = metric._eigvals
    y = metric._eigvecs.T @ z

    def gap(mu: float) -> float:
        # x' K^-1 x - 1 for x = (I + mu K^-1)^-1 z, in the eigenbasis
        scaled = vals * y / (vals + mu)
        return float(np.sum(scaled * scaled / vals)) - 1.0

    lo, hi = 0.0, 1.0
    grow = 0
    while gap(hi) > 0.0:
        lo, hi = hi, 2.0 * hi
        grow += 1
        if grow > MAX_BRACKET:
            raise NumericalError("ellipsoid projection bracket did not close")

    mu = 0.5 * (lo + hi)
    for _ in range(MAX_BISECT):
        g = gap(mu)
        if abs(g) <= BOUNDARY_TOL:
            break
        if g > 0.0:
            lo = mu
        else:
            hi = mu
        mu = 0.5 * (lo + hi)
    return metric._eigvecs @ (vals * y / (vals + mu))


def project_l1_ball(z: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto {x : sum(|x_i|) <= radius}.

    Sort-and-threshold: find the soft-threshold level from the sorted
    magnitudes, shrink toward zero, signs preserved.  O(d log d).
    """
    if radius < 0:
        raise ValidationError(f"radius must be >= 0, got {radius}")
    z = np.asarray(z, dtype=float)
    mag = np.abs(z)
    if mag.sum() <= radius:
        return z.copy()
    if radius == 0.0:
        return np.zeros_like(z)
    srt = np.sort(mag)[::-1]
    cum = np.cumsum(srt)
    idx = np.arange(1, z.size + 1)
    # largest rank whose sorted magnitude stays above the candidate threshold
    rho = np.nonzero(srt > (cum - radius) / idx)[0][-1]
    theta = (cum[rho] - radius) / (rho + 1.0)
    return np.sign(z) * np.maximum(mag - theta, 0.0)


def project_cluster_bank(kappa: np.ndarray, metric: SmoothnessMetric) -> np.ndarray:
    """Column-wise ellipsoid projection of a price bank (dim x k).

    Feasible columns guarantee every convex mixture of them is feasible,
    since the ellipsoid is convex.
    """
    kappa = np.asarray(kappa, dtype=float)
    if kappa.ndim != 2 or kappa.shape[0] != metric.dim:
        raise ValidationError(f"bank shape {kappa.shape} does not match dim {metric.dim}")
    out = np.empty_like(kappa)
    for j in range(kappa.shape[1]):
        out[:, j] = project_ellipsoid(kappa[:, j], metric)
    return out
