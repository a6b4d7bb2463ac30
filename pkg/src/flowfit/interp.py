"""Polynomial interpolation with normalization and stability certificates.

Univariate interpolation through ``ell + 1`` nodes feeds the
increment-based estimator (its time derivative at 0 is the estimate);
multivariate interpolation on N-point stencils feeds the trajectory
based one.  Stencils carry a stability certificate: the spectral norm
``||Psi(eta(x))^{-1}||`` of the inverse of the plain-monomial matrix
after the points are normalized to centroid 0 and diameter 1.  Small
certificates mean the interpolation operator is well conditioned, and
they are what the perturbation bound is stated in terms of.

Multivariate interpolation follows the convention of returning the zero
polynomial when the node matrix is singular; callers that need a hard
failure should inspect :func:`psi_matrix` or :func:`stability_norm`
first.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist

from .localpoly import monomial_basis, multi_indices, n_basis

__all__ = [
    "UniPoly",
    "Stencil",
    "DuplicateNodes",
    "ZeroDiameter",
    "DimensionUnsupported",
    "interp_univariate",
    "derivative_at",
    "psi_matrix",
    "interp_multivariate",
    "normalize",
    "stability_norm",
    "mu_interior_contains",
]

# Relative singular-value threshold below which node matrices are treated
# as singular (the zero-polynomial branch of the interpolation operator).
SINGULAR_RTOL = 1e-12


class DuplicateNodes(ValueError):
    """Univariate interpolation nodes must be pairwise distinct."""


class ZeroDiameter(ValueError):
    """Normalization requires at least two distinct points."""


class DimensionUnsupported(NotImplementedError):
    """Hull membership is implemented for d <= 3 and for simplex stencils."""


@dataclass(frozen=True)
class UniPoly:
    """Componentwise univariate polynomial, coefficients by ascending degree.

    ``coeffs`` has shape ``(degree_bound + 1, dy)``; scalar input is
    stored as ``dy = 1``.
    """

    coeffs: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValueError("coeffs must be (degree+1, dy)")
        object.__setattr__(self, "coeffs", c)

    @property
    def degree_bound(self) -> int:
        return self.coeffs.shape[0] - 1

    def __call__(self, t: float | np.ndarray) -> np.ndarray:
        return np.polynomial.polynomial.polyval(t, self.coeffs)


def interp_univariate(ts: np.ndarray, ys: np.ndarray) -> UniPoly:
    """The unique polynomial of degree <= len(ts) - 1 through (ts, ys).

    ``ys`` may be vector-valued of shape ``(len(ts), dy)``; components
    are interpolated independently.
    """
    ts = np.asarray(ts, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if ys.ndim == 1:
        ys = ys[:, None]
    if ts.ndim != 1 or ys.shape[0] != ts.size:
        raise ValueError("ts and ys must have matching length")
    if np.unique(ts).size != ts.size:
        raise DuplicateNodes(f"nodes must be pairwise distinct, got {ts}")
    vander = np.polynomial.polynomial.polyvander(ts, ts.size - 1)
    return UniPoly(coeffs=np.linalg.solve(vander, ys))


def derivative_at(p: UniPoly, k: int, t: float) -> np.ndarray:
    """Exact k-th derivative of the polynomial at ``t``."""
    if k < 0:
        raise ValueError("derivative order must be nonnegative")
    if k > p.degree_bound:
        raise ValueError(f"order {k} exceeds degree bound {p.degree_bound}")
    c = np.polynomial.polynomial.polyder(p.coeffs, k, axis=0) if k else p.coeffs
    return np.polynomial.polynomial.polyval(t, c)


def psi_matrix(points: np.ndarray, ell: int) -> np.ndarray:
    """Node matrix with rows ``psi(x_k)^T`` in the plain monomial basis.

    In d = 1 this is the Vandermonde matrix.  Requires exactly
    ``N = C(ell + d, d)`` points.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    num = n_basis(pts.shape[1], ell)
    if pts.shape[0] != num:
        raise ValueError(f"need exactly N={num} points for d={pts.shape[1]}, ell={ell}")
    return monomial_basis(pts, ell, mode="plain")


def _svd_inverse(mat: np.ndarray) -> np.ndarray | None:
    """Inverse via SVD, or None when numerically singular."""
    u, sing, vt = np.linalg.svd(mat)
    if sing[-1] <= SINGULAR_RTOL * sing[0]:
        return None
    return (vt.T / sing) @ u.T


def interp_multivariate(points: np.ndarray, values: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Componentwise polynomial interpolation evaluated at ``x``.

    Solves ``Psi(points) c = values`` in the plain basis and returns
    ``psi(x)^T c``; when the node matrix is singular the interpolant is
    the zero polynomial, so the result is a zero vector.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    vals = np.asarray(values, dtype=float)
    squeeze = vals.ndim == 1
    if squeeze:
        vals = vals[:, None]
    d = pts.shape[1]
    ell = _degree_for(pts.shape[0], d)
    psi = monomial_basis(pts, ell, mode="plain")
    inv = _svd_inverse(psi)
    if inv is None:
        out = np.zeros(vals.shape[1])
    else:
        out = monomial_basis(np.asarray(x, dtype=float), ell, mode="plain") @ (inv @ vals)
    return out[0] if squeeze else out


def _degree_for(n_points: int, d: int) -> int:
    ell = 0
    while n_basis(d, ell) < n_points:
        ell += 1
    if n_basis(d, ell) != n_points:
        raise ValueError(f"{n_points} points do not match C(ell+{d}, {d}) for any ell")
    return ell


def _diameter(pts: np.ndarray) -> float:
    if pts.shape[0] < 2:
        return 0.0
    return float(pdist(pts).max())


def normalize(points: np.ndarray):
    """Map the points to centroid 0 and diameter 1.

    Returns ``(eta, normalized_points)`` where ``eta`` is the affine map
    ``x -> (x - centroid) / diameter`` as a callable, so the same
    normalization can be applied to query points.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    diam = _diameter(pts)
    if diam == 0.0:
        raise ZeroDiameter("all points coincide")
    centroid = pts.mean(axis=0)

    def eta(x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - centroid) / diam

    return eta, eta(pts)


def stability_norm(points: np.ndarray, ell: int) -> float:
    """Certificate ``||Psi(eta(x))^{-1}||`` (spectral norm), or inf.

    Invariant under translation and scaling of the stencil since the
    normalization removes both.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    _, normalized = normalize(pts)
    sing = np.linalg.svd(psi_matrix(normalized, ell), compute_uv=False)
    if sing[-1] <= SINGULAR_RTOL * sing[0]:
        return math.inf
    return float(1.0 / sing[-1])


@dataclass(frozen=True)
class Stencil:
    """Interpolation base points selected on a curve.

    `times` are the curve parameters the points came from; `diameter`
    is the max pairwise distance and `stability` the certificate
    ``||Psi(eta(x))^{-1}||`` (inf when the node matrix is singular) for
    interpolation of degree `ell`.
    """

    points: np.ndarray
    times: np.ndarray
    ell: int
    diameter: float
    stability: float

    @classmethod
    def from_points(cls, points: np.ndarray, times: np.ndarray, ell: int) -> "Stencil":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(
            points=pts,
            times=np.asarray(times, dtype=float),
            ell=ell,
            diameter=_diameter(pts),
            stability=stability_norm(pts, ell) if _diameter(pts) > 0 else math.inf,
        )


def _simplex_halfspaces(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray] | None:
    """Facet normals/offsets (unit normals, A x <= b inside) of a simplex.

    Returns None when the simplex is degenerate.
    """
    n_pts, d = pts.shape
    normals = []
    offsets = []
    for omit in range(n_pts):
        facet = np.delete(pts, omit, axis=0)
        base = facet[0]
        span = facet[1:] - base
        # Normal = null direction of the facet's span; a rank-deficient
        # span means the simplex is degenerate.
        _, sing, vt = np.linalg.svd(span, full_matrices=True)
        if sing.size and sing.min() <= 1e-12 * max(sing.max(), 1.0):
            return None
        normal = vt[-1]
        side = float(normal @ (pts[omit] - base))
        if abs(side) <= 1e-14 * max(1.0, float(np.abs(pts).max())):
            return None
        if side > 0:  # orient outward: omitted vertex on the inside
            normal = -normal
        normals.append(normal)
        offsets.append(float(normal @ base))
    return np.array(normals), np.array(offsets)


def _hull_membership_lp(pts: np.ndarray, x: np.ndarray) -> bool:
    """Exact membership x in conv(pts) via LP feasibility (any dimension)."""
    n_pts = pts.shape[0]
    res = linprog(
        c=np.zeros(n_pts),
        A_eq=np.vstack([pts.T, np.ones(n_pts)]),
        b_eq=np.append(np.asarray(x, dtype=float), 1.0),
        bounds=[(0.0, 1.0)] * n_pts,
        method="highs",
    )
    return bool(res.success)


def mu_interior_contains(points: np.ndarray, mu: float, x: np.ndarray) -> bool:
    """Whether the ball of radius ``mu * diam(points)`` around ``x`` lies
    in the convex hull of the points.

    ``mu = 0`` is plain (closed) hull membership.  Decided by signed
    distances to hull facets: exact for simplex stencils in any
    dimension, and via hull facet enumeration for d <= 3; other cases
    raise :class:`DimensionUnsupported`.
    """
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x = np.asarray(x, dtype=float)
    n_pts, d = pts.shape
    radius = mu * _diameter(pts)

    if d == 1:
        lo, hi = pts.min(), pts.max()
        return bool(lo <= x[0] - radius and x[0] + radius <= hi)

    halfspaces: tuple[np.ndarray, np.ndarray] | None = None
    if d <= 3:
        try:
            hull = ConvexHull(pts)
            # qhull equations are A x + b <= 0 with unit-norm rows.
            halfspaces = (hull.equations[:, :-1], -hull.equations[:, -1])
        except QhullError:
            halfspaces = None  # degenerate cloud: flat hull, empty interior
    elif n_pts == d + 1:
        halfspaces = _simplex_halfspaces(pts)
    else:
        raise DimensionUnsupported(
            f"hull membership for d={d} with {n_pts} > d+1 points is not supported"
        )

    if halfspaces is None:
        # Flat hull: no ball of positive radius fits; membership itself
        # is still decidable exactly.
        if radius > 0:
            return False
        return _hull_membership_lp(pts, x)

    normals, offsets = halfspaces
    slack = offsets - normals @ x
    return bool(np.all(slack >= radius - 1e-12 * max(1.0, float(np.abs(offsets).max()))))
