"""Field estimation from a single long trajectory.

One solution path is observed with noise on an equidistant time grid.
Estimation proceeds in two stages: first the path and its velocity are
reconstructed by componentwise local polynomial regression in time
(:func:`fit_curve`), then the field is read off the reconstruction.

At a query point x the simplest estimate is the velocity at the nearest
curve point (:func:`estimate_lipschitz`).  When the field is smoother
than Lipschitz, :func:`estimate_general` interpolates the velocity
between several curve points chosen by :func:`select_stencil` so that x
lies in their convex hull and the interpolation is provably stable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .flow import DEFAULT_FLOW_CONFIG, FlowConfig, NoiseSpec, Observations, VectorField
from .flow import integrate_flow_grid, noise_draw
from .interp import Stencil, interp_multivariate, mu_interior_contains, stability_norm
from .localpoly import (
    KernelSpec,
    LocalPolyFit,
    RegressionData,
    SingularDesign,
    epanechnikov,
    lp_coefficients,
    n_basis,
    optimal_bandwidth,
)

__all__ = [
    "SnakeDataset",
    "CurveEstimate",
    "StencilConfig",
    "GeneralEstimate",
    "NoStencilFound",
    "generate_snake",
    "fit_curve",
    "nn_time",
    "estimate_lipschitz",
    "select_stencil",
    "check_stencil",
    "estimate_general",
    "delta_nn",
    "to_observations",
    "snake_from_observations",
]


class NoStencilFound(Exception):
    """No admissible interpolation stencil exists near the query point.

    Signals that the point is outside the region where the curve
    supports stable multivariate interpolation.
    """


@dataclass(frozen=True)
class SnakeDataset:
    """Noisy observations of one trajectory on an equidistant time grid.

    ``observations[i - 1]`` is the observed state at time ``i * dt`` for
    ``i = 1..n``; the initial state ``x1`` at time 0 is known exactly.
    """

    x1: np.ndarray
    dt: float
    observations: np.ndarray
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self) -> None:
        x1 = np.asarray(self.x1, dtype=float).reshape(-1)
        obs = np.atleast_2d(np.asarray(self.observations, dtype=float))
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "observations", obs)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if obs.shape[0] < 1 or obs.shape[1] != x1.size:
            raise ValueError("observations must be (n, d) with n >= 1")

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    @property
    def dim(self) -> int:
        return self.x1.size

    @property
    def horizon(self) -> float:
        return self.n * self.dt

    @property
    def times(self) -> np.ndarray:
        """All sample times ``0, dt, ..., n dt`` including the initial one."""
        return self.dt * np.arange(self.n + 1)

    @property
    def states(self) -> np.ndarray:
        """Known initial state stacked on top of the observations."""
        return np.vstack([self.x1, self.observations])


def generate_snake(
    fld: VectorField,
    x1: np.ndarray,
    n: int,
    dt: float,
    sigma: float = 0.0,
    seed: int = 0,
    noise: str = "gaussian",
    cfg: FlowConfig = DEFAULT_FLOW_CONFIG,
) -> SnakeDataset:
    """Simulate the long-trajectory sampling scheme for a known field.

    The whole path is one continued integration; each observed state is
    perturbed by an independent noise vector keyed by
    ``(seed, 1, observation index)``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if dt <= 0:
        raise ValueError("dt must be positive")
    x1 = np.asarray(x1, dtype=float)
    times = dt * np.arange(n + 1)
    states = integrate_flow_grid(fld, x1[None, :], times, cfg)[1:, 0, :].copy()
    spec = NoiseSpec(distribution=noise, sigma=sigma, seed=seed)
    if sigma > 0 and noise != "none":
        for i in range(1, n + 1):
            states[i - 1] += noise_draw(spec, 1, i, fld.dim)
    meta = {
        "field": fld.name,
        "dim": fld.dim,
        "n": n,
        "sigma": sigma,
        "noise": noise,
        "seed": seed,
        "lip": fld.lip,
        "smoothness": fld.smoothness,
        "deriv_bounds": [float(b) for b in fld.derivative_bounds],
    }
    return SnakeDataset(x1=x1, dt=dt, observations=states, meta=meta)


@dataclass(frozen=True)
class CurveEstimate:
    """Reconstructed path and velocity, with a cached evaluation grid.

    ``u`` and ``du`` are defined on all of ``[0, T]``; `grid_states`
    caches ``u`` on `grid_times` for nearest-neighbor and stencil
    searches.  `degree` is the polynomial degree behind the fit (equal
    to the smoothness order used, at least 1); stencil selection for
    this curve interpolates with degree ``degree - 1``.
    """

    u: Callable[[float], np.ndarray]
    du: Callable[[float], np.ndarray]
    horizon: float
    degree: int
    grid_times: np.ndarray
    grid_states: np.ndarray
    bandwidth: float | None = None

    def boundary(self, t: float) -> bool:
        """Whether ``t`` lies in a one-sided window at either end."""
        if self.bandwidth is None:
            return False
        return t < self.bandwidth or t > self.horizon - self.bandwidth

    @classmethod
    def from_functions(
        cls,
        u: Callable[[float], np.ndarray],
        du: Callable[[float], np.ndarray],
        horizon: float,
        degree: int,
        resolution: int = 64,
    ) -> "CurveEstimate":
        """Wrap exact (or externally fitted) evaluators.

        ``resolution`` is the number of cached grid points per unit
        time.  No boundary windows are flagged.
        """
        if horizon <= 0:
            raise ValueError("horizon must be positive")
        if resolution < 1:
            raise ValueError("resolution must be a positive integer")
        num = max(2, math.ceil(resolution * horizon) + 1)
        grid = np.linspace(0.0, horizon, num)
        states = np.stack([np.asarray(u(t), dtype=float) for t in grid])
        return cls(u=u, du=du, horizon=horizon, degree=degree,
                   grid_times=grid, grid_states=states)


# Grid points cached per bandwidth-length of time; keeps the argmin
# discretization error well below the statistical error of the fit.
GRID_PER_BANDWIDTH = 16

# A widening step and cap for one-sided boundary windows that come up
# short of regression points.
WIDEN_FACTOR = 1.5
MAX_WIDENINGS = 8


def _curve_bandwidth(ds: SnakeDataset, beta: int, constant: float) -> float:
    """Sup-norm-mode plug-in bandwidth for the curve regression.

    The fitted path has smoothness ``beta + 1`` with derivative bounds
    inherited from the field; the class constant used is
    ``beta! * max(L_1..L_beta) ** (beta + 1)``.
    """
    degree = max(1, beta)
    floor = 1.25 * (degree + 1) * ds.dt
    sigma = ds.meta.get("sigma")
    bounds = ds.meta.get("deriv_bounds")
    if sigma is None or bounds is None:
        raise ValueError(
            "dataset meta lacks 'sigma' or 'deriv_bounds'; pass an explicit bandwidth"
        )
    if sigma == 0.0:
        return floor
    lcurve = math.factorial(beta) * max(bounds[1:beta + 1]) ** (beta + 1)
    h = optimal_bandwidth(
        ds.n, 1, beta + 1, sigma, T=ds.horizon, L=lcurve, mode="supnorm", C=constant
    )
    return min(max(h, floor), ds.horizon)


def fit_curve(
    ds: SnakeDataset,
    beta: int | None = None,
    kernel: KernelSpec | None = None,
    bandwidth: float | None = None,
    bandwidth_constant: float = 1.0,
) -> CurveEstimate:
    """Reconstruct the path and its velocity from the observations.

    Componentwise local polynomial regression in time of degree
    ``max(1, beta)``; the value and velocity estimates share one fitted
    coefficient block per evaluation time.  Windows that touch the ends
    of ``[0, T]`` are one-sided; if such a window has too few points to
    determine the fit it is widened by factors of 1.5, and times within
    one bandwidth of either end are flagged by ``boundary``.
    """
    if beta is None:
        beta = int(ds.meta.get("smoothness", 1))
    if beta < 1:
        raise ValueError("beta must be at least 1")
    if ds.n < beta + 2:
        raise ValueError(f"need at least beta + 2 = {beta + 2} observations")
    if kernel is None:
        kernel = epanechnikov()
    if bandwidth is None:
        bandwidth = _curve_bandwidth(ds, beta, bandwidth_constant)
    degree = max(1, beta)
    data = RegressionData(points=ds.times[:, None], targets=ds.states, extent=ds.horizon)

    def coefficients(t: float) -> tuple[np.ndarray, float]:
        h = bandwidth
        for _ in range(MAX_WIDENINGS):
            fit = LocalPolyFit(degree=degree, bandwidth=h)
            try:
                return lp_coefficients(np.array([t]), data, fit, kernel), h
            except SingularDesign:
                h *= WIDEN_FACTOR
        raise SingularDesign(0.0, np.array([t]))

    def u(t: float) -> np.ndarray:
        return coefficients(t)[0][0]

    def du(t: float) -> np.ndarray:
        theta, h = coefficients(t)
        return theta[1] / h

    step = bandwidth / GRID_PER_BANDWIDTH
    grid = np.linspace(0.0, ds.horizon, math.ceil(ds.horizon / step) + 1)
    states = np.stack([u(t) for t in grid])
    return CurveEstimate(
        u=u, du=du, horizon=ds.horizon, degree=degree,
        grid_times=grid, grid_states=states, bandwidth=bandwidth,
    )


def _golden_section(fun: Callable[[float], float], lo: float, hi: float) -> float:
    """Deterministic golden-section minimizer on [lo, hi]."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(48):
        if b - a < 1e-12 * max(1.0, abs(b)):
            break
        if fc <= fd:  # keep the left interval on ties: smallest-t bias
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fun(d)
    return c if fc <= fd else d


def nn_time(curve: CurveEstimate, x: np.ndarray) -> float:
    """Time of the curve point nearest to ``x``.

    The argmin over the cached grid (ties broken by smallest time) is
    refined by golden-section search between the neighboring grid
    times.  A query lying exactly on a cached curve point returns that
    grid time unchanged.
    """
    x = np.asarray(x, dtype=float)
    dists = np.linalg.norm(curve.grid_states - x, axis=1)
    k = int(np.argmin(dists))
    if dists[k] == 0.0:
        return float(curve.grid_times[k])
    lo = curve.grid_times[max(k - 1, 0)]
    hi = curve.grid_times[min(k + 1, curve.grid_times.size - 1)]

    def fun(t: float) -> float:
        return float(np.linalg.norm(np.asarray(curve.u(t)) - x))

    t_star = _golden_section(fun, float(lo), float(hi))
    # never return a worse time than the grid argmin
    return t_star if fun(t_star) <= dists[k] else float(curve.grid_times[k])


def estimate_lipschitz(x: np.ndarray, curve: CurveEstimate) -> np.ndarray:
    """Velocity of the reconstructed path at the point nearest to ``x``.

    Total on all of space; the error grows with the distance from ``x``
    to the path, so quality is only guaranteed near the trajectory.
    """
    return np.asarray(curve.du(nn_time(curve, x)), dtype=float)


@dataclass(frozen=True)
class StencilConfig:
    """Tuning constants of the stencil search.

    ``s`` caps the admissible stability certificate at ``2 s``; ``big_d``
    and ``mu`` parameterize the estimable-region diagnostics (diameter
    bounds ``[delta / big_d, big_d delta]`` and hull safety margin
    ``mu * diam``); ``mu = None`` resolves to ``0.5 / N``.  The search
    examines at most `pool_size` candidate curve times: the half
    nearest to the query in state space plus an even stride across the
    whole time range, so both tight and wide stencils are reachable.
    ``search_halfwidth`` (None = unrestricted) narrows the candidates
    to a time window around the nearest-curve time; seeds are improved
    by `sweeps` rounds of single-point swaps.
    """

    s: float = 50.0
    big_d: float = 4.0
    mu: float | None = None
    pool_size: int = 64
    search_halfwidth: float | None = None
    sweeps: int = 2

    def __post_init__(self) -> None:
        if self.s <= 0:
            raise ValueError("s must be positive")
        if self.big_d <= 1:
            raise ValueError("big_d must exceed 1")
        if self.mu is not None and self.mu <= 0:
            raise ValueError("mu must be positive (or None for the default)")
        if self.pool_size < 2:
            raise ValueError("pool_size must be at least 2")
        if self.search_halfwidth is not None and self.search_halfwidth <= 0:
            raise ValueError("search_halfwidth must be positive")
        if self.sweeps < 0:
            raise ValueError("sweeps must be nonnegative")

    def resolve_mu(self, num_basis: int) -> float:
        mu = 0.5 / num_basis if self.mu is None else self.mu
        if mu * num_basis >= 1:
            raise ValueError(f"mu must be below 1/N = 1/{num_basis}")
        return mu


DEFAULT_STENCIL_CONFIG = StencilConfig()


def _subset_key(
    points: np.ndarray, x: np.ndarray, ell: int
) -> tuple[int, float, float, float]:
    """Search ranking: hull violation first, then the objective.

    Returns ``(violation, objective, stability, diameter)`` where
    ``violation`` is 0 when x is in the hull and the node matrix is
    nonsingular.  The objective is ``stability * diam ** (ell + 1)``.
    """
    diam = 0.0 if points.shape[0] < 2 else float(
        max(np.linalg.norm(points[i] - points[j])
            for i in range(points.shape[0]) for j in range(i + 1, points.shape[0]))
    )
    if diam == 0.0:
        return (1, math.inf, math.inf, 0.0)
    stab = stability_norm(points, ell)
    if not math.isfinite(stab):
        return (1, math.inf, math.inf, diam)
    inside = mu_interior_contains(points, 0.0, x)
    objective = stab * diam ** (ell + 1)
    return (0 if inside else 1, objective, stab, diam)


def select_stencil(
    curve: CurveEstimate,
    x: np.ndarray,
    cfg: StencilConfig = DEFAULT_STENCIL_CONFIG,
    ell: int | None = None,
) -> Stencil:
    """Pick N curve points for stable polynomial interpolation at ``x``.

    Admissible stencils contain ``x`` in their convex hull and have
    stability certificate at most ``2 cfg.s``; among the candidates
    examined, the one minimizing ``stability * diam^(ell+1)`` is
    returned, so the result is within a factor 2 of the best examined
    candidate by construction.  Candidates are drawn from a bounded
    pool of cached curve times around the nearest-curve time, seeded by
    nearest points, farthest-point traversal, and even spacing, then
    improved by single-point swaps.

    Raises
    ------
    NoStencilFound
        When no examined candidate is admissible; the query point is
        outside the region covered by the curve.
    """
    x = np.asarray(x, dtype=float)
    if ell is None:
        ell = curve.degree - 1
    d = curve.grid_states.shape[1]
    num = n_basis(d, ell)
    cfg.resolve_mu(num)  # validate even though admission uses mu = 0

    dists_all = np.linalg.norm(curve.grid_states - x, axis=1)
    allowed = np.arange(curve.grid_times.size)
    if cfg.search_halfwidth is not None:
        t_nn = nn_time(curve, x)
        allowed = allowed[np.abs(curve.grid_times - t_nn) <= cfg.search_halfwidth]
    if allowed.size > cfg.pool_size:
        by_dist = allowed[np.argsort(dists_all[allowed], kind="stable")]
        near = by_dist[: cfg.pool_size // 2]
        strided = allowed[np.unique(
            np.round(np.linspace(0, allowed.size - 1, cfg.pool_size - near.size))
            .astype(int)
        )]
        idx = np.unique(np.concatenate([near, strided]))
    else:
        idx = allowed
    pool_states = curve.grid_states[idx]
    pool_times = curve.grid_times[idx]
    pool = pool_states.shape[0]
    if pool < num:
        raise NoStencilFound(f"only {pool} candidate curve points near x={x}")

    dists_x = np.linalg.norm(pool_states - x, axis=1)
    order = np.argsort(dists_x, kind="stable")

    def farthest_point_seed() -> tuple[int, ...]:
        chosen = [int(order[0])]
        while len(chosen) < num:
            mind = np.full(pool, np.inf)
            for c in chosen:
                mind = np.minimum(mind, np.linalg.norm(pool_states - pool_states[c], axis=1))
            mind[chosen] = -np.inf
            chosen.append(int(np.argmax(mind)))
        return tuple(sorted(chosen))

    even = tuple(sorted({int(round(v)) for v in np.linspace(0, pool - 1, num)}))
    seeds = {tuple(sorted(int(i) for i in order[:num])), farthest_point_seed()}
    if len(even) == num:
        seeds.add(even)

    cache: dict[tuple[int, ...], tuple[int, float, float, float]] = {}

    def key_of(subset: tuple[int, ...]) -> tuple[int, float, float, float]:
        if subset not in cache:
            cache[subset] = _subset_key(pool_states[list(subset)], x, ell)
        return cache[subset]

    for seed in list(seeds):
        current = seed
        for _ in range(cfg.sweeps):
            improved = False
            for pos in range(num):
                best_local, best_key = current, key_of(current)
                for cand in range(pool):
                    if cand in current:
                        continue
                    trial = tuple(sorted(current[:pos] + (cand,) + current[pos + 1:]))
                    k = key_of(trial)
                    if k < best_key:
                        best_local, best_key = trial, k
                if best_local != current:
                    current = best_local
                    improved = True
            if not improved:
                break

    admissible = [
        (key[1], subset)
        for subset, key in cache.items()
        if key[0] == 0 and key[2] <= 2 * cfg.s
    ]
    if not admissible:
        raise NoStencilFound(
            f"no admissible stencil among {len(cache)} candidates near x={x}"
        )
    _, best = min(admissible)
    sel = list(best)
    return Stencil.from_points(pool_states[sel], pool_times[sel], ell)


def check_stencil(
    stencil: Stencil,
    x: np.ndarray,
    cfg: StencilConfig = DEFAULT_STENCIL_CONFIG,
    delta: float | None = None,
) -> list[str]:
    """Independent re-check of a stencil's certificate; empty means pass.

    Recomputes the stability norm and hull membership from the raw
    points.  With ``delta`` given, additionally checks the diameter
    window ``[delta / big_d, big_d delta]`` of the estimable-region
    definition.
    """
    problems = []
    stab = stability_norm(stencil.points, stencil.ell)
    if not stab <= 2 * cfg.s:
        problems.append(f"stability {stab:.3g} exceeds 2s = {2 * cfg.s:.3g}")
    if not mu_interior_contains(stencil.points, 0.0, np.asarray(x, dtype=float)):
        problems.append("query point outside the convex hull")
    if delta is not None:
        lo, hi = delta / cfg.big_d, delta * cfg.big_d
        if not lo <= stencil.diameter <= hi:
            problems.append(f"diameter {stencil.diameter:.3g} outside [{lo:.3g}, {hi:.3g}]")
    return problems


@dataclass(frozen=True)
class GeneralEstimate:
    """Field estimate at one query point with its provenance.

    ``provenance`` is ``"interpolated"`` when a stencil was found and
    ``"fallback"`` when the nearest-neighbor estimate was used instead.
    """

    value: np.ndarray
    provenance: str
    stencil: Stencil | None


def estimate_general(
    x: np.ndarray,
    curve: CurveEstimate,
    cfg: StencilConfig = DEFAULT_STENCIL_CONFIG,
    fallback: bool = True,
) -> GeneralEstimate:
    """Interpolate the reconstructed velocity between stencil points.

    Evaluates the componentwise polynomial through
    ``(u(tau_k), du(tau_k))`` at ``x``.  When no admissible stencil
    exists the nearest-neighbor estimate is returned instead (tagged as
    fallback), or :class:`NoStencilFound` is raised when ``fallback``
    is disabled.
    """
    x = np.asarray(x, dtype=float)
    try:
        stencil = select_stencil(curve, x, cfg)
    except NoStencilFound:
        if not fallback:
            raise
        return GeneralEstimate(
            value=estimate_lipschitz(x, curve), provenance="fallback", stencil=None
        )
    velocities = np.stack([np.asarray(curve.du(t), dtype=float) for t in stencil.times])
    value = interp_multivariate(stencil.points, velocities, x)
    return GeneralEstimate(value=value, provenance="interpolated", stencil=stencil)


def delta_nn(curve_points: np.ndarray, targets: np.ndarray, chunk: int = 1024) -> float:
    """Smallest radius so that the tube around the curve covers the targets.

    Computed as the max over target points of the min distance to the
    sampled curve points; resolution is inherited from both samplings.
    """
    curve_points = np.atleast_2d(np.asarray(curve_points, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    worst = 0.0
    for start in range(0, targets.shape[0], chunk):
        block = targets[start:start + chunk]
        diffs = block[:, None, :] - curve_points[None, :, :]
        nearest = np.linalg.norm(diffs, axis=2).min(axis=1)
        worst = max(worst, float(nearest.max()))
    return worst


def to_observations(ds: SnakeDataset) -> list[Observations]:
    """Observation record (single trajectory) for CSV round trips."""
    return [
        Observations(
            traj_id=1,
            obs_idx=np.arange(1, ds.n + 1),
            times=ds.dt * np.arange(1, ds.n + 1),
            values=ds.observations.copy(),
        )
    ]


def snake_from_observations(
    obs: list[Observations], x1: np.ndarray, dt: float, meta: dict
) -> SnakeDataset:
    """Rebuild a dataset from its observation record and meta mapping."""
    if len(obs) != 1:
        raise ValueError(f"expected a single trajectory, got {len(obs)}")
    return SnakeDataset(x1=x1, dt=dt, observations=obs[0].values, meta=dict(meta))
