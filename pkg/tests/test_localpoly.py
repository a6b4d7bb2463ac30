"""Local polynomial regression: weights, reproduction, bandwidths."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowfit.localpoly import (
    KernelSpec,
    LocalPolyFit,
    RegressionData,
    SingularDesign,
    check_grid_assumptions,
    design_matrix,
    deriv_basis_at_zero,
    epanechnikov,
    lp_coefficients,
    lp_estimate,
    lp_weights,
    monomial_basis,
    multi_indices,
    n_basis,
    optimal_bandwidth,
    uniform_kernel,
)


def random_instance(rng, d, degree, n=60):
    """Regression data plus a fit centred well inside the unit cube."""
    pts = rng.uniform(0.0, 1.0, size=(n, d))
    targets = rng.standard_normal((n, 2))
    data = RegressionData(points=pts, targets=targets, extent=1.0)
    fit = LocalPolyFit(degree=degree, bandwidth=0.45)
    x = rng.uniform(0.3, 0.7, size=d)
    return data, fit, x


def test_multi_index_order():
    assert multi_indices(2, 2) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    assert multi_indices(1, 3) == [(0,), (1,), (2,), (3,)]
    assert n_basis(2, 2) == 6
    assert n_basis(3, 1) == 4


def test_factorial_scaling():
    x = np.array([2.0, 3.0])
    plain = monomial_basis(x, 2, mode="plain")
    scaled = monomial_basis(x, 2, mode="factorial-scaled")
    # entries: 1, a, b, a^2, ab, b^2 with alpha! = 1,1,1,2,1,2
    assert np.allclose(plain, [1, 2, 3, 4, 6, 9])
    assert np.allclose(scaled, [1, 2, 3, 2, 6, 4.5])


def test_deriv_basis_reads_gradient():
    v = np.array([0.6, 0.8])
    row = deriv_basis_at_zero(2, 2, [v])
    # only |alpha| = 1 entries survive: d/dv of (a, b) at 0 is v
    assert np.allclose(row, [0, 0.6, 0.8, 0, 0, 0])


def test_design_matrix_matches_bruteforce():
    # naive triple-loop accumulation of B(x)
    rng = np.random.default_rng(3)
    for d, degree in [(1, 2), (2, 1), (3, 1)]:
        data, fit, x = random_instance(rng, d, degree)
        kern = epanechnikov()
        got = design_matrix(x, data, fit, kern)
        nb = n_basis(d, degree)
        want = np.zeros((nb, nb))
        for i in range(data.n):
            z = (data.points[i] - x) / fit.bandwidth
            if np.linalg.norm(z) >= 1.0:
                continue
            psi = monomial_basis(z, degree)
            k = kern(np.linalg.norm(z))
            for a in range(nb):
                for b in range(nb):
                    want[a, b] += k * psi[a] * psi[b]
        want *= data.extent**d / (data.n * fit.bandwidth**d)
        assert np.abs(got - want).max() <= 1e-12


def test_weight_locality():
    pts = np.array([[0.1], [0.2], [0.5], [0.9]])
    data = RegressionData(points=pts, targets=np.zeros(4), extent=1.0)
    fit = LocalPolyFit(degree=0, bandwidth=0.25)
    w = lp_weights(np.array([0.15]), data, fit, epanechnikov())
    assert w[2] == 0.0 and w[3] == 0.0
    assert w[0] != 0.0 and w[1] != 0.0


def test_value_weights_sum_to_one():
    rng = np.random.default_rng(8)
    data, fit, x = random_instance(rng, 2, 1)
    w = lp_weights(x, data, fit, epanechnikov())
    assert abs(w.sum() - 1.0) <= 1e-10


def test_polynomial_reproduction():
    # sum_i w_i q(x_i) recovers D_v q(x) for polynomial q of degree <= ell
    rng = np.random.default_rng(5)
    for trial in range(25):
        d = int(rng.integers(1, 4))
        degree = int(rng.integers(0, 3))
        s = int(rng.integers(0, min(degree, 1) + 1))
        dirs = []
        for _ in range(s):
            v = rng.standard_normal(d)
            dirs.append(tuple(v / np.linalg.norm(v)))
        data, _, x = random_instance(rng, d, degree, n=80)
        fit = LocalPolyFit(
            degree=degree, bandwidth=0.6, deriv_order=s, directions=tuple(dirs)
        )
        indices = multi_indices(d, degree)
        coeffs = rng.standard_normal(len(indices))

        def q(pts):
            pts = np.atleast_2d(pts)
            cols = [np.prod(pts**np.array(alpha), axis=1) for alpha in indices]
            return np.stack(cols, axis=1) @ coeffs

        def dq(pt):
            if s == 0:
                return q(pt)[0]
            step = 1e-5
            v = np.asarray(dirs[0])
            return (q(pt + step * v)[0] - q(pt - step * v)[0]) / (2 * step)

        try:
            w = lp_weights(x, data, fit, epanechnikov())
        except SingularDesign:
            continue
        got = w @ q(data.points)
        tol = (1e-8 if s == 0 else 1e-4) * (1.0 + np.abs(coeffs).sum())
        assert abs(got - dq(x)) <= tol


def test_estimate_matches_weighted_least_squares():
    # independent oracle: minimize sum K_i (Y_i - psi_i theta)^2, then
    # read the directional derivative of the fitted polynomial at x
    rng = np.random.default_rng(11)
    for trial in range(20):
        d = int(rng.integers(1, 4))
        degree = int(rng.integers(0, 3))
        s = int(rng.integers(0, min(degree, 2) + 1))
        dirs = []
        for _ in range(s):
            v = rng.standard_normal(d)
            dirs.append(tuple(v / np.linalg.norm(v)))
        data, _, x = random_instance(rng, d, degree, n=100)
        fit = LocalPolyFit(
            degree=degree, bandwidth=0.5, deriv_order=s, directions=tuple(dirs)
        )
        kern = epanechnikov()
        try:
            got = lp_estimate(x, data, fit, kern)
        except SingularDesign:
            continue
        z = (data.points - x) / fit.bandwidth
        radii = np.linalg.norm(z, axis=1)
        keep = radii < 1.0
        sqrtk = np.sqrt(kern(radii[keep]))
        psi = monomial_basis(z[keep], degree)
        theta, *_ = np.linalg.lstsq(
            psi * sqrtk[:, None], data.targets[keep] * sqrtk[:, None], rcond=None
        )
        read = deriv_basis_at_zero(d, degree, [np.asarray(v) for v in dirs])
        want = (read @ theta) / fit.bandwidth**s
        assert np.abs(got - want).max() <= 1e-9


@given(lam=st.floats(-50.0, 50.0))
def test_linearity_in_targets(lam):
    rng = np.random.default_rng(21)
    data, fit, x = random_instance(rng, 2, 1)
    scaled = RegressionData(points=data.points, targets=lam * data.targets, extent=1.0)
    a = lp_estimate(x, data, fit, epanechnikov())
    b = lp_estimate(x, scaled, fit, epanechnikov())
    assert np.allclose(b, lam * a, rtol=1e-9, atol=1e-12)


def test_coefficients_expose_value_and_slope():
    rng = np.random.default_rng(4)
    data, fit, x = random_instance(rng, 1, 1)
    theta = lp_coefficients(x, data, fit, epanechnikov())
    value = lp_estimate(x, data, fit, epanechnikov())
    assert np.allclose(theta[0], value, atol=1e-12)
    dfit = LocalPolyFit(degree=1, bandwidth=fit.bandwidth, deriv_order=1, directions=((1.0,),))
    slope = lp_estimate(x, data, dfit, epanechnikov())
    assert np.allclose(theta[1] / fit.bandwidth, slope, atol=1e-12)


def test_pointwise_bandwidth_closed_form():
    got = optimal_bandwidth(n=1024, d=1, beta=1, sigma=1.0, T=1.0, L=1.0)
    assert abs(got - 0.09921256574801247) <= 1e-13


def test_supnorm_bandwidth_closed_form():
    got = optimal_bandwidth(n=1024, d=1, beta=1, sigma=1.0, T=1.0, L=1.0, mode="supnorm")
    assert abs(got - 0.18916545737198148) <= 1e-13


def test_bandwidth_rejects_bad_inputs():
    with pytest.raises(ValueError):
        optimal_bandwidth(n=1024, d=1, beta=1, sigma=0.0, T=1.0, L=1.0)
    with pytest.raises(ValueError):
        optimal_bandwidth(n=1, d=1, beta=1, sigma=1.0, T=1.0, L=1.0)
    with pytest.raises(ValueError):
        optimal_bandwidth(n=64, d=1, beta=1, sigma=1.0, T=1.0, L=1.0, mode="other")


def test_singular_design_far_from_data():
    pts = np.array([[0.1, 0.1], [0.12, 0.1], [0.1, 0.12]])
    data = RegressionData(points=pts, targets=np.zeros(3), extent=1.0)
    fit = LocalPolyFit(degree=1, bandwidth=0.1)
    with pytest.raises(SingularDesign) as err:
        lp_estimate(np.array([0.9, 0.9]), data, fit, epanechnikov())
    assert err.value.lambda_min == 0.0


def test_grid_report_on_uniform_grid():
    axis = (np.arange(16) + 1.0) / 16.0
    pts = np.array([[a, b] for a in axis for b in axis])
    report = check_grid_assumptions(pts, T=1.0, kernel=epanechnikov(), bandwidth=0.3)
    assert 0.0 < report.cover_constant <= 4.0**2
    assert report.lambda_min > 0.0
    assert report.degenerate_fraction == 0.0


def test_grid_report_flags_clustered_points():
    rng = np.random.default_rng(2)
    pts = 0.05 * rng.uniform(size=(40, 2))  # all in one corner
    report = check_grid_assumptions(pts, T=1.0, kernel=epanechnikov())
    assert report.degenerate_fraction > 0.0
    assert report.lambda_min <= 1e-10


def test_grid_report_single_point_is_vacuous():
    report = check_grid_assumptions(np.array([[0.5, 0.5]]), T=1.0, kernel=epanechnikov())
    assert report.cover_constant == 0.0


def test_kernel_validation():
    with pytest.raises(ValueError):
        KernelSpec(func=lambda z: -np.ones_like(z))
    with pytest.raises(ValueError):
        KernelSpec(func=lambda z: np.ones_like(z))  # does not vanish past 1
    with pytest.raises(ValueError):
        KernelSpec(func=lambda z: np.zeros_like(z))
    assert epanechnikov()(np.array([2.0])) == 0.0
    assert uniform_kernel().lipschitz is False
