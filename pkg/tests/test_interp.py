"""Polynomial interpolation, normalization, and hull geometry."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowfit.interp import (
    DimensionUnsupported,
    Stencil,
    derivative_at,
    interp_multivariate,
    interp_univariate,
    mu_interior_contains,
    normalize,
    psi_matrix,
    stability_norm,
)


def test_constant_values_give_constant_polynomial():
    p = interp_univariate(np.array([0.0, 0.5, 1.0]), np.full(3, 2.5))
    for t in (0.0, 0.3, 0.9):
        assert abs(p(t) - 2.5) <= 1e-12


def test_two_point_line():
    p = interp_univariate(np.array([0.0, 1.0]), np.array([0.0, 1.0]))
    assert abs(p(0.25) - 0.25) <= 1e-12
    assert abs(p(2.0) - 2.0) <= 1e-12


def test_derivative_of_square():
    p = interp_univariate(np.array([0.0, 1.0, 2.0]), np.array([0.0, 1.0, 4.0]))
    assert abs(derivative_at(p, 1, 0.0)) <= 1e-12
    assert abs(derivative_at(p, 1, 3.0) - 6.0) <= 1e-12


def test_recovers_random_polynomial_coefficients():
    rng = np.random.default_rng(14)
    for ell in range(6):
        coeffs = rng.standard_normal(ell + 1)
        ts = np.sort(rng.uniform(0.0, 1.0, size=ell + 1))
        while np.any(np.diff(ts) < 1e-3):
            ts = np.sort(rng.uniform(0.0, 1.0, size=ell + 1))
        ys = np.polynomial.polynomial.polyval(ts, coeffs)
        p = interp_univariate(ts, ys)
        assert np.abs(p.coeffs.ravel()[: ell + 1] - coeffs).max() <= 1e-9


def test_derivative_matches_finite_difference():
    rng = np.random.default_rng(15)
    coeffs = rng.standard_normal(4)
    ts = np.array([0.0, 0.4, 0.7, 1.0])
    p = interp_univariate(ts, np.polynomial.polynomial.polyval(ts, coeffs))
    step = 1e-6
    fd = (p(step) - p(-step)) / (2 * step)
    assert abs(derivative_at(p, 1, 0.0) - fd) <= 1e-6


def test_vector_valued_nodes():
    ts = np.array([0.0, 1.0, 2.0])
    ys = np.stack([ts**2, 3.0 * ts], axis=1)
    p = interp_univariate(ts, ys)
    assert np.allclose(p(1.5), [2.25, 4.5], atol=1e-12)
    assert np.allclose(derivative_at(p, 1, 1.0), [2.0, 3.0], atol=1e-12)


def test_psi_matrix_example():
    got = psi_matrix(np.array([[0.0], [1.0]]), ell=1)
    assert np.array_equal(got, np.array([[1.0, 0.0], [1.0, 1.0]]))


def test_collinear_triple_is_singular():
    pts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    psi = psi_matrix(pts, ell=1)
    assert np.linalg.matrix_rank(psi) == 2
    assert stability_norm(pts, ell=1) == math.inf


def test_multivariate_interpolation_property():
    rng = np.random.default_rng(16)
    for _ in range(20):
        pts = rng.uniform(size=(3, 2))
        if stability_norm(pts, ell=1) >= 1e6:
            continue
        vals = rng.standard_normal(3)
        for k in range(3):
            got = interp_multivariate(pts, vals, pts[k])
            assert abs(got - vals[k]) <= 1e-9


def test_multivariate_singular_returns_zero():
    pts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    assert interp_multivariate(pts, np.array([1.0, 2.0, 3.0]), np.array([0.5, 0.5])) == 0.0


def test_affine_invariance():
    rng = np.random.default_rng(17)
    for _ in range(20):
        pts = rng.uniform(size=(3, 2))
        if stability_norm(pts, ell=1) >= 1e4:
            continue
        vals = rng.standard_normal(3)
        x = pts.mean(axis=0)
        bmat = rng.standard_normal((2, 2))
        while abs(np.linalg.det(bmat)) < 0.3:
            bmat = rng.standard_normal((2, 2))
        shift = rng.standard_normal(2)
        before = interp_multivariate(pts, vals, x)
        after = interp_multivariate(pts @ bmat.T + shift, vals, bmat @ x + shift)
        assert abs(before - after) <= 1e-8 * (1.0 + abs(before))


def test_normalized_diameter_is_one():
    rng = np.random.default_rng(18)
    for npts, d in [(3, 2), (6, 2), (4, 3)]:
        pts = rng.uniform(size=(npts, d)) * rng.uniform(0.5, 20.0)
        eta, out = normalize(pts)
        dists = np.linalg.norm(out[:, None, :] - out[None, :, :], axis=2)
        assert abs(dists.max() - 1.0) <= 1e-12
        assert np.allclose(eta(pts[0]), out[0], atol=1e-12)


def test_stability_translation_and_scale_invariant():
    rng = np.random.default_rng(19)
    pts = rng.uniform(size=(3, 2))
    base = stability_norm(pts, ell=1)
    assert abs(stability_norm(4.2 * pts + 7.0, ell=1) - base) <= 1e-9 * base


def test_stability_frozen_example():
    # eta maps (0, 1) to (-1/2, 1/2); Psi = [[1, -1/2], [1, 1/2]] and
    # the operator norm of its inverse is sqrt(2)
    got = stability_norm(np.array([[0.0], [1.0]]), ell=1)
    assert abs(got - 1.4142135623730951) <= 1e-12


def test_mu_interior_unit_simplex_centroid():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    centroid = pts.mean(axis=0)
    # centroid-to-edge distance is 0.2357; diameter sqrt(2); ratio 1/6
    assert mu_interior_contains(pts, 0.1, centroid)
    assert not mu_interior_contains(pts, 0.5, centroid)


def test_outside_hull_is_rejected():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert not mu_interior_contains(pts, 0.0, np.array([0.8, 0.8]))
    assert not mu_interior_contains(pts, 0.1, np.array([-0.2, 0.5]))


def _barycentric_inside(tri, x, tol=0.0):
    mat = np.vstack([tri.T, np.ones(3)])
    lam = np.linalg.solve(mat, np.array([x[0], x[1], 1.0]))
    return np.all(lam >= -tol)


def test_simplex_membership_matches_barycentric_oracle():
    rng = np.random.default_rng(20)
    checked = 0
    for _ in range(200):
        tri = rng.uniform(size=(3, 2))
        if stability_norm(tri, ell=1) > 1e3:
            continue
        x = rng.uniform(-0.2, 1.2, size=2)
        lam_margin = 1e-7
        inside_strict = _barycentric_inside(tri, x, tol=-lam_margin)
        outside_strict = not _barycentric_inside(tri, x, tol=lam_margin)
        if not inside_strict and not outside_strict:
            continue  # too close to the boundary to compare
        assert mu_interior_contains(tri, 0.0, x) == inside_strict
        checked += 1
    assert checked > 100


def test_mu_interior_means_ball_fits():
    # definitional check: ball of radius mu * diam around x stays in hull
    rng = np.random.default_rng(22)
    tri = np.array([[0.0, 0.0], [1.0, 0.1], [0.4, 0.9]])
    diam = max(
        np.linalg.norm(tri[i] - tri[j]) for i in range(3) for j in range(3)
    )
    mu = 0.05
    for _ in range(50):
        x = rng.dirichlet(np.ones(3)) @ tri
        if not mu_interior_contains(tri, mu, x):
            continue
        for ang in np.linspace(0.0, 2 * math.pi, 16, endpoint=False):
            probe = x + 0.999 * mu * diam * np.array([math.cos(ang), math.sin(ang)])
            assert _barycentric_inside(tri, probe, tol=1e-12)


def test_quadratic_stencil_membership_beyond_simplex():
    # six points, ell = 2: hull handled by facet enumeration
    pts = np.array(
        [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, -0.3], [0.5, 1.3]]
    )
    assert mu_interior_contains(pts, 0.0, np.array([0.5, 0.5]))
    assert not mu_interior_contains(pts, 0.0, np.array([1.4, 0.5]))


def test_high_dimensional_hull_unsupported():
    pts = np.eye(5)[:, :4][: 5 + 2] if False else np.vstack([np.eye(4), np.zeros(4), np.full(4, 0.2)])
    with pytest.raises(DimensionUnsupported):
        mu_interior_contains(pts, 0.0, np.full(4, 0.1))


def test_stencil_from_points_records_certificate():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    st_ = Stencil.from_points(pts, times=np.array([0.0, 1.0, 2.0]), ell=1)
    assert abs(st_.diameter - math.sqrt(2.0)) <= 1e-12
    assert st_.stability == pytest.approx(stability_norm(pts, 1))


def test_interpolation_constant_bound():
    # sum_k sup_hull |I(x, e_k, .)| <= N^{3/2} * stability, checked on a
    # dense hull sample (Dirichlet draws plus the nodes themselves)
    rng = np.random.default_rng(23)
    for _ in range(10):
        pts = rng.uniform(size=(3, 2))
        stab = stability_norm(pts, ell=1)
        if stab > 50.0:
            continue
        weights = rng.dirichlet(np.ones(3), size=400)
        sample = np.vstack([weights @ pts, pts])
        total = 0.0
        for k in range(3):
            vals = np.zeros(3)
            vals[k] = 1.0
            total += max(abs(interp_multivariate(pts, vals, z)) for z in sample)
        assert total <= 3.0**1.5 * stab * 1.01


def test_univariate_derivative_stability():
    # degree-3 polynomials agreeing to delta at nodes (0, 1/3, 2/3, 1)*h
    # have derivatives within c * delta / h on [0, h]; c is derived by a
    # brute-force sweep of the cardinal-basis derivatives
    nodes = np.array([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])
    tgrid = np.linspace(0.0, 1.0, 401)
    card_deriv_sum = np.zeros_like(tgrid)
    for i in range(4):
        vals = np.zeros(4)
        vals[i] = 1.0
        li = interp_univariate(nodes, vals)
        card_deriv_sum += np.abs([derivative_at(li, 1, t).item() for t in tgrid])
    c = card_deriv_sum.max()

    rng = np.random.default_rng(24)
    for h in (0.5, 0.1):
        for _ in range(20):
            delta = 10.0 ** rng.uniform(-6, -1)
            rvals = rng.uniform(-delta, delta, size=4)
            r = interp_univariate(nodes * h, rvals)
            worst = max(abs(derivative_at(r, 1, t * h).item()) for t in tgrid)
            assert worst <= c * delta / h * (1.0 + 1e-9)
