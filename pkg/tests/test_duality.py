import math

import numpy as np
import pytest
from scipy import integrate

from ergodic_utility import catalog
from ergodic_utility.duality import (
    InconsistentDynamicError,
    check_consistency,
    dynamic_from_utility,
    implied_brownian_drift,
    utility_from_dynamic,
)
from ergodic_utility.functions import BrownianDrift, ValidationError, domain_grid, make_process_from_expr

INF = math.inf
BD = BrownianDrift(0.5, 1.0)
UTILITIES = sorted(catalog.UTILITIES)


def grid_for(obj, center, n=256):
    return domain_grid(obj.domain, n, center=center)


def affine_fit(a, b):
    """Least-squares ``b ~ alpha * a + beta``; returns (alpha, beta, fitted)."""
    A = np.column_stack([a, np.ones_like(a)])
    (alpha, beta), *_ = np.linalg.lstsq(A, b, rcond=None)
    return alpha, beta, alpha * a + beta


def test_log_utility_gives_gbm():
    bd = BrownianDrift(0.05, 0.2)
    p = dynamic_from_utility(catalog.catalog_lookup("log"), bd)
    xs = np.array([0.1, 1.0, 30.0])
    assert np.allclose(p.drift(xs), xs * (0.05 + 0.5 * 0.2**2), rtol=1e-14)
    assert np.allclose(p.diffusion(xs), 0.2 * xs, rtol=1e-14)
    assert p.formulas == {"drift": "0.07*x", "diffusion": "0.2*x"}


def test_linear_utility_gives_additive():
    bd = BrownianDrift(0.3, 0.7)
    p = dynamic_from_utility(catalog.catalog_lookup("linear"), bd)
    xs = np.linspace(-5, 5, 7)
    assert np.allclose(p.drift(xs), 0.3)
    assert np.allclose(p.diffusion(xs), 0.7)


def test_sqrt_utility_gives_cramer_dynamic():
    for a_u, b_u in [(1.0, 1.0), (0.5, 1.0), (0.2, 0.3)]:
        p = dynamic_from_utility(catalog.catalog_lookup("sqrt"), BrownianDrift(a_u, b_u))
        xs = np.array([0.01, 1.0, 4.0, 100.0])
        assert np.allclose(p.drift(xs), 2 * a_u * np.sqrt(xs) + b_u**2, rtol=1e-13)
        assert np.allclose(p.diffusion(xs), 2 * b_u * np.sqrt(xs), rtol=1e-13)


def test_exp_utility_gives_exp_test_dynamic():
    p = dynamic_from_utility(catalog.catalog_lookup("exp_utility"), BD)
    q = catalog.catalog_lookup("exp_test", {"a_u": 0.5, "b_u": 1.0})
    xs = np.linspace(-3, 6, 19)
    assert np.allclose(p.drift(xs), q.drift(xs), rtol=1e-13)
    assert np.allclose(p.diffusion(xs), q.diffusion(xs), rtol=1e-13)


def test_exp_test_consistent_with_ratio_half():
    rep = check_consistency(catalog.catalog_lookup("exp_test", {"a_u": 0.5, "b_u": 1.0}))
    assert rep.consistent
    assert rep.inferred_a_u_over_b_u == pytest.approx(0.5, abs=1e-8)


def test_driftless_gbm_ratio():
    p = make_process_from_expr("0", "x", (0, INF), 1.0)
    rep = check_consistency(p)
    assert rep.consistent
    assert rep.inferred_a_u_over_b_u == pytest.approx(-0.5, abs=1e-12)
    # brute-force oracle: rho(x) = (0 - x/2) / x on any grid
    xs = np.geomspace(1e-3, 1e3, 50)
    assert np.allclose([(0 - 0.5 * x * 1.0) / x for x in xs], -0.5)


def test_constant_drift_gbm_inconsistent():
    p = make_process_from_expr("1", "x", (0, INF), 1.0)
    rep = check_consistency(p)
    assert not rep.consistent
    narrow = check_consistency(p, grid=np.linspace(1, 2, 64))
    wide = check_consistency(p, grid=np.geomspace(0.01, 100, 64))
    assert wide.residual > narrow.residual > 0.1


def test_exp_test_utility_is_exp():
    p = catalog.catalog_lookup("exp_test", {"a_u": 0.5, "b_u": 1.0})
    u = utility_from_dynamic(p, BD, x_ref=0.0, u_ref=1.0)
    xs = np.linspace(-5, 8, 27)
    assert np.allclose(u.u(xs), np.exp(xs), rtol=1e-9)
    assert np.allclose(u.inverse(np.exp(xs)), xs, atol=1e-9)


def test_gbm_utility_is_scaled_log():
    mu, sigma, b_u = 0.07, 0.3, 0.6
    p = catalog.catalog_lookup("gbm", {"mu": mu, "sigma": sigma})
    ratio = mu / sigma - sigma / 2
    u = utility_from_dynamic(p, BrownianDrift(ratio * b_u, b_u), x_ref=1.0)
    xs = np.geomspace(0.05, 40, 20)
    assert np.allclose(u.u(xs), b_u / sigma * np.log(xs), rtol=1e-9, atol=1e-12)
    # independent quadrature cross-check
    val, _ = integrate.quad(lambda s: b_u / (sigma * s), 1.0, 7.0)
    assert u.u(7.0) == pytest.approx(val, rel=1e-9)


def test_additive_utility_is_linear():
    p = catalog.catalog_lookup("additive", {"a": 0.3, "b": 2.0})
    u = utility_from_dynamic(p, BrownianDrift(0.15 * 4.0, 4.0))
    xs = np.linspace(-6, 6, 13)
    assert np.allclose(u.u(xs), 2.0 * xs, rtol=1e-10, atol=1e-12)


def test_wrong_ratio_rejected():
    p = catalog.catalog_lookup("exp_test", {"a_u": 0.5, "b_u": 1.0})
    with pytest.raises(InconsistentDynamicError):
        utility_from_dynamic(p, BrownianDrift(0.7, 1.0))


def test_inconsistent_dynamic_rejected():
    p = make_process_from_expr("1", "x", (0, INF), 1.0)
    with pytest.raises(InconsistentDynamicError) as info:
        utility_from_dynamic(p, BrownianDrift(0.5, 1.0))
    assert not info.value.report.consistent


def test_zero_noise_consistency_is_undefined():
    p = dynamic_from_utility(catalog.catalog_lookup("log"), BrownianDrift(0.1, 0.0))
    assert p.zero_noise
    with pytest.raises(ValidationError):
        check_consistency(p)


# ----------------------------------------------------------------- properties

BDS = [BrownianDrift(0.5, 1.0), BrownianDrift(0.05, 0.2), BrownianDrift(-0.3, 2.0), BrownianDrift(1.0, 0.5)]


@pytest.mark.parametrize("name", UTILITIES)
@pytest.mark.parametrize("bd", BDS, ids=str)
def test_round_trip_a(name, bd):
    u = catalog.catalog_lookup(name)
    p = dynamic_from_utility(u, bd)
    back = utility_from_dynamic(p, bd)
    xs = grid_for(u, u.reference_x0)
    orig, rec = u.u(xs), back.u(xs)
    alpha, beta, fitted = affine_fit(rec, orig)
    assert abs(np.corrcoef(orig, rec)[0, 1] - 1.0) <= 1e-8
    assert alpha == pytest.approx(1.0, rel=1e-8)
    assert np.max(np.abs(fitted - orig) / np.maximum(1.0, np.abs(orig))) <= 1e-6


@pytest.mark.parametrize("name,params", [("exp_test_dynamic", {"a_u": 0.5, "b_u": 1.0}),
                                         ("cramer_dynamic", {"a_u": 0.5, "b_u": 1.0}),
                                         ("gbm_dynamic", {"mu": 0.05, "sigma": 0.2}),
                                         ("additive_dynamic", {"a": 0.1, "b": 0.4})])
@pytest.mark.parametrize("b_u", [1.0, 0.3])
def test_round_trip_b(name, params, b_u):
    p = catalog.catalog_lookup(name, params)
    ratio = check_consistency(p).inferred_a_u_over_b_u
    bd = BrownianDrift(ratio * b_u, b_u)
    q = dynamic_from_utility(utility_from_dynamic(p, bd), bd)
    xs = grid_for(p, p.x0)
    for f, g in [(p.drift, q.drift), (p.diffusion, q.diffusion)]:
        want, got = np.asarray(f(xs)), np.asarray(g(xs))
        assert np.max(np.abs(got - want) / np.maximum(np.abs(want), 1e-300)) <= 1e-6


@pytest.mark.parametrize("name", UTILITIES)
@pytest.mark.parametrize("bd", BDS, ids=str)
def test_derived_dynamics_are_consistent(name, bd):
    p = dynamic_from_utility(catalog.catalog_lookup(name), bd)
    rep = check_consistency(p)
    assert rep.consistent
    assert rep.inferred_a_u_over_b_u == pytest.approx(bd.a_u / bd.b_u, abs=1e-8)


@pytest.mark.parametrize("name", UTILITIES)
def test_implied_drift_recovers_bd(name):
    u = catalog.catalog_lookup(name)
    p = dynamic_from_utility(u, BD)
    fit, residual = implied_brownian_drift(p, u)
    assert fit is not None and residual < 1e-9
    assert fit.a_u == pytest.approx(0.5, abs=1e-9)
    assert fit.b_u == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("name", UTILITIES)
def test_ordering_invariance(name):
    u = catalog.catalog_lookup(name)
    rng = np.random.default_rng(3)
    xs = np.sort(domain_grid(u.domain, 512, center=u.reference_x0)[rng.permutation(512)[:200]])
    vals = u.u(xs)
    assert np.all(np.diff(vals) > 0)


def test_ordering_invariance_for_recovered_utility():
    p = catalog.catalog_lookup("cramer_dynamic", {"a_u": 0.5, "b_u": 1.0})
    u = utility_from_dynamic(p, BD)
    xs = np.geomspace(1e-3, 1e3, 64)
    assert np.all(np.diff(u.u(xs)) > 0)
