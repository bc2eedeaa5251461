import doctest

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad
from sklearn.base import clone

import nullot.transport as transport
from nullot.errors import EmptySupport, MassMismatch, NonInjective, NotAbsolutelyContinuous, NotNullConnected
from nullot.transport import (DensityProfile, FiberReference, FiberedMeasure, MonotoneRearrangement,
                              check_null_connected, entropy, entropy_curve, entropy_power, fiber_references,
                              fiber_uniform, interpolate, monotone_rearrangement, transport_plan)
from oracles import box_profile, oracle_permutation, plan_permutation, random_atoms

LEB = FiberReference.lebesgue(-1.0, 12.0, 32)


# -- 1-D monotone rearrangement ----------------------------------------------------------------
def test_uniform_to_uniform():
    ref = FiberReference.lebesgue(0.0, 4.0)
    plan = monotone_rearrangement(DensityProfile.uniform(ref, 0, 1), DensityProfile.uniform(ref, 2, 4))
    x = np.linspace(0, 1, 11)
    assert np.allclose(plan.T(x), 2 + 2 * x, atol=1e-12)
    assert np.allclose(plan.T_inverse(2 + 2 * x), x, atol=1e-12)
    assert np.allclose(plan.displacement(x), 2 + x, atol=1e-12)


def test_identity_plan():
    ref = FiberReference(np.linspace(0, 2, 17), np.sin(np.linspace(0, 2, 17)))
    p = DensityProfile(ref, [0.2, 0.7, 1.5], [1.0, 3.0])
    plan = monotone_rearrangement(p, p)
    x = np.linspace(0.2, 1.5, 23)
    assert np.allclose(plan.T(x), x, atol=1e-12)
    for t in (0.0, 0.3, 1.0):
        assert np.allclose(plan.pushforward_cdf(t, x), p.cdf(x), atol=1e-12)


def test_shifted_uniform_interpolation():
    ref = FiberReference.lebesgue(0.0, 4.0)
    plan = monotone_rearrangement(DensityProfile.uniform(ref, 0, 1), DensityProfile.uniform(ref, 2, 4))
    for t in (0.0, 0.25, 0.5, 1.0):
        lo, hi = 2 * t, 1 + 3 * t
        y = np.linspace(lo, hi, 9)
        assert np.allclose(plan.pushforward_cdf(t, y), (y - lo) / (hi - lo), atol=1e-12)


def test_profile_mass_and_cdf():
    ref = FiberReference(np.linspace(0, 3, 40), 0.3 * np.linspace(0, 3, 40) ** 2)
    p = DensityProfile(ref, [0.1, 0.9, 1.7, 2.6], [0.5, 0.0, 2.0])
    exact = 0.5 * quad(lambda s: np.exp(0.3 * s**2), 0.1, 0.9, epsabs=0, epsrel=1e-13)[0] \
        + 2.0 * quad(lambda s: np.exp(0.3 * s**2), 1.7, 2.6, epsabs=0, epsrel=1e-13)[0]
    assert p.mass == pytest.approx(exact, rel=1e-8)
    s = np.linspace(0, 3, 2001)
    c = p.cdf(s)
    assert np.all(np.diff(c) >= -1e-15)
    assert c[-1] == pytest.approx(p.mass, rel=1e-15)
    q = np.linspace(0, p.mass, 50)
    assert np.allclose(p.cdf(p.quantile(q)), q, atol=1e-12 * p.mass)


def test_reference_primitive_against_closed_form():
    t = np.linspace(0.0, 2.0, 129)
    ref = FiberReference(t, 2 * np.log1p(t))
    s = np.linspace(0, 2, 7)
    assert np.allclose(ref.G(s), ((1 + s) ** 3 - 1) / 3, rtol=1e-9)
    y = np.linspace(0, ref.G_nodes[-1], 11)
    assert np.allclose(ref.G(ref.G_inv(y)), y, atol=1e-12)


def test_pushforward_on_catalog(catalog_patches):
    for name, patch in catalog_patches.items():
        lo, hi = patch.meta["window"]
        mid = 0.5 * (lo + hi)
        mu0 = fiber_uniform(patch, (lo, mid))
        mu1 = fiber_uniform(patch, (0.5 * (lo + mid), hi))
        plan = transport_plan(mu0, mu1)
        worst = 0.0
        for p in plan.plans[::4]:
            y = np.linspace(p.p1.edges[0], p.p1.edges[-1], 41)
            worst = max(worst, np.abs(p.pushforward_cdf(1.0, y) - p.p1.cdf(y)).max() / p.mass)
            start = np.linspace(p.p0.edges[0], p.p0.edges[-1], 41)
            worst = max(worst, np.abs(p.pushforward_cdf(0.0, start) - p.p0.cdf(start)).max() / p.mass)
        assert worst <= 1e-8, name
        for t in (0.0, 0.3, 0.8, 1.0):
            mt = interpolate(plan, t)
            assert abs(mt.total_mass - 1.0) <= 1e-10
            f = np.cos(np.arange(patch.n_rays))
            assert abs(mt.integrate_transverse(f) - mu0.integrate_transverse(f)) <= 1e-9
        assert plan.min_displacement() >= -1e-12


# -- permutation oracle -----------------------------------------------------------------------
def test_permutation_oracle_small():
    rng = np.random.default_rng(8)
    width = 0.01
    for _ in range(30):
        k = int(rng.integers(1, 7))
        x = random_atoms(rng, k)
        y = random_atoms(rng, k)
        p0, _ = box_profile(LEB, x, width, np.full(k, 1.0 / k))
        p1, _ = box_profile(LEB, y, width, np.full(k, 1.0 / k))
        plan = monotone_rearrangement(p0, p1)
        got, Tx = plan_permutation(plan, x, y)
        assert np.array_equal(got, oracle_permutation(x, y))
        assert np.all(np.abs(Tx - y[got]) < width / 2)
        assert np.all(np.diff(Tx) > 0)


def test_permutation_oracle_weighted_reference():
    # the oracle only sees atom positions; the reference weight must not change the coupling
    t = np.linspace(-1, 12, 200)
    ref = FiberReference(t, 0.2 * np.sin(t))
    rng = np.random.default_rng(9)
    for _ in range(10):
        k = int(rng.integers(2, 6))
        x, y = random_atoms(rng, k), random_atoms(rng, k)
        p0, _ = box_profile(ref, x, 0.01, np.full(k, 1.0 / k))
        p1, _ = box_profile(ref, y, 0.01, np.full(k, 1.0 / k))
        # equalize masses exactly by rescaling each box to mass 1/k under the reference
        p0 = DensityProfile(ref, p0.edges, np.where(p0.rho > 0, (1.0 / k) / np.maximum(p0.cell_ref, 1e-300), 0))
        p1 = DensityProfile(ref, p1.edges, np.where(p1.rho > 0, (1.0 / k) / np.maximum(p1.cell_ref, 1e-300), 0))
        plan = monotone_rearrangement(p0, p1)
        got, _ = plan_permutation(plan, x, y)
        assert np.array_equal(got, oracle_permutation(x, y))


# -- entropy ---------------------------------------------------------------------------------
def test_uniform_entropy():
    t = np.linspace(0, 3, 60)
    ref = FiberReference(t, np.log1p(t))
    p = DensityProfile.uniform(ref, 0.5, 2.5)
    m = ref.mass(0.5, 2.5)
    assert p.entropy() == pytest.approx(-np.log(m), rel=1e-12)
    assert entropy_power(p.entropy(), 3.0) == pytest.approx(m ** (1 / 3), rel=1e-12)


def test_entropy_power_conventions():
    assert entropy_power(0.0, 2.0) == 1.0
    assert entropy_power(np.inf, 2.0) == 0.0
    with pytest.raises(ValueError):
        entropy_power(1.0, 0.0)


def test_two_bump_entropy():
    vals = []
    for eps in (0.2, 0.1, 0.05, 0.01):
        p, _ = box_profile(LEB, [1.0, 4.0], eps, [0.5, 0.5])
        assert p.entropy() == pytest.approx(-np.log(2 * eps), rel=1e-12)
        vals.append(p.entropy())
    assert np.all(np.diff(vals) > 0)


def test_fibered_entropy(mink_cone):
    refs = fiber_references(mink_cone)
    w = 1.0 + 0.5 * np.cos(mink_cone.section.u[:, 1])
    mu = fiber_uniform(mink_cone, (0.0, 1.0), w, normalize=False)
    m = np.array([r.mass(0.0, 1.0) for r in refs])
    # flat cone: m_z = ∫_0^1 (1+t)² dt = 7/3
    assert np.allclose(m, 7 / 3, rtol=1e-12)
    assert entropy(mu) == pytest.approx(mink_cone.section.integrate(w * np.log(w / m)), rel=1e-12)


def test_fiber_entropy_along_flat_cone(mink_cone):
    # μ₀ on [0,1] to μ₁ on [1,2]; fiber u(t) = m_t with m_t the reference mass of the moving window
    mu0 = fiber_uniform(mink_cone, (0.0, 1.0), normalize=False)
    mu1 = fiber_uniform(mink_cone, (1.0, 2.0), normalize=False)
    plan = transport_plan(mu0, mu1)
    p = plan.plans[0]
    e = p.entropy_at([0.0, 1.0])
    assert e[0] == pytest.approx(-np.log(7 / 3), rel=1e-10)
    assert e[1] == pytest.approx(-np.log(19 / 3), rel=1e-10)
    curve = entropy_curve(plan, [0.0, 0.5, 1.0])
    assert curve[0] == pytest.approx(4 * np.pi * -np.log(7 / 3), rel=1e-10)


@given(st.lists(st.floats(0.1, 5.0), min_size=1, max_size=4), st.lists(st.floats(0.1, 5.0), min_size=1, max_size=4),
       st.floats(3.0, 6.0))
def test_one_dimensional_cd_convexity(r0, r1, N):
    # reference s^{N−1} ds is CD(0, N): exp(−Ent/N) is concave along the monotone interpolation
    t = np.linspace(0.5, 6.0, 80)
    ref = FiberReference(t, (N - 1) * np.log(t))
    p0 = DensityProfile(ref, np.linspace(0.6, 2.0, len(r0) + 1), r0)
    p1 = DensityProfile(ref, np.linspace(3.0, 5.5, len(r1) + 1), r1)
    p0 = p0.scaled(1.0 / p0.mass)
    p1 = p1.scaled(1.0 / p1.mass)
    plan = monotone_rearrangement(p0, p1)
    ts = np.linspace(0, 1, 17)
    u = np.exp(-plan.entropy_at(ts) / N)
    second = u[:-2] + u[2:] - 2 * u[1:-1]
    assert second.max() <= 1e-7 * u.max()


# -- measures ---------------------------------------------------------------------------------
def test_null_connected_verdicts(mink_cone):
    mu0 = fiber_uniform(mink_cone, (0.0, 0.5), normalize=False)
    flowed = fiber_uniform(mink_cone, (1.0, 1.5), normalize=False)
    same = check_null_connected(mu0, flowed)
    assert same["null_connected"] and same["max_mismatch"] <= 1e-14
    w = np.ones(mink_cone.n_rays)
    w[0] -= 0.1
    w[1] += 0.1
    moved = fiber_uniform(mink_cone, (1.0, 1.5), w, normalize=False)
    out = check_null_connected(mu0, moved)
    assert not out["null_connected"]
    assert out["max_mismatch"] == pytest.approx(0.1, rel=1e-12)
    with pytest.raises(MassMismatch):
        transport_plan(mu0, moved)


def test_not_null_connected(mink_cone):
    mu0 = fiber_uniform(mink_cone, (0.0, 0.5), normalize=False)
    profs = list(mu0.profiles)
    profs[3] = None
    with pytest.raises(NotNullConnected):
        transport_plan(mu0, FiberedMeasure(mink_cone, profs))
    with pytest.raises(NotNullConnected):
        transport_plan(FiberedMeasure(mink_cone, profs), mu0)


def test_normalization(flrw_cone):
    mu = fiber_uniform(flrw_cone, (0.0, 0.5), np.linspace(1, 2, flrw_cone.n_rays))
    assert mu.total_mass == pytest.approx(1.0, rel=1e-14)


def test_profile_errors():
    ref = FiberReference.lebesgue(0.0, 1.0)
    with pytest.raises(NotAbsolutelyContinuous):
        DensityProfile(ref, [0.5, 1.5], [1.0])
    with pytest.raises(EmptySupport):
        DensityProfile.uniform(ref, 0.5, 0.5)
    with pytest.raises(ValueError):
        DensityProfile(ref, [0.0, 0.5], [-1.0])
    a = DensityProfile.uniform(ref, 0, 0.5)
    with pytest.raises(MassMismatch):
        monotone_rearrangement(a, DensityProfile.uniform(ref, 0.5, 1.0, mass=1.1))
    with pytest.raises(EmptySupport):
        monotone_rearrangement(a, DensityProfile(ref, [0.5, 1.0], [0.0]))
    with pytest.raises(ValueError):
        interpolate(None, 1.5)


def test_non_injective_detected():
    ref = FiberReference.lebesgue(0.0, 4.0)
    # T′ = 1/2, so T_t′ = 1 − t/2 vanishes at t = 2 (outside [0, 1] on purpose)
    plan = monotone_rearrangement(DensityProfile.uniform(ref, 0, 2), DensityProfile.uniform(ref, 3, 4))
    assert plan.entropy_at([1.0])[0] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(NonInjective):
        plan.entropy_at([2.0])


def test_mass_tolerance_renormalizes():
    ref = FiberReference.lebesgue(0.0, 2.0)
    a = DensityProfile.uniform(ref, 0, 1)
    b = DensityProfile.uniform(ref, 1, 2, mass=1 + 1e-11)
    plan = monotone_rearrangement(a, b)
    assert plan.p1.mass == pytest.approx(1.0, rel=1e-15)


# -- estimator ------------------------------------------------------------------------------------
def test_estimator_api():
    est = MonotoneRearrangement(mass_rtol=1e-6)
    assert est.get_params() == {"mass_rtol": 1e-6}
    c = clone(est)
    assert c.mass_rtol == 1e-6 and not hasattr(c, "plan_")
    ref = FiberReference.lebesgue(0.0, 4.0)
    est.fit(DensityProfile.uniform(ref, 0, 1), DensityProfile.uniform(ref, 2, 4))
    assert est.inverse_transform([3.0])[0] == pytest.approx(0.5)
    assert est.interpolate(0.5, [0.0])[0] == pytest.approx(1.0)
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        MonotoneRearrangement().transform([0.0])


def test_doctests():
    assert doctest.testmod(transport).failed == 0
