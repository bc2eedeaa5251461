import numpy as np
import pytest
import sympy as sp
from scipy.integrate import quad

from nullot.errors import InvalidN, NotNullConnected, WeightNotSmooth
from nullot.hypersurface import build_cone_patch
from nullot.nec import (CheckConfig, chord_margins, nc1_check, nce_check, random_null_connected_pairs,
                        rescaling_invariance_check, riccati_diagnostic, thin_window_pairs)
from nullot.nullgeo import taylor_ricci_probe
from nullot.spacetime import WeightField, minkowski, perturbed, ricci, warped
from nullot.transport import FiberedMeasure, fiber_uniform


def test_config_validation():
    with pytest.raises(InvalidN):
        CheckConfig(N=2)
    with pytest.raises(ValueError):
        CheckConfig(N=4, policy="lenient")
    with pytest.raises(ValueError):
        CheckConfig(N=4, stride=0)


def test_chord_margins_closed_forms():
    t = np.linspace(0, 1, 11)
    assert np.abs(chord_margins(t, 3 * t + 1)).max() < 1e-15
    assert np.allclose(chord_margins(t, t**2), -0.01, atol=1e-15)
    t = np.array([0.0, 0.1, 0.5, 0.6])
    # non-uniform: b = t², margin = −(t_i − t_{i−1})(t_{i+1} − t_i)
    assert np.allclose(chord_margins(t, t**2), [-0.04, -0.04], atol=1e-15)


# -- NC¹ -------------------------------------------------------------------------------------
def test_flat_cone_passes_with_zero_margin(mink_cone):
    rep = nc1_check(mink_cone, CheckConfig(N=4))
    assert rep.passed
    assert abs(rep.worst_margin) < 1e-12
    assert len(rep.per_generator) == mink_cone.n_rays


def test_horizon_passes(sch_horizon):
    rep = nc1_check(sch_horizon, CheckConfig(N=4))
    assert rep.passed and abs(rep.worst_margin) < 1e-12


def test_adversarial_weight_fails_where_profile_is_convex(adversarial_cone):
    rep = nc1_check(adversarial_cone, CheckConfig(N=6))
    assert not rep.passed
    # on the flat cone b(s) = s^{1/2} e^{s²/4}; the violation must sit where b″ > 0
    s = sp.symbols("s", positive=True)
    b = sp.sqrt(s) * sp.exp(s**2 / 4)
    convex = sp.lambdify(s, sp.diff(b, s, 2))
    s_loc = rep.worst_location["t"] + 1.0
    assert convex(s_loc) > 0
    d = rep.to_dict()
    assert set(d) >= {"verdict", "worst_margin", "worst_location", "per_generator"}


def test_stride_sharpens_margin(adversarial_cone):
    m1 = nc1_check(adversarial_cone, CheckConfig(N=6)).worst_margin
    m4 = nc1_check(adversarial_cone, CheckConfig(N=6, stride=4)).worst_margin
    assert m4 < m1 < 0
    assert m4 == pytest.approx(16 * m1, rel=0.05)


def test_grid_refinement_keeps_verdicts(flrw, mink):
    w = WeightField(mink.coords, "s**2")
    for model, weight, N in ((flrw, None, 4), (mink, w, 6)):
        verdicts = set()
        for spu in (64, 128):
            p = build_cone_patch(model, np.zeros(4), 0.1, 2.0, s_ref=0.5, n_lat=4, n_lon=8,
                                 weight=weight, steps_per_unit=spu)
            verdicts.add(nc1_check(p, CheckConfig(N=N)).verdict)
        assert len(verdicts) == 1


# -- Riccati ---------------------------------------------------------------------------------
def test_riccati_equality_cases(mink_cone, sch_horizon, mink):
    assert abs(riccati_diagnostic(mink_cone, CheckConfig(N=4))["max"]) < 1e-6
    assert abs(riccati_diagnostic(sch_horizon, CheckConfig(N=4))["max"]) < 1e-6
    rigid = build_cone_patch(mink, np.zeros(4), 0.1, 3.0, s_ref=1.0, n_lat=4, n_lon=8,
                             weight=WeightField(mink.coords, "2*log(s)"))
    diag = riccati_diagnostic(rigid, CheckConfig(N=6))
    d = np.concatenate([c[1] for c in diag["curves"]])
    assert np.abs(d).max() < 1e-5


def test_riccati_errors(mink_cone, mink):
    rough = build_cone_patch(mink, np.zeros(4), 0.1, 1.0, s_ref=0.5, n_lat=4, n_lon=8,
                             weight=WeightField(mink.coords, "abs(x1)"))
    with pytest.raises(WeightNotSmooth):
        riccati_diagnostic(rough, CheckConfig(N=6))
    assert nc1_check(rough, CheckConfig(N=6)).verdict in ("pass", "fail")
    with pytest.raises(InvalidN):
        riccati_diagnostic(mink_cone, CheckConfig(N=3))


def test_riccati_then_nc1_chain(catalog_patches):
    cfg = CheckConfig(N=4)
    for name, patch in catalog_patches.items():
        if riccati_diagnostic(patch, cfg)["max"] <= 1e-6:
            assert nc1_check(patch, cfg).passed, name


# -- NCᵉ -------------------------------------------------------------------------------------
def test_identical_pair_is_flat(flrw_cone):
    mu = fiber_uniform(flrw_cone, (0.0, 0.5))
    rep = nce_check(flrw_cone, CheckConfig(N=4), [(mu, mu)])
    assert rep.passed and abs(rep.worst_margin) < 1e-12
    ts, ent, u = rep.extra["curves"][0]
    assert np.ptp(u) < 1e-12 * u.max()


def test_flat_cone_entropy_power_against_quadrature(mink_cone):
    mu0 = fiber_uniform(mink_cone, (0.0, 1.0))
    mu1 = fiber_uniform(mink_cone, (1.0, 2.0))
    rep = nce_check(mink_cone, CheckConfig(N=4), [(mu0, mu1)])
    assert rep.passed
    ts, ent, u = rep.extra["curves"][0]
    # one fiber in affine radius: uniform on [1,2] w.r.t. s² ds to uniform on [2,3]
    mass = 1.0 / (4 * np.pi)
    r0 = mass / (7 / 3)
    T = lambda x: np.cbrt(8 + 19 * (x**3 - 1) / 7)
    dT = lambda x: (19 / 7) * x**2 / T(x) ** 2
    for i in (0, 7, 16, 25, 32):
        t = ts[i]
        f = lambda x: np.log(r0 * x**2 / (((1 - t) + t * dT(x)) * ((1 - t) * x + t * T(x)) ** 2)) * r0 * x**2
        exact = 4 * np.pi * quad(f, 1.0, 2.0, epsabs=0, epsrel=1e-13)[0]
        assert ent[i] == pytest.approx(exact, rel=1e-9, abs=1e-12)
        assert u[i] == pytest.approx(np.exp(-exact / 3), rel=1e-9)


def test_random_pairs_are_null_connected_and_future_directed(flrw_cone):
    rng = np.random.default_rng(4)
    pairs = random_null_connected_pairs(flrw_cone, 3, rng)
    for mu0, mu1 in pairs:
        assert mu0.total_mass == pytest.approx(1.0, rel=1e-12)
        assert np.allclose(mu0.fiber_masses(), mu1.fiber_masses(), rtol=1e-12)
    rep = nce_check(flrw_cone, CheckConfig(N=4), pairs)
    assert rep.passed
    assert min(r["min_displacement"] for r in rep.per_generator) >= -1e-12


def test_nce_rejects_disconnected_pair(mink_cone):
    mu0 = fiber_uniform(mink_cone, (0.0, 0.5))
    w = np.ones(mink_cone.n_rays)
    w[0] = 2.0
    mu1 = fiber_uniform(mink_cone, (0.5, 1.0), w)
    with pytest.raises(NotNullConnected):
        nce_check(mink_cone, CheckConfig(N=4), [(mu0, mu1)])


def test_thin_window_pairs_detect_adversarial_weight(adversarial_cone):
    cfg = CheckConfig(N=6)
    loc = nc1_check(adversarial_cone, cfg).worst_location
    pairs = thin_window_pairs(adversarial_cone, 6, loc["node"], loc["t"])
    assert len(pairs) >= 2
    rep = nce_check(adversarial_cone, cfg, pairs)
    assert not rep.passed
    assert rep.worst_margin < -10 * cfg.tol_e


def test_converse_probe(flrw_cone, bumped_cone):
    # thin-window pairs that all pass force a near-concave profile at the probed point
    cfg = CheckConfig(N=4)
    for patch in (flrw_cone, bumped_cone):
        nc1 = nc1_check(patch, cfg)
        for node in (0, 13):
            lo, hi = patch.meta["window"]
            t_star = 0.5 * (lo + hi)
            rep = nce_check(patch, cfg, thin_window_pairs(patch, 4, node, t_star))
            if rep.passed:
                row = nc1.per_generator[node]
                assert row["worst_margin"] >= -10 * cfg.tol_c


# -- NEC recovery ----------------------------------------------------------------------------
@pytest.mark.parametrize("eps", [0.2, -0.05, -0.2])
def test_probe_sign_matches_nc1(eps):
    model = perturbed(minkowski(4), eps, "focusing")
    p = np.array([0.5, 0, 0, 0.0])
    g = model.metric(p)
    v = np.array([1.0, np.sqrt(-g[0, 0] / g[1, 1]), 0, 0])
    est = taylor_ricci_probe(model, p, v)
    assert est == pytest.approx(ricci(model, p, v, v), rel=1e-3)
    patch = build_cone_patch(model, p, 0.05, 1.0, s_ref=0.5, n_lat=4, n_lon=8)
    assert nc1_check(patch, CheckConfig(N=4)).passed == (est >= 0)


# -- rescaling -------------------------------------------------------------------------------
def test_identity_rescaling_identical(adversarial_cone):
    out = rescaling_invariance_check(adversarial_cone, CheckConfig(N=6), [1.0])
    assert out["invariant"]
    assert out["runs"][0]["margin_difference"] == 0.0


def test_constant_rescaling_maps_locations(adversarial_cone):
    cfg = CheckConfig(N=6)
    out = rescaling_invariance_check(adversarial_cone, cfg, [2.0])
    assert out["invariant"]
    run = out["runs"][0]
    assert run["verdict"] == "fail" and run["location_error"] <= 1e-12
    base = out["base"].worst_location
    # margins are normalized second differences on the same points, so they agree
    assert run["worst_margin"] == pytest.approx(out["base"].worst_margin, rel=1e-9)
    assert base["t"] is not None


def test_random_rescalings_keep_verdicts(flrw_cone, sch_horizon):
    rng = np.random.default_rng(12)
    for patch in (flrw_cone, sch_horizon):
        phis = [lambda u, c=rng.uniform(0.5, 2.0): c * (1 + 0.2 * np.sin(u[:, -1])) / 1.2
                for _ in range(2)]
        assert rescaling_invariance_check(patch, CheckConfig(N=4), phis)["invariant"]
