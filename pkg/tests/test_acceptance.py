"""Acceptance suite: one group of tests per criterion, tolerances pinned below.

The terminal summary prints a PASS/FAIL line per criterion (see conftest).
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import SESSION_START
from nullot.apps import ConeScenario, HorizonScenario, hawking_area, lightcone_comparison, rigidity_diagnostic
from nullot.apps import stability_experiment
from nullot.cli import main
from nullot.hypersurface import (build_cone_patch, build_patch, lemaitre_horizon_section,
                                 product_horizon_section)
from nullot.nec import (CheckConfig, nc1_check, nce_check, random_null_connected_pairs,
                        rescaling_invariance_check, thin_window_pairs)
from nullot.nullgeo import taylor_ricci_probe
from nullot.spacetime import (WeightField, default_point, minkowski, perturbed, product_surface_m2,
                              ricci, schwarzschild_lemaitre, warped)
from nullot.transport import FiberReference, monotone_rearrangement
from oracles import (box_profile, oracle_permutation, plan_permutation, random_atoms, structural_errors,
                     ubar_asymmetry)

# pinned tolerances
TOL_FLAT_DET = 1e-7
T_FLAT_CONE = 5.0
TOL_IDENTITY = 1e-8
TOL_USYM = 1e-10
TOL_HAWKING = 1e-8
TOL_RIGID = 1e-7
T_HAWKING = 10.0
TOL_AREA_RATIO = 1e-6
TOL_MONOTONE = -1e-7
N_OT_INSTANCES = 100
TOL_NCE = -1e-6
N_PAIRS = 20
TOL_PROBE = 1e-3
N_PHI = 5
TOL_STABILITY = 1e-6
T_SUITE = 300.0

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
CONE_FIXTURES = ["mink_cone", "sch_cone", "flrw_cone", "bumped_cone", "prod_cone"]


def cone_scenario(patch, N=None, weight=None):
    c = patch.meta["cone"]
    return ConeScenario(patch.model, c["tip"], c["s_max"], N=N, weight=weight, s_min=c["s_min"],
                        s_ref=c["s_ref"], n_lat=4, n_lon=8)


# 1 ---------------------------------------------------------------------------------------------
@pytest.mark.criterion(1)
def test_c1_flat_cone_jacobi_law():
    t0 = time.perf_counter()
    patch = build_cone_patch(minkowski(4), np.zeros(4), 0.1, 10.0, s_ref=1.0, n_lat=8, n_lon=16)
    elapsed = time.perf_counter() - t0
    r = patch.rays
    s = patch.t + 1.0
    err = np.abs(r.detJbar / s**2 - 1.0)[r.valid_mask()]
    assert s[r.valid_mask()].min() == pytest.approx(0.1) and s.max() == pytest.approx(10.0)
    assert err.max() <= TOL_FLAT_DET
    assert elapsed <= T_FLAT_CONE


# 2 ---------------------------------------------------------------------------------------------
@pytest.mark.criterion(2)
def test_c2_structural_identities(catalog_patches):
    for name, patch in catalog_patches.items():
        row, col, gauss = structural_errors(patch)
        assert max(row, col, gauss) <= TOL_IDENTITY, name
        assert ubar_asymmetry(patch) <= TOL_USYM, name


# 3 ---------------------------------------------------------------------------------------------
@pytest.mark.criterion(3)
@pytest.mark.parametrize("which", ["schwarzschild", "product"])
def test_c3_hawking_equality(which):
    rng = np.random.default_rng(31)
    t0 = time.perf_counter()
    if which == "schwarzschild":
        model = schwarzschild_lemaitre(1.0)
        patch = build_patch(model, lemaitre_horizon_section(model), (0.0, 1.0))
    else:
        model = product_surface_m2("sphere", 1.0)
        patch = build_patch(model, product_horizon_section(model), (0.0, 1.0))
    for _ in range(3):
        c = rng.uniform(-1, 1, 4)
        t1 = lambda u, c=c: 0.2 + 0.1 * c[0] * np.cos(u[:, 0]) + 0.05 * c[1] * np.sin(u[:, 1])
        t2 = lambda u, c=c: 0.7 + 0.1 * c[2] * np.sin(u[:, 0]) * np.cos(u[:, 1]) + 0.05 * c[3]
        out = hawking_area(HorizonScenario(patch, t1, t2))
        assert out["relative_difference"] <= TOL_HAWKING
        assert out["verdict"] == "pass"
    diag = rigidity_diagnostic(patch)
    assert diag["scale_deviation"] <= TOL_RIGID
    assert diag["identity_deviation"] <= TOL_RIGID
    assert time.perf_counter() - t0 <= T_HAWKING


# 4 ---------------------------------------------------------------------------------------------
@pytest.mark.criterion(4)
def test_c4_minkowski_area_ratio_is_one():
    res = lightcone_comparison(ConeScenario(minkowski(4), np.zeros(4), 10.0, s_ref=1.0))
    assert np.abs(res.A - 1.0).max() <= TOL_AREA_RATIO


@pytest.mark.criterion(4)
def test_c4_weighted_rigid_model_area_ratio_is_one():
    # expected to fail: under the s^{N−2} normalization this model gives ω_{n−2}/ω_{N−2}
    mink = minkowski(4)
    sc = ConeScenario(mink, np.zeros(4), 10.0, N=6, weight=WeightField(mink.coords, "2*log(s)"),
                      n_lat=4, n_lon=8, s_ref=1.0)
    res = lightcone_comparison(sc, policy="margin-report")
    print(f"weighted rigid model: A ranges over [{res.A.min():.9f}, {res.A.max():.9f}]")
    assert np.abs(res.A - 1.0).max() <= TOL_AREA_RATIO


@pytest.mark.criterion(4)
@pytest.mark.parametrize("fixture", CONE_FIXTURES)
def test_c4_monotone_on_nc1_passing_cones(request, fixture):
    patch = request.getfixturevalue(fixture)
    if not nc1_check(patch, CheckConfig(N=patch.n)).passed:
        pytest.skip("scenario does not pass NC1")
    res = lightcone_comparison(cone_scenario(patch), policy="margin-report", patch=patch)
    assert res.monotone_margin >= TOL_MONOTONE


# 5 ---------------------------------------------------------------------------------------------
@pytest.mark.criterion(5)
def test_c5_monotone_plan_matches_permutation_oracle():
    rng = np.random.default_rng(2024)
    ref = FiberReference.lebesgue(-1.0, 12.0, 32)
    mismatches = 0
    for _ in range(N_OT_INSTANCES):
        k = int(rng.integers(1, 7))
        x, y = random_atoms(rng, k), random_atoms(rng, k)
        p0, _ = box_profile(ref, x, 0.01, np.full(k, 1.0 / k))
        p1, _ = box_profile(ref, y, 0.01, np.full(k, 1.0 / k))
        got, _ = plan_permutation(monotone_rearrangement(p0, p1), x, y)
        mismatches += int(not np.array_equal(got, oracle_permutation(x, y)))
    assert mismatches == 0


# 6 ---------------------------------------------------------------------------------------------
@pytest.mark.criterion(6)
def test_c6_nc1_implies_nce(catalog_patches):
    rng = np.random.default_rng(66)
    tested = 0
    for name, patch in catalog_patches.items():
        cfg = CheckConfig(N=patch.n)
        if not nc1_check(patch, cfg).passed:
            continue
        rep = nce_check(patch, cfg, random_null_connected_pairs(patch, N_PAIRS, rng))
        assert rep.worst_margin >= TOL_NCE, name
        tested += 1
    assert tested >= 6


@pytest.mark.criterion(6)
def test_c6_adversarial_thin_windows_fail(adversarial_cone):
    cfg = CheckConfig(N=6)
    nc1 = nc1_check(adversarial_cone, cfg)
    assert not nc1.passed
    loc = nc1.worst_location
    rep = nce_check(adversarial_cone, cfg, thin_window_pairs(adversarial_cone, 6, loc["node"], loc["t"]))
    assert not rep.passed


# 7 ---------------------------------------------------------------------------------------------
@pytest.mark.criterion(7)
@pytest.mark.parametrize("which", ["warped", "product", "perturbed"])
def test_c7_taylor_probe(which):
    model = {"warped": lambda: warped(4, 0.5, 1.0),
             "product": lambda: product_surface_m2("sphere", 1.3),
             "perturbed": lambda: perturbed(minkowski(4), 0.2, "focusing")}[which]()
    rng = np.random.default_rng(7)
    p = default_point(model) + np.concatenate([[0.1], rng.uniform(-0.1, 0.1, 3)])
    g = model.metric(p)
    for _ in range(3):
        # random null direction: spatial unit vector (in g) plus the unit time direction
        w = np.concatenate([[0.0], rng.normal(size=3)])
        w /= np.sqrt(w @ g @ w)
        e0 = np.array([1.0, 0, 0, 0]) / np.sqrt(-g[0, 0])
        w = w - (w @ g @ e0) * -e0
        w /= np.sqrt(w @ g @ w)
        v = e0 + w
        exact = ricci(model, p, v, v)
        est = taylor_ricci_probe(model, p, v)
        assert abs(est - exact) <= TOL_PROBE * abs(exact), (est, exact)


# 8 ---------------------------------------------------------------------------------------------
@pytest.mark.criterion(8)
@pytest.mark.parametrize("fixture", ["mink_cone", "sch_horizon", "prod_horizon", "flrw_cone", "bumped_cone",
                                     "prod_cone", "flrw_plane", "adversarial_cone"])
def test_c8_rescaling_invariance(request, fixture):
    patch = request.getfixturevalue(fixture)
    rng = np.random.default_rng(88)
    N = 6 if fixture == "adversarial_cone" else patch.n
    phis = []
    for _ in range(N_PHI):
        c = rng.uniform(0.5, 2.0)
        amp = rng.uniform(0.0, 0.3)
        ph = rng.uniform(0, 2 * np.pi)
        phis.append(lambda u, c=c, amp=amp, ph=ph: c * (1 + amp * np.sin(u[:, -1] + ph)) / (1 + amp))
    out = rescaling_invariance_check(patch, CheckConfig(N=N), phis)
    assert out["invariant"], out["runs"]


# 9 ---------------------------------------------------------------------------------------------
@pytest.mark.criterion(9)
def test_c9_stability_experiment():
    base = minkowski(4)

    def build(model, weight, spu):
        return build_cone_patch(model, np.zeros(4), 0.05, 1.0, s_ref=0.5, n_lat=4, n_lon=8,
                                weight=weight, steps_per_unit=spu)

    out = stability_experiment(base, "focusing", [0.0, 0.0025, 0.005, 0.01, 0.02], build, 4,
                               resolutions=(64, 128, 256))
    assert out["all_pass"]
    assert out["resolution_monotone"]
    assert abs(out["extrapolated_margin"] - out["base_margin"]) <= TOL_STABILITY
    assert out["limit_passes"]


# 10 --------------------------------------------------------------------------------------------
@pytest.mark.criterion(10)
def test_c10_cli_reports_are_byte_identical(tmp_path):
    cfg = str(CONFIGS / "schwarzschild-horizon.yaml")
    for d in ("a", "b"):
        assert main(["check", cfg, "--out", str(tmp_path / d)]) == 0
    a = (tmp_path / "a" / "report.json").read_bytes()
    assert a == (tmp_path / "b" / "report.json").read_bytes()
    assert json.loads(a)["status"]["passed"]


@pytest.mark.criterion(10)
@pytest.mark.run_last
def test_c10_suite_runtime():
    elapsed = time.perf_counter() - SESSION_START
    print(f"suite wall clock so far: {elapsed:.1f} s")
    assert elapsed <= T_SUITE
