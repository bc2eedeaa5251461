"""Light-cone comparison, Hawking area monotonicity, rigidity and stability runs."""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as gamma_fn

from .errors import FocalPoint, MonotonicityViolation, NotComplete, LeftChart, NullotError
from .hypersurface import (build_cone_patch, build_patch, graph_section_transfer,
                           weighted_section_integral)
from .nec import CheckConfig, nc1_check
from .spacetime import WeightField, perturbed

EQUALITY_RTOL = 1e-6


def unit_sphere_area(k):
    """Area of the unit round k-sphere, 2π^{(k+1)/2}/Γ((k+1)/2), k real."""
    return 2 * np.pi ** ((k + 1) / 2) / gamma_fn((k + 1) / 2)


@dataclass
class ConeScenario:
    model: object
    p: np.ndarray
    s_max: float
    N: float = None
    weight: WeightField = None
    n_lat: int = 8
    n_lon: int = 16
    s_min: float = None
    s_ref: float = None
    n_s: int = 48
    steps_per_unit: int = 128
    threads: int = 1

    def __post_init__(self):
        self.p = np.asarray(self.p, float)
        if self.N is None:
            self.N = float(self.model.n)
        if self.s_min is None:
            self.s_min = 1e-3 * self.s_max
        if self.s_ref is None:
            self.s_ref = 0.5 * self.s_max
        if not 0 < self.s_min < self.s_max:
            raise ValueError("the tip must be excluded: need 0 < s_min < s_max")
        if self.weight is None:
            self.weight = WeightField.zero(self.model.coords)


@dataclass
class LightConeResult:
    s: np.ndarray
    A: np.ndarray
    target: float
    monotone_margin: float
    start_error: float
    equality: bool
    verdict: str
    patch: object = field(repr=False, default=None)

    def rows(self):
        return [[float(a), float(b)] for a, b in zip(self.s, self.A)]

    def to_dict(self):
        return {"target": self.target, "monotone_margin": self.monotone_margin,
                "start_error": self.start_error, "equality": self.equality,
                "verdict": self.verdict, "s_min": float(self.s[0]), "s_max": float(self.s[-1]),
                "A_min": float(self.A.min()), "A_max": float(self.A.max())}


def _log_nodes(t, lo_val, n_s):
    """Indices of grid nodes nearest a log-spaced set of values of t + offset."""
    targets = np.geomspace(lo_val[0], lo_val[1], n_s)
    idx = np.unique(np.clip(np.searchsorted(t, targets), 0, len(t) - 1))
    return idx


def lightcone_comparison(scenario, tol=1e-7, policy="strict", patch=None):
    """A(s) = ∫_{S_s} e^Φ / (ω_{N−2} s^{N−2}) along the future cone of p."""
    sc = scenario
    if patch is None:
        patch = build_cone_patch(sc.model, sc.p, sc.s_min, sc.s_max, s_ref=sc.s_ref,
                                 n_lat=sc.n_lat, n_lon=sc.n_lon, weight=sc.weight,
                                 steps_per_unit=sc.steps_per_unit, threads=sc.threads)
    r = patch.rays
    if np.any(np.isfinite(r.focal)):
        b = int(np.nonzero(np.isfinite(r.focal))[0][0])
        raise FocalPoint(f"cone generator {b} focuses at t = {r.focal[b]:.6g}",
                         parameter=float(r.focal[b]), node=b)
    if np.any(r.left_chart):
        raise LeftChart("a cone generator leaves the chart")
    s_ref = patch.meta["cone"]["s_ref"]
    s_all = r.t + s_ref
    idx = _log_nodes(s_all, (s_all[0], s_all[-1]), sc.n_s)
    s = s_all[idx]
    phi = patch.phi[:, idx]
    dens = np.exp(phi + r.W[:, idx])
    area = np.array([patch.section.integrate(dens[:, j]) for j in range(len(idx))])
    A = area / (unit_sphere_area(sc.N - 2) * s ** (sc.N - 2))
    with np.errstate(divide="ignore"):
        target = float(np.exp(sc.weight.value(sc.p[None, :], np.zeros(1))[0]))
    scale = max(float(np.abs(A).max()), 1e-300)
    margin = float(np.min(A[:-1] - A[1:]) / scale) if len(A) > 1 else 0.0
    start_err = float(abs(A[0] - target) / max(abs(target), 1e-300)) if target > 0 else float(abs(A[0]))
    equality = bool(np.max(np.abs(A - A[0])) <= EQUALITY_RTOL * scale)
    verdict = "pass" if margin >= -tol else "fail"
    if verdict == "fail" and policy == "strict":
        raise MonotonicityViolation(f"A(s) increases by {-margin:.3g} (relative)")
    return LightConeResult(s=s, A=A, target=target, monotone_margin=margin, start_error=start_err,
                           equality=equality, verdict=verdict, patch=patch)


@dataclass
class HorizonScenario:
    patch: object
    t1: object
    t2: object
    T_future: float = None
    N: float = None
    certificate_steps: int = 32

    def __post_init__(self):
        if self.N is None:
            self.N = float(self.patch.n)


def _param_values(patch, t):
    u = patch.section.u
    return np.asarray(t(u), float) if callable(t) else np.full(len(u), float(t))


def completeness_certificate(patch, t_end, steps_per_unit=32):
    """Regenerate the generators up to t_end; any focal point or chart exit fails."""
    lo = min(0.0, float(patch.rays.T.min()))
    try:
        ext = build_patch(patch.model, patch.section, (lo, t_end), patch.weight,
                          steps_per_unit=steps_per_unit, s_offset=patch.s_offset)
    except NullotError as exc:
        raise NotComplete(f"certificate run failed: {exc}") from exc
    r = ext.rays
    if np.any(np.isfinite(r.focal)) or np.any(r.left_chart):
        raise NotComplete("a generator focuses or leaves the chart inside the certificate window")
    return {"t_end": float(t_end), "steps_per_unit": steps_per_unit,
            "note": "completeness certified on a finite window only"}


def hawking_area(scenario, tol=1e-8):
    """Weighted areas of two graph sections S₁ ⊂ J⁻(S₂) of a horizon patch."""
    sc = scenario
    patch = sc.patch
    t1 = _param_values(patch, sc.t1)
    t2 = _param_values(patch, sc.t2)
    if np.any(t1 > t2 + 1e-12):
        raise ValueError("need t1 <= t2 on every generator")
    sep = max(float(np.max(t2) - np.min(t1)), 1e-3)
    T_future = 10 * sep if sc.T_future is None else float(sc.T_future)
    cert = completeness_certificate(patch, float(np.max(t2)) + T_future, sc.certificate_steps)
    nc1 = nc1_check(patch, CheckConfig(N=sc.N))
    out = {}
    for name, tl in (("S1", sc.t1), ("S2", sc.t2)):
        S = graph_section_transfer(patch, tl)
        tq = S.meta["t_L"]
        s = patch.s_offset + tq * patch.s_rate
        direct = weighted_section_integral(S, patch.weight, s=s)
        base = patch.section
        phi = patch.weight.value(S.x, s)
        transfer = base.integrate(np.exp(phi) * S.meta["transfer_factor"])
        out[name] = {"area_gram": float(direct), "area_transfer": float(transfer)}
    a1 = out["S1"]["area_gram"]
    a2 = out["S2"]["area_gram"]
    rel = abs(a1 - a2) / max(abs(a2), 1e-300)
    verdict = "pass" if a1 <= a2 * (1 + tol) else "fail"
    return {"area1": a1, "area2": a2, "relative_difference": rel, "verdict": verdict,
            "equality": bool(rel <= EQUALITY_RTOL), "routes": out, "nc1": nc1.verdict,
            "certificate": cert}


def rigidity_diagnostic(patch, kind="hawking", N=None):
    """Deviations from the rigid models: det J̄, J̄ ∝ Id and Ric^{g,Φ,N}(L,L)."""
    r = patch.rays
    m = patch.n - 2
    N = float(patch.n) if N is None else float(N)
    det_dev = 0.0
    lam_dev = 0.0
    off = 0.0
    eye = np.eye(m)
    T = patch.t
    for b in range(patch.n_rays):
        sl = slice(r.lo[b], r.hi[b] + 1)
        det = r.detJbar[b, sl]
        if kind == "hawking":
            det_dev = max(det_dev, float(np.max(np.abs(det - det[0])) / abs(det[0])))
        else:
            s_ref = patch.meta["cone"]["s_ref"]
            ratio = (T[b, sl] + s_ref) / s_ref
            det_dev = max(det_dev, float(np.max(np.abs(det / ratio ** m - 1))))
        ok = (r.stored >= r.lo[b]) & (r.stored <= r.hi[b])
        Jb = r.J[b][ok][:, :m, :m]
        lam = np.abs(np.linalg.det(Jb)) ** (1.0 / m)
        dev = Jb / lam[:, None, None] - eye
        off = max(off, float(np.max(np.linalg.norm(dev, axis=(1, 2)))))
        if kind == "hawking":
            lam_dev = max(lam_dev, float(np.max(np.abs(Jb - eye))))
        else:
            ratio = (T[b, r.stored[ok]] + s_ref) / s_ref
            lam_dev = max(lam_dev, float(np.max(np.abs(lam / ratio - 1))))
    w = patch.weight
    ric = r.ric_LL.copy()
    ric_dev = None
    if not w.constant and w.smooth == "c2":
        d1, d2 = patch.weight_derivatives()
        ric = ric - d2 - (d1 ** 2 / (N - patch.n) if N > patch.n else 0.0)
    if w.constant or w.smooth == "c2":
        ric_dev = float(np.max(np.abs(np.where(patch.valid_mask(), ric, 0.0))))
    return {"kind": kind, "det_deviation": det_dev, "identity_deviation": off,
            "scale_deviation": lam_dev, "ricci_deviation": ric_dev}


def stability_experiment(base, h, eps_values, build, N, resolutions=(64, 128), weights=None,
                         tol=1e-7, sample_points=None):
    """Worst NC¹ margins of the family g + ε·h against ε and grid resolution.

    ``build(model, weight, steps_per_unit)`` returns a patch; ``weights`` is
    an optional sequence of weight fields (one per ε).
    """
    eps_values = [float(e) for e in eps_values]
    rows = []
    table = {}
    for j, eps in enumerate(eps_values):
        model = base if eps == 0 else perturbed(base, eps, h)
        if sample_points is not None:
            model.check_signature(sample_points)
        w = None if weights is None else weights[j]
        for spu in resolutions:
            patch = build(model, w, spu)
            if sample_points is None:
                model.check_signature(patch.rays.x[patch.valid_mask()][::97])
            rep = nc1_check(patch, CheckConfig(N=N, tol_c=tol))
            table[(eps, spu)] = rep.worst_margin
            rows.append([eps, spu, rep.worst_margin, rep.verdict])
    finest = max(resolutions)
    margins = np.array([table[(e, finest)] for e in eps_values])
    base_margin = None
    if 0.0 in eps_values:
        base_margin = table[(0.0, finest)]
    nz = [e for e in eps_values if e > 0]
    limit = None
    rate = None
    if len(nz) >= 2:
        es = np.array(sorted(nz)[:3])
        ms = np.array([table[(e, finest)] for e in es])
        coef = np.polyfit(es, ms, min(len(es) - 1, 1))
        limit = float(coef[-1])
        d = np.abs(ms - (base_margin if base_margin is not None else limit))
        with np.errstate(divide="ignore", invalid="ignore"):
            r_ = np.log(d[1:] / d[:-1]) / np.log(es[1:] / es[:-1])
        rate = float(np.nanmean(r_)) if np.any(np.isfinite(r_)) else None
    # convergence in resolution: distance to the finest grid must shrink
    mono = True
    res = sorted(resolutions)
    for e in eps_values:
        d = [abs(table[(e, s)] - table[(e, finest)]) for s in res[:-1]]
        mono &= all(d[i + 1] <= d[i] + tol for i in range(len(d) - 1))
    members = [table[(e, finest)] for e in eps_values if e > 0]
    all_pass = bool(np.all(np.array(members) >= -tol)) if members else True
    return {"rows": rows, "eps": eps_values, "margins": margins.tolist(), "base_margin": base_margin,
            "extrapolated_margin": limit, "rate": rate, "resolution_monotone": bool(mono),
            "all_pass": all_pass,
            "limit_passes": None if base_margin is None else bool(base_margin >= -tol)}
