"""Synthetic null energy condition checkers.

NC¹(N): along every generator the profile b = exp(a_z/(N−2)) must be
concave; the test is the three-point chord margin on the ray grid.
NCᵉ(N): the entropy power u(t) = exp(−Ent(μ_t)/(N−1)) along the monotone
interpolation must lie above its endpoint chord.
"""

from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import InvalidN, NotNullConnected, WeightNotSmooth
from .transport import (DensityProfile, FiberedMeasure, check_null_connected, entropy_curve,
                        entropy_power, fiber_references, transport_plan)

POLICIES = ("strict", "margin-report")


@dataclass
class CheckConfig:
    N: float
    tol_c: float = 1e-7
    tol_e: float = 1e-6
    stride: int = 1
    policy: str = "strict"
    n_t: int = 33

    def __post_init__(self):
        if not self.N > 2:
            raise InvalidN("N must exceed 2")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown verdict policy {self.policy!r}")
        if self.stride < 1:
            raise ValueError("stride must be a positive integer")
        if self.n_t < 3:
            raise ValueError("need at least three interpolation times")


@dataclass
class CheckReport:
    check: str
    verdict: str
    worst_margin: float
    worst_location: dict
    tolerance: float
    per_generator: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.verdict == "pass"

    def to_dict(self):
        return asdict(self)


def _verdict(worst, tol):
    return "pass" if worst >= -tol else "fail"


def chord_margins(t, b):
    """(b_i − chord_i) at interior samples, chord through the two neighbours."""
    t = np.asarray(t, float)
    b = np.asarray(b, float)
    if len(t) < 3:
        return np.zeros(0)
    lam = (t[2:] - t[1:-1]) / (t[2:] - t[:-2])
    return b[1:-1] - (lam * b[:-2] + (1 - lam) * b[2:])


def nc1_profiles(patch, N):
    """Per generator (t, b) on its valid window."""
    a = patch.a
    T = patch.t
    r = patch.rays
    out = []
    for z in range(patch.n_rays):
        sl = slice(r.lo[z], r.hi[z] + 1)
        out.append((T[z, sl], np.exp(a[z, sl] / (N - 2))))
    return out


def nc1_check(patch, config):
    """Discrete concavity of exp(a_z/(N−2)) on every generator."""
    N = float(config.N)
    k = int(config.stride)
    rows = []
    worst, loc = np.inf, {"node": None, "t": None}
    for z, (t, b) in enumerate(nc1_profiles(patch, N)):
        t, b = t[::k], b[::k]
        m = chord_margins(t, b)
        focal = patch.rays.focal[z]
        row = {"node": z, "worst_margin": 0.0, "t": None, "samples": int(len(t)),
               "focal": None if not np.isfinite(focal) else float(focal)}
        if len(m):
            m = m / np.max(np.abs(b))
            i = int(np.argmin(m))
            row["worst_margin"] = float(m[i])
            row["t"] = float(t[i + 1])
            if m[i] < worst:
                worst = float(m[i])
                loc = {"node": z, "t": float(t[i + 1])}
        rows.append(row)
    if not np.isfinite(worst):
        worst = 0.0
    return CheckReport("nc1", _verdict(worst, config.tol_c), worst, loc, config.tol_c, rows,
                       {"N": N, "stride": k, "policy": config.policy})


def riccati_diagnostic(patch, config):
    """d = a″ + a′²/(N−2) + Ric^{g,Φ,N}(L,L) along every generator.

    W′ and W″ are the exact traces tr(J̄⁻¹J̄′) and tr(J̄⁻¹J̄″) − tr((J̄⁻¹J̄′)²)
    recorded by the integrator; the weight enters through its directional
    derivatives.  Returns per-generator (t, d) and the maximum of d.
    """
    N = float(config.N)
    n = patch.n
    w = patch.weight
    if w.smooth != "c2":
        raise WeightNotSmooth("the Riccati diagnostic needs a c2 weight")
    if N < n or (N == n and not w.constant):
        raise InvalidN(f"N = {N} is not admissible for n = {n} with this weight")
    r = patch.rays
    if w.constant:
        d1 = np.zeros_like(r.W)
        d2 = np.zeros_like(r.W)
    else:
        d1, d2 = patch.weight_derivatives()
    da = r.dW + d1
    dda = r.ddW + d2
    ric = r.ric_LL - d2
    if N > n:
        ric = ric - d1 ** 2 / (N - n)
    d = dda + da ** 2 / (N - 2) + ric
    curves = []
    worst, loc = -np.inf, {"node": None, "t": None}
    for z in range(patch.n_rays):
        sl = slice(r.lo[z], r.hi[z] + 1)
        dz = d[z, sl]
        tz = patch.t[z, sl]
        curves.append((tz, dz))
        i = int(np.argmax(dz))
        if dz[i] > worst:
            worst = float(dz[i])
            loc = {"node": z, "t": float(tz[i])}
    return {"curves": curves, "max": worst, "location": loc}


def nce_pair_curve(plan, config):
    ts = np.linspace(0.0, 1.0, config.n_t)
    ent = entropy_curve(plan, ts)
    u = entropy_power(ent, config.N - 1)
    chord = (1 - ts) * u[0] + ts * u[-1]
    scale = max(float(np.max(np.abs(u))), 1e-300)
    mc = (u - chord) / scale
    mid = (u[1:-1] - 0.5 * (u[:-2] + u[2:])) / scale
    return ts, ent, u, mc, mid


def nce_check(patch, config, pairs):
    """Endpoint concavity of the entropy power along monotone interpolations."""
    rows = []
    curves = []
    worst, loc = np.inf, {"pair": None, "t": None}
    worst_mid = np.inf
    for j, (mu0, mu1) in enumerate(pairs):
        conn = check_null_connected(mu0, mu1)
        if not conn["null_connected"]:
            raise NotNullConnected(f"pair {j}: fiber masses differ by {conn['max_mismatch']:.3g}")
        plan = transport_plan(mu0, mu1)
        ts, ent, u, mc, mid = nce_pair_curve(plan, config)
        i = int(np.argmin(mc))
        rows.append({"pair": j, "worst_margin": float(mc[i]), "t": float(ts[i]),
                     "midpoint_margin": float(mid.min()) if len(mid) else 0.0,
                     "min_displacement": plan.min_displacement()})
        curves.append((ts, ent, u))
        if mc[i] < worst:
            worst = float(mc[i])
            loc = {"pair": j, "t": float(ts[i])}
        if len(mid):
            worst_mid = min(worst_mid, float(mid.min()))
    if not np.isfinite(worst):
        worst = 0.0
    rep = CheckReport("nce", _verdict(worst, config.tol_e), worst, loc, config.tol_e, rows,
                      {"N": float(config.N), "midpoint_margin": float(worst_mid) if np.isfinite(worst_mid) else 0.0})
    rep.extra["curves"] = curves
    return rep


# -- pair generators -------------------------------------------------------------------
def _ray_window(patch, z):
    r = patch.rays
    return float(patch.t[z, r.lo[z]]), float(patch.t[z, r.hi[z]])


def random_null_connected_pairs(patch, count, rng, min_width=0.05):
    """Pairs of fiber-uniform measures with μ₁ in the causal future of μ₀.

    On each generator μ₀ lives on [α, β] and μ₁ on [α′, β′] with α ≤ α′,
    β ≤ β′; such windows make the monotone map future directed.  Fiber
    masses are random and shared between μ₀ and μ₁.
    """
    refs = fiber_references(patch)
    B = patch.n_rays
    pairs = []
    for _ in range(count):
        w = np.exp(0.3 * rng.standard_normal(B))
        p0, p1 = [], []
        for z in range(B):
            lo, hi = _ray_window(patch, z)
            span = hi - lo
            if span < 4 * min_width or refs[z] is None:
                p0.append(None)
                p1.append(None)
                continue
            e = np.sort(rng.uniform(lo, hi, 4))
            a0, a1 = e[0], e[1] + min_width
            b0 = max(e[2], a0 + min_width)
            b1 = min(max(e[3], a1, b0) + min_width, hi)
            a1 = min(a1, b1 - min_width)
            b0 = min(b0, b1)
            a0 = min(a0, a1)
            p0.append(DensityProfile.uniform(refs[z], a0, b0, w[z]))
            p1.append(DensityProfile.uniform(refs[z], a1, b1, w[z]))
        mu0 = FiberedMeasure(patch, p0)
        mu1 = FiberedMeasure(patch, p1)
        m = mu0.total_mass
        pairs.append((FiberedMeasure(patch, [None if p is None else p.scaled(1 / m) for p in p0]),
                      FiberedMeasure(patch, [None if p is None else p.scaled(1 / m) for p in p1])))
    return pairs


def thin_window_pairs(patch, N, node, t_star, deltas=(0.05, 0.1, 0.2, 0.4), width_ratio=0.1):
    """Pairs concentrated on one generator, straddling the parameter t_star.

    μ₀ sits on a window of width ε₀ at t_star − δ, μ₁ on width ε₁ at
    t_star + δ with ε₁/ε₀ = b(t_star + δ)/b(t_star − δ).  When b is convex
    near t_star this choice makes the entropy power dip below its chord.
    """
    refs = fiber_references(patch)
    ref = refs[node]
    lo, hi = _ray_window(patch, node)
    pairs = []
    for d in deltas:
        if 2.4 * d >= hi - lo:
            continue
        c = float(np.clip(t_star, lo + 1.2 * d, hi - 1.2 * d))
        x0, x1 = c - d, c + d
        e0 = width_ratio * d
        e1 = e0 * float(np.exp((ref.a(x1) - ref.a(x0)) / (N - 2)))
        w0 = (x0 - e0 / 2, x0 + e0 / 2)
        w1 = (x1 - e1 / 2, x1 + e1 / 2)
        if w0[0] < lo or w1[1] > hi or w0[1] >= w1[0]:
            continue
        prof = [None] * patch.n_rays
        q0 = list(prof)
        q1 = list(prof)
        q0[node] = DensityProfile.uniform(ref, *w0)
        q1[node] = DensityProfile.uniform(ref, *w1)
        pairs.append((FiberedMeasure(patch, q0).normalized(), FiberedMeasure(patch, q1).normalized()))
    return pairs


def rescaling_invariance_check(patch, config, phis):
    """NC¹ reports before and after rescaling L by each φ."""
    from .hypersurface import rescale_transverse
    base = nc1_check(patch, config)
    results = []
    ok = True
    for phi in phis:
        new = rescale_transverse(patch, phi)
        rep = nc1_check(new, config)
        same_v = rep.verdict == base.verdict
        # violation locations must map by t ↦ t/φ(z) generator by generator
        loc_err = 0.0
        for a, b in zip(base.per_generator, rep.per_generator):
            if a["worst_margin"] < -config.tol_c and a["t"] is not None:
                f = new.phi_scale[a["node"]] / patch.phi_scale[a["node"]]
                t2 = np.inf if b["t"] is None else b["t"]
                loc_err = max(loc_err, abs(t2 - a["t"] / f))
        mdiff = max(abs(a["worst_margin"] - b["worst_margin"])
                    for a, b in zip(base.per_generator, rep.per_generator))
        good = same_v and loc_err <= 1e-9 * (1 + max(abs(r["t"] or 0) for r in base.per_generator))
        ok &= good
        results.append({"verdict": rep.verdict, "same_verdict": same_v,
                        "location_error": float(loc_err), "margin_difference": float(mdiff),
                        "worst_margin": rep.worst_margin})
    return {"invariant": bool(ok), "base": base, "runs": results}
