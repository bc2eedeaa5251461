"""Degenerate optimal transport along the generators of a patch.

Fiber measures are μ_z = ρ_z e^{a_z(t)} dt with ρ_z piecewise constant on
cells.  The reference primitive G(t) = ∫ e^{a} is evaluated with Gauss–
Legendre on each grid interval of a cubic spline of a, so CDFs, quantiles
and the monotone map T = F₁⁻¹∘F₀ are exact up to the spline model of a.
Entropies along T_t = (1−t)id + tT use the Lagrangian change of variables

    Ent(μ_t) = ∫ log[ρ₀(x) e^{a(x)} / (T_t′(x) e^{a(T_t x)})] dμ₀(x).
"""

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import roots_legendre
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import EmptySupport, MassMismatch, NonInjective, NotAbsolutelyContinuous

MASS_RTOL = 1e-9
TINY = 1e-300
_GX, _GW = roots_legendre(8)


class FiberReference:
    """Reference density e^{a(t)} dt on one generator window."""

    def __init__(self, t, a):
        t = np.asarray(t, float)
        a = np.asarray(a, float)
        if len(t) < 2:
            raise EmptySupport("reference window needs at least two samples")
        self.t = t
        self.lo, self.hi = float(t[0]), float(t[-1])
        if len(t) >= 4:
            self.spline = CubicSpline(t, a)
        else:
            self.spline = lambda s, nu=0, _t=t, _a=a: (np.interp(s, _t, _a) if nu == 0 else 0 * s)
        # cumulative primitive on the nodes
        h = np.diff(t)
        mid = 0.5 * (t[1:] + t[:-1])
        pts = mid[:, None] + 0.5 * h[:, None] * _GX[None, :]
        vals = np.exp(self.a(pts))
        self.G_nodes = np.concatenate([[0.0], np.cumsum(0.5 * h * (vals @ _GW))])

    @classmethod
    def lebesgue(cls, lo, hi, n=8):
        return cls(np.linspace(lo, hi, n), np.zeros(n))

    def a(self, s):
        return self.spline(s)

    def density(self, s):
        return np.exp(self.a(s))

    def G(self, s):
        """∫_{lo}^{s} e^{a}, vectorized; s is clipped to the window."""
        s = np.clip(np.asarray(s, float), self.lo, self.hi)
        j = np.clip(np.searchsorted(self.t, s, side="right") - 1, 0, len(self.t) - 2)
        left = self.t[j]
        half = 0.5 * (s - left)
        pts = (left + half)[..., None] + half[..., None] * _GX
        return self.G_nodes[j] + half * (np.exp(self.a(pts)) @ _GW)

    def G_inv(self, y):
        """Inverse primitive by safeguarded Newton inside the bracketing interval."""
        y = np.clip(np.asarray(y, float), 0.0, self.G_nodes[-1])
        j = np.clip(np.searchsorted(self.G_nodes, y, side="right") - 1, 0, len(self.t) - 2)
        lo = self.t[j].copy() if np.ndim(y) else float(self.t[j])
        hi = self.t[j + 1].copy() if np.ndim(y) else float(self.t[j + 1])
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        x = lo + (hi - lo) * np.clip((y - self.G_nodes[j]) / np.maximum(self.G_nodes[j + 1] - self.G_nodes[j], TINY), 0, 1)
        for _ in range(50):
            f = self.G(x) - y
            lo = np.where(f < 0, x, lo)
            hi = np.where(f > 0, x, hi)
            step = f / np.maximum(self.density(x), TINY)
            xn = x - step
            bad = (xn < lo) | (xn > hi)
            xn = np.where(bad, 0.5 * (lo + hi), xn)
            xn = np.where(f == 0, x, xn)
            done = np.all(np.abs(xn - x) <= 1e-14 * (1 + np.abs(x)))
            x = xn
            if done:
                break
        return x

    def mass(self, lo, hi):
        return float(self.G(hi) - self.G(lo))


class DensityProfile:
    """Density ρ w.r.t. the reference e^{a} dt, constant on cells ``edges``."""

    def __init__(self, reference, edges, rho):
        edges = np.asarray(edges, float)
        rho = np.asarray(rho, float)
        if edges.ndim != 1 or len(edges) != len(rho) + 1 or np.any(np.diff(edges) <= 0):
            raise ValueError("edges must be increasing with one more entry than rho")
        if np.any(rho < 0) or not np.all(np.isfinite(rho)):
            raise ValueError("densities must be finite and nonnegative")
        if edges[0] < reference.lo - 1e-12 or edges[-1] > reference.hi + 1e-12:
            raise NotAbsolutelyContinuous("profile carries mass outside the reference window")
        rho = np.where(rho < TINY, 0.0, rho)
        self.ref = reference
        self.edges = np.clip(edges, reference.lo, reference.hi)
        self.rho = rho
        self.cell_ref = np.diff(reference.G(self.edges))
        self.cell_mass = self.rho * self.cell_ref
        self.cum = np.concatenate([[0.0], np.cumsum(self.cell_mass)])
        self.mass = float(self.cum[-1])

    @classmethod
    def uniform(cls, reference, lo, hi, mass=1.0):
        m = reference.mass(lo, hi)
        if m <= 0:
            raise EmptySupport("empty window")
        return cls(reference, [lo, hi], [mass / m])

    def scaled(self, factor):
        return DensityProfile(self.ref, self.edges, self.rho * factor)

    @property
    def support(self):
        nz = np.nonzero(self.rho > 0)[0]
        if len(nz) == 0:
            return None
        return float(self.edges[nz[0]]), float(self.edges[nz[-1] + 1])

    def density(self, s):
        s = np.asarray(s, float)
        j = np.searchsorted(self.edges, s, side="right") - 1
        inside = (j >= 0) & (j < len(self.rho))
        return np.where(inside, self.rho[np.clip(j, 0, len(self.rho) - 1)], 0.0)

    def cdf(self, s):
        s = np.asarray(s, float)
        Gs = self.ref.G(s)
        Ge = self.ref.G(self.edges)
        j = np.clip(np.searchsorted(self.edges, s, side="right") - 1, 0, len(self.rho) - 1)
        part = self.rho[j] * (np.clip(Gs, Ge[j], Ge[j + 1]) - Ge[j])
        out = self.cum[j] + part
        out = np.where(s < self.edges[0], 0.0, out)
        return np.where(s >= self.edges[-1], self.mass, out)

    def quantile(self, p):
        """Smallest s with cdf(s) ≥ p, for p in [0, mass]."""
        p = np.clip(np.asarray(p, float), 0.0, self.mass)
        pos = np.nonzero(self.cell_mass > 0)[0]
        if len(pos) == 0:
            raise EmptySupport("profile has no mass")
        j = np.searchsorted(self.cum[1:], p, side="left")
        j = np.clip(j, pos[0], pos[-1])
        # skip empty cells
        j = pos[np.clip(np.searchsorted(pos, j), 0, len(pos) - 1)]
        Ge = self.ref.G(self.edges)
        y = Ge[j] + (p - self.cum[j]) / self.rho[j]
        return self.ref.G_inv(np.clip(y, Ge[j], Ge[j + 1]))

    def entropy(self):
        """∫ ρ log ρ e^{a} dt (0·log 0 = 0)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(self.rho > 0, self.cell_mass * np.log(np.where(self.rho > 0, self.rho, 1.0)), 0.0)
        return float(np.sum(terms))


class MonotonePlan:
    """T = F₁⁻¹∘F₀ between two equal-mass profiles on one generator."""

    def __init__(self, p0, p1):
        self.p0 = p0
        self.p1 = p1
        self.ref = p0.ref
        self.mass = p0.mass
        # breakpoints of T: cells of p0 and preimages of the cells of p1
        pre = p0.quantile(np.clip(p1.cum, 0, p0.mass))
        sup = p0.support
        bp = np.unique(np.concatenate([p0.edges, pre]))
        bp = bp[(bp >= sup[0]) & (bp <= sup[1])]
        keep = np.concatenate([[True], np.diff(bp) > 1e-12 * (1 + np.abs(bp[1:]))])
        bp = bp[keep]
        bp[-1] = sup[1]
        self.breaks = bp

    def T(self, x):
        x = np.asarray(x, float)
        return self.p1.quantile(self.p0.cdf(x))

    def T_inverse(self, y):
        return self.p0.quantile(self.p1.cdf(y))

    def dT(self, x, y=None):
        """T′(x) = ρ₀(x)e^{a(x)} / (ρ₁(Tx) e^{a(Tx)})."""
        x = np.asarray(x, float)
        y = self.T(x) if y is None else y
        num = self.p0.density(x) * self.ref.density(x)
        den = self.p1.density(y) * self.ref.density(y)
        return num / np.maximum(den, TINY)

    def displacement(self, x):
        return self.T(x) - np.asarray(x, float)

    def nodes(self, max_len=1.0 / 64):
        """Quadrature nodes and μ₀-weights on the support of ρ₀."""
        xs, ws = [], []
        for a, b in zip(self.breaks[:-1], self.breaks[1:]):
            if b <= a:
                continue
            k = max(1, int(np.ceil((b - a) / max_len)))
            e = np.linspace(a, b, k + 1)
            mid = 0.5 * (e[1:] + e[:-1])
            half = 0.5 * np.diff(e)
            pts = (mid[:, None] + half[:, None] * _GX[None, :]).ravel()
            wt = (half[:, None] * _GW[None, :]).ravel()
            xs.append(pts)
            ws.append(wt)
        x = np.concatenate(xs)
        w = np.concatenate(ws) * self.p0.density(x) * self.ref.density(x)
        return x, w

    def entropy_at(self, ts, max_len=1.0 / 64):
        """Fiber entropies ∫ρ_t log ρ_t dm along T_t for each t in ts."""
        x, w = self.nodes(max_len)
        Tx = self.T(x)
        dT = self.dT(x, Tx)
        logq0 = np.log(np.maximum(self.p0.density(x), TINY)) + self.ref.a(x)
        ts = np.atleast_1d(np.asarray(ts, float))[:, None]
        jac = (1 - ts) + ts * dT[None, :]
        if np.any(jac <= 0):
            bad = float(ts[np.nonzero(np.any(jac <= 0, axis=1))[0][0], 0])
            raise NonInjective(f"T_t not injective at t = {bad}")
        y = (1 - ts) * x[None, :] + ts * Tx[None, :]
        out = (w * (logq0[None, :] - np.log(jac) - self.ref.a(y))).sum(axis=1)
        return np.array(out)

    def pushforward_cdf(self, t, y):
        """CDF of (T_t)_# μ₀ at y, inverting T_t by bisection."""
        y = np.atleast_1d(np.asarray(y, float))
        sup = self.p0.support
        lo = np.full(y.shape, sup[0])
        hi = np.full(y.shape, sup[1])
        Tt = lambda x: (1 - t) * x + t * self.T(x)
        below = y < Tt(lo)
        above = y >= Tt(hi)
        floor = 4e-16 * max(abs(sup[0]), abs(sup[1]), 1.0)
        for _ in range(80):
            if np.max(hi - lo) <= floor:
                break
            mid = 0.5 * (lo + hi)
            left = Tt(mid) <= y
            lo = np.where(left, mid, lo)
            hi = np.where(left, hi, mid)
        out = self.p0.cdf(lo)
        out = np.where(below, 0.0, out)
        return np.where(above, self.mass, out)


def _match_masses(p0, p1, rtol=MASS_RTOL):
    if p0.mass <= 0 or p1.mass <= 0:
        raise EmptySupport("profile without mass")
    if abs(p0.mass - p1.mass) > rtol * max(p0.mass, p1.mass):
        raise MassMismatch(f"fiber masses differ: {p0.mass:.12g} vs {p1.mass:.12g}")
    if p1.mass != p0.mass:
        p1 = p1.scaled(p0.mass / p1.mass)
    return p1


def monotone_rearrangement(p0, p1, rtol=MASS_RTOL):
    """Monotone plan between two profiles of equal mass on one generator."""
    p1 = _match_masses(p0, p1, rtol)
    return MonotonePlan(p0, p1)


class MonotoneRearrangement(BaseEstimator):
    """Estimator wrapper: fit on a pair of profiles, transform points by T.

    >>> ref = FiberReference.lebesgue(0.0, 4.0)
    >>> est = MonotoneRearrangement().fit(DensityProfile.uniform(ref, 0, 1),
    ...                                   DensityProfile.uniform(ref, 2, 4))
    >>> float(est.transform([0.5])[0])
    3.0
    """

    def __init__(self, mass_rtol=MASS_RTOL):
        self.mass_rtol = mass_rtol

    def fit(self, X, y):
        self.plan_ = monotone_rearrangement(X, y, self.mass_rtol)
        return self

    def transform(self, X):
        check_is_fitted(self, "plan_")
        return self.plan_.T(np.asarray(X, float))

    def inverse_transform(self, X):
        check_is_fitted(self, "plan_")
        return self.plan_.T_inverse(np.asarray(X, float))

    def interpolate(self, t, X):
        check_is_fitted(self, "plan_")
        X = np.asarray(X, float)
        return (1 - t) * X + t * self.plan_.T(X)


# -- section-level measures ---------------------------------------------------------
@dataclass
class FiberedMeasure:
    """Measure on a patch: one profile (or None) per generator.

    Fiber masses are per unit section area; the total mass is
    Σ_z w_z·√det ḡ_z·mass_z with the section quadrature.
    """

    patch: object
    profiles: list

    def fiber_masses(self):
        return np.array([0.0 if p is None else p.mass for p in self.profiles])

    @property
    def total_mass(self):
        return self.patch.section.integrate(self.fiber_masses())

    def normalized(self):
        m = self.total_mass
        if m <= 0:
            raise EmptySupport("measure has no mass")
        return FiberedMeasure(self.patch, [None if p is None else p.scaled(1.0 / m) for p in self.profiles])

    def integrate_transverse(self, f):
        """∫ f(z) dμ for f a function of the generator label only."""
        return self.patch.section.integrate(np.asarray(f, float) * self.fiber_masses())


def fiber_references(patch):
    """One FiberReference per generator on its valid window."""
    if "fiber_refs" not in patch._cache:
        r = patch.rays
        T = patch.t
        a = patch.a
        refs = []
        for b in range(patch.n_rays):
            lo, hi = r.lo[b], r.hi[b]
            refs.append(FiberReference(T[b, lo:hi + 1], a[b, lo:hi + 1]) if hi > lo else None)
        patch._cache["fiber_refs"] = refs
    return patch._cache["fiber_refs"]


def fiber_uniform(patch, windows, fiber_masses=None, normalize=True):
    """Measure uniform w.r.t. the reference on per-ray windows [lo, hi]."""
    refs = fiber_references(patch)
    B = patch.n_rays
    windows = np.broadcast_to(np.asarray(windows, float), (B, 2))
    masses = np.ones(B) if fiber_masses is None else np.broadcast_to(np.asarray(fiber_masses, float), (B,))
    profs = []
    for b in range(B):
        if masses[b] <= 0:
            profs.append(None)
            continue
        profs.append(DensityProfile.uniform(refs[b], windows[b, 0], windows[b, 1], masses[b]))
    mu = FiberedMeasure(patch, profs)
    return mu.normalized() if normalize else mu


def check_null_connected(mu0, mu1, tol=1e-9):
    """Verdict and max per-generator fiber-mass mismatch."""
    m0 = mu0.fiber_masses()
    m1 = mu1.fiber_masses()
    mism = float(np.abs(m0 - m1).max())
    scale = max(float(np.abs(m0).max()), float(np.abs(m1).max()), TINY)
    return {"null_connected": bool(mism <= tol * scale), "max_mismatch": mism}


@dataclass
class TransportPlan:
    """Per-generator monotone plans between two null-connected measures."""

    mu0: FiberedMeasure
    mu1: FiberedMeasure
    plans: list

    def min_displacement(self):
        out = np.inf
        for p in self.plans:
            if p is None:
                continue
            x = p.breaks
            out = min(out, float(np.min(p.displacement(x))))
        return out


def transport_plan(mu0, mu1, rtol=MASS_RTOL):
    from .errors import NotNullConnected
    m0 = mu0.fiber_masses()
    m1 = mu1.fiber_masses()
    plans = []
    for b, (p0, p1) in enumerate(zip(mu0.profiles, mu1.profiles)):
        if p0 is None or p0.mass == 0:
            if p1 is not None and p1.mass > rtol * max(m1.max(), TINY):
                raise NotNullConnected(f"fiber {b} carries mass only in the target")
            plans.append(None)
            continue
        if p1 is None:
            raise NotNullConnected(f"fiber {b} carries mass only in the source")
        plans.append(monotone_rearrangement(p0, p1, rtol))
    return TransportPlan(mu0, mu1, plans)


@dataclass
class InterpolatedMeasure:
    """μ_t = (T_t)_# μ₀ fiberwise."""

    plan: TransportPlan
    t: float

    def fiber_masses(self):
        return np.array([0.0 if p is None else p.mass for p in self.plan.plans])

    @property
    def total_mass(self):
        return self.plan.mu0.patch.section.integrate(self.fiber_masses())

    def cdf(self, b, y):
        p = self.plan.plans[b]
        return p.pushforward_cdf(self.t, y)

    def integrate_transverse(self, f):
        return self.plan.mu0.patch.section.integrate(np.asarray(f, float) * self.fiber_masses())


def interpolate(plan, t):
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    return InterpolatedMeasure(plan, float(t))


def entropy(mu, reference=None):
    """Ent(μ | m) = ∫ ρ log ρ dm for fibered or interpolated measures.

    ``reference`` is accepted for symmetry with the mathematical signature;
    the reference measure is the patch's rigged measure e^{a} dt d𝓗.
    """
    if isinstance(mu, InterpolatedMeasure):
        return float(entropy_curve(mu.plan, [mu.t])[0])
    sec = mu.patch.section
    vals = np.array([0.0 if p is None else p.entropy() for p in mu.profiles])
    return sec.integrate(vals)


def entropy_curve(plan, ts, max_len=1.0 / 64):
    """Ent(μ_t) for each t, reduced over fibers in node order."""
    sec = plan.mu0.patch.section
    ts = np.atleast_1d(np.asarray(ts, float))
    per = np.zeros((len(plan.plans), len(ts)))
    for b, p in enumerate(plan.plans):
        if p is not None:
            per[b] = p.entropy_at(ts, max_len)
    return np.array([sec.integrate(per[:, i]) for i in range(len(ts))])


def entropy_power(ent, divisor):
    """u = exp(−Ent/divisor); +∞ entropy gives 0."""
    if divisor <= 0:
        raise ValueError("divisor must be positive")
    ent = np.asarray(ent, float)
    with np.errstate(over="ignore"):
        out = np.where(np.isposinf(ent), 0.0, np.exp(-ent / divisor))
    return float(out) if out.ndim == 0 else out


def entropy_curve_rows(ts, ent, u):
    return [[float(t), float(e), float(v)] for t, e, v in zip(ts, ent, u)]
