"""Null hypersurface patches generated from a spacelike cross-section.

A patch stores one generator per section quadrature node.  Generator
parameters are affine for the null field L given on the section and extended
by parallel transport, so Ψ_L(z, t) = exp_z(tL).
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline
from scipy.special import gamma as gamma_fn
from scipy.special import roots_gegenbauer, roots_legendre

from .errors import DegenerateSection, NonPositiveScale, NullDefect, OutOfWindow
from .nullgeo import (
    RayStart,
    _integrate_dir,
    _pack,
    adapted_frames,
    gdot,
    orthonormal_frame,
    propagate_jacobi,
)
from .spacetime import WeightField

DEFAULT_STEPS = 128


def sphere_area(m):
    """Area ω_m of the unit round m-sphere, 2π^{(m+1)/2}/Γ((m+1)/2)."""
    m = float(m)
    return 2.0 * np.pi ** ((m + 1) / 2.0) / gamma_fn((m + 1) / 2.0)


# -- quadrature -------------------------------------------------------------------
def sphere_quadrature(m, n_lat, n_lon):
    """Product rule on the unit m-sphere in polar angles (θ_1…θ_{m−1}, φ).

    Polar angles use Gauss–Gegenbauer nodes in cos θ (exact against the
    sin^k θ area factors), the azimuth a uniform trapezoid rule.  Returns
    nodes u (M, m), weights w.r.t. du (M,), the embedding ω(u) (M, m+1), its
    derivatives dω/du (M, m, m+1) and the grid shape.
    """
    if m < 1:
        raise ValueError("sphere dimension must be >= 1")
    phis = 2 * np.pi * (np.arange(n_lon) + 0.5) / n_lon
    wphi = np.full(n_lon, 2 * np.pi / n_lon)
    axes = []
    wts = []
    for j in range(1, m):
        power = m - j                      # area factor sin^power θ_j
        if power == 1:
            xg, wg = roots_legendre(n_lat)
        else:
            xg, wg = roots_gegenbauer(n_lat, power / 2.0)
        order = np.argsort(-xg)
        th = np.arccos(xg[order])
        axes.append(th)
        wts.append(wg[order] / np.sin(th) ** power)
    axes.append(phis)
    wts.append(wphi)
    mesh = np.meshgrid(*axes, indexing="ij")
    wmesh = np.meshgrid(*wts, indexing="ij")
    u = np.stack([a.ravel() for a in mesh], axis=1)
    w = np.prod(np.stack([a.ravel() for a in wmesh], axis=1), axis=1)
    om, dom = sphere_embedding(u)
    return u, w, om, dom, tuple(len(a) for a in axes)


def sphere_embedding(u):
    """Unit-sphere embedding in polar angles and its parameter derivatives."""
    u = np.atleast_2d(u)
    M, m = u.shape
    om = np.zeros((M, m + 1))
    dom = np.zeros((M, m, m + 1))
    prod = np.ones(M)
    dprod = np.zeros((M, m))
    for j in range(m):
        a = u[:, j]
        if j < m - 1:
            c, s = np.cos(a), np.sin(a)
            om[:, j] = prod * c
            dom[:, :, j] = dprod * c[:, None]
            dom[:, j, j] = -prod * s
            newd = dprod * s[:, None]
            newd[:, j] = prod * c
            prod, dprod = prod * s, newd
        else:
            c, s = np.cos(a), np.sin(a)
            om[:, j] = prod * c
            om[:, j + 1] = prod * s
            dom[:, :, j] = dprod * c[:, None]
            dom[:, :, j + 1] = dprod * s[:, None]
            dom[:, j, j] = -prod * s
            dom[:, j, j + 1] = prod * c
    return om, dom


def box_quadrature(bounds, sizes):
    """Tensor Gauss–Legendre rule on a parameter box."""
    axes, wts = [], []
    for (lo, hi), k in zip(bounds, sizes):
        xg, wg = roots_legendre(k)
        axes.append(0.5 * (hi - lo) * xg + 0.5 * (hi + lo))
        wts.append(0.5 * (hi - lo) * wg)
    mesh = np.meshgrid(*axes, indexing="ij")
    wmesh = np.meshgrid(*wts, indexing="ij")
    u = np.stack([a.ravel() for a in mesh], axis=1)
    w = np.prod(np.stack([a.ravel() for a in wmesh], axis=1), axis=1)
    return u, w, tuple(sizes)


# -- cross-sections ----------------------------------------------------------------
@dataclass
class CrossSectionGrid:
    """Quadrature nodes of a spacelike codimension-2 section with null normal L.

    ``tangents[i, a]`` is ∂f/∂u_a at node i, ``dL[i, a]`` = ∇_{∂f/∂u_a} L.
    Integrals over the section are Σ weights·area·(integrand).
    """

    u: np.ndarray
    weights: np.ndarray
    x: np.ndarray
    tangents: np.ndarray
    L: np.ndarray
    dL: np.ndarray
    area: np.ndarray = None
    shape: tuple = ()
    kind: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.area is None:
            gram = np.einsum("bia,bac,bjc->bij", self.tangents, self.metric, self.tangents)
            ev = np.linalg.eigvalsh(gram)
            if np.any(ev[:, 0] <= 1e-14 * np.maximum(ev[:, -1], 1e-300)):
                raise DegenerateSection("induced metric is not positive definite at a node")
            self.area = np.sqrt(np.linalg.det(gram))

    @property
    def metric(self):
        return self.meta["g"]

    @property
    def size(self):
        return len(self.weights)

    def integrate(self, values):
        """Σ_z w(z)·√det ḡ(z)·values(z) in a fixed node order."""
        return float(np.sum(self.weights * self.area * np.asarray(values, float)))

    def total_area(self):
        return self.integrate(np.ones(self.size))


def _fd_u(func, u, h):
    """Fourth-order differences of func(u) -> (M, k) along each u axis."""
    out = []
    for a in range(u.shape[1]):
        acc = 0.0
        for s, c in ((-2, 1 / 12), (-1, -8 / 12), (1, 8 / 12), (2, -1 / 12)):
            uu = u.copy()
            uu[:, a] += s * h
            acc = acc + c * np.asarray(func(uu), float)
        out.append(acc / h)
    return np.stack(out, axis=1)


def section_from_embedding(model, embed, normal, u, weights, shape=(), kind="custom", fd_step=1e-3,
                           meta=None):
    """Cross-section from an embedding f(u) and a null normal L(u).

    Tangents and ∂L/∂u come from fourth-order differences in u, and
    ∇_{∂_a f} L = ∂_a L + Γ(∂_a f, L).
    """
    u = np.atleast_2d(np.asarray(u, float))
    x = np.asarray(embed(u), float)
    model.require_chart(x)
    L = np.asarray(normal(u), float)
    T = _fd_u(embed, u, fd_step)
    dLdu = _fd_u(normal, u, fd_step)
    gam = model.christoffel(x)
    dL = dLdu + np.einsum("bkij,bai,bj->bak", gam, T, L)
    g = model.metric(x)
    info = {"g": g}
    info.update(meta or {})
    return CrossSectionGrid(u=u, weights=np.asarray(weights, float), x=x, tangents=T, L=L, dL=dL,
                            shape=shape, kind=kind, meta=info)


def lemaitre_horizon_section(model, n_lat=8, n_lon=16, tau0=0.0, c=1.0):
    """Horizon section τ = τ0, ρ − τ = 2r_S/3 of Schwarzschild–Lemaître, L = c(∂τ + ∂ρ)."""
    r_S = model.params["r_S"]
    u, w, _, _, shape = sphere_quadrature(2, n_lat, n_lon)

    def embed(uu):
        M = len(uu)
        return np.stack([np.full(M, tau0), np.full(M, tau0 + 2 * r_S / 3), uu[:, 0], uu[:, 1]], axis=1)

    def normal(uu):
        out = np.zeros((len(uu), 4))
        out[:, 0] = c
        out[:, 1] = c
        return out

    return section_from_embedding(model, embed, normal, u, w, shape, kind="horizon",
                                  meta={"tau0": tau0, "c": c})


def product_horizon_section(model, n_lat=8, n_lon=16, t0=0.0, c=1.0):
    """Section {t = x = t0} × Σ of Σ² × M², with L = c(∂t + ∂x)."""
    surface = model.params.get("surface", "sphere")
    if surface == "sphere":
        u, w, _, _, shape = sphere_quadrature(2, n_lat, n_lon)
    else:
        u, w, shape = box_quadrature([(0.0, 1.0), (0.0, 1.0)], (n_lat, n_lon))

    def embed(uu):
        M = len(uu)
        return np.stack([np.full(M, t0), np.full(M, t0), uu[:, 0], uu[:, 1]], axis=1)

    def normal(uu):
        out = np.zeros((len(uu), 4))
        out[:, 0] = c
        out[:, 1] = c
        return out

    return section_from_embedding(model, embed, normal, u, w, shape, kind="horizon",
                                  meta={"t0": t0, "c": c})


def null_plane_section(model, sizes=(8, 8), box=None, t0=0.0):
    """Flat piece of section {x⁰ = t0, x¹ = 0} with L normalized to g(L, ∂₀) = −1."""
    n = model.n
    box = box or [(-0.5, 0.5)] * (n - 2)
    u, w, shape = box_quadrature(box, sizes)

    def embed(uu):
        M = len(uu)
        return np.concatenate([np.full((M, 1), t0), np.zeros((M, 1)), uu], axis=1)

    def normal(uu):
        x = embed(uu)
        g = model.metric(x)
        out = np.zeros((len(uu), n))
        out[:, 0] = 1.0
        out[:, 1] = 1.0 / np.sqrt(g[:, 1, 1])
        return out / (-g[:, 0, 0] * out[:, 0])[:, None]

    return section_from_embedding(model, embed, normal, u, w, shape, kind="plane")


def light_cone_section(model, p, n_lat=8, n_lon=16, s_ref=1.0, steps_per_unit=DEFAULT_STEPS, frame=None):
    """Slice at affine radius s_ref of the future light cone of p.

    Generators are γ(s) = exp_p(s·k(ω)) with k(ω) = e_0 + Σ ω_a e_a in an
    orthonormal frame at p.  The slice tangents and ∇L come from tip Jacobi
    fields Y(0) = 0, Y'(0) = ∂k/∂u integrated up to s_ref.
    """
    n = model.n
    p = model.require_chart(np.asarray(p, float))
    F = orthonormal_frame(model, p) if frame is None else np.asarray(frame, float)
    u, w, om, dom, shape = sphere_quadrature(n - 2, n_lat, n_lon)
    M = len(u)
    kE = np.concatenate([np.ones((M, 1)), om], axis=1)
    k = kE @ F.T
    J0 = np.zeros((M, n, n))
    Jd0 = np.zeros((M, n, n))
    Jd0[:, :n - 2, 1:] = dom
    Jd0[:, n - 2] = kE
    start = RayStart(x=np.tile(p, (M, 1)), k=k, E=np.tile(F, (M, 1, 1)), J=J0, Jd=Jd0)
    steps = max(1, int(np.ceil(s_ref * steps_per_unit - 1e-9)))
    y0 = _pack(start.x, start.k, start.E, start.J, start.Jd)
    xs, ks, scal, _, _, big, dead = _integrate_dir(model, y0, s_ref / steps, steps, steps, 0)
    if np.any(dead < steps):
        raise DegenerateSection("cone generators leave the chart before the reference slice")
    nn = n * n
    E = big[-1][:, :nn].reshape(M, n, n)
    J = big[-1][:, nn:2 * nn].reshape(M, n, n)
    Jd = big[-1][:, 2 * nn:].reshape(M, n, n)
    T = np.einsum("bai,bji->bja", E, J[:, :n - 2])
    dL = np.einsum("bai,bji->bja", E, Jd[:, :n - 2])
    x = xs[:, -1]
    g = model.metric(x)
    return CrossSectionGrid(u=u, weights=w, x=x, tangents=T, L=ks[:, -1], dL=dL, shape=shape,
                            kind="cone", meta={"g": g, "tip": p, "s_ref": float(s_ref), "tip_frame": F})


# -- patches ------------------------------------------------------------------------
@dataclass
class NullHypersurfacePatch:
    model: object
    section: CrossSectionGrid
    weight: WeightField
    rays: object                 # JacobiSamples
    U0: np.ndarray               # J'(0) per ray, frame components
    frames: np.ndarray           # adapted frames at t = 0 (columns)
    s_offset: np.ndarray = 0.0   # weight parameter s at t = 0, per ray
    s_rate: np.ndarray = None    # ds/dt per ray (weight parameter)
    phi_scale: np.ndarray = None  # transverse rescaling factor applied to L
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        B = self.section.size
        if self.s_rate is None:
            self.s_rate = np.ones(B)
        if self.phi_scale is None:
            self.phi_scale = np.ones(B)
        self.s_offset = np.broadcast_to(np.asarray(self.s_offset, float), (B,)).copy()
        self._cache = {}

    @property
    def n(self):
        return self.model.n

    @property
    def n_rays(self):
        return self.section.size

    @property
    def t(self):
        return self.rays.T

    @property
    def W(self):
        return self.rays.W

    @property
    def s(self):
        """Weight parameter s along each ray."""
        return self.s_offset[:, None] + self.rays.t[None, :] * (self.rays.scale * self.s_rate)[:, None]

    @property
    def phi(self):
        if "phi" not in self._cache:
            self._cache["phi"] = self.weight.value(self.rays.x, self.s)
        return self._cache["phi"]

    @property
    def a(self):
        """Weighted log-density a_z(t) = Φ(Ψ_L(z,t)) + W_L(z,t)."""
        return self.phi + self.rays.W

    def valid_mask(self):
        return self.rays.valid_mask()

    def window(self, b):
        return self.rays.lo[b], self.rays.hi[b]

    def weight_derivatives(self):
        """(dΦ/dt, d²Φ/dt²) along each ray (smooth weights)."""
        if "dphi" not in self._cache:
            from .spacetime import directional_weight_derivatives
            x = self.rays.x
            k = self.rays.k
            B, m, n = x.shape
            rate = np.broadcast_to(self.s_rate[:, None], (B, m))
            d1, d2 = directional_weight_derivatives(
                self.model, self.weight, x.reshape(-1, n), k.reshape(-1, n),
                self.s.reshape(-1), rate.reshape(-1))
            self._cache["dphi"] = (d1.reshape(B, m), d2.reshape(B, m))
        return self._cache["dphi"]

    def state_at(self, tq):
        """Full ray states (x, k, E, J, J′) at per-ray parameters tq."""
        tq = np.broadcast_to(np.asarray(tq, float), (self.n_rays,))
        r = self.rays
        tt = r.t[r.stored]
        B = self.n_rays
        n = self.n
        ys = np.empty((B, 2 * n + 3 * n * n))
        dts = np.empty(B)
        for b in range(B):
            tb = tq[b] / r.scale[b]
            lo_t, hi_t = r.t[r.lo[b]], r.t[r.hi[b]]
            if tb < lo_t - 1e-12 or tb > hi_t + 1e-12:
                raise OutOfWindow(f"parameter {tq[b]:.6g} outside the window of ray {b}")
            ok = (r.stored >= r.lo[b]) & (r.stored <= r.hi[b])
            cand = np.nonzero(ok)[0]
            j = cand[np.argmin(np.abs(tt[cand] - tb))]
            i = r.stored[j]
            ys[b] = np.concatenate([r.x[b, i], r.k[b, i], r.E[b, j].ravel(), r.J[b, j].ravel(), r.Jd[b, j].ravel()])
            dts[b] = (tb - r.t[i]) * r.scale[b]
        spu = r.info.get("steps_per_unit", DEFAULT_STEPS)
        nsub = max(1, int(np.ceil(np.abs(dts).max() * spu * 2 - 1e-9)))
        xs, ks, _, _, _, big, dead = _integrate_dir(self.model, ys, dts / nsub, nsub, nsub, 0)
        nn = n * n
        fin = big[-1]
        return (xs[:, -1], ks[:, -1], fin[:, :nn].reshape(B, n, n),
                fin[:, nn:2 * nn].reshape(B, n, n), fin[:, 2 * nn:].reshape(B, n, n))


def _initial_jacobi(section, E, C):
    """J′(0) in frame components: rows ∇_{e_i}L, zero rows for L and L̄."""
    n = E.shape[1]
    B = len(E)
    dLe = C @ section.dL                                 # ∇_{e_i} L, coordinates
    comps = np.linalg.solve(E, np.swapaxes(dLe, 1, 2))   # (B, n, n-2)
    U0 = np.zeros((B, n, n))
    U0[:, :n - 2, :] = np.swapaxes(comps, 1, 2)
    return U0


def build_patch(model, section, window, weight=None, steps_per_unit=DEFAULT_STEPS, store_every=4,
                s_offset=None, threads=1, param_scale=None, s_rate=None, phi_scale=None,
                null_tol=1e-8):
    """Generate the null hypersurface through ``section`` on t ∈ [t_min, t_max]."""
    t_min, t_max = map(float, window)
    if weight is None:
        weight = WeightField.zero(model.coords)
    g = section.metric
    E, C = adapted_frames(g, section.tangents, section.L)
    U0 = _initial_jacobi(section, E, C)
    B = section.size
    start = RayStart(x=section.x, k=section.L, E=E, J=np.tile(np.eye(model.n), (B, 1, 1)), Jd=U0)
    rays = propagate_jacobi(model, start, t_max, t_min, steps_per_unit=steps_per_unit,
                            store_every=store_every, threads=threads, param_scale=param_scale)
    if np.any(rays.null_defect > null_tol):
        raise NullDefect(f"null defect {rays.null_defect.max():.3g} along a generator")
    if s_offset is None:
        s_offset = section.meta.get("s_ref", 0.0)
    return NullHypersurfacePatch(model=model, section=section, weight=weight, rays=rays, U0=U0,
                                 frames=E, s_offset=s_offset, s_rate=s_rate,
                                 phi_scale=phi_scale,
                                 meta={"window": (t_min, t_max), "steps_per_unit": steps_per_unit,
                                       "store_every": store_every, "C": C})


def build_cone_patch(model, p, s_min, s_max, s_ref=1.0, n_lat=8, n_lon=16, weight=None,
                     steps_per_unit=DEFAULT_STEPS, threads=1):
    """Future light cone of p on affine radii [s_min, s_max] (slice at s_ref)."""
    if not 0 < s_min <= s_ref <= s_max:
        raise ValueError("need 0 < s_min <= s_ref <= s_max")
    sec = light_cone_section(model, p, n_lat, n_lon, s_ref, steps_per_unit)
    patch = build_patch(model, sec, (s_min - s_ref, s_max - s_ref), weight,
                        steps_per_unit=steps_per_unit, s_offset=s_ref, threads=threads)
    patch.meta["cone"] = {"tip": np.asarray(p, float), "s_ref": s_ref, "s_min": s_min, "s_max": s_max}
    return patch


# -- operations ----------------------------------------------------------------------
def flow(patch, z, t):
    """Ψ_L(z, t) by cubic Hermite interpolation of the stored ray samples."""
    r = patch.rays
    z = int(z)
    lo, hi = r.lo[z], r.hi[z]
    tb = patch.t[z]
    t = float(t)
    if t < tb[lo] - 1e-12 or t > tb[hi] + 1e-12:
        raise OutOfWindow(f"t = {t:.6g} outside [{tb[lo]:.6g}, {tb[hi]:.6g}] on ray {z}")
    j = int(np.clip(np.searchsorted(tb, t) - 1, lo, max(lo, hi - 1)))
    if hi == lo:
        return r.x[z, lo].copy()
    h = tb[j + 1] - tb[j]
    s = (t - tb[j]) / h
    x0, x1 = r.x[z, j], r.x[z, j + 1]
    # stored k is dx/dt in the ray's own parameter
    m0 = r.k[z, j] * h
    m1 = r.k[z, j + 1] * h
    return ((2 * s**3 - 3 * s**2 + 1) * x0 + (s**3 - 2 * s**2 + s) * m0
            + (-2 * s**3 + 3 * s**2) * x1 + (s**3 - s**2) * m1)


def _ray_integrals(patch, values, window=None):
    """Per-ray ∫ values dt over each valid window (or clipped to ``window``)."""
    r = patch.rays
    T = patch.t
    out = np.zeros(patch.n_rays)
    win = None
    if window is not None:
        win = np.broadcast_to(np.asarray(window, float), (patch.n_rays, 2)) if np.ndim(window) > 1 \
            else np.tile(np.asarray(window, float), (patch.n_rays, 1))
    for b in range(patch.n_rays):
        lo, hi = r.lo[b], r.hi[b]
        if hi - lo < 1:
            continue
        tb = T[b, lo:hi + 1]
        vb = values[b, lo:hi + 1]
        a_, b_ = tb[0], tb[-1]
        if win is not None:
            a_, b_ = max(a_, win[b, 0]), min(b_, win[b, 1])
            if b_ <= a_:
                continue
        if hi - lo < 3:
            sel = (tb >= a_ - 1e-12) & (tb <= b_ + 1e-12)
            out[b] = float(trapezoid(vb[sel], tb[sel])) if sel.sum() > 1 else 0.0
            continue
        cs = CubicSpline(tb, vb)
        out[b] = float(cs.integrate(a_, b_))
    return out


def integrate_measure(patch, integrand=None, window=None, weighted=True):
    """∬ φ(Ψ_L(z,t))·e^{a_z(t)} dt d𝓗(z) over the patch (or a sub-window).

    ``integrand`` is None (φ ≡ 1) or a callable f(x, s) on chart points and
    weight parameter.  With weighted=False the density is e^{W_L} only.
    """
    dens = np.exp(patch.a if weighted else patch.rays.W)
    mask = patch.valid_mask()
    if integrand is not None:
        vals = np.asarray(integrand(patch.rays.x, patch.s), float)
        dens = dens * vals
    dens = np.where(mask, dens, 0.0)
    per_ray = _ray_integrals(patch, dens, window)
    return patch.section.integrate(per_ray)


def rescale_transverse(patch, phi, fd_step=1e-3):
    """Patch of the rescaled field φL (φ a positive function of the section node).

    ``phi`` is a positive constant or a callable on section parameters u
    (M, n−2).  Ray b of the new patch is sampled at t/φ_b so its samples sit
    on exactly the same points as the original ones.
    """
    sec = patch.section
    if callable(phi):
        vals = np.asarray(phi(sec.u), float)
        dphi = _fd_u(lambda uu: np.asarray(phi(uu), float)[:, None], sec.u, fd_step)[..., 0]
    else:
        vals = np.full(sec.size, float(phi))
        dphi = np.zeros((sec.size, sec.u.shape[1]))
    if np.any(~(vals > 0)):
        raise NonPositiveScale("transverse scale must be positive")
    L2 = vals[:, None] * sec.L
    dL2 = dphi[:, :, None] * sec.L[:, None, :] + vals[:, None, None] * sec.dL
    sec2 = replace(sec, L=L2, dL=dL2, meta=dict(sec.meta))
    r = patch.rays
    win = patch.meta["window"]
    new = build_patch(patch.model, sec2, win, patch.weight,
                      steps_per_unit=patch.meta["steps_per_unit"],
                      store_every=patch.meta["store_every"], s_offset=patch.s_offset,
                      param_scale=r.scale / vals, s_rate=patch.s_rate * vals,
                      phi_scale=patch.phi_scale * vals)
    new.meta.update({k: v for k, v in patch.meta.items() if k not in new.meta})
    return new


def rescaling_defect(patch, rescaled):
    """max |W_{φL}(z, t) − W_L(z, φ t)| and max point distance on matched samples."""
    mask = patch.valid_mask() & rescaled.valid_mask()
    dW = np.abs(np.where(mask, rescaled.rays.W - patch.rays.W, 0.0)).max()
    dx = np.abs(np.where(mask[..., None], rescaled.rays.x - patch.rays.x, 0.0)).max()
    return float(dW), float(dx)


def graph_section_transfer(patch, t_L, fd_step=1e-3):
    """Section S̄ = {Ψ_L(z, t_L(z))} as a new CrossSectionGrid.

    ``t_L`` is a constant or a callable on section parameters u.  The result
    carries ``meta['transfer_factor']`` = det J(z, t_L(z)) and the base area
    element, so that ∫_S̄ f = ∫_S f(Ψ_L(z,t_L)) det J(z,t_L) d𝓗(z).
    """
    sec = patch.section
    n = patch.n
    if callable(t_L):
        tq = np.asarray(t_L(sec.u), float)
        dt = _fd_u(lambda uu: np.asarray(t_L(uu), float)[:, None], sec.u, fd_step)[..., 0]
    else:
        tq = np.full(sec.size, float(t_L))
        dt = np.zeros((sec.size, sec.u.shape[1]))
    x, k, E, J, Jd = patch.state_at(tq)
    C = patch.meta["C"]
    Binv = np.linalg.inv(C)                                   # T = Binv · e
    Jc = np.einsum("bai,bji->bja", E, J)                       # Jacobi fields, coordinates
    Jdc = np.einsum("bai,bji->bja", E, Jd)
    m = n - 2
    # parameter derivative of u ↦ Ψ(f(u), t_L(u))
    T = Binv @ Jc[:, :m] + dt[:, :, None] * k[:, None, :]
    dL = Binv @ Jdc[:, :m]
    det = np.linalg.det(J[:, :m, :m])
    g = patch.model.metric(x)
    meta = {"g": g, "transfer_factor": det, "t_L": tq, "base_area": sec.area}
    new = CrossSectionGrid(u=sec.u, weights=sec.weights, x=x, tangents=T, L=k, dL=dL,
                           shape=sec.shape, kind=sec.kind + "-transfer", meta=meta)
    return new


def weighted_section_integral(section, weight, f=None, s=None):
    """∫_S f e^Φ d𝓗 over a section (s: weight parameter per node)."""
    s = np.zeros(section.size) if s is None else np.asarray(s, float)
    vals = np.exp(weight.value(section.x, s)) if weight is not None else np.ones(section.size)
    if f is not None:
        vals = vals * np.asarray(f(section.x), float)
    return section.integrate(vals)


def cross_section_independence_check(patch, t1, t2, integrands, window, det_power=1.0,
                                     steps_per_unit=None):
    """Compare ∫ f dvol_L computed from two sections of the same patch.

    S₁, S₂ are graphs t_L = t1, t2 over the base section (constants or
    callables of u).  Each is turned into a new base section, a patch is
    generated from it, and f·vol_L is integrated over the same region
    {base parameter in ``window``}.  ``det_power`` ≠ 1 deliberately corrupts
    the density (a constructed failure for tests).  Returns a list of
    absolute discrepancies, one per integrand.
    """
    a, b = map(float, window)
    results = []
    patches = []
    for tl in (t1, t2):
        S = graph_section_transfer(patch, tl)
        tq = S.meta["t_L"]
        lo = a - tq.max()
        hi = b - tq.min()
        p2 = build_patch(patch.model, S, (min(lo, 0.0), max(hi, 0.0)), patch.weight,
                         steps_per_unit=steps_per_unit or patch.meta["steps_per_unit"])
        p2.s_rate = patch.s_rate.copy()
        p2.s_offset = patch.s_offset + tq * patch.s_rate
        p2._cache.clear()
        patches.append((p2, tq))
    for f in integrands:
        vals = []
        for p2, tq in patches:
            dens = np.exp(det_power * p2.rays.W) * np.asarray(f(p2.rays.x), float)
            dens = np.where(p2.valid_mask(), dens, 0.0)
            win = np.stack([a - tq, b - tq], axis=1)
            vals.append(p2.section.integrate(_ray_integrals(p2, dens, win)))
        results.append(abs(vals[0] - vals[1]))
    return results


def single_crossing_check(patch):
    """Acausality surrogate: x⁰ strictly increases along every generator."""
    r = patch.rays
    ok = True
    for b in range(patch.n_rays):
        x0 = r.x[b, r.lo[b]:r.hi[b] + 1, 0]
        ok &= bool(np.all(np.diff(x0) > 0))
    return ok


# -- export --------------------------------------------------------------------------
def patch_rows(patch):
    """Rows (node, t, coords…, W_L, a_z, det J̄) over valid samples."""
    r = patch.rays
    T = patch.t
    a = patch.a
    rows = []
    for b in range(patch.n_rays):
        for i in range(r.lo[b], r.hi[b] + 1):
            rows.append([b, T[b, i], *r.x[b, i], r.W[b, i], a[b, i], r.detJbar[b, i]])
    return rows


def dump_patch_csv(patch, path):
    from .io import write_csv
    header = ["node", "t", *patch.model.coords, "W_L", "a_z", "detJbar"]
    write_csv(path, header, patch_rows(patch))
