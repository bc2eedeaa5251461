"""Lorentzian metric models, curvature evaluators and weight fields.

Catalog metrics are given by a sympy line element.  First and second metric
derivatives are compiled once with ``sympy.lambdify`` and combined numerically
into Christoffel symbols, their derivatives and the Riemann tensor, all on
batches of chart points.  A fourth-order finite-difference route is kept as a
fallback and as an independent cross-check.

Index conventions: ``gamma[..., k, i, j]`` is Γᵏᵢⱼ, ``riemann[..., a, b, c, d]``
is Rᵃ_bcd with R(X,Y)Z = ∇_X∇_Y Z − ∇_Y∇_X Z − ∇_[X,Y]Z and
(R(X,Y)Z)ᵃ = Rᵃ_bcd Zᵇ Xᶜ Yᵈ.  Ricci is Ric_bd = Rᵃ_bad.
"""

from dataclasses import dataclass

import numpy as np
import sympy as sp

from .errors import (
    InvalidN,
    OutOfChart,
    SignatureLoss,
    SingularMetric,
    UnknownMetric,
    ValidationError,
    WeightNotSmooth,
)
from .expr import parse_expression

KINDS = ("minkowski", "schwarzschild-lemaitre", "product-surface-M2", "warped", "perturbed")


class _Compiled:
    """Lambdified, scattered evaluation of a list of component expressions."""

    def __init__(self, symbols, entries):
        # entries: list of (index tuple, sympy expr); zero entries skipped
        entries = [(idx, e) for idx, e in entries if e != 0]
        self.index = [idx for idx, _ in entries]
        if entries:
            self.f = sp.lambdify(symbols, [e for _, e in entries], modules="numpy", cse=True)
        else:
            self.f = None

    def __call__(self, x, shape):
        out = np.zeros(x.shape[:-1] + shape)
        if self.f is None:
            return out
        vals = self.f(*np.moveaxis(x, -1, 0))
        for idx, v in zip(self.index, vals):
            out[(Ellipsis,) + idx] = v
        return out


class MetricModel:
    """A Lorentzian metric on a coordinate chart.

    Parameters
    ----------
    kind : catalog tag
    coords : coordinate names; the first coordinate is the time function
        defining the time orientation (∂₀ is future-directed timelike)
    g_sym : sympy Matrix line element in the symbols ``coords``, or None
    g_func : numeric evaluator x(..., n) -> (..., n, n); required if g_sym is None
    bounds : per-coordinate open intervals (lo, hi); None for unbounded
    constraints : list of (description, callable x -> array) that must be > 0
    scale : chart length scale (finite-difference step is scale*1e-3)
    """

    def __init__(self, kind, coords, g_sym=None, g_func=None, bounds=None,
                 constraints=(), scale=1.0, params=None, flat=False):
        self.kind = kind
        self.coords = tuple(coords)
        self.n = len(self.coords)
        if self.n < 3:
            raise ValidationError("metric dimension must be at least 3")
        self.params = dict(params or {})
        self.scale = float(scale)
        self.bounds = list(bounds) if bounds is not None else [(None, None)] * self.n
        self.constraints = list(constraints)
        self.flat = flat
        self.g_sym = g_sym
        self.symbols = sp.symbols(self.coords, real=True)
        self._tril = np.tril_indices(self.n, -1)
        self._triu_strict = np.triu_indices(self.n, 1)
        self.diagonal = False
        if g_sym is not None:
            n = self.n
            xs = self.symbols
            pairs = [(i, j) for i in range(n) for j in range(i, n)]
            self._g = _Compiled(xs, [((i, j), g_sym[i, j]) for i, j in pairs])
            dg = {}
            for l in range(n):
                for i, j in pairs:
                    dg[(l, i, j)] = sp.diff(g_sym[i, j], xs[l])
            self._dg = _Compiled(xs, list(dg.items()))
            ddg = []
            for l in range(n):
                for m in range(l, n):
                    for i, j in pairs:
                        ddg.append(((l, m, i, j), sp.diff(dg[(l, i, j)], xs[m])))
            self._ddg = _Compiled(xs, ddg)
            self.analytic = True
            self.diagonal = all(g_sym[i, j] == 0 for i in range(n) for j in range(n) if i != j)
            if self.diagonal and not flat:
                self._compile_diagonal()
        else:
            if g_func is None:
                raise ValueError("either g_sym or g_func is required")
            self._gfunc = g_func
            self.analytic = False

    def _compile_diagonal(self):
        # diagonal line elements: Γ and ∂Γ in closed form, compiled directly
        n, xs, G = self.n, self.symbols, self.g_sym
        gam = {}
        for k in range(n):
            for i in range(n):
                for j in range(i, n):
                    e = 0
                    if j == k:
                        e += sp.diff(G[k, k], xs[i])
                    if i == k:
                        e += sp.diff(G[k, k], xs[j])
                    if i == j:
                        e -= sp.diff(G[i, i], xs[k])
                    if e != 0:
                        gam[(k, i, j)] = e / (2 * G[k, k])
        dgam = []
        for (k, i, j), e in gam.items():
            for m in range(n):
                dgam.append(((m, k, i, j), sp.diff(e, xs[m])))
        self._gam = _Compiled(xs, list(gam.items()))
        self._dgam = _Compiled(xs, dgam)

    def __repr__(self):
        return f"MetricModel({self.kind!r}, {self.params})"

    # -- chart ---------------------------------------------------------------
    def in_chart(self, x):
        x = np.asarray(x, dtype=float)
        ok = np.all(np.isfinite(x), axis=-1)
        for k, (lo, hi) in enumerate(self.bounds):
            if lo is not None:
                ok &= x[..., k] > lo
            if hi is not None:
                ok &= x[..., k] < hi
        for _, c in self.constraints:
            ok &= np.asarray(c(x)) > 0
        return ok

    def require_chart(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise ValueError(f"expected {self.n} coordinates, got shape {x.shape}")
        if not np.all(self.in_chart(x)):
            raise OutOfChart(f"point outside the chart of {self.kind}")
        return x

    # -- metric and derivatives ---------------------------------------------
    def _sym(self, a):
        # fill lower triangle of the last two axes from the upper one
        il = self._tril
        a[..., il[0], il[1]] = a[..., il[1], il[0]]
        return a

    def metric(self, x):
        x = np.asarray(x, dtype=float)
        if self.analytic:
            return self._sym(self._g(x, (self.n, self.n)))
        return np.asarray(self._gfunc(x), dtype=float)

    def metric_derivatives(self, x):
        """Return g, ∂g[l,i,j] = ∂_l g_ij, ∂∂g[l,m,i,j] (analytic models)."""
        n = self.n
        g = self.metric(x)
        dg = self._sym(self._dg(x, (n, n, n)))
        ddg = self._ddg(x, (n, n, n, n))
        ddg = self._sym(ddg)
        il = self._tril
        ddg[..., il[0], il[1], :, :] = ddg[..., il[1], il[0], :, :]
        return g, dg, ddg

    def geometry(self, x):
        """Batched Γ, ∂Γ and g at points x (..., n).

        Returns (g, gamma, dgamma) with dgamma[..., m, k, i, j] = ∂_m Γᵏᵢⱼ.
        """
        x = np.asarray(x, dtype=float)
        n = self.n
        if self.flat:
            g = self.metric(x)
            z3 = np.zeros(x.shape[:-1] + (n, n, n))
            return g, z3, np.zeros(x.shape[:-1] + (n, n, n, n))
        if self.analytic and self.diagonal:
            g = self.metric(x)
            gam = self._gam(x, (n, n, n))
            iu = self._triu_strict
            gam[..., iu[1], iu[0]] = gam[..., iu[0], iu[1]]
            dgam = self._dgam(x, (n, n, n, n))
            dgam[..., iu[1], iu[0]] = dgam[..., iu[0], iu[1]]
            return g, gam, dgam
        if not self.analytic:
            g = self.metric(x)
            gam = fd_christoffel(self, x)
            dgam = fd_christoffel_derivative(self, x)
            return g, gam, dgam
        lead = x.shape[:-1]
        xf = x.reshape(-1, n)
        B = xf.shape[0]
        g, dg, ddg = self.metric_derivatives(xf)
        ginv = np.linalg.inv(g)
        # Γ_lij = ½(∂_i g_jl + ∂_j g_il − ∂_l g_ij)
        low = 0.5 * (dg.transpose(0, 3, 1, 2) + dg.transpose(0, 3, 2, 1) - dg)
        gam = (ginv @ low.reshape(B, n, n * n)).reshape(B, n, n, n)
        dlow = 0.5 * (ddg.transpose(0, 1, 4, 2, 3) + ddg.transpose(0, 1, 4, 3, 2) - ddg)
        corr = (dg.reshape(B, n * n, n) @ gam.reshape(B, n, n * n)).reshape(B, n, n, n, n)
        tmp = (dlow - corr).reshape(B, n, n, n * n)
        dgam = (ginv[:, None] @ tmp).reshape(B, n, n, n, n)
        return (g.reshape(lead + (n, n)), gam.reshape(lead + (n, n, n)),
                dgam.reshape(lead + (n, n, n, n)))

    def christoffel(self, x):
        return self.geometry(x)[1]

    def riemann(self, x):
        _, gam, dgam = self.geometry(x)
        return riemann_from(gam, dgam)

    def ricci_tensor(self, x):
        return np.einsum("...abad->...bd", self.riemann(x))

    def check_signature(self, x):
        """Raise SignatureLoss unless g has signature (-,+,...,+) at all x."""
        g = self.metric(x)
        ev = np.linalg.eigvalsh(g)
        neg = np.sum(ev < 0, axis=-1)
        if np.any(neg != 1):
            raise SignatureLoss(f"{self.kind}: metric is not Lorentzian at a sampled point")
        return ev


def riemann_from(gam, dgam):
    """Rᵃ_bcd = ∂_c Γᵃ_db − ∂_d Γᵃ_cb + Γᵃ_ce Γᵉ_db − Γᵃ_de Γᵉ_cb."""
    t1 = np.einsum("...cadb->...abcd", dgam)
    t3 = np.einsum("...ace,...edb->...abcd", gam, gam)
    r = t1 + t3
    return r - np.swapaxes(r, -1, -2)


def tidal_matrix(gam, dgam, k, return_gk=False):
    """Mᵃ_c = Rᵃ_bcd kᵇ kᵈ, so that R(Y,k)k = M·Y (batched over a leading axis).

    With ``return_gk`` also returns the matrix Γᵃ_cb kᵇ.
    """
    B, n = k.shape
    kc = k[:, :, None]
    P = dgam.reshape(B, n**3, n) @ kc                       # Σ_j ∂_m Γᵃ_ij k^j
    dkk = np.swapaxes((P.reshape(B, n * n, n) @ kc).reshape(B, n, n), 1, 2)
    kdk = (k[:, None, :] @ P.reshape(B, n, n * n)).reshape(B, n, n)
    gk = (gam.reshape(B, n * n, n) @ kc).reshape(B, n, n)
    gkk = gk @ kc
    t3 = (gam.reshape(B, n * n, n) @ gkk).reshape(B, n, n)
    M = dkk - kdk + t3 - gk @ gk
    return (M, gk) if return_gk else M


# -- public evaluators ---------------------------------------------------------
def _check_point(model, x):
    x = model.require_chart(x)
    g = model.metric(x)
    ev = np.abs(np.linalg.eigvalsh(g))
    if np.any(ev.min(axis=-1) < 1e-12 * ev.max(axis=-1)):
        raise SingularMetric(f"{model.kind}: metric nearly singular")
    return x


def christoffel(model, x):
    """Christoffel symbols Γᵏᵢⱼ at a chart point (shape (n, n, n))."""
    x = _check_point(model, x)
    return model.christoffel(x)


def riemann(model, x):
    x = _check_point(model, x)
    return model.riemann(x)


def ricci(model, x, v, w):
    """Ric(v, w) at x."""
    x = _check_point(model, x)
    ric = model.ricci_tensor(x)
    return float(np.einsum("...bd,...b,...d->...", ric, np.asarray(v, float), np.asarray(w, float)))


# -- finite-difference fallback -----------------------------------------------
_FD = ((-2, 1.0 / 12), (-1, -8.0 / 12), (1, 8.0 / 12), (2, -1.0 / 12))


def _fd(f, x, n, h):
    """Fourth-order central differences: returns list over l of ∂_l f."""
    out = []
    for l in range(n):
        acc = 0.0
        for k, c in _FD:
            xs = np.array(x, dtype=float, copy=True)
            xs[..., l] += k * h
            acc = acc + c * f(xs)
        out.append(acc / h)
    return out


def fd_christoffel(model, x, h=None):
    """Christoffel symbols from finite differences of the metric alone."""
    x = np.asarray(x, dtype=float)
    h = model.scale * 1e-3 if h is None else h
    n = model.n
    g = model.metric(x)
    dg = np.stack(_fd(model.metric, x, n, h), axis=-3)
    low = 0.5 * (np.einsum("...ijl->...lij", dg) + np.einsum("...jil->...lij", dg) - dg)
    return np.einsum("...kl,...lij->...kij", np.linalg.inv(g), low)


def fd_christoffel_derivative(model, x, h=None):
    """∂_m Γᵏᵢⱼ by fourth-order differences of the Christoffel evaluator."""
    h = model.scale * 1e-3 if h is None else h
    if model.analytic:
        f = model.christoffel
    else:
        def f(y):
            return fd_christoffel(model, y, h)
    return np.stack(_fd(f, x, model.n, h), axis=-4)


def fd_riemann(model, x, h=None):
    x = np.asarray(x, dtype=float)
    gam = model.christoffel(x) if model.analytic else fd_christoffel(model, x, h)
    return riemann_from(gam, fd_christoffel_derivative(model, x, h))


# -- catalog -------------------------------------------------------------------
def _num(params, key, default=None, positive=False, errors=None):
    v = params.get(key, default)
    try:
        v = float(v)
    except (TypeError, ValueError):
        errors.append(f"metric parameter {key!r} must be a number")
        return 1.0
    if positive and not v > 0:
        errors.append(f"metric parameter {key!r} must be > 0")
    return v


def minkowski(n=4):
    n = int(n)
    coords = ["t"] + [f"x{i}" for i in range(1, n)]
    g = sp.diag(-1, *([1] * (n - 1)))
    return MetricModel("minkowski", coords, g_sym=g, params={"n": n}, flat=True)


def schwarzschild_lemaitre(r_S=1.0, r_min=None):
    """Schwarzschild in Lemaître coordinates (τ, ρ, θ, φ).

    ds² = −dτ² + (r_S/r) dρ² + r²(dθ² + sin²θ dφ²),  r = (3/2 (ρ−τ))^{2/3} r_S^{1/3}.
    The horizon r = r_S sits at ρ − τ = 2 r_S/3.
    """
    r_S = float(r_S)
    r_min = 0.05 * r_S if r_min is None else float(r_min)
    tau, rho, th, ph = sp.symbols("tau rho theta phi", real=True)
    r = (sp.Rational(3, 2) * (rho - tau)) ** sp.Rational(2, 3) * sp.Float(r_S) ** sp.Rational(1, 3)
    g = sp.diag(-1, sp.Float(r_S) / r, r**2, r**2 * sp.sin(th) ** 2)
    u_min = 2.0 / 3.0 * r_min**1.5 / np.sqrt(r_S)
    eps = 1e-4
    return MetricModel(
        "schwarzschild-lemaitre",
        ["tau", "rho", "theta", "phi"],
        g_sym=g,
        bounds=[(None, None), (None, None), (eps, np.pi - eps), (None, None)],
        constraints=[("r > r_min", lambda x: x[..., 1] - x[..., 0] - u_min)],
        scale=r_S,
        params={"r_S": r_S},
    )


def lemaitre_radius(x, r_S):
    x = np.asarray(x, dtype=float)
    return (1.5 * (x[..., 1] - x[..., 0])) ** (2.0 / 3.0) * r_S ** (1.0 / 3.0)


def product_surface_m2(surface="sphere", radius=1.0):
    """Σ² × M² with metric g_Σ − dt² + dx²; coordinates (t, x, u, v)."""
    t, x, u, v = sp.symbols("t x u v", real=True)
    radius = float(radius)
    if surface == "sphere":
        g = sp.diag(-1, 1, radius**2, radius**2 * sp.sin(u) ** 2)
        bounds = [(None, None), (None, None), (1e-4, np.pi - 1e-4), (None, None)]
        flat = False
    elif surface == "flat":
        g = sp.diag(-1, 1, 1, 1)
        bounds = None
        flat = True
    else:
        raise ValidationError(f"unknown surface {surface!r} (expected 'sphere' or 'flat')")
    return MetricModel("product-surface-M2", ["t", "x", "u", "v"], g_sym=g, bounds=bounds,
                       scale=radius if surface == "sphere" else 1.0,
                       params={"surface": surface, "radius": radius}, flat=flat)


def warped(n=4, c=0.5, p=1.0):
    """Spatially flat FLRW metric −dt² + a(t)² δ with a(t) = (1 + c t)^p.

    For null k, Ric(k, k) = −2 (d/dt)(ȧ/a) (k⁰)² = 2 p c² (k⁰)²/(1 + c t)² ≥ 0.
    """
    n = int(n)
    c = float(c)
    p = float(p)
    t = sp.Symbol("t", real=True)
    a2 = (1 + sp.Float(c) * t) ** (2 * sp.Float(p))
    g = sp.diag(-1, *([a2] * (n - 1)))
    cons = []
    if c != 0:
        cons = [("1 + c t > 0.05", lambda x, c=c: 1 + c * x[..., 0] - 0.05)]
    return MetricModel("warped", ["t"] + [f"x{i}" for i in range(1, n)], g_sym=g,
                       constraints=cons, params={"n": n, "c": c, "p": p})


PERTURBATIONS = {
    # spatial warp h = σ(t)·δ_spatial
    "focusing": "-t**2",
    "defocusing": "t**2",
}


def perturbed(base, eps, h):
    """g_ε = g + ε·h on the chart of ``base``.

    ``h`` is either a preset name from PERTURBATIONS (a spatial warp σ(t)·δ),
    a single DSL expression σ (also a spatial warp), or a mapping
    {"i,j": expression} of components over the base coordinates.
    """
    eps = float(eps)
    if base.g_sym is None:
        raise ValidationError("perturbed metrics need a symbolic base metric")
    names = list(base.coords)
    n = base.n
    H = sp.zeros(n, n)
    if isinstance(h, str):
        expr = parse_expression(PERTURBATIONS.get(h, h), names)
        sub = dict(zip(expr.symbols, base.symbols))
        sig = expr.sym.subs(sub)
        for i in range(1, n):
            H[i, i] = sig
    elif isinstance(h, dict):
        for key, text in h.items():
            try:
                i, j = (int(s) for s in str(key).split(","))
            except ValueError:
                raise ValidationError(f"perturbation component key {key!r} must look like 'i,j'") from None
            if not (0 <= i < n and 0 <= j < n):
                raise ValidationError(f"perturbation component {key!r} out of range")
            expr = parse_expression(str(text), names)
            sym = expr.sym.subs(dict(zip(expr.symbols, base.symbols)))
            H[i, j] = sym
            H[j, i] = sym
    else:
        raise ValidationError("perturbation h must be a name, an expression or a component map")
    g = base.g_sym + sp.Float(eps) * H
    model = MetricModel("perturbed", base.coords, g_sym=g, bounds=base.bounds,
                        constraints=base.constraints, scale=base.scale,
                        params={"base": base.kind, "base_params": base.params, "eps": eps,
                                "h": h})
    model.base = base
    model.perturbation = H
    return model


def make_metric(name, params=None):
    """Build a catalog metric from its name and a parameter map."""
    params = dict(params or {})
    errors = []
    allowed = {
        "minkowski": {"n"},
        "schwarzschild-lemaitre": {"r_S", "r_min"},
        "product-surface-M2": {"surface", "radius"},
        "warped": {"n", "c", "p"},
        "perturbed": {"base", "eps", "h"},
    }
    if name not in allowed:
        raise UnknownMetric(f"unknown metric {name!r}; catalog: {', '.join(KINDS)}")
    extra = sorted(set(params) - allowed[name])
    if extra:
        errors.append(f"unknown parameter(s) for {name}: {', '.join(extra)}")
    if name == "minkowski":
        n = params.get("n", 4)
        if not isinstance(n, int) or n < 3:
            errors.append("minkowski parameter 'n' must be an integer >= 3")
        if errors:
            raise ValidationError(errors)
        return minkowski(n)
    if name == "schwarzschild-lemaitre":
        if "r_S" not in params:
            errors.append("schwarzschild-lemaitre requires r_S > 0")
            raise ValidationError(errors)
        r_S = _num(params, "r_S", positive=True, errors=errors)
        r_min = params.get("r_min")
        if r_min is not None:
            r_min = _num(params, "r_min", positive=True, errors=errors)
        if errors:
            raise ValidationError(errors)
        return schwarzschild_lemaitre(r_S, r_min)
    if name == "product-surface-M2":
        surface = params.get("surface", "sphere")
        radius = _num(params, "radius", 1.0, positive=True, errors=errors)
        if surface not in ("sphere", "flat"):
            errors.append("product-surface-M2 parameter 'surface' must be 'sphere' or 'flat'")
        if errors:
            raise ValidationError(errors)
        return product_surface_m2(surface, radius)
    if name == "warped":
        n = params.get("n", 4)
        if not isinstance(n, int) or n < 3:
            errors.append("warped parameter 'n' must be an integer >= 3")
        c = _num(params, "c", 0.5, errors=errors)
        p = _num(params, "p", 1.0, errors=errors)
        if errors:
            raise ValidationError(errors)
        return warped(n, c, p)
    # perturbed
    base = params.get("base", {"name": "minkowski"})
    if not isinstance(base, dict) or "name" not in base:
        errors.append("perturbed parameter 'base' must be a mapping with a 'name'")
    eps = _num(params, "eps", 0.0, errors=errors)
    h = params.get("h", "focusing")
    if errors:
        raise ValidationError(errors)
    if base["name"] == "perturbed":
        raise ValidationError("perturbed base must itself be a catalog metric other than 'perturbed'")
    return perturbed(make_metric(base["name"], base.get("params", {})), eps, h)


# -- weight fields -------------------------------------------------------------
class WeightField:
    """Scalar weight Φ on the chart, optionally depending on the generator
    parameter ``s`` (affine parameter from the cone tip, or the flow
    parameter from the base section).

    Smooth expressions carry exact gradient and Hessian evaluators in the
    extended variables (x⁰, …, xⁿ⁻¹, s).
    """

    def __init__(self, coords, expression=None, func=None, smooth=None):
        self.coords = tuple(coords)
        self.n = len(self.coords)
        self.text = "zero" if expression is None and func is None else expression
        self._func = func
        self.expr = None
        if expression is not None and expression != "zero":
            self.expr = parse_expression(expression, list(self.coords) + ["s"])
            syms = self.expr.symbols
            self._val = self.expr.lambdify()
            self.smooth = "c2" if self.expr.smooth else "c0"
            if self.expr.smooth:
                grad = [sp.diff(self.expr.sym, v) for v in syms]
                hess = [[sp.diff(gi, v) for v in syms] for gi in grad]
                m = len(syms)
                self._grad = _Compiled(syms, [((i,), grad[i]) for i in range(m)])
                self._hess = _Compiled(syms, [((i, j), hess[i][j]) for i in range(m) for j in range(m)])
            self.uses_s = "s" in self.expr.free_names
            self.constant = not self.expr.free_names
        elif func is not None:
            self.smooth = smooth or "c0"
            self.uses_s = True
            self.constant = False
        else:
            self.text = "zero"
            self.smooth = "c2"
            self.uses_s = False
            self.constant = True

    @classmethod
    def zero(cls, coords):
        return cls(coords)

    @property
    def is_zero(self):
        return self.expr is None and self._func is None

    def _args(self, x, s):
        x = np.asarray(x, dtype=float)
        s = np.broadcast_to(np.asarray(s, dtype=float), x.shape[:-1])
        return np.concatenate([x, s[..., None]], axis=-1)

    def value(self, x, s=0.0):
        x = np.asarray(x, dtype=float)
        if self.is_zero:
            return np.zeros(x.shape[:-1])
        if self._func is not None:
            return np.asarray(self._func(x, s), dtype=float)
        y = self._args(x, s)
        return self._val(*np.moveaxis(y, -1, 0))

    def gradient(self, x, s=0.0):
        """∂Φ in extended variables; shape (..., n + 1), last slot is ∂_s."""
        x = np.asarray(x, dtype=float)
        if self.is_zero or self.constant:
            return np.zeros(x.shape[:-1] + (self.n + 1,))
        if self.smooth != "c2" or self._func is not None:
            raise WeightNotSmooth("weight is only continuous; derivatives unavailable")
        return self._grad(self._args(x, s), (self.n + 1,))

    def hessian(self, x, s=0.0):
        x = np.asarray(x, dtype=float)
        if self.is_zero or self.constant:
            return np.zeros(x.shape[:-1] + (self.n + 1, self.n + 1))
        if self.smooth != "c2" or self._func is not None:
            raise WeightNotSmooth("weight is only continuous; derivatives unavailable")
        return self._hess(self._args(x, s), (self.n + 1, self.n + 1))

    def __repr__(self):
        return f"WeightField({self.text!r})"


@dataclass
class BakryEmeryQuery:
    """Point, direction and dimension bound for the weighted Ricci tensor.

    ``s`` and ``s_rate`` give the generator parameter at x and its derivative
    along v (1 for v = L along an affinely parametrized generator); they only
    matter when the weight depends on s.
    """

    N: float
    v: np.ndarray
    x: np.ndarray
    s: float = 0.0
    s_rate: float = 0.0


def directional_weight_derivatives(model, weight, x, v, s=0.0, s_rate=0.0, gamma=None):
    """First and covariant second derivative of Φ along v (batched).

    Returns (dΦ(v), Hess Φ(v, v)); the parameter s is treated as an extra
    variable with ds(v) = s_rate and no connection term.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if gamma is None:
        gamma = model.christoffel(x)
    rate = np.broadcast_to(np.asarray(s_rate, dtype=float), x.shape[:-1])
    ve = np.concatenate([v, rate[..., None]], axis=-1)
    grad = weight.gradient(x, s)
    hess = weight.hessian(x, s)
    d1 = np.einsum("...a,...a->...", grad, ve)
    gvv = np.einsum("...kij,...i,...j->...k", gamma, v, v)
    d2 = np.einsum("...ab,...a,...b->...", hess, ve, ve) - np.einsum("...k,...k->...", gvv, grad[..., :-1])
    return d1, d2


def bakry_emery_ricci(model, weight, q):
    """Ric^{g,Φ,N}(v, v) = Ric(v,v) − HessΦ(v,v) − ⟨∇Φ, v⟩²/(N − n)."""
    x = _check_point(model, q.x)
    v = np.asarray(q.v, dtype=float)
    n = model.n
    N = float(q.N)
    if weight is None:
        weight = WeightField.zero(model.coords)
    if weight.smooth != "c2":
        raise WeightNotSmooth("the weighted Ricci tensor needs a c2 weight")
    if N < n:
        raise InvalidN(f"N = {N} is below the dimension n = {n}")
    ric = float(np.einsum("bd,b,d->", model.ricci_tensor(x), v, v))
    if N == n:
        if not weight.constant:
            raise InvalidN("N = n requires a constant weight")
        return ric
    d1, d2 = directional_weight_derivatives(model, weight, x, v, q.s, q.s_rate)
    return float(ric - d2 - d1**2 / (N - n))


def default_point(model):
    """A representative interior chart point of a catalog metric."""
    kind = model.kind
    if kind == "perturbed":
        return default_point(model.base)
    x = np.zeros(model.n)
    if kind == "schwarzschild-lemaitre":
        r_S = model.params["r_S"]
        r = 3.0 * r_S
        x[1] = (2.0 / 3.0) * r ** 1.5 / np.sqrt(r_S)
        x[2] = np.pi / 2
    elif kind == "product-surface-M2" and model.params.get("surface", "sphere") == "sphere":
        x[2] = np.pi / 2
    return x
