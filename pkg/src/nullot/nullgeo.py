"""Null geodesics, parallel frames and Jacobi matrices along generators.

The joint first-order system integrated for a batch of rays is

    x' = k,   k' = −Γ(k, k),   E' = −Γ(k, E),   J'' = −J·R_E,

where E holds a parallel frame as columns, J stores Jacobi fields as rows in
frame components and R_E[i, j] is the j-th frame component of R(e_i, k)k.
Frame columns are ordered (e_1, …, e_{n−2}, L, L̄).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateSection,
    FitFailure,
    LeftChart,
    NoTransverse,
    NullDefect,
    OutOfChart,
)
from .spacetime import tidal_matrix

NULL_TOL = 1e-9
DET_FLOOR = 1e-12


def gdot(g, v, w):
    return np.einsum("...ab,...a,...b->...", g, v, w)


def _null_scale(g, k):
    return np.einsum("...ab,...a,...b->...", np.abs(g), np.abs(k), np.abs(k))


def null_defect(g, k):
    """|g(k,k)| relative to the magnitude of its terms."""
    return np.abs(gdot(g, k, k)) / np.maximum(_null_scale(g, k), 1e-300)


def orthonormal_frame(model, x):
    """Orthonormal frame at x (columns), e_0 future timelike along ∂_0."""
    x = model.require_chart(x)
    g = model.metric(x)
    n = model.n
    basis = list(np.eye(n))
    out = []
    for v in basis:
        w = v.copy()
        for e in out:
            w = w - gdot(g, w, e) / gdot(g, e, e) * e
        nrm = gdot(g, w, w)
        if not out and nrm >= 0:
            raise DegenerateSection("the time coordinate direction is not timelike")
        out.append(w / np.sqrt(abs(nrm)))
    return np.stack(out, axis=1)


# -- adapted frames --------------------------------------------------------------
@dataclass
class AdaptedFrame:
    """Adapted frame at a section point; ``vectors`` holds e_1…e_n as columns."""

    x: np.ndarray
    vectors: np.ndarray
    g: np.ndarray

    @property
    def n(self):
        return self.vectors.shape[-1]

    @property
    def L(self):
        return self.vectors[..., :, -2]

    @property
    def Lbar(self):
        return self.vectors[..., :, -1]

    @property
    def tangent(self):
        return self.vectors[..., :, :-2]

    @property
    def eta(self):
        return np.einsum("...ai,...ab,...bj->...ij", self.vectors, self.g, self.vectors)


def adapted_frames(g, T, L, tol=1e-9):
    """Batched construction of adapted frames.

    g: (B,n,n) metric, T: (B,n−2,n) tangent vectors of the section (rows),
    L: (B,n) null normal.  Returns (E, C) with E (B,n,n) frame columns and C
    (B,n−2,n−2) such that the orthonormal tangent rows are e = C·T.
    """
    g = np.asarray(g, float)
    T = np.asarray(T, float)
    L = np.asarray(L, float)
    B, m, n = T.shape
    gram = np.einsum("bia,bac,bjc->bij", T, g, T)
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        raise DegenerateSection("tangent Gram block is not positive definite") from None
    dg = np.abs(np.einsum("bii->bi", chol))
    if np.any(dg.min(axis=1) < 1e-10 * dg.max(axis=1)):
        raise DegenerateSection("tangent Gram block is numerically singular")
    C = np.linalg.inv(chol)
    e = C @ T
    lsc = np.sqrt(_null_scale(g, L))
    if np.any(np.abs(gdot(g, L, L)) > tol * lsc**2):
        raise NullDefect("L is not null on the section")
    tl = np.einsum("bia,bac,bc->bi", e, g, L)
    if np.any(np.abs(tl) > tol * lsc[:, None] * 10):
        raise DegenerateSection("L is not normal to the section tangents")
    # transverse vector: project coordinate directions off the tangent space
    best = None
    best_val = np.zeros(B)
    for a in range(n):
        w = np.zeros((B, n))
        w[:, a] = 1.0
        w = w - np.einsum("bi,bia->ba", np.einsum("bia,bac,c->bi", e, g, np.eye(n)[a]), e)
        val = np.abs(gdot(g, w, L)) / np.sqrt(np.maximum(_null_scale(g, w), 1e-300))
        if best is None:
            best = w.copy()
            best_val = val
        else:
            pick = val > best_val
            best[pick] = w[pick]
            best_val = np.where(pick, val, best_val)
    if np.any(best_val < 1e-10 * lsc):
        raise NoTransverse("no vector transverse to the section normal space")
    w = best
    gwl = gdot(g, w, L)
    a = -1.0 / gwl
    b = -a * gdot(g, w, w) / (2.0 * gwl)
    Lbar = a[:, None] * w + b[:, None] * L
    E = np.concatenate([np.swapaxes(e, 1, 2), L[:, :, None], Lbar[:, :, None]], axis=2)
    return E, C


def build_adapted_frame(model, x, tangent_basis, L):
    """Adapted frame at one section point from a tangent basis and null L."""
    x = model.require_chart(x)
    g = model.metric(x)
    E, _ = adapted_frames(g[None], np.asarray(tangent_basis, float)[None], np.asarray(L, float)[None])
    return AdaptedFrame(x=x, vectors=E[0], g=g)


def rigged_metric_check(frame, L=None):
    """Largest violation of the rigged-metric identities on T H.

    With α = g(−L̄, ·) restricted to TH = span(e_1…e_{n−2}, L), the rigged
    metric g + α⊗α must agree with g on ker α, make L orthogonal to ker α and
    have g̃(L, L) = 1.  Also checks that the g̃-dual of α is L.
    """
    g = frame.g
    E = frame.vectors
    L = frame.L if L is None else np.asarray(L, float)
    Lbar = frame.Lbar
    alpha = -g @ Lbar
    gt = g + np.outer(alpha, alpha)
    tang = E[:, :-2]
    viol = []
    viol.append(np.abs(tang.T @ gt @ tang - tang.T @ g @ tang).max() if tang.size else 0.0)
    viol.append(np.abs(tang.T @ gt @ L).max() if tang.size else 0.0)
    viol.append(abs(L @ gt @ L - 1.0))
    # rigged vector: solve g̃(X, v) = α(v) for v in TH, X in TH
    basis = np.concatenate([tang, L[:, None]], axis=1)
    A = basis.T @ gt @ basis
    rhs = basis.T @ alpha
    try:
        coef = np.linalg.solve(A, rhs)
        X = basis @ coef
        viol.append(np.abs(X - L).max() / max(np.abs(L).max(), 1e-300))
    except np.linalg.LinAlgError:
        viol.append(np.inf)
    return {"max_violation": float(max(viol)),
            "ker_alpha_agreement": float(viol[0]),
            "L_orthogonality": float(viol[1]),
            "L_normalization": float(viol[2]),
            "rigged_vector": float(viol[3])}


# -- integrator ---------------------------------------------------------------------
@dataclass
class RayStart:
    """Initial data for a batch of rays at parameter 0.

    x, k: (B,n); E: (B,n,n) frame columns; J, Jd: (B,n,n) Jacobi rows in frame
    components and their derivatives.
    """

    x: np.ndarray
    k: np.ndarray
    E: np.ndarray
    J: np.ndarray
    Jd: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, float))
        self.k = np.atleast_2d(np.asarray(self.k, float))
        B, n = self.x.shape
        self.E = np.asarray(self.E, float).reshape(B, n, n)
        self.J = np.asarray(self.J, float).reshape(B, n, n)
        self.Jd = np.asarray(self.Jd, float).reshape(B, n, n)


@dataclass
class JacobiSamples:
    """Samples of a batch of rays on a common parameter grid.

    Every grid node carries x, k and the scalar Jacobi data; full matrix
    states (E, J, J′) are kept on the nodes listed in ``stored``.  Ray b is
    valid on indices lo[b] ≤ i ≤ hi[b].
    """

    t: np.ndarray
    i0: int
    x: np.ndarray
    k: np.ndarray
    detJbar: np.ndarray
    W: np.ndarray
    dW: np.ndarray
    ddW: np.ndarray
    ric_LL: np.ndarray
    gauss: np.ndarray
    stored: np.ndarray
    E: np.ndarray
    J: np.ndarray
    Jd: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    focal: np.ndarray
    left_chart: np.ndarray
    null_defect: np.ndarray
    scale: np.ndarray = None
    h: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def n_rays(self):
        return self.x.shape[0]

    @property
    def T(self):
        """Per-ray parameter grid, shape (B, m)."""
        return self.t[None, :] * self.scale[:, None]

    def valid_mask(self):
        idx = np.arange(len(self.t))
        return (idx[None, :] >= self.lo[:, None]) & (idx[None, :] <= self.hi[:, None])


def _pack(x, k, E, J, Jd):
    B = x.shape[0]
    return np.concatenate([x, k, E.reshape(B, -1), J.reshape(B, -1), Jd.reshape(B, -1)], axis=1)


def _unpack(y, n):
    B = y.shape[0]
    nn = n * n
    x = y[:, :n]
    k = y[:, n:2 * n]
    E = y[:, 2 * n:2 * n + nn].reshape(B, n, n)
    J = y[:, 2 * n + nn:2 * n + 2 * nn].reshape(B, n, n)
    Jd = y[:, 2 * n + 2 * nn:].reshape(B, n, n)
    return x, k, E, J, Jd


class _System:
    def __init__(self, model):
        self.model = model
        self.n = model.n

    def rhs(self, y, alive, x_safe):
        n = self.n
        x, k, E, J, Jd = _unpack(y, n)
        xe = np.where(alive[:, None], x, x_safe)
        g, gam, dgam = self.model.geometry(xe)
        if self.model.flat:
            RE = np.zeros_like(E)
            gk = np.zeros_like(E)
        else:
            M, gk = tidal_matrix(gam, dgam, k, return_gk=True)
            RE = np.swapaxes(np.linalg.solve(E, M @ E), 1, 2)
        dk = -(gk @ k[:, :, None])[..., 0]
        dE = -gk @ E
        ddJ = -J @ RE
        B = y.shape[0]
        f = np.concatenate([k, dk, dE.reshape(B, -1), Jd.reshape(B, -1), ddJ.reshape(B, -1)], axis=1)
        f[~alive] = 0.0
        return f, g, RE


def _node_scalars(y, g, RE, n):
    x, k, E, J, Jd = _unpack(y, n)
    m = n - 2
    Jb = J[:, :m, :m]
    Jbd = Jd[:, :m, :m]
    Jbdd = -(J @ RE)[:, :m, :m]
    det = np.linalg.det(Jb)
    with np.errstate(all="ignore"):
        try:
            inv = np.linalg.inv(Jb)
        except np.linalg.LinAlgError:
            inv = np.linalg.pinv(Jb)
        U = inv @ Jbd
        dW = np.einsum("bii->b", U)
        ddW = np.einsum("bii->b", inv @ Jbdd) - np.einsum("bij,bji->b", U, U)
    ric = np.einsum("bii->b", RE)
    # Gauss invariant g(J_v, L) in coordinates, one value per frame row
    Jc = J @ np.swapaxes(E, 1, 2)
    gauss = np.einsum("bia,bac,bc->bi", Jc, g, k)
    return det, dW, ddW, ric, gauss, null_defect(g, k)


def _reproject(model, y):
    n = model.n
    x, k, *_ = _unpack(y, n)
    g = model.metric(x)
    w = np.zeros_like(k)
    w[:, 0] = 1.0
    a = gdot(g, w, w)
    b = gdot(g, k, w)
    c = gdot(g, k, k)
    disc = np.sqrt(np.maximum(b * b - a * c, 0.0))
    den = b + np.sign(b) * disc
    alpha = np.where(den != 0, -c / np.where(den == 0, 1.0, den), 0.0)
    y[:, n:2 * n] = k + alpha[:, None] * w


def _integrate_dir(model, y0, h, nsteps, store_every, reproject_every, alive0=None):
    """RK4 from y0 with step h (signed scalar or one step per ray)."""
    n = model.n
    h = np.asarray(h, dtype=float)
    if h.ndim:
        h = h[:, None]
    sysm = _System(model)
    B = y0.shape[0]
    y = y0.copy()
    alive = np.ones(B, bool) if alive0 is None else alive0.copy()
    dead_at = np.full(B, nsteps, dtype=int)
    xs = np.empty((B, nsteps + 1, n))
    ks = np.empty((B, nsteps + 1, n))
    scal = np.empty((6, B, nsteps + 1))
    gauss = np.empty((B, nsteps + 1, n))
    stored_idx = list(range(0, nsteps + 1, store_every))
    if stored_idx[-1] != nsteps:
        stored_idx.append(nsteps)
    big = np.empty((len(stored_idx), B, y.shape[1] - 2 * n))
    si = 0
    x_safe = y[:, :n].copy()

    def record(j, f_g_R):
        nonlocal si
        _, g, RE = f_g_R
        det, dW, ddW, ric, gs, nd = _node_scalars(y, g, RE, n)
        xs[:, j] = y[:, :n]
        ks[:, j] = y[:, n:2 * n]
        scal[0, :, j] = det
        scal[1, :, j] = dW
        scal[2, :, j] = ddW
        scal[3, :, j] = ric
        scal[4, :, j] = nd
        gauss[:, j] = gs
        if si < len(stored_idx) and stored_idx[si] == j:
            big[si] = y[:, 2 * n:]
            si += 1

    for j in range(nsteps):
        f1 = sysm.rhs(y, alive, x_safe)
        record(j, f1)
        k1 = f1[0]
        stages = []
        for c, kprev in ((0.5, k1), (0.5, None), (1.0, None)):
            kp = kprev if kprev is not None else stages[-1]
            ys = y + (c * h) * kp
            ok = model.in_chart(ys[:, :n]) & np.all(np.isfinite(ys), axis=1)
            newly = alive & ~ok
            if np.any(newly):
                alive &= ~newly
                dead_at[newly] = j
            stages.append(sysm.rhs(ys, alive, x_safe)[0])
        k2, k3, k4 = stages
        ynew = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        ok = model.in_chart(ynew[:, :n]) & np.all(np.isfinite(ynew), axis=1)
        newly = alive & ~ok
        if np.any(newly):
            alive &= ~newly
            dead_at[newly] = j
        ynew[~alive] = y[~alive]
        y = ynew
        x_safe = np.where(alive[:, None], y[:, :n], x_safe)
        if reproject_every and (j + 1) % reproject_every == 0:
            sub = y[alive]
            if len(sub):
                _reproject(model, sub)
                y[alive] = sub
    record(nsteps, sysm.rhs(y, alive, x_safe))
    return xs, ks, scal, gauss, np.array(stored_idx), big, dead_at


def _grid(t_min, t_max, steps_per_unit):
    nf = int(np.ceil(round(t_max * steps_per_unit, 9))) if t_max > 0 else 0
    nb = int(np.ceil(round(-t_min * steps_per_unit, 9))) if t_min < 0 else 0
    hf = t_max / nf if nf else 0.0
    hb = -t_min / nb if nb else 0.0
    return nf, hf, nb, hb


def propagate_jacobi(model, start, t_max, t_min=0.0, steps_per_unit=128, store_every=4,
                     reproject_every=100, det_floor=DET_FLOOR, threads=1, raise_focal=False,
                     param_scale=None):
    """Propagate geodesic, parallel frame and Jacobi matrix for a ray batch.

    The grid runs from t_min ≤ 0 to t_max ≥ 0 through 0 with at most
    1/steps_per_unit spacing on each side.  Rays are truncated at the first
    focal point (det J̄ ≤ det_floor) minus one grid step and at chart exits;
    det_floor=None disables the focal test.  ``param_scale`` (one factor per
    ray) stretches the grid of each ray: ray b is sampled at t·param_scale[b].
    """
    if t_min > 0 or t_max < 0:
        raise ValueError("the grid must contain t = 0")
    n = model.n
    y0 = _pack(start.x, start.k, start.E, start.J, start.Jd)
    if not np.all(model.in_chart(start.x)):
        raise OutOfChart("ray start outside the chart")
    nf, hf, nb, hb = _grid(t_min, t_max, steps_per_unit)
    B = y0.shape[0]
    scale = np.ones(B) if param_scale is None else np.broadcast_to(np.asarray(param_scale, float), (B,)).copy()

    def run(sl):
        yy = y0[sl]
        fw = _integrate_dir(model, yy, hf * scale[sl], nf, store_every, reproject_every)
        bw = _integrate_dir(model, yy, -hb * scale[sl], nb, store_every, reproject_every)
        return fw, bw

    threads = max(1, int(threads))
    if threads > 1 and B >= 2 * threads:
        chunks = np.array_split(np.arange(B), threads)
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(run, chunks))
        fw = _merge([p[0] for p in parts])
        bw = _merge([p[1] for p in parts])
    else:
        fw, bw = run(slice(None))
    t = np.concatenate([-hb * np.arange(nb, 0, -1), hf * np.arange(nf + 1)])
    i0 = nb

    def join(a, b, axis):
        # backward part reversed, dropping its t=0 duplicate
        rb = np.flip(np.take(b, np.arange(1, b.shape[axis]), axis=axis), axis=axis)
        return np.concatenate([rb, a], axis=axis)

    xs = join(fw[0], bw[0], 1)
    ks = join(fw[1], bw[1], 1)
    scal = join(fw[2], bw[2], 2)
    gauss = join(fw[3], bw[3], 1)
    # stored matrices: backward stored nodes map to i0 - idx
    sf, bf = fw[4], fw[5]
    sb, bb = bw[4], bw[5]
    keep_b = sb > 0
    stored = np.concatenate([i0 - sb[keep_b][::-1], i0 + sf])
    big = np.concatenate([bb[keep_b][::-1], bf], axis=0)
    big = np.moveaxis(big, 0, 1)
    nn = n * n
    Es = big[..., :nn].reshape(B, -1, n, n)
    Js = big[..., nn:2 * nn].reshape(B, -1, n, n)
    Jds = big[..., 2 * nn:].reshape(B, -1, n, n)

    det = scal[0]
    lo = np.zeros(B, int)
    hi = np.full(B, len(t) - 1)
    # chart exits: forward dead_at j means nodes up to j valid
    hi = np.minimum(hi, i0 + fw[6])
    lo = np.maximum(lo, i0 - bw[6])
    left = (fw[6] < nf) | (bw[6] < nb)
    focal = np.full(B, np.nan)
    if det_floor is not None:
        bad = ~(det > det_floor)
        for b in range(B):
            tb = t * scale[b]
            fwd = np.nonzero(bad[b, i0:hi[b] + 1])[0]
            if len(fwd):
                j = i0 + fwd[0]
                focal[b] = _refine_crossing(tb, det[b], scal[1, b], j - 1, j, det_floor)
                hi[b] = max(i0, j - 2)
            bwd = np.nonzero(bad[b, lo[b]:i0 + 1][::-1])[0]
            if len(bwd):
                j = i0 - bwd[0]
                cross = _refine_crossing(tb, det[b], scal[1, b], j + 1, j, det_floor)
                if np.isnan(focal[b]):
                    focal[b] = cross
                lo[b] = min(i0, j + 2)
    if raise_focal and np.any(np.isfinite(focal)):
        from .errors import FocalPoint
        b = int(np.nonzero(np.isfinite(focal))[0][0])
        raise FocalPoint(f"focal point on ray {b} at t = {focal[b]:.6g}", parameter=float(focal[b]), node=b)
    with np.errstate(all="ignore"):
        W = np.log(det)
    valid = (np.arange(len(t))[None, :] >= lo[:, None]) & (np.arange(len(t))[None, :] <= hi[:, None])
    nd = np.where(valid, scal[4], 0.0).max(axis=1)
    return JacobiSamples(t=t, i0=i0, x=xs, k=ks, detJbar=det, W=W, dW=scal[1], ddW=scal[2],
                         ric_LL=scal[3], gauss=gauss, stored=stored, E=Es, J=Js, Jd=Jds,
                         lo=lo, hi=hi, focal=focal, left_chart=left, null_defect=nd,
                         scale=scale, h=max(hf, hb), info={"steps_per_unit": steps_per_unit,
                                              "store_every": store_every})


# ray axis of each output of _integrate_dir (None: shared across rays)
_RAY_AXIS = (0, 0, 1, 0, None, 1, 0)


def _merge(parts):
    out = []
    for i, ax in enumerate(_RAY_AXIS):
        if ax is None:
            out.append(parts[0][i])
        else:
            out.append(np.concatenate([p[i] for p in parts], axis=ax))
    return tuple(out)


def _refine_crossing(t, det, dW, i_good, i_bad, floor):
    """Bisection for det = floor on the cubic Hermite interpolant."""
    t0, t1 = t[i_good], t[i_bad]
    d0, d1 = det[i_good], det[i_bad]
    if not np.isfinite(d1):
        return float(t1)
    h = t1 - t0
    m0 = d0 * dW[i_good] * h
    m1 = d1 * dW[i_bad] * h if np.isfinite(dW[i_bad]) else (d1 - d0)

    def p(s):
        return ((2 * s**3 - 3 * s**2 + 1) * d0 + (s**3 - 2 * s**2 + s) * m0
                + (-2 * s**3 + 3 * s**2) * d1 + (s**3 - s**2) * m1) - floor

    a, b = 0.0, 1.0
    if p(a) * p(b) > 0:
        return float(t1)
    for _ in range(60):
        c = 0.5 * (a + b)
        if p(a) * p(c) <= 0:
            b = c
        else:
            a = c
    return float(t0 + 0.5 * (a + b) * h)


# -- single geodesics ------------------------------------------------------------------
@dataclass
class GeodesicSamples:
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    null_defect: float


def _future_directed(model, x, v):
    g = model.metric(x)
    return gdot(g, v, np.eye(model.n)[0]) < 0


def integrate_null_geodesic(model, x0, v0, grid, null_tol=1e-8, substeps=None):
    """Integrate a null geodesic through x0 with velocity v0 on a parameter grid.

    ``grid`` is an increasing or decreasing sequence starting at 0.  Each grid
    interval is split into ``substeps`` RK4 steps (default: spacing ≤ 1/256).
    """
    x0 = model.require_chart(np.asarray(x0, float))
    v0 = np.asarray(v0, float)
    grid = np.asarray(grid, float)
    if grid[0] != 0:
        raise ValueError("grid must start at 0")
    g0 = model.metric(x0)
    if null_defect(g0, v0) > null_tol:
        raise NullDefect("initial velocity is not null")
    if not _future_directed(model, x0, v0):
        raise ValueError("initial velocity must be future-directed")
    n = model.n
    E = np.eye(n)[None]
    y = _pack(x0[None], v0[None], E, np.eye(n)[None], np.zeros((1, n, n)))
    xs = [x0.copy()]
    vs = [v0.copy()]
    worst = null_defect(g0, v0)
    count = 0
    for a, b in zip(grid[:-1], grid[1:]):
        m = substeps or max(1, int(np.ceil(abs(b - a) * 256 - 1e-9)))
        xs_, ks_, scal, _, _, big, dead = _integrate_dir(model, y, (b - a) / m, m, m, 0)
        if dead[0] < m:
            raise LeftChart(f"geodesic left the chart near t = {a + (b - a) * dead[0] / m:.6g}")
        y = np.concatenate([xs_[:, -1], ks_[:, -1], big[-1]], axis=1)
        count += m
        if count >= 100:
            _reproject(model, y)
            count = 0
        worst = max(worst, float(scal[4].max()))
        xs.append(y[0, :n].copy())
        vs.append(y[0, n:2 * n].copy())
    if worst > null_tol:
        raise NullDefect(f"null defect {worst:.3g} exceeds tolerance")
    return GeodesicSamples(t=grid, x=np.array(xs), v=np.array(vs), null_defect=worst)


# -- Taylor probe --------------------------------------------------------------------------
def tip_frame(model, p, v):
    """Frame at p adapted to the null vector v: (e_1…e_{n−2}, v, v̄), g(v, v̄) = −1."""
    p = model.require_chart(np.asarray(p, float))
    v = np.asarray(v, float)
    g = model.metric(p)
    if null_defect(g, v) > 1e-8:
        raise NullDefect("probe direction is not null")
    F = orthonormal_frame(model, p)
    e0 = F[:, 0]
    # v̄ from the time direction: v̄ = a e0 + b v, null with g(v, v̄) = −1
    c = gdot(g, v, e0)
    vbar = -(e0 + (1.0 / (2.0 * c)) * v) / c * 1.0
    vbar = vbar / (-gdot(g, v, vbar))
    # spacelike block orthogonal to v and v̄
    tang = []
    for a in range(1, model.n):
        w = F[:, a].copy()
        w = w + gdot(g, w, vbar) * v + gdot(g, w, v) * vbar
        for e in tang:
            w = w - gdot(g, w, e) * e
        nrm = gdot(g, w, w)
        if nrm > 1e-8:
            tang.append(w / np.sqrt(nrm))
        if len(tang) == model.n - 2:
            break
    return np.stack(tang + [v, vbar], axis=1)


def taylor_ricci_probe(model, p, v, h_max=None, steps=400, degree=6, fit_tol=1e-6):
    """Estimate Ric_p(v, v) from the small-h law of the tip Jacobi determinant.

    With Jacobi fields Y_i(0) = 0, Y_i'(0) = e_i along h ↦ exp_p(h v),
    (det Ȳ(h))^{1/(n−2)} = h − h³·Ric(v,v)/(6(n−2)) + O(h⁴).  The cubic
    coefficient is recovered by least squares and converted back.
    """
    n = model.n
    E = tip_frame(model, p, v)
    h_max = 0.1 * model.scale if h_max is None else float(h_max)
    J0 = np.zeros((1, n, n))
    Jd0 = np.eye(n)[None]
    start = RayStart(x=np.asarray(p, float)[None], k=np.asarray(v, float)[None], E=E[None], J=J0, Jd=Jd0)
    y0 = _pack(start.x, start.k, start.E, start.J, start.Jd)
    h = h_max / steps
    xs, ks, scal, _, sidx, big, dead = _integrate_dir(model, y0, h, steps, 1, 0)
    if dead[0] < steps:
        raise LeftChart("probe geodesic left the chart")
    m = n - 2
    nn = n * n
    J = big[:, 0, nn:2 * nn].reshape(-1, n, n)[:, :m, :m]
    hs = h * np.arange(steps + 1)
    sel = slice(steps // 10, steps + 1)
    det = np.linalg.det(J[sel])
    if np.any(det <= 0):
        raise FitFailure("tip determinant not positive on the probe window")
    y = det ** (1.0 / m) / hs[sel] - 1.0
    u = hs[sel] / h_max
    V = np.stack([u**j for j in range(2, degree + 1)], axis=1)
    coef, *_ = np.linalg.lstsq(V, y, rcond=None)
    resid = np.abs(V @ coef - y).max()
    if resid > fit_tol * max(1.0, np.abs(y).max()):
        raise FitFailure(f"cubic fit residual {resid:.3g} too large")
    c2 = coef[0] / h_max**2
    return float(-6.0 * m * c2)
