"""Galerkin assembly for the weakly-singular and hypersingular operators.

All bilinear forms reduce to double integrals over element pairs of the
ansatz partition in the parameter domain.  Separated pairs use tensor Gauss
on a fixed per-element grid, vectorized over chunks of pairs.  Identical and
vertex-sharing pairs split the kernel as

    log|gamma(s) - gamma(t)| = log|s - t| + log(|gamma(s)-gamma(t)| / |s-t|)

where the first factor is handled by a Gaussian rule for the log weight and
the second is smooth thanks to the bi-Lipschitz parametrization.  Chords at
small parameter distance are evaluated through the averaged tangent
(3-point Gauss of gamma' between the two points), which avoids the
cancellation of differencing nearby curve points.

The hypersingular form is assembled through Maue's identity: its integrand
carries parameter derivatives of the (wrapped, rational) ansatz functions
and no Jacobian factors, since those cancel against the arclength measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import quadrature, splines
from .geometry import BoundaryCurve
from .knots import KnotVector

INV2PI = 1.0 / (2.0 * math.pi)
_STABLE_CHORD_FACTOR = 0.05  # averaged-tangent chords below this |s-t|/(h_s+h_t)
_G3, _G3W = quadrature.gauss01(3)


@dataclass(frozen=True)
class QuadratureSpec:
    """Gauss orders for the regular/log factors and the near-field trigger."""

    n_gauss: int = 16
    n_log: int = 16
    near_ratio: float = 2.0

    def __post_init__(self):
        if self.n_gauss < 2 or self.n_log < 2:
            raise ValueError("quadrature orders must be at least 2")
        if self.near_ratio <= 0:
            raise ValueError("near-field ratio must be positive")


class CurveCache:
    """Partition-aware curve data shared by every assembly pass on one level."""

    def __init__(self, kv: KnotVector, curve: BoundaryCurve, quad: QuadratureSpec,
                 threads: int = 1):
        self.kv = kv
        self.curve = curve
        self.quad = quad
        self.threads = max(1, int(threads))
        self.n_el = kv.n_elements
        self.breaks = kv.breaks_float
        self.h = np.diff(self.breaks)
        self.gx, self.gw = quadrature.gauss01(quad.n_gauss)
        pts, tans, speeds = self.frames_table(self.gx)
        self.pts, self.tans, self.speeds = pts, tans, speeds
        self.normals = curve.normals_from_tangents(tans)
        self.arclen = (speeds @ self.gw) * self.h
        self.centroids = self.frames_table(np.array([0.5]))[0][:, 0, :]
        self._near = None
        self._frame_memo: dict = {}
        # each partition element must sit inside one geometry knot span
        Tg = curve.kv.knots_float
        mids = (self.breaks[:-1] + self.breaks[1:]) / 2.0
        self.geo_spans = np.searchsorted(Tg, mids, side="right") - 1
        lo = int(np.searchsorted(Tg, Tg[0], side="right")) - 1
        hi = int(np.searchsorted(Tg, Tg[-1], side="left")) - 1
        self.geo_spans = np.clip(self.geo_spans, lo, hi)
        if np.any(Tg[self.geo_spans] - 1e-15 > self.breaks[:-1]) or np.any(
            Tg[self.geo_spans + 1] + 1e-15 < self.breaks[1:]
        ):
            raise ValueError("partition elements straddle geometry knots")
        # exactly shifted knot windows: B-splines are translation invariant,
        # and local evaluation keeps full precision however deep the mesh
        # grades toward parameters of magnitude one
        p = kv.p
        spans = splines.element_spans(kv)
        knot_frac = [z for z, m in zip(kv.breakpoints, kv.mults) for _ in range(m)]
        self.knot_windows = np.array([
            [float(knot_frac[k] - kv.breakpoints[e]) for k in range(s - p, s + p + 2)]
            for e, s in enumerate(spans)
        ])

    def params(self, e: int, loc: np.ndarray) -> np.ndarray:
        return self.breaks[e] + self.h[e] * np.asarray(loc, dtype=float)

    def frames(self, e: int, loc: np.ndarray):
        loc = np.asarray(loc, dtype=float)
        key = (e, hash(loc.tobytes()))
        hit = self._frame_memo.get(key)
        if hit is None:
            hit = self.curve.frames_span(int(self.geo_spans[e]), self.params(e, loc))
            if len(self._frame_memo) > 4 * self.n_el + 64:
                self._frame_memo.clear()
            self._frame_memo[key] = hit
        return hit

    def frames_table(self, local_nodes: np.ndarray):
        """Frames on all partition elements; shapes (n_el, n_pts, ...)."""
        n_pts = len(local_nodes)
        ts = (self.breaks[:-1, None] + self.h[:, None] * local_nodes[None, :]).ravel()
        pts, tans, speeds = self.curve.frames_at(ts)
        return (
            pts.reshape(self.n_el, n_pts, 2),
            tans.reshape(self.n_el, n_pts, 2),
            speeds.reshape(self.n_el, n_pts),
        )

    def near_matrix(self) -> np.ndarray:
        """Ordered element pairs needing more than the far tensor rule."""
        if self._near is None:
            c = self.centroids
            d = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=2)
            size = np.maximum(self.arclen[:, None], self.arclen[None, :])
            near = d < self.quad.near_ratio * size
            np.fill_diagonal(near, True)
            self._near = near
        return self._near

    def shared_vertex(self, ea: int, eb: int):
        """Canonical (first, second) order if the pair shares one vertex."""
        n = self.n_el
        closed = self.curve.closed
        if eb == ea + 1 or (closed and ea == n - 1 and eb == 0):
            return ea, eb
        if ea == eb + 1 or (closed and eb == n - 1 and ea == 0):
            return eb, ea
        return None

    def mean_tangent(self, e_s, loc_s, e_t, loc_t, dist):
        """M = (gamma(s)-gamma(t))/(s-t) by Gauss integration of gamma'.

        For distinct elements, e_s must precede e_t and the path runs through
        the shared vertex; dist is the signed parameter distance s - t.
        """
        if e_s == e_t:
            base = loc_t[:, None] + (loc_s - loc_t)[:, None] * _G3[None, :]
            _, tg, _ = self.frames(e_s, base.ravel())
            tg = tg.reshape(len(loc_s), 3, 2)
            return np.einsum("g,pgd->pd", _G3W, tg)
        hs, ht = self.h[e_s], self.h[e_t]
        base_s = loc_s[:, None] + (1.0 - loc_s)[:, None] * _G3[None, :]
        base_t = loc_t[:, None] * _G3[None, :]
        _, tg_s, _ = self.frames(e_s, base_s.ravel())
        _, tg_t, _ = self.frames(e_t, base_t.ravel())
        tg_s = tg_s.reshape(len(loc_s), 3, 2)
        tg_t = tg_t.reshape(len(loc_t), 3, 2)
        part_s = np.einsum("g,pgd->pd", _G3W, tg_s) * (hs * (1.0 - loc_s))[:, None]
        part_t = np.einsum("g,pgd->pd", _G3W, tg_t) * (ht * loc_t)[:, None]
        return -(part_s + part_t) / dist[:, None]

    def kernel_values(self, kernel, e_s, loc_s, e_t, loc_t, dist):
        """Stabilized kernel values at paired points; for log-type kernels the
        log|s-t| factor is left out (handled by the log-weight rule)."""
        pts_s, tan_s, _ = self.frames(e_s, loc_s)
        pts_t, tan_t, _ = self.frames(e_t, loc_t)
        n_s = self.curve.normals_from_tangents(tan_s)
        n_t = self.curve.normals_from_tangents(tan_t)
        hs, ht = self.h[e_s], self.h[e_t]
        # averaged-tangent chords also below an absolute parameter distance:
        # differencing curve points loses all digits once |gamma(s)-gamma(t)|
        # approaches the spacing of representable coordinates
        use_stable = np.abs(dist) < max(_STABLE_CHORD_FACTOR * (hs + ht), 1e-6)
        out = np.empty(len(dist))
        idx = np.nonzero(use_stable)[0]
        if len(idx):
            mean = self.mean_tangent(e_s, loc_s[idx], e_t, loc_t[idx], dist[idx])
            out[idx] = kernel.from_frames(dist[idx], mean, n_s[idx], n_t[idx])
        rest = np.nonzero(~use_stable)[0]
        if len(rest):
            if kernel.log_coeff != 0.0:
                chord = pts_s[rest] - pts_t[rest]
                ratio2 = (chord[:, 0] ** 2 + chord[:, 1] ** 2) / dist[rest] ** 2
                out[rest] = 0.5 * kernel.log_coeff * np.log(ratio2)
            else:
                out[rest] = kernel.far(pts_s[rest], pts_t[rest], n_s[rest], n_t[rest])
        return out


# ---------------------------------------------------------------------------
# local factor tables (test/trial functions restricted to elements)
# ---------------------------------------------------------------------------

class SplineFactors:
    """Degree-q B-spline basis, optionally weighted by the speed |gamma'|."""

    def __init__(self, cache: CurveCache, q: int, with_speed: bool):
        kv = cache.kv
        self.cache = cache
        self.q = q
        self.with_speed = with_speed
        self.spans = splines.element_spans(kv)
        N = kv.num_knots
        if q == kv.p:
            self.n_dofs = N
            self.dof_start = self.spans - q
        elif q == kv.p - 1:
            self.n_dofs = N - 1
            self.dof_start = self.spans - q - 1
        else:
            raise ValueError("only degrees p and p-1 are used")
        self.n_loc = q + 1
        self.T = kv.knots_float

    def eval_local(self, e: int, loc: np.ndarray) -> np.ndarray:
        p = self.cache.kv.p
        win = self.cache.knot_windows[e]
        x = self.cache.h[e] * np.asarray(loc, dtype=float)
        if self.q == p:
            vals = splines.basis_row(win, p, p, x)
        else:
            vals = splines.basis_row(win[1:-1], self.q, self.q, x)
        if self.with_speed:
            vals = vals * self.cache.frames(e, loc)[2]
        return vals


class NurbsFactors:
    """Rational degree-p basis values, optionally speed-weighted."""

    def __init__(self, cache: CurveCache, with_speed: bool):
        kv = cache.kv
        self.cache = cache
        self.with_speed = with_speed
        self.spans = splines.element_spans(kv)
        self.n_dofs = kv.num_knots
        self.dof_start = self.spans - kv.p
        self.n_loc = kv.p + 1
        self.T = kv.knots_float

    def eval_local(self, e: int, loc: np.ndarray) -> np.ndarray:
        kv = self.cache.kv
        p = kv.p
        x = self.cache.h[e] * np.asarray(loc, dtype=float)
        vals = splines.basis_row(self.cache.knot_windows[e], p, p, x)
        wk = kv.weights[self.dof_start[e] : self.dof_start[e] + p + 1]
        vals = wk[:, None] * vals / (wk @ vals)
        if self.with_speed:
            vals = vals * self.cache.frames(e, loc)[2]
        return vals


class NurbsDerivFactors:
    """Parameter derivatives of the rational degree-p basis (quotient rule)."""

    def __init__(self, cache: CurveCache):
        kv = cache.kv
        self.cache = cache
        self.spans = splines.element_spans(kv)
        self.n_dofs = kv.num_knots
        self.dof_start = self.spans - kv.p
        self.n_loc = kv.p + 1
        self.T = kv.knots_float

    def eval_local(self, e: int, loc: np.ndarray) -> np.ndarray:
        kv = self.cache.kv
        p = kv.p
        x = self.cache.h[e] * np.asarray(loc, dtype=float)
        vals, ders = splines.basis_row_pair(self.cache.knot_windows[e], p, p, x)
        wk = kv.weights[self.dof_start[e] : self.dof_start[e] + p + 1]
        W = wk @ vals
        Wd = wk @ ders
        return wk[:, None] * (ders * W - vals * Wd) / W**2


class FunctionFactors:
    """A single given density, used as the trial side of functionals."""

    n_loc = 1
    n_dofs = 1

    def __init__(self, cache: CurveCache, func, with_speed: bool = True):
        # func(e, loc, pts, speeds) -> values
        self.cache = cache
        self.func = func
        self.with_speed = with_speed
        self.dof_start = np.zeros(cache.n_el, dtype=int)

    def eval_local(self, e: int, loc: np.ndarray) -> np.ndarray:
        pts, _, speeds = self.cache.frames(e, loc)
        vals = np.asarray(self.func(e, loc, pts, speeds), dtype=float)
        if self.with_speed:
            vals = vals * speeds
        return vals[None, :]


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

class WeaklySingularKernel:
    """G(x,y) = -(1/2pi) log|x-y|; exactly of log type."""

    log_coeff = -INV2PI

    symmetric = True

    @staticmethod
    def far(px, py, nx=None, ny=None):
        r2 = (px[..., 0] - py[..., 0]) ** 2
        r2 += (px[..., 1] - py[..., 1]) ** 2
        np.maximum(r2, 1e-300, out=r2)  # coincident grid points are masked later
        np.log(r2, out=r2)
        r2 *= -0.5 * INV2PI
        return r2

    @staticmethod
    def from_frames(dist, mean_tan, nx, ny):
        # log|x-y| - log|s-t| = log|M|
        m2 = mean_tan[..., 0] ** 2 + mean_tan[..., 1] ** 2
        return -0.5 * INV2PI * np.log(m2)


class DoubleLayerKernel:
    """d/d nu_y G(x,y) = (1/2pi) (x-y).nu_y / |x-y|^2 (bounded on smooth arcs)."""

    log_coeff = 0.0
    symmetric = False

    @staticmethod
    def far(px, py, nx, ny):
        d = px - py
        r2 = d[..., 0] ** 2 + d[..., 1] ** 2
        r2 = np.where(r2 > 0.0, r2, 1.0)
        return INV2PI * (d[..., 0] * ny[..., 0] + d[..., 1] * ny[..., 1]) / r2

    @staticmethod
    def from_frames(dist, mean_tan, nx, ny):
        m2 = mean_tan[..., 0] ** 2 + mean_tan[..., 1] ** 2
        dot = mean_tan[..., 0] * ny[..., 0] + mean_tan[..., 1] * ny[..., 1]
        return INV2PI * dot / (dist * m2)


class AdjointDoubleLayerKernel:
    """d/d nu_x G(x,y) = -(1/2pi) (x-y).nu_x / |x-y|^2."""

    log_coeff = 0.0
    symmetric = False

    @staticmethod
    def far(px, py, nx, ny):
        d = px - py
        r2 = d[..., 0] ** 2 + d[..., 1] ** 2
        r2 = np.where(r2 > 0.0, r2, 1.0)
        return -INV2PI * (d[..., 0] * nx[..., 0] + d[..., 1] * nx[..., 1]) / r2

    @staticmethod
    def from_frames(dist, mean_tan, nx, ny):
        m2 = mean_tan[..., 0] ** 2 + mean_tan[..., 1] ** 2
        dot = mean_tan[..., 0] * nx[..., 0] + mean_tan[..., 1] * nx[..., 1]
        return -INV2PI * dot / (dist * m2)


# ---------------------------------------------------------------------------
# careful pair rules
# ---------------------------------------------------------------------------

def _block_same_element(cache: CurveCache, kernel, rowf, colf, e: int):
    """Both integrals over element e; two-triangle composite in (w, v)."""
    quad = cache.quad
    h = cache.h[e]
    gx, gw = quadrature.gauss01(quad.n_gauss)
    lx, lw = quadrature.gauss_log01(quad.n_log)

    def orientation_sum(wnodes, wweights, log_dist_factor):
        sig = (wnodes[:, None] + (1.0 - wnodes)[:, None] * gx[None, :]).ravel()
        tau = ((1.0 - wnodes)[:, None] * gx[None, :]).ravel()
        wts = (wweights * (1.0 - wnodes))[:, None] * gw[None, :]
        wts = wts.ravel()
        blk = 0.0
        for a_loc, b_loc in ((sig, tau), (tau, sig)):
            fr = rowf.eval_local(e, a_loc)
            fc = colf.eval_local(e, b_loc)
            if log_dist_factor:
                kv = wts
            else:
                dist = h * (a_loc - b_loc)
                kv = cache.kernel_values(kernel, e, a_loc, e, b_loc, dist)
                if kernel.log_coeff != 0.0:
                    kv = kv + kernel.log_coeff * math.log(h)
                kv = kv * wts
            blk = blk + np.einsum("an,bn,n->ab", fr, fc, kv)
        return blk

    # smooth part (kernel minus its log|sigma-tau| factor), regular rule in w
    block = orientation_sum(gx, gw, False)
    if kernel.log_coeff != 0.0:
        # int f log w dw = -int f log(1/w) dw over the log-weight rule
        block = block - kernel.log_coeff * orientation_sum(lx, lw, True)
    return h * h * block


def _block_adjacent(cache: CurveCache, kernel, rowf, colf, e_s: int, e_t: int):
    """Vertex-sharing pair, e_s preceding e_t; Duffy split at the vertex."""
    quad = cache.quad
    hs, ht = cache.h[e_s], cache.h[e_t]
    gx, gw = quadrature.gauss01(quad.n_gauss)
    lx, lw = quadrature.gauss_log01(quad.n_log)

    def triangle(first_is_s: bool, xnodes, xweights, log_in_x: bool):
        n_x = len(xnodes)
        if first_is_s:
            ls = np.repeat(1.0 - xnodes, len(gx))
            lt = (xnodes[:, None] * gx[None, :]).ravel()
            scale = np.broadcast_to(hs + ht * gx, (n_x, len(gx))).ravel()
        else:
            ls = 1.0 - (xnodes[:, None] * gx[None, :]).ravel()
            lt = np.repeat(xnodes, len(gx))
            scale = np.broadcast_to(hs * gx + ht, (n_x, len(gx))).ravel()
        wts = ((xweights * xnodes)[:, None] * gw[None, :]).ravel()
        fr = rowf.eval_local(e_s, ls)
        fc = colf.eval_local(e_t, lt)
        if log_in_x:
            kv = wts
        else:
            dist = -(hs * (1.0 - ls) + ht * lt)
            kv = cache.kernel_values(kernel, e_s, ls, e_t, lt, dist)
            if kernel.log_coeff != 0.0:
                kv = kv + kernel.log_coeff * np.log(scale)
            kv = kv * wts
        return np.einsum("an,bn,n->ab", fr, fc, kv)

    block = triangle(True, gx, gw, False) + triangle(False, gx, gw, False)
    if kernel.log_coeff != 0.0:
        block = block - kernel.log_coeff * (
            triangle(True, lx, lw, True) + triangle(False, lx, lw, True)
        )
    return hs * ht * block


def _block_near(cache: CurveCache, kernel, rowf, colf, e_s, e_t,
                lo_s=0.0, hi_s=1.0, lo_t=0.0, hi_t=1.0, depth=0):
    """Separated but close pair: recursive bisection, then tensor Gauss."""
    quad = cache.quad
    gx, gw = cache.gx, cache.gw
    hs = cache.h[e_s] * (hi_s - lo_s)
    ht = cache.h[e_t] * (hi_t - lo_t)
    ps = cache.frames(e_s, np.array([(lo_s + hi_s) / 2]))[0][0]
    pt = cache.frames(e_t, np.array([(lo_t + hi_t) / 2]))[0][0]
    dist = float(np.linalg.norm(ps - pt))
    size = max(cache.arclen[e_s] * (hi_s - lo_s), cache.arclen[e_t] * (hi_t - lo_t))
    if depth < 4 and dist < quad.near_ratio * size:
        mid_s = (lo_s + hi_s) / 2
        mid_t = (lo_t + hi_t) / 2
        blk = 0.0
        for a, b in ((lo_s, mid_s), (mid_s, hi_s)):
            for c, d in ((lo_t, mid_t), (mid_t, hi_t)):
                blk = blk + _block_near(cache, kernel, rowf, colf,
                                        e_s, e_t, a, b, c, d, depth + 1)
        return blk
    loc_s = lo_s + (hi_s - lo_s) * gx
    loc_t = lo_t + (hi_t - lo_t) * gx
    pts_s, tan_s, _ = cache.frames(e_s, loc_s)
    pts_t, tan_t, _ = cache.frames(e_t, loc_t)
    n_s = cache.curve.normals_from_tangents(tan_s)
    n_t = cache.curve.normals_from_tangents(tan_t)
    kvals = kernel.far(pts_s[:, None, :], pts_t[None, :, :],
                       n_s[:, None, :], n_t[None, :, :])
    fr = rowf.eval_local(e_s, loc_s)
    fc = colf.eval_local(e_t, loc_t)
    return hs * ht * np.einsum("ag,bh,gh,g,h->ab", fr, fc, kvals, gw, gw)


def _pair_block(cache: CurveCache, kernel, rowf, colf, ea: int, eb: int):
    """Careful quadrature for one ordered pair (rows on ea, columns on eb)."""
    if ea == eb:
        return _block_same_element(cache, kernel, rowf, colf, ea)
    shared = cache.shared_vertex(ea, eb)
    if shared is not None:
        if shared == (ea, eb):
            return _block_adjacent(cache, kernel, rowf, colf, ea, eb)
        return _block_adjacent(cache, _Transposed(kernel), colf, rowf, eb, ea).T
    return _block_near(cache, kernel, rowf, colf, ea, eb)


class _Transposed:
    """Kernel with the roles of x and y exchanged."""

    def __init__(self, inner):
        self.inner = inner
        self.log_coeff = inner.log_coeff

    def far(self, px, py, nx, ny):
        return self.inner.far(py, px, ny, nx)

    def from_frames(self, dist, mean_tan, nx, ny):
        return self.inner.from_frames(-dist, mean_tan, ny, nx)


# ---------------------------------------------------------------------------
# assembly drivers
# ---------------------------------------------------------------------------

def _bulk_tables(cache: CurveCache, factors):
    tabs = np.empty((cache.n_el, factors.n_loc, len(cache.gx)))
    for e in range(cache.n_el):
        tabs[e] = factors.eval_local(e, cache.gx)
    return tabs


def assemble_bilinear(cache: CurveCache, kernel, rowf, colf) -> np.ndarray:
    """Dense Galerkin matrix of the kernel between two local factor sets."""
    n_el = cache.n_el
    near = cache.near_matrix()
    rtab = _bulk_tables(cache, rowf) * (cache.gw[None, :] * cache.h[:, None])[:, None, :]
    ctab = _bulk_tables(cache, colf) * (cache.gw[None, :] * cache.h[:, None])[:, None, :]
    out = np.zeros((rowf.n_dofs, colf.n_dofs))

    n_g = len(cache.gx)
    chunk = max(1, int(4e6 / (n_g * n_g * n_el + 1)))
    pts, nrm = cache.pts, cache.normals
    mirror = rowf is colf and getattr(kernel, "symmetric", False)

    def far_blocks(s0, s1, t0, t1):
        kv = kernel.far(
            pts[s0:s1, :, None, None, :], pts[None, None, t0:t1, :, :],
            nrm[s0:s1, :, None, None, :], nrm[None, None, t0:t1, :, :],
        )
        kv *= (~near[s0:s1, t0:t1])[:, None, :, None]  # careful pairs done below
        tmp = np.einsum("sgth,tbh->sgtb", kv, ctab[t0:t1])
        return np.einsum("sag,sgtb->satb", rtab[s0:s1], tmp)

    def scatter(blocks, s0, s1, t0, t1, transpose=False):
        # fancy-index += drops duplicate targets; columns repeat exactly when
        # the trial side is a single functional, so reduce over sources then
        for a in range(rowf.n_loc):
            rows = rowf.dof_start[s0:s1] + a
            for b in range(colf.n_loc):
                cols = colf.dof_start[t0:t1] + b
                if colf.n_dofs == 1:
                    out[rows, 0] += blocks[:, a, :, b].sum(axis=1)
                elif transpose:
                    out[cols[:, None], rows[None, :]] += blocks[:, a, :, b].T
                else:
                    out[rows[:, None], cols[None, :]] += blocks[:, a, :, b]

    def chunk_job(s0):
        s1 = min(s0 + chunk, n_el)
        if mirror:
            # off-diagonal rectangle once, mirrored; diagonal square directly
            blocks = far_blocks(s0, s1, s1, n_el)
            return [(blocks, s0, s1, s1, n_el, False), (blocks, s0, s1, s1, n_el, True),
                    (far_blocks(s0, s1, s0, s1), s0, s1, s0, s1, False)]
        return [(far_blocks(s0, s1, 0, n_el), s0, s1, 0, n_el, False)]

    starts = list(range(0, n_el, chunk))
    if cache.threads > 1 and len(starts) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=cache.threads) as pool:
            results = list(pool.map(chunk_job, starts))
    else:
        results = map(chunk_job, starts)
    for parts in results:  # scatter in chunk order: deterministic sums
        for blocks, s0, s1, t0, t1, transpose in parts:
            scatter(blocks, s0, s1, t0, t1, transpose)

    for ea, eb in zip(*np.nonzero(near)):
        blk = _pair_block(cache, kernel, rowf, colf, int(ea), int(eb))
        ra = rowf.dof_start[ea]
        cb = colf.dof_start[eb]
        out[ra : ra + rowf.n_loc, cb : cb + colf.n_loc] += blk
    return out


def single_integral(cache: CurveCache, factors, func=None) -> np.ndarray:
    """Int F_j ds, or Int F_j * func dt-weighted via the factors' own measure."""
    out = np.zeros(factors.n_dofs)
    for e in range(cache.n_el):
        vals = factors.eval_local(e, cache.gx)
        if func is not None:
            pts, _, speeds = cache.frames(e, cache.gx)
            vals = vals * np.asarray(func(e, cache.gx, pts, speeds))[None, :]
        sl = slice(factors.dof_start[e], factors.dof_start[e] + factors.n_loc)
        out[sl] += cache.h[e] * (vals @ cache.gw)
    return out


# ---------------------------------------------------------------------------
# operator matrices and moments
# ---------------------------------------------------------------------------

def assemble_V(kv: KnotVector, curve: BoundaryCurve, quad: QuadratureSpec,
               cache: CurveCache | None = None) -> np.ndarray:
    """Weakly-singular Galerkin matrix on the degree-(p-1) basis."""
    if not np.all(kv.weights == 1.0):
        raise ValueError("weakly-singular assembly requires unit weights")
    cache = cache or CurveCache(kv, curve, quad)
    f = SplineFactors(cache, kv.p - 1, with_speed=True)
    return assemble_bilinear(cache, WeaklySingularKernel, f, f)


def assemble_W(kv: KnotVector, curve: BoundaryCurve, quad: QuadratureSpec,
               stabilized: bool = True, cache: CurveCache | None = None) -> np.ndarray:
    """Hypersingular Galerkin matrix on the wrapped ansatz (Maue form).

    For closed boundaries the rank-one term <u,1><v,1> is added unless
    `stabilized` is False; open boundaries never get one.
    """
    cache = cache or CurveCache(kv, curve, quad)
    f = NurbsDerivFactors(cache)
    full = assemble_bilinear(cache, WeaklySingularKernel, f, f)
    E = splines.wrap_embedding(kv)
    mat = np.asarray((E.T @ full) @ E)
    if stabilized and kv.closed:
        m = moment_vector(kv, curve, quad, cache)
        mat = mat + np.outer(m, m)
    return mat


def moment_vector(kv: KnotVector, curve: BoundaryCurve, quad: QuadratureSpec,
                  cache: CurveCache | None = None) -> np.ndarray:
    """<R_j, 1>_Gamma over the wrapped ansatz basis."""
    cache = cache or CurveCache(kv, curve, quad)
    full = single_integral(cache, NurbsFactors(cache, with_speed=True))
    return splines.wrap_embedding(kv).T @ full
