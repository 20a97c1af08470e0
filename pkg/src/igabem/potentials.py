"""Pointwise layer potentials, elementwise projection, and residual derivatives.

Companion to the Galerkin assembly: the error indicators need single- and
double-layer potentials evaluated at sample points on the boundary, the
L2-orthogonal projection of data onto elementwise polynomials, and arclength
derivatives of sampled residuals obtained by differentiating a per-element
polynomial interpolant.
"""

from __future__ import annotations

import math

import numpy as np

from . import quadrature
from .assembly import CurveCache, WeaklySingularKernel

_VERTEX_TOL = 1e-12
_N_PANELS = 8  # geometric subdivision depth for near-singular 1D integrals


# ---------------------------------------------------------------------------
# elementwise L2 projection
# ---------------------------------------------------------------------------

class PiecewisePoly:
    """Per-element polynomial in the local coordinate, Legendre coefficients."""

    def __init__(self, coeffs: np.ndarray):
        self.coeffs = coeffs  # (n_el, degree+1)
        self.degree = coeffs.shape[1] - 1

    def eval_local(self, e: int, loc: np.ndarray) -> np.ndarray:
        basis = _legendre_table(self.degree, np.asarray(loc, dtype=float))
        return self.coeffs[e] @ basis

    def eval_table(self, loc: np.ndarray) -> np.ndarray:
        basis = _legendre_table(self.degree, np.asarray(loc, dtype=float))
        return self.coeffs @ basis


def _legendre_table(degree: int, loc: np.ndarray) -> np.ndarray:
    x = 2.0 * loc - 1.0
    out = np.empty((degree + 1, len(loc)))
    out[0] = 1.0
    if degree >= 1:
        out[1] = x
    for n in range(1, degree):
        out[n + 1] = ((2 * n + 1) * x * out[n] - n * out[n - 1]) / (n + 1)
    return out


def l2_project(cache: CurveCache, func, degree: int) -> PiecewisePoly:
    """L2(Gamma)-orthogonal projection onto transformed elementwise
    polynomials of the given degree (arclength-weighted per element)."""
    gx, gw = quadrature.gauss01(max(cache.quad.n_gauss, 2 * degree + 2))
    basis = _legendre_table(degree, gx)
    coeffs = np.empty((cache.n_el, degree + 1))
    for e in range(cache.n_el):
        pts, _, speeds = cache.frames(e, gx)
        mu = gw * speeds
        vals = np.asarray(func(e, gx, pts, speeds), dtype=float)
        gram = np.einsum("an,bn,n->ab", basis, basis, mu)
        rhs = basis @ (mu * vals)
        coeffs[e] = np.linalg.solve(gram, rhs)
    return PiecewisePoly(coeffs)


# ---------------------------------------------------------------------------
# layer potentials at boundary sample points
# ---------------------------------------------------------------------------

def layer_potential(cache: CurveCache, kernel, density_fn, target_loc: np.ndarray,
                    target_normals: np.ndarray | None = None) -> np.ndarray:
    """Potential Int k(x, gamma(t)) psi(t) dt at the local nodes of every element.

    `density_fn(e, loc) -> values` is the parameter-domain density (any
    arclength factors already folded in).  Targets x run over
    param(e, target_loc) for every element e; pass `target_normals` when the
    kernel needs the normal at x.
    """
    n_el, n_t = cache.n_el, len(target_loc)
    n_g = len(cache.gx)
    near = cache.near_matrix()

    src_vals = np.empty((n_el, n_g))
    for e in range(n_el):
        src_vals[e] = density_fn(e, cache.gx)
    src_w = src_vals * (cache.gw[None, :] * cache.h[:, None])

    tpts, ttans, _ = cache.frames_table(target_loc)
    tnrm = target_normals
    if tnrm is None:
        tnrm = cache.curve.normals_from_tangents(ttans)

    out = np.zeros((n_el, n_t))
    chunk = max(1, int(4e6 / (n_g * n_el + 1)))
    for e0 in range(0, n_el, chunk):
        e1 = min(e0 + chunk, n_el)
        kv = kernel.far(
            tpts[e0:e1, :, None, None, :], cache.pts[None, None, :, :, :],
            tnrm[e0:e1, :, None, None, :], cache.normals[None, None, :, :, :],
        )
        kv *= (~near[e0:e1])[:, None, :, None]
        out[e0:e1] = np.einsum("etsg,sg->et", kv, src_w)

    for et in range(n_el):
        for es in np.nonzero(near[et])[0]:
            out[et] += _careful_potential(cache, kernel, int(et), target_loc,
                                          tpts[et], tnrm[et], int(es), density_fn)
    return out


def _careful_potential(cache: CurveCache, kernel, et: int, tloc: np.ndarray,
                       tpts: np.ndarray, tnrm: np.ndarray, es: int, density_fn):
    """Near-field source integral, batched over the targets of one element."""
    n_t = len(tloc)
    out = np.zeros(n_t)
    if es == et:
        return _self_element(cache, kernel, et, tloc, tnrm, density_fn)
    shared = cache.shared_vertex(et, es)
    vloc = None
    at_vertex = np.zeros(n_t, dtype=bool)
    if shared is not None:
        e_first, _ = shared
        vloc = 1.0 if es == e_first else 0.0
        target_vertex = 1.0 if et == e_first else 0.0
        at_vertex = np.abs(tloc - target_vertex) < _VERTEX_TOL
    if np.any(at_vertex):
        idx = np.nonzero(at_vertex)[0]
        out[idx] = _vertex_element(cache, kernel, et, tloc[idx], tnrm[idx], es,
                                   vloc, density_fn)
    rest = np.nonzero(~at_vertex)[0]
    if len(rest):
        out[rest] = _near_composite(cache, kernel, tpts[rest], tnrm[rest], es,
                                    density_fn)
    return out


def _self_element(cache, kernel, e, tloc, tnrm, density_fn):
    """Targets inside (or at an endpoint of) the source element: split at each
    target; the log factor gets the log-weight rule, the rest plain Gauss."""
    gx, gw = quadrature.gauss01(cache.quad.n_gauss)
    lx, lw = quadrature.gauss_log01(cache.quad.n_log)
    h = cache.h[e]
    n_g = len(gx)
    total = np.zeros(len(tloc))
    for sgn in (-1.0, 1.0):
        length = tloc if sgn < 0 else 1.0 - tloc
        idx = np.nonzero(length > _VERTEX_TOL)[0]
        if not len(idx):
            continue
        L = length[idx]
        xl = tloc[idx]
        u = (xl[:, None] + sgn * L[:, None] * gx[None, :]).ravel()
        xl_rep = np.repeat(xl, n_g)
        dist = h * (xl_rep - u)
        kv = _stable_pair_values(cache, kernel, e, xl_rep, e, u, dist)
        dens = density_fn(e, u).reshape(len(idx), n_g)
        kv = kv.reshape(len(idx), n_g)
        side = h * L * ((kv * dens) @ gw)
        if kernel.log_coeff != 0.0:
            side += h * L * kernel.log_coeff * np.log(h * L) * (dens @ gw)
            ul = (xl[:, None] + sgn * L[:, None] * lx[None, :]).ravel()
            dens_l = density_fn(e, ul).reshape(len(idx), len(lx))
            side -= h * L * kernel.log_coeff * (dens_l @ lw)
        total[idx] += side
    return total


def _vertex_element(cache, kernel, et, tloc, tnrm, es, vloc, density_fn):
    """Targets sitting exactly on the vertex shared with the source element."""
    gx, gw = quadrature.gauss01(cache.quad.n_gauss)
    lx, lw = quadrature.gauss_log01(cache.quad.n_log)
    h = cache.h[es]
    n_t = len(tloc)
    sgn = 1.0 if vloc == 0.0 else -1.0
    loc_g = vloc + sgn * gx
    # parameter distance runs through the shared vertex
    dist = np.tile(-sgn * h * gx, n_t)
    kv = _stable_pair_values(cache, kernel, et, np.repeat(tloc, len(gx)), es,
                             np.tile(loc_g, n_t), dist).reshape(n_t, len(gx))
    dens = density_fn(es, loc_g)
    if kernel.log_coeff != 0.0:
        kv = kv + kernel.log_coeff * math.log(h)
    total = h * (kv @ (dens * gw))
    if kernel.log_coeff != 0.0:
        dens_l = density_fn(es, vloc + sgn * lx)
        total -= kernel.log_coeff * h * np.dot(dens_l, lw)
    return total


def _stable_pair_values(cache, kernel, et, loc_x, es, loc_y, dist):
    """Kernel values between target/source points, without the log|s-t|
    factor for log-type kernels; targets may lie on a neighbouring element."""
    if es == et:
        return cache.kernel_values(kernel, et, loc_x, es, loc_y, dist)
    shared = cache.shared_vertex(et, es)
    if shared == (et, es):
        return cache.kernel_values(kernel, et, loc_x, es, loc_y, dist)
    from .assembly import _Transposed

    return cache.kernel_values(_Transposed(kernel), es, loc_y, et, loc_x, -dist)


def _near_composite(cache, kernel, x, nx, es, density_fn):
    """Geometric panels toward the source endpoint closest to the targets."""
    gx, gw = quadrature.gauss01(cache.quad.n_gauss)
    ends = cache.frames(es, np.array([0.0, 1.0]))[0]
    centroid = x.mean(axis=0)
    toward_zero = (np.linalg.norm(ends[0] - centroid)
                   < np.linalg.norm(ends[1] - centroid))
    cuts = np.array([0.0] + [2.0**-k for k in range(_N_PANELS - 1, -1, -1)])
    los = cuts[:-1] if toward_zero else 1.0 - cuts[1:]
    his = cuts[1:] if toward_zero else 1.0 - cuts[:-1]
    widths = his - los
    loc = (los[:, None] + widths[:, None] * gx[None, :]).ravel()
    pts, tans, _ = cache.frames(es, loc)
    ny = cache.curve.normals_from_tangents(tans)
    kv = kernel.far(x[:, None, :], pts[None, :, :], nx[:, None, :], ny[None, :, :])
    wts = cache.h[es] * (widths[:, None] * gw[None, :]).ravel()
    return kv @ (density_fn(es, loc) * wts)


# ---------------------------------------------------------------------------
# arclength derivative of sampled residuals
# ---------------------------------------------------------------------------

def element_arclength_nodes(cache: CurveCache, loc: np.ndarray) -> np.ndarray:
    """Arclength from the element start to each local node, per element."""
    gx, gw = quadrature.gauss01(cache.quad.n_gauss)
    sub = (loc[:, None] * gx[None, :]).ravel()
    speeds = cache.frames_table(sub)[2].reshape(cache.n_el, len(loc), len(gx))
    return (speeds @ gw) * loc[None, :] * cache.h[:, None]


def interpolant_derivative(s_nodes: np.ndarray, values: np.ndarray,
                           s_eval: np.ndarray) -> np.ndarray:
    """Differentiate the per-element polynomial interpolant of sampled values.

    s_nodes, values: (n_el, m); s_eval: (n_el, k).  Returns (n_el, k) with the
    derivative with respect to the node coordinate (here: arclength).
    """
    n_el, m = s_nodes.shape
    if m < 2:
        raise ValueError("need at least two interpolation nodes")
    mid = (s_nodes[:, :1] + s_nodes[:, -1:]) / 2.0
    half = (s_nodes[:, -1:] - s_nodes[:, :1]) / 2.0
    xn = (s_nodes - mid) / half
    vand = xn[:, :, None] ** np.arange(m)[None, None, :]
    coef = np.linalg.solve(vand, values[:, :, None])[:, :, 0]
    dcoef = coef[:, 1:] * np.arange(1, m)[None, :]
    xe = (s_eval - mid) / half
    powers = xe[:, :, None] ** np.arange(m - 1)[None, None, :]
    return np.einsum("eka,ea->ek", powers, dcoef) / half
