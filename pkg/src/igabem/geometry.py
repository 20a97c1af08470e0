"""NURBS boundary curves: pacman sector, slit, and circles.

Curves are rational splines over their own knot vector, independent of the
ansatz discretization.  Conic arcs are represented exactly by quadratic
rational Bezier pieces with the usual cos(half-angle) interior weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import quadrature, splines
from .knots import KnotVector, make_initial

TAU_PACMAN = 4.0 / 7.0
RADIUS_PACMAN = 0.1


@dataclass(frozen=True)
class BoundaryCurve:
    """Parametrized boundary gamma: [0,1] -> R^2 with normal convention."""

    kv: KnotVector
    control_points: np.ndarray  # (N, 2)
    closed: bool
    normal_sign: float = 1.0  # +1: normal points right of the tangent
    corners: tuple[Fraction, ...] = field(default=())

    def __post_init__(self):
        pts = np.asarray(self.control_points, dtype=float)
        object.__setattr__(self, "control_points", pts)
        pts.setflags(write=False)

    # -- evaluation --------------------------------------------------------
    def frames_span(self, span: int, ts: np.ndarray):
        """Frames for parameters that all lie in one nondegenerate knot span."""
        kv = self.kv
        q = kv.p
        T = kv.knots_float
        vals, ders = splines.basis_row_pair(T, q, span, ts)
        wk = kv.weights[span - q : span + 1]
        C = self.control_points[span - q : span + 1]
        Wc = wk @ vals
        Wd = wk @ ders
        A = ((wk[:, None] * C).T @ vals).T
        Ad = ((wk[:, None] * C).T @ ders).T
        g = A / Wc[:, None]
        tans = (Ad - g * Wd[:, None]) / Wc[:, None]
        speeds = np.sqrt(tans[:, 0] ** 2 + tans[:, 1] ** 2)
        return g, tans, speeds

    def frames_at(self, ts: np.ndarray, side: str = "right"):
        """Points, tangents (parameter derivative) and speeds at parameters ts.

        Returns arrays of shape (n, 2), (n, 2) and (n,).
        """
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        kv = self.kv
        T = kv.knots_float
        if side == "left":
            spans = np.searchsorted(T, ts, side="left") - 1
        else:
            spans = np.searchsorted(T, ts, side="right") - 1
        lo = int(np.searchsorted(T, T[0], side="right")) - 1
        hi = int(np.searchsorted(T, T[-1], side="left")) - 1
        spans = np.clip(spans, lo, hi)
        pts = np.empty((len(ts), 2))
        tans = np.empty((len(ts), 2))
        speeds = np.empty(len(ts))
        for s in np.unique(spans):
            sel = spans == s
            pts[sel], tans[sel], speeds[sel] = self.frames_span(int(s), ts[sel])
        return pts, tans, speeds

    def element_frames(self, local_nodes: np.ndarray):
        """Frames on every geometry element at the given local nodes."""
        breaks = self.kv.breaks_float
        n_el = self.kv.n_elements
        n_pts = len(local_nodes)
        ts = (breaks[:-1, None] + np.diff(breaks)[:, None] * local_nodes[None, :]).ravel()
        pts, tans, speeds = self.frames_at(ts)
        return (
            pts.reshape(n_el, n_pts, 2),
            tans.reshape(n_el, n_pts, 2),
            speeds.reshape(n_el, n_pts),
        )

    def point(self, t: float, side: str = "right") -> np.ndarray:
        return self.frames_at(np.array([float(t)]), side)[0][0]

    def tangent(self, t: float, side: str = "right") -> np.ndarray:
        return self.frames_at(np.array([float(t)]), side)[1][0]

    def normal(self, t: float, side: str | None = None) -> np.ndarray:
        """Outward unit normal; corners require an explicit side."""
        tf = float(t)
        at_corner = any(abs(tf - float(c)) < 1e-14 for c in self.corners)
        if at_corner and side is None:
            raise ValueError(f"t={t} is a corner; pass side='left' or side='right'")
        tan = self.tangent(tf, side or "right")
        nrm = np.array([tan[1], -tan[0]]) * self.normal_sign
        return nrm / np.linalg.norm(nrm)

    def normals_from_tangents(self, tans: np.ndarray) -> np.ndarray:
        out = np.stack([tans[..., 1], -tans[..., 0]], axis=-1) * self.normal_sign
        mag = np.sqrt(out[..., 0] ** 2 + out[..., 1] ** 2)
        return out / mag[..., None]

    # -- arclength --------------------------------------------------------
    def element_arclengths(self, n_gauss: int = 32) -> np.ndarray:
        x, w = quadrature.gauss01(n_gauss)
        _, _, speeds = self.element_frames(x)
        h = np.diff(self.kv.breaks_float)
        return (speeds @ w) * h

    def total_arclength(self) -> float:
        return float(self.element_arclengths().sum())


def _conic_arc(radius: float, a0: float, a1: float, center=(0.0, 0.0)):
    """Quadratic rational Bezier piece for a circular arc of opening < pi."""
    half = (a1 - a0) / 2.0
    mid = (a0 + a1) / 2.0
    w = math.cos(half)
    c = np.asarray(center, dtype=float)
    p0 = c + radius * np.array([math.cos(a0), math.sin(a0)])
    p1 = c + radius / w * np.array([math.cos(mid), math.sin(mid)])
    p2 = c + radius * np.array([math.cos(a1), math.sin(a1)])
    return [p0, p1, p2], [1.0, w, 1.0]


def _line_piece(p0, p1):
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    return [p0, (p0 + p1) / 2.0, p1], [1.0, 1.0, 1.0]


def _bezier_chain(pieces_pts, pieces_w, breakpoints, closed, corners, normal_sign=1.0):
    """Assemble C0 quadratic Bezier pieces into one curve (interior mult 2)."""
    ctrl = [pieces_pts[0][0]]
    wts = [pieces_w[0][0]]
    for pts, ws in zip(pieces_pts, pieces_w):
        assert np.allclose(pts[0], ctrl[-1]) and ws[0] == wts[-1]
        ctrl.extend(pts[1:])
        wts.extend(ws[1:])
    n_el = len(pieces_pts)
    mults = [3] + [2] * (n_el - 1) + [3]
    kv = make_initial(breakpoints, mults, 2, closed, wts)
    return BoundaryCurve(kv, np.array(ctrl), closed, normal_sign, tuple(corners))


def pacman() -> BoundaryCurve:
    """Sector of radius 1/10 with reentrant corner opening 7*pi/4 at the origin.

    Counterclockwise: radial edge out, four equal conic sub-arcs, radial edge
    back; breakpoints at the corners, sub-arc junctions and edge midpoints.
    """
    phi = math.pi / (2.0 * TAU_PACMAN)
    R = RADIUS_PACMAN
    u_minus = np.array([math.cos(-phi), math.sin(-phi)])
    u_plus = np.array([math.cos(phi), math.sin(phi)])
    pieces = [
        _line_piece((0.0, 0.0), R / 2 * u_minus),
        _line_piece(R / 2 * u_minus, R * u_minus),
    ]
    arc_angles = np.linspace(-phi, phi, 5)
    for a0, a1 in zip(arc_angles, arc_angles[1:]):
        pieces.append(_conic_arc(R, a0, a1))
    pieces += [
        _line_piece(R * u_plus, R / 2 * u_plus),
        _line_piece(R / 2 * u_plus, (0.0, 0.0)),
    ]
    breaks = [
        Fraction(0),
        Fraction(1, 16),
        Fraction(1, 8),
        Fraction(5, 16),
        Fraction(1, 2),
        Fraction(11, 16),
        Fraction(7, 8),
        Fraction(15, 16),
        Fraction(1),
    ]
    corners = (Fraction(0), Fraction(1, 8), Fraction(7, 8), Fraction(1))
    return _bezier_chain([p for p, _ in pieces], [w for _, w in pieces], breaks, True, corners)


def slit() -> BoundaryCurve:
    """The open segment [-1,1] x {0}, gamma(t) = (2t-1, 0), upper-side normal."""
    breaks = [Fraction(0), Fraction(1, 4), Fraction(1, 2), Fraction(3, 4), Fraction(1)]
    kv = make_initial(breaks, [2, 1, 1, 1, 2], 1, closed=False)
    xs = np.array([float(2 * z - 1) for z in breaks])
    ctrl = np.stack([xs, np.zeros_like(xs)], axis=1)
    return BoundaryCurve(kv, ctrl, closed=False, normal_sign=-1.0)


def circle(radius: float = 0.1, center=(0.0, 0.0)) -> BoundaryCurve:
    """Counterclockwise circle from four conic quarters (test geometry)."""
    pieces = []
    angles = np.linspace(0.0, 2.0 * math.pi, 5)
    for a0, a1 in zip(angles, angles[1:]):
        pieces.append(_conic_arc(radius, a0, a1, center))
    breaks = [Fraction(k, 4) for k in range(5)]
    return _bezier_chain([p for p, _ in pieces], [w for _, w in pieces], breaks, True, ())


# -- the singular harmonic model function on the pacman ----------------------

def singular_potential(points: np.ndarray) -> np.ndarray:
    """P(x, y) = r^tau * cos(tau * beta) in the pacman's polar coordinates."""
    pts = np.atleast_2d(points)
    r = np.hypot(pts[..., 0], pts[..., 1])
    beta = np.arctan2(pts[..., 1], pts[..., 0])
    out = np.where(r > 0, r**TAU_PACMAN * np.cos(TAU_PACMAN * beta), 0.0)
    return out if points.ndim > 1 else float(out[0])


def singular_potential_gradient(points: np.ndarray) -> np.ndarray:
    """Cartesian gradient of the singular potential (undefined at the origin)."""
    pts = np.atleast_2d(points)
    x, y = pts[..., 0], pts[..., 1]
    r = np.hypot(x, y)
    beta = np.arctan2(y, x)
    tau = TAU_PACMAN
    dr = tau * r ** (tau - 1.0) * np.cos(tau * beta)
    db = -tau * r ** (tau - 1.0) * np.sin(tau * beta)  # (1/r) dP/dbeta
    er = np.stack([x / r, y / r], axis=-1)
    eb = np.stack([-y / r, x / r], axis=-1)
    grad = dr[..., None] * er + db[..., None] * eb
    return grad if points.ndim > 1 else grad[0]
