"""B-spline and NURBS evaluation, knot insertion, and basis bookkeeping.

Functions are indexed two ways.  The *array* convention works on the full
clamped knot array ``T`` of length N+p+1 where function k of degree q is
supported on [T[k], T[k+q+1]).  The *level* convention matches the ansatz
spaces: for degree p the alive functions are k = 0..N-1 (these carry the
weights), for degree p-1 they are k = 1..N-1.

The wrapped basis for the hypersingular ansatz merges the first and last
degree-p function on closed boundaries and drops the two endpoint
interpolatory functions on open ones; it is realized as a sparse embedding
matrix so that assembly can stay in the plain index space.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from .knots import KnotVector, KnotError, is_refinement


# ---------------------------------------------------------------------------
# point evaluation
# ---------------------------------------------------------------------------

def find_span(T: np.ndarray, q: int, t: float, side: str = "right") -> int:
    """Index s with T[s] <= t < T[s+1] (or the span left of t for side='left').

    For t at or beyond the clamped ends the last/first nondegenerate span is
    returned, which realizes one-sided limits.
    """
    if side == "left":
        s = int(np.searchsorted(T, t, side="left")) - 1
    else:
        s = int(np.searchsorted(T, t, side="right")) - 1
    lo = int(np.searchsorted(T, T[0], side="right")) - 1
    hi = int(np.searchsorted(T, T[-1], side="left")) - 1
    return min(max(s, lo), hi)


def _cox_de_boor(T: np.ndarray, k: int, q: int, t: float, left: bool) -> float:
    """Single-function recursion; `left` evaluates the left limit at t."""
    if q == 0:
        if left:
            return 1.0 if T[k] < t <= T[k + 1] else 0.0
        return 1.0 if T[k] <= t < T[k + 1] else 0.0
    d1 = T[k + q] - T[k]
    d2 = T[k + q + 1] - T[k + 1]
    b1 = (t - T[k]) / d1 if d1 > 0 else 0.0
    b2 = (T[k + q + 1] - t) / d2 if d2 > 0 else 0.0
    val = 0.0
    if b1 != 0.0:
        val += b1 * _cox_de_boor(T, k, q - 1, t, left)
    if b2 != 0.0:
        val += b2 * _cox_de_boor(T, k + 1, q - 1, t, left)
    return val


def basis_row(T: np.ndarray, q: int, s: int, ts: np.ndarray) -> np.ndarray:
    """Values of the q+1 functions k = s-q..s at the points ts (shape (q+1, len(ts)))."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    vals = np.zeros((q + 1, len(ts)))
    vals[0] = 1.0
    left = np.empty((q + 1, len(ts)))
    right = np.empty((q + 1, len(ts)))
    for j in range(1, q + 1):
        left[j] = ts - T[s + 1 - j]
        right[j] = T[s + j] - ts
        saved = np.zeros(len(ts))
        for r in range(j):
            denom = right[r + 1] + left[j - r]
            temp = vals[r] / denom
            vals[r] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        vals[j] = saved
    return vals


def basis_row_deriv(T: np.ndarray, q: int, s: int, ts: np.ndarray) -> np.ndarray:
    """Right derivatives of the q+1 functions k = s-q..s at ts."""
    if q < 1:
        raise ValueError("degree-0 functions have no derivative expansion")
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    return _deriv_from_low(T, q, s, basis_row(T, q - 1, s, ts))


def _deriv_from_low(T: np.ndarray, q: int, s: int, low: np.ndarray) -> np.ndarray:
    out = np.zeros((q + 1, low.shape[1]))
    for r in range(q + 1):
        k = s - q + r
        d1 = T[k + q] - T[k]
        d2 = T[k + q + 1] - T[k + 1]
        if d1 > 0 and r >= 1:
            out[r] += q / d1 * low[r - 1]
        if d2 > 0 and r <= q - 1:
            out[r] += -q / d2 * low[r]
    return out


def basis_row_pair(T: np.ndarray, q: int, s: int, ts: np.ndarray):
    """Values and right derivatives together (shares the degree-(q-1) row)."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    low = basis_row(T, q - 1, s, ts)
    ders = _deriv_from_low(T, q, s, low)
    # finish the recursion from degree q-1 to q
    vals = np.zeros((q + 1, len(ts)))
    vals[:q] = low
    left = np.empty((q + 1, len(ts)))
    right = np.empty((q + 1, len(ts)))
    j = q
    left[j] = ts - T[s + 1 - j]
    right[j] = T[s + j] - ts
    saved = np.zeros(len(ts))
    for r in range(j):
        lr = T[s + r + 1] - ts
        ll = ts - T[s + 1 - j + r]
        denom = lr + ll
        temp = vals[r] / denom
        vals[r] = saved + lr * temp
        saved = ll * temp
    vals[j] = saved
    return vals, ders


def bspline_value(T: np.ndarray, k: int, q: int, t: float, side: str = "right") -> float:
    """Single B-spline value in the array convention."""
    T = np.asarray(T, dtype=float)
    if not 0 <= k <= len(T) - q - 2:
        raise IndexError(f"function index {k} out of range for degree {q}")
    return _cox_de_boor(T, k, q, float(t), side == "left")


def bspline_deriv_value(T: np.ndarray, k: int, q: int, t: float, side: str = "right") -> float:
    """Single right (or left) derivative in the array convention."""
    T = np.asarray(T, dtype=float)
    if q < 1:
        raise ValueError("no derivative formula for degree 0")
    if not 0 <= k <= len(T) - q - 2:
        raise IndexError(f"function index {k} out of range for degree {q}")
    left = side == "left"
    val = 0.0
    d1 = T[k + q] - T[k]
    d2 = T[k + q + 1] - T[k + 1]
    if d1 > 0:
        val += q / d1 * _cox_de_boor(T, k, q - 1, float(t), left)
    if d2 > 0:
        val -= q / d2 * _cox_de_boor(T, k + 1, q - 1, float(t), left)
    return val


def _array_index(kv: KnotVector, i: int) -> int:
    return i + kv.p - 1


def eval_bspline(kv: KnotVector, i: int, q: int, t: float, side: str = "right") -> float:
    """B-spline of degree q in level indexing, i in 1-p .. N-q."""
    T = kv.knots_float
    return bspline_value(T, _array_index(kv, i), q, t, side)


def eval_bspline_deriv(kv: KnotVector, i: int, q: int, t: float, side: str = "right") -> float:
    """Right derivative via the two-term lower-degree formula (q/0 := 0)."""
    T = kv.knots_float
    return bspline_deriv_value(T, _array_index(kv, i), q, t, side)


def eval_nurbs(kv: KnotVector, i: int, t: float, side: str = "right") -> float:
    """Rational basis function of degree p with the level weights."""
    T = kv.knots_float
    p = kv.p
    k = _array_index(kv, i)
    s = find_span(T, p, t, side)
    row = basis_row(T, p, s, np.array([t]))[:, 0]
    ks = np.arange(s - p, s + 1)
    denom = float(kv.weights[ks] @ row)
    if not s - p <= k <= s:
        return 0.0
    return float(kv.weights[k]) * row[k - (s - p)] / denom


# ---------------------------------------------------------------------------
# element-local tables for assembly
# ---------------------------------------------------------------------------

def element_spans(kv: KnotVector) -> np.ndarray:
    """Span index of each element in the full knot array."""
    return np.cumsum(kv.mults)[:-1] - 1


def element_basis_table(kv: KnotVector, q: int, local_nodes: np.ndarray, deriv: bool = False):
    """Per-element values (and optionally derivatives) of the alive functions.

    Returns (first_k, vals, ders) where first_k[e] is the array index of the
    first of the q+1 functions alive on element e and vals has shape
    (n_el, q+1, n_nodes).
    """
    T = kv.knots_float
    spans = element_spans(kv)
    breaks = kv.breaks_float
    n_el = kv.n_elements
    vals = np.empty((n_el, q + 1, len(local_nodes)))
    ders = np.empty_like(vals) if deriv else None
    for e in range(n_el):
        ts = breaks[e] + (breaks[e + 1] - breaks[e]) * local_nodes
        vals[e] = basis_row(T, q, spans[e], ts)
        if deriv:
            ders[e] = basis_row_deriv(T, q, spans[e], ts)
    return spans - q, vals, ders


# ---------------------------------------------------------------------------
# knot insertion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Prolongation:
    """Composed single-insertion coefficient map between two nested levels.

    `matrix` maps coarse coefficients of every degree-q function on the full
    clamped array to fine ones; rows outside the correction windows are a
    shifted identity.
    """

    q: int
    n_coarse: int
    n_fine: int
    matrix: sp.csr_matrix
    inserted: tuple[float, ...]

    def apply(self, coeffs: np.ndarray) -> np.ndarray:
        return self.matrix @ coeffs


def _single_insertion(T: list[float], q: int, t_new: float) -> sp.csr_matrix:
    pos = bisect_left(T, t_new)
    mult_new = 1
    j = pos
    while j < len(T) and T[j] == t_new:
        mult_new += 1
        j += 1
    n_c = len(T) - q - 1
    n_f = n_c + 1
    rows, cols, data = [], [], []
    lo = pos - q + mult_new - 2  # last identity row
    for k in range(n_f):
        if k <= lo:
            rows.append(k)
            cols.append(k)
            data.append(1.0)
        elif k >= pos:
            rows.append(k)
            cols.append(k - 1)
            data.append(1.0)
        else:
            d = T[k + q] - T[k]
            beta = (t_new - T[k]) / d if d > 0 else 0.0
            if beta != 1.0:
                rows.append(k)
                cols.append(k - 1)
                data.append(1.0 - beta)
            if beta != 0.0:
                rows.append(k)
                cols.append(k)
                data.append(beta)
    return sp.csr_matrix((data, (rows, cols)), shape=(n_f, n_c))


def insertion_sequence(coarse: KnotVector, fine: KnotVector) -> list[Fraction]:
    """Knots to insert, one entry per copy: new breakpoints first, then the
    remaining copies, each pass in ascending order."""
    coarse_map = dict(zip(coarse.breakpoints, coarse.mults))
    pending = []
    for z, m in zip(fine.breakpoints, fine.mults):
        extra = m - coarse_map.get(z, 0)
        if extra > 0:
            pending.append([z, extra, z not in coarse_map])
    seq: list[Fraction] = []
    first_pass = True
    while any(n for _, n, _ in pending):
        for item in pending:
            z, n, brand_new = item
            if n <= 0 or (first_pass and not brand_new):
                continue
            seq.append(z)
            item[1] -= 1
        first_pass = False
    return seq


def knot_insertion(coarse: KnotVector, fine: KnotVector, q: int | None = None) -> Prolongation:
    """Coefficient prolongation for the degree-q spline spaces of two levels.

    Single insertions are composed in place on a row list (columns index the
    coarse coefficients and never shift), so the cost stays linear in the
    number of insertions times the bandwidth.
    """
    if not is_refinement(coarse, fine):
        raise KnotError("knot_insertion needs nested levels")
    if q is None:
        q = coarse.p
    seq = insertion_sequence(coarse, fine)
    T = [float(z) for z, m in zip(coarse.breakpoints, coarse.mults) for _ in range(m)]
    n_c = len(T) - q - 1
    rows: list[tuple[np.ndarray, np.ndarray]] = [
        (np.array([j]), np.array([1.0])) for j in range(n_c)
    ]
    for z in seq:
        t_new = float(z)
        pos = bisect_left(T, t_new)
        mult_new = 1
        j = pos
        while j < len(T) and T[j] == t_new:
            mult_new += 1
            j += 1
        lo = pos - q + mult_new - 2  # last identity row
        shifted = rows[pos - 1]  # becomes the new row at pos
        window = []
        for k in range(lo + 1, pos):
            d = T[k + q] - T[k]
            beta = (t_new - T[k]) / d if d > 0 else 0.0
            window.append(_combine_rows(rows[k - 1], 1.0 - beta, rows[k], beta))
        rows[lo + 1 : pos] = window
        rows.insert(pos, shifted)
        T.insert(pos, t_new)
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    for i, (cols, _) in enumerate(rows):
        indptr[i + 1] = indptr[i] + len(cols)
    indices = np.concatenate([cols for cols, _ in rows]) if rows else np.array([], dtype=int)
    data = np.concatenate([vals for _, vals in rows]) if rows else np.array([])
    mat = sp.csr_matrix((data, indices, indptr), shape=(len(rows), n_c))
    return Prolongation(q, n_c, len(rows), mat, tuple(float(z) for z in seq))


def _combine_rows(row_a, wa: float, row_b, wb: float):
    if wa == 0.0:
        return (row_b[0].copy(), wb * row_b[1])
    if wb == 0.0:
        return (row_a[0].copy(), wa * row_a[1])
    cols = np.union1d(row_a[0], row_b[0])
    vals = np.zeros(len(cols))
    vals[np.searchsorted(cols, row_a[0])] += wa * row_a[1]
    vals[np.searchsorted(cols, row_b[0])] += wb * row_b[1]
    return (cols, vals)


def propagate_weights(coarse: KnotVector, fine: KnotVector) -> np.ndarray:
    """Fine-level weights keeping the rational denominator unchanged."""
    if np.all(coarse.weights == 1.0):
        # partition of unity: the denominator stays one on every level
        return np.ones(fine.num_knots)
    P = knot_insertion(coarse, fine, coarse.p)
    return P.apply(coarse.weights)


def refined_knot_vector(coarse: KnotVector, fine: KnotVector) -> KnotVector:
    """Copy of `fine` equipped with the propagated weights of `coarse`."""
    return KnotVector(fine.p, fine.breakpoints, fine.mults, fine.closed,
                      propagate_weights(coarse, fine))


# ---------------------------------------------------------------------------
# wrapped ansatz basis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplineBasis:
    """Descriptor of an ansatz basis over a knot vector."""

    kv: KnotVector
    q: int
    wrapped: bool  # degree-p basis with seam merge / endpoint drop

    @property
    def dim(self) -> int:
        N = self.kv.num_knots
        return N - 1 - self.kv.o if self.wrapped else N - 1


def wrap_basis(kv: KnotVector) -> SplineBasis:
    """Hypersingular ansatz: continuous across the seam (closed) or vanishing
    at both endpoints (open)."""
    return SplineBasis(kv, kv.p, wrapped=True)


def weak_basis(kv: KnotVector) -> SplineBasis:
    """Weakly-singular ansatz: all degree-(p-1) functions alive on the interval."""
    return SplineBasis(kv, kv.p - 1, wrapped=False)


def wrap_embedding(kv: KnotVector) -> sp.csr_matrix:
    """Sparse map from wrapped coefficients to the N plain degree-p coefficients."""
    N = kv.num_knots
    if kv.closed:
        rows = list(range(N - 1)) + [N - 1]
        cols = list(range(N - 1)) + [0]
    else:
        rows = list(range(1, N - 1))
        cols = list(range(N - 2))
    data = np.ones(len(rows))
    return sp.csr_matrix((data, (rows, cols)), shape=(N, N - 1 - kv.o))


def wrapped_supports(kv: KnotVector) -> list[list[tuple[Fraction, Fraction]]]:
    """Closed support intervals of each wrapped basis function (two for the
    seam-merged one)."""
    p = kv.p
    Tf: list[Fraction] = []
    for z, m in zip(kv.breakpoints, kv.mults):
        Tf.extend([z] * m)
    a, b = kv.interval

    def support(k: int) -> tuple[Fraction, Fraction]:
        return max(Tf[k], a), min(Tf[k + p + 1], b)

    N = kv.num_knots
    out = []
    if kv.closed:
        out.append([support(0), support(N - 1)])
        for k in range(1, N - 1):
            out.append([support(k)])
    else:
        for k in range(1, N - 1):
            out.append([support(k)])
    return out


def derivative_matrix(kv: KnotVector) -> sp.csr_matrix:
    """Expand parameter derivatives of the wrapped degree-p basis in the
    degree-(p-1) basis.

    Only valid for integer (non-rational) levels: for rational splines the
    derivative leaves the spline space.
    """
    if not np.all(kv.weights == 1.0):
        raise ValueError("derivative expansion requires all weights equal to one")
    p = kv.p
    N = kv.num_knots
    T = kv.knots_float
    dim_x = N - 1 - kv.o
    rows, cols, data = [], [], []

    def add_column(col: int, k: int) -> None:
        # d/dt of array function k at degree p, expanded in degree p-1
        d1 = T[k + p] - T[k]
        d2 = T[k + p + 1] - T[k + 1]
        if d1 > 0 and 1 <= k <= N - 1:
            rows.append(k - 1)
            cols.append(col)
            data.append(p / d1)
        if d2 > 0 and 1 <= k + 1 <= N - 1:
            rows.append(k)
            cols.append(col)
            data.append(-p / d2)

    if kv.closed:
        add_column(0, 0)
        add_column(0, N - 1)
        for c in range(1, dim_x):
            add_column(c, c)
    else:
        for c in range(dim_x):
            add_column(c, c + 1)
    return sp.csr_matrix((data, (rows, cols)), shape=(N - 1, dim_x))
