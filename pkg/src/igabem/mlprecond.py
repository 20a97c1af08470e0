"""Local multilevel diagonal additive Schwarz preconditioners.

One preconditioner term per level and per basis function that touches a knot
created (or whose multiplicity was raised) by that refinement step; level 0
contributes every function.  Each term is the one-dimensional solve with the
inverse Galerkin diagonal entry of its level; the weakly-singular variant
adds the rank-one solve on the constant density and replaces the selection
columns by the coefficient stencils of the ansatz-derivative functions.

The apply runs in O(N_L + sum_l(#selected_l + #touched rows_l)): per-level
coefficient vectors share storage slots along the shifted-identity part of
the knot-insertion prolongations, so each restriction/prolongation step only
touches the rows inside correction windows.  `dense_oracle` builds the same
operator by explicit matrix products for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import splines
from .knots import Hierarchy, KnotVector


def ansatz_dim(kv: KnotVector, operator: str) -> int:
    return kv.num_knots - 1 - (kv.o if operator == "W" else 0)


def ansatz_prolongation(kv_c: KnotVector, kv_f: KnotVector, operator: str) -> sp.csr_matrix:
    """One-step coefficient map between the ansatz spaces of nested levels."""
    if operator == "W":
        P = splines.knot_insertion(kv_c, kv_f, kv_c.p).matrix
        if not (np.all(kv_c.weights == 1.0) and np.all(kv_f.weights == 1.0)):
            P = sp.diags(1.0 / kv_f.weights) @ P @ sp.diags(kv_c.weights)
        P = P @ splines.wrap_embedding(kv_c)
        Nf = kv_f.num_knots
        rows = np.arange(Nf - 1) if kv_c.closed else np.arange(1, Nf - 1)
        return sp.csr_matrix(P[rows, :])
    if operator == "V":
        P = splines.knot_insertion(kv_c, kv_f, kv_c.p - 1).matrix
        return sp.csr_matrix(P[1 : kv_f.num_knots, 1 : kv_c.num_knots])
    raise ValueError(f"unknown operator tag {operator!r}")


def selection_stencil(kv: KnotVector, selected: np.ndarray, operator: str) -> sp.csc_matrix:
    """Columns of the per-level solve directions in ansatz coordinates."""
    dim = ansatz_dim(kv, operator)
    if operator == "W":
        data = np.ones(len(selected))
        return sp.csc_matrix((data, (selected, np.arange(len(selected)))),
                             shape=(dim, len(selected)))
    D = splines.derivative_matrix(kv)
    return sp.csc_matrix(D[:, selected])


def stencil_diagonal(A: np.ndarray, C: sp.csc_matrix) -> np.ndarray:
    """Raw diagonal entries <A c_k, c_k> of the stencil columns."""
    out = np.empty(C.shape[1])
    for k in range(C.shape[1]):
        col = C.getcol(k)
        rows = col.indices
        vals = col.data
        out[k] = vals @ A[np.ix_(rows, rows)] @ vals
    return out


@dataclass
class _Step:
    """Slot-level data of one prolongation step (correction windows only)."""

    down_ptr: np.ndarray
    down_slot: np.ndarray
    down_ent_slot: np.ndarray
    down_ent_val: np.ndarray
    up_ptr: np.ndarray
    up_slot: np.ndarray
    up_ent_slot: np.ndarray
    up_ent_val: np.ndarray


@dataclass
class _Level:
    sel_ptr: np.ndarray
    sel_slot: np.ndarray
    sel_val: np.ndarray
    dinv: np.ndarray


@dataclass
class MlPreconditioner:
    operator: str
    dim: int
    levels: list[_Level]
    steps: list[_Step]
    selected: list[np.ndarray]
    prolongations: list[sp.csr_matrix]
    stencils: list[sp.csc_matrix]
    rank_one_scale: float | None = None
    last_apply_ops: int = field(default=0, compare=False)

    def apply(self, r: np.ndarray) -> np.ndarray:
        """z = (S~)^{-1} r via one downward and one upward slot sweep."""
        r = np.asarray(r, dtype=float)
        if r.shape != (self.dim,):
            raise ValueError(f"expected vector of length {self.dim}, got {r.shape}")
        ops = 2 * self.dim
        work = r.copy()
        L = len(self.levels) - 1
        smoothed: list[np.ndarray] = [None] * (L + 1)
        for ell in range(L, -1, -1):
            if ell < L:
                st = self.steps[ell]
                if len(st.down_slot):
                    gathered = st.down_ent_val * work[st.down_ent_slot]
                    work[st.down_slot] = np.add.reduceat(gathered, st.down_ptr[:-1])
                    ops += 2 * len(st.down_ent_slot)
            lv = self.levels[ell]
            contrib = lv.sel_val * work[lv.sel_slot]
            smoothed[ell] = lv.dinv * np.add.reduceat(contrib, lv.sel_ptr[:-1])
            ops += 2 * len(lv.sel_slot) + len(lv.dinv)

        out = np.zeros(self.dim)
        for ell in range(L + 1):
            if ell > 0:
                st = self.steps[ell - 1]
                if len(st.up_slot):
                    gathered = st.up_ent_val * out[st.up_ent_slot]
                    out[st.up_slot] = np.add.reduceat(gathered, st.up_ptr[:-1])
                    ops += 2 * len(st.up_ent_slot)
            lv = self.levels[ell]
            np.add.at(out, lv.sel_slot, lv.sel_val * smoothed[ell][_expand(lv.sel_ptr)])
            ops += 2 * len(lv.sel_slot)

        if self.operator == "V":
            out += (r.sum() / self.rank_one_scale)
            ops += 2 * self.dim
        self.last_apply_ops = ops
        return out

    def as_dense_fast(self) -> np.ndarray:
        """Dense matrix by applying the fast path to identity columns."""
        cols = [self.apply(col) for col in np.eye(self.dim)]
        return np.array(cols).T


def _expand(ptr: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(len(ptr) - 1), np.diff(ptr))


def build(
    hierarchy: Hierarchy,
    operator: str,
    diagonals: list[np.ndarray],
    rank_one_scale: float | None = None,
    prolongations: list[sp.csr_matrix] | None = None,
) -> MlPreconditioner:
    """Assemble the fast-apply structure.

    diagonals[l] holds the raw scalars <A_l c_i, c_i> for i in the level's
    selected index set (in that order).  For the weakly-singular operator the
    total <V 1, 1> = sum of all entries of V_L must be supplied.
    """
    if operator not in ("W", "V"):
        raise ValueError(f"unknown operator tag {operator!r}")
    if operator == "V" and (rank_one_scale is None or rank_one_scale <= 0):
        raise ValueError("weakly-singular preconditioner needs <V1,1> > 0")
    L = hierarchy.depth
    if len(diagonals) != L + 1:
        raise ValueError(f"need diagonals for {L + 1} levels, got {len(diagonals)}")

    selected = [hierarchy.selected_indices(ell) for ell in range(L + 1)]
    stencils = [
        selection_stencil(hierarchy.levels[ell], selected[ell], operator)
        for ell in range(L + 1)
    ]
    if prolongations is None:
        prolongations = [
            ansatz_prolongation(hierarchy.levels[ell], hierarchy.levels[ell + 1], operator)
            for ell in range(L)
        ]
    elif len(prolongations) != L:
        raise ValueError(f"need {L} prolongation steps, got {len(prolongations)}")

    dims = [ansatz_dim(kv, operator) for kv in hierarchy.levels]
    # slot maps, fine to coarse
    slots = [None] * (L + 1)
    slots[L] = np.arange(dims[L])
    steps: list[_Step] = [None] * L
    for ell in range(L - 1, -1, -1):
        P = prolongations[ell].tocsc()
        n_f, n_c = P.shape
        fine_slots = slots[ell + 1]
        col_slots = np.empty(n_c, dtype=int)
        claimed = np.zeros(n_f, dtype=bool)
        explicit_cols = []
        for j in range(n_c):
            lo, hi = P.indptr[j], P.indptr[j + 1]
            rows = P.indices[lo:hi]
            vals = P.data[lo:hi]
            if len(rows) == 1 and vals[0] == 1.0 and not claimed[rows[0]]:
                claimed[rows[0]] = True
                col_slots[j] = fine_slots[rows[0]]
            else:
                explicit_cols.append((j, rows.copy(), vals.copy()))
        free_rows = np.nonzero(~claimed)[0]
        for k, (j, _, _) in enumerate(explicit_cols):
            col_slots[j] = fine_slots[free_rows[k]]
        slots[ell] = col_slots

        down_ptr = [0]
        down_slot = []
        down_ent_slot = []
        down_ent_val = []
        for j, rows, vals in explicit_cols:
            down_slot.append(col_slots[j])
            down_ent_slot.extend(fine_slots[rows])
            down_ent_val.extend(vals)
            down_ptr.append(len(down_ent_slot))

        Pr = P.tocsr()
        up_ptr = [0]
        up_slot = []
        up_ent_slot = []
        up_ent_val = []
        for i in range(n_f):
            lo, hi = Pr.indptr[i], Pr.indptr[i + 1]
            cols = Pr.indices[lo:hi]
            vals = Pr.data[lo:hi]
            if len(cols) == 1 and vals[0] == 1.0 and col_slots[cols[0]] == fine_slots[i]:
                continue
            up_slot.append(fine_slots[i])
            up_ent_slot.extend(col_slots[cols])
            up_ent_val.extend(vals)
            up_ptr.append(len(up_ent_slot))

        steps[ell] = _Step(
            np.array(down_ptr), np.array(down_slot, dtype=int),
            np.array(down_ent_slot, dtype=int), np.array(down_ent_val),
            np.array(up_ptr), np.array(up_slot, dtype=int),
            np.array(up_ent_slot, dtype=int), np.array(up_ent_val),
        )

    levels: list[_Level] = []
    for ell in range(L + 1):
        d_raw = np.asarray(diagonals[ell], dtype=float)
        if d_raw.shape != (len(selected[ell]),):
            raise ValueError(
                f"level {ell}: expected {len(selected[ell])} diagonal entries, "
                f"got {d_raw.shape}"
            )
        if np.any(d_raw <= 0):
            bad = int(np.argmin(d_raw))
            raise ValueError(f"level {ell}: nonpositive diagonal entry at position {bad}")
        C = stencils[ell].tocsc()
        sel_ptr = C.indptr.copy()
        sel_slot = slots[ell][C.indices]
        sel_val = C.data.copy()
        levels.append(_Level(sel_ptr, sel_slot, sel_val, 1.0 / d_raw))

    return MlPreconditioner(
        operator=operator,
        dim=dims[L],
        levels=levels,
        steps=steps,
        selected=selected,
        prolongations=prolongations,
        stencils=stencils,
        rank_one_scale=rank_one_scale,
    )


def dense_oracle(precond: MlPreconditioner) -> np.ndarray:
    """Explicit sum of matrix products; independent of the slot machinery."""
    n = precond.dim
    L = len(precond.levels) - 1
    out = np.zeros((n, n))
    lift = sp.identity(n, format="csr")
    for ell in range(L, -1, -1):
        if ell < L:
            lift = lift @ precond.prolongations[ell]
        C = (lift @ precond.stencils[ell]).toarray()
        out += (C * precond.levels[ell].dinv[None, :]) @ C.T
    if precond.operator == "V":
        out += np.ones((n, n)) / precond.rank_one_scale
    return out


def apply_diag(A: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Plain inverse-diagonal preconditioner."""
    d = np.diag(A)
    if np.any(d == 0):
        raise ValueError("zero diagonal entry")
    return r / d
