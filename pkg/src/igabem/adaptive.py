"""Weighted-residual error indicators, Doerfler marking, and the adaptive loop.

Each of the four model problems couples a boundary curve, an ansatz degree,
a right-hand side, and an indicator.  The loop iterates
solve -> estimate -> mark -> refine until the knot budget is reached,
recording per level the estimator, the mesh-ratio, the condition numbers and
iteration counts of the diagonal and the multilevel additive Schwarz
preconditioner, and the time to apply the latter to a batch of random
vectors.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import geometry, knots, krylov, mlprecond, potentials, quadrature, splines
from .assembly import (
    AdjointDoubleLayerKernel,
    CurveCache,
    DoubleLayerKernel,
    FunctionFactors,
    NurbsDerivFactors,
    NurbsFactors,
    QuadratureSpec,
    SplineFactors,
    WeaklySingularKernel,
    assemble_bilinear,
    assemble_V,
    assemble_W,
    moment_vector,
    single_integral,
)

N_INTERP = 8  # residual samples per element for the derivative device
EXACT_COND_LIMIT = 2000  # switch to the Lanczos estimate beyond this size


@dataclass
class IndicatorField:
    """Per-node indicator values; nodes are breakpoint values of the level."""

    nodes: list[Fraction]
    values: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sqrt(np.sum(self.values**2)))


def node_patches(kv: knots.KnotVector) -> tuple[list[Fraction], list[list[int]]]:
    """Nodes of the level and the elements of each node patch."""
    n = kv.n_elements
    if kv.closed:
        nodes = list(kv.breakpoints[1:])
        patches = [[j - 1, j] for j in range(1, n)] + [[n - 1, 0]]
    else:
        nodes = list(kv.breakpoints)
        patches = [[0]] + [[j - 1, j] for j in range(1, n)] + [[n - 1]]
    return nodes, patches


def _field_from_elements(kv: knots.KnotVector, elem_sq: np.ndarray,
                         arclen: np.ndarray) -> IndicatorField:
    nodes, patches = node_patches(kv)
    vals = np.array([
        math.sqrt(sum(arclen[e] * elem_sq[e] for e in patch)) for patch in patches
    ])
    return IndicatorField(nodes, vals)


def doerfler_mark(field: IndicatorField, theta: float) -> list[Fraction]:
    """Minimal node set carrying a theta fraction of the squared indicator.

    Sorted by indicator descending, ties broken by node coordinate ascending;
    nodes with zero indicator are never marked.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must satisfy 0<theta<=1")
    sq = field.values**2
    coords = np.array([float(z) for z in field.nodes])
    order = np.lexsort((coords, -sq))
    total = sq.sum()
    if total == 0.0:
        return []
    goal = theta * total
    acc = 0.0
    picked = []
    for idx in order:
        if sq[idx] == 0.0 or acc >= goal:
            break
        acc += sq[idx]
        picked.append(field.nodes[idx])
    return picked


def marking_is_minimal(field: IndicatorField, marked: list[Fraction], theta: float) -> bool:
    """Dropping the weakest marked node must break the Doerfler inequality."""
    sq = {z: v**2 for z, v in zip(field.nodes, field.values)}
    total = float(np.sum(field.values**2))
    acc = sum(sq[z] for z in marked)
    if acc < theta * total:
        return False
    if not marked:
        return total == 0.0
    weakest = min(sq[z] for z in marked)
    return acc - weakest < theta * total


# ---------------------------------------------------------------------------
# model problems
# ---------------------------------------------------------------------------

class HypersingularProblem:
    """Common machinery: Maue assembly, strong-form residual via the potential
    of the ansatz derivative."""

    operator = "W"

    def assemble(self, kv, cache):
        A = assemble_W(kv, cache.curve, cache.quad, stabilized=True, cache=cache)
        rhs, aux = self.right_hand_side(kv, cache)
        return A, rhs, aux

    def _hyper_residual_sq(self, kv, cache, x, f_gauss):
        """Elementwise int (f - W U)^2 ds with W U = -d/ds V(dU/ds)."""
        E = splines.wrap_embedding(kv)
        full = E @ x
        deriv = NurbsDerivFactors(cache)

        def density(e, loc):
            vals = deriv.eval_local(e, loc)
            sl = slice(deriv.dof_start[e], deriv.dof_start[e] + deriv.n_loc)
            return full[sl] @ vals

        lob = quadrature.lobatto01(N_INTERP)
        pot = potentials.layer_potential(cache, WeaklySingularKernel, density, lob)
        s_lob = potentials.element_arclength_nodes(cache, lob)
        s_gauss = potentials.element_arclength_nodes(cache, cache.gx)
        wu = -potentials.interpolant_derivative(s_lob, pot, s_gauss)
        res = f_gauss - wu
        return np.einsum("eg,eg,g->e", res**2, cache.speeds, cache.gw) * cache.h


class HyperSlit(HypersingularProblem):
    name = "hyper-slit"
    p = 1
    exact_energy = math.pi

    def make_curve(self):
        return geometry.slit()

    def initial_kv(self, curve):
        return curve.kv

    def right_hand_side(self, kv, cache):
        return moment_vector(kv, cache.curve, cache.quad, cache), None

    def estimate(self, kv, cache, x, rhs_aux) -> IndicatorField:
        f_gauss = np.ones((cache.n_el, len(cache.gx)))
        elem_sq = self._hyper_residual_sq(kv, cache, x, f_gauss)
        return _field_from_elements(kv, elem_sq, cache.arclen)


class HyperPacman(HypersingularProblem):
    name = "hyper-pacman"
    p = 2
    exact_energy = None

    def make_curve(self):
        return geometry.pacman()

    def initial_kv(self, curve):
        return curve.kv

    def right_hand_side(self, kv, cache):
        """f_l = (1/2 - K') phi_l with phi_l the elementwise L2 projection of
        the normal derivative of the singular potential."""

        def phi(e, loc, pts, speeds):
            tans = cache.frames(e, loc)[1]
            nrm = cache.curve.normals_from_tangents(tans)
            grad = geometry.singular_potential_gradient(pts)
            return np.einsum("nd,nd->n", grad, nrm)

        phi_l = potentials.l2_project(cache, phi, kv.p)
        rows = NurbsFactors(cache, with_speed=True)
        half = single_integral(cache, rows, func=lambda e, loc, pts, sp: phi_l.eval_local(e, loc))
        trial = FunctionFactors(cache, lambda e, loc, pts, sp: phi_l.eval_local(e, loc))
        kp = assemble_bilinear(cache, AdjointDoubleLayerKernel, rows, trial)[:, 0]
        E = splines.wrap_embedding(kv)
        vec = E.T @ (0.5 * half - kp)
        return np.asarray(vec), (phi, phi_l)

    def estimate(self, kv, cache, x, rhs_aux) -> IndicatorField:
        phi, phi_l = rhs_aux

        def density(e, loc):
            pts, _, speeds = cache.frames(e, loc)
            return phi_l.eval_local(e, loc) * speeds

        kphi = potentials.layer_potential(cache, AdjointDoubleLayerKernel, density, cache.gx)
        f_gauss = 0.5 * phi_l.eval_table(cache.gx) - kphi
        elem_sq = self._hyper_residual_sq(kv, cache, x, f_gauss)
        # data oscillation of the projected Neumann data
        pts, tans, speeds = cache.pts, cache.tans, cache.speeds
        nrm = cache.normals
        grad = geometry.singular_potential_gradient(pts.reshape(-1, 2)).reshape(pts.shape)
        phi_vals = np.einsum("egd,egd->eg", grad, nrm)
        osc = phi_vals - phi_l.eval_table(cache.gx)
        elem_sq = elem_sq + np.einsum("eg,eg,g->e", osc**2, speeds, cache.gw) * cache.h
        return _field_from_elements(kv, elem_sq, cache.arclen)


class WeaklySingularProblem:
    operator = "V"

    def assemble(self, kv, cache):
        A = assemble_V(kv, cache.curve, cache.quad, cache=cache)
        rhs, aux = self.right_hand_side(kv, cache)
        return A, rhs, aux

    def _weak_indicator(self, kv, cache, x, g_lobatto) -> IndicatorField:
        """eta from || h^(1/2) d/ds (g - V Phi) ||_{L2(patch)}."""
        fac = SplineFactors(cache, kv.p - 1, with_speed=True)

        def density(e, loc):
            vals = fac.eval_local(e, loc)
            sl = slice(fac.dof_start[e], fac.dof_start[e] + fac.n_loc)
            return x[sl] @ vals

        lob = quadrature.lobatto01(N_INTERP)
        pot = potentials.layer_potential(cache, WeaklySingularKernel, density, lob)
        res = g_lobatto - pot
        s_lob = potentials.element_arclength_nodes(cache, lob)
        s_gauss = potentials.element_arclength_nodes(cache, cache.gx)
        dres = potentials.interpolant_derivative(s_lob, res, s_gauss)
        elem_sq = np.einsum("eg,eg,g->e", dres**2, cache.speeds, cache.gw) * cache.h
        return _field_from_elements(kv, elem_sq, cache.arclen)


class WeakSlit(WeaklySingularProblem):
    name = "weak-slit"
    p = 2
    exact_energy = math.pi / 4.0

    def make_curve(self):
        return geometry.slit()

    def initial_kv(self, curve):
        base = curve.kv
        return knots.make_initial(base.breakpoints, [3, 1, 1, 1, 3], 2, closed=False)

    def right_hand_side(self, kv, cache):
        fac = SplineFactors(cache, kv.p - 1, with_speed=True)
        vec = single_integral(cache, fac, func=lambda e, loc, pts, sp: -pts[:, 0] / 2.0)
        return vec, None

    def estimate(self, kv, cache, x, rhs_aux) -> IndicatorField:
        lob = quadrature.lobatto01(N_INTERP)
        pts = cache.frames_table(lob)[0]
        g_lob = -pts[..., 0] / 2.0
        return self._weak_indicator(kv, cache, x, g_lob)


class WeakPacman(WeaklySingularProblem):
    name = "weak-pacman"
    p = 3
    exact_energy = None

    def make_curve(self):
        return geometry.pacman()

    def initial_kv(self, curve):
        base = curve.kv
        mults = list(base.mults)
        mults[0] = mults[-1] = 4
        return knots.make_initial(base.breakpoints, mults, 3, closed=True)

    def _trace_density(self, cache):
        def trace(e, loc, pts, speeds):
            return geometry.singular_potential(pts)

        return trace

    def right_hand_side(self, kv, cache):
        """g = (1/2 + K) P restricted to the boundary."""
        trace = self._trace_density(cache)
        fac = SplineFactors(cache, kv.p - 1, with_speed=True)
        half = single_integral(cache, fac, func=trace)
        trial = FunctionFactors(cache, trace)
        kp = assemble_bilinear(cache, DoubleLayerKernel, fac, trial)[:, 0]
        return 0.5 * half + kp, None

    def estimate(self, kv, cache, x, rhs_aux) -> IndicatorField:
        lob = quadrature.lobatto01(N_INTERP)
        trace = self._trace_density(cache)

        def density(e, loc):
            pts, _, speeds = cache.frames(e, loc)
            return np.asarray(trace(e, loc, pts, speeds)) * speeds

        kpot = potentials.layer_potential(cache, DoubleLayerKernel, density, lob)
        pts = cache.frames_table(lob)[0]
        g_lob = 0.5 * geometry.singular_potential(pts.reshape(-1, 2)).reshape(kpot.shape) + kpot
        return self._weak_indicator(kv, cache, x, g_lob)


PROBLEMS = {cls.name: cls for cls in (HyperPacman, WeakPacman, HyperSlit, WeakSlit)}


# ---------------------------------------------------------------------------
# adaptive loop
# ---------------------------------------------------------------------------

@dataclass
class LevelRecord:
    problem: str
    level: int
    N: int
    kappa: float
    eta: float
    cond_diag: float | None
    cond_mlas: float | None
    iters_diag: int | None
    iters_mlas: int | None
    apply_ns: float | None
    cond_method: str
    energy: float = 0.0
    marking_minimal: bool = True
    wall_s: float = 0.0
    lanczos_diag: float | None = None
    lanczos_mlas: float | None = None
    kappa0: float = 1.0


@dataclass
class AdaptiveRun:
    problem: object
    hierarchy: knots.Hierarchy
    records: list[LevelRecord]
    solutions: list[np.ndarray] = field(default_factory=list)
    converged: bool = False
    saturated: bool = False


def element_bisectable(za, zb) -> bool:
    """Whether the halves of [za, zb] stay clear of the float64 resolution
    floor: child lengths within a few thousand ulps of the endpoint magnitude
    lose the local curve geometry, so such elements count as resolved."""
    half = float(zb - za) / 2.0
    res = np.spacing(max(abs(float(za)), abs(float(zb))))
    return half >= 2.0**14 * res


def _node_refinable(kv: knots.KnotVector, z) -> bool:
    """A marked node makes progress if it can raise a multiplicity or bisect
    at least one of its elements above the resolution floor."""
    breaks = kv.breakpoints
    j = breaks.index(z)
    last = len(breaks) - 1
    if 0 < j < last and kv.mults[j] < kv.p:
        return True
    els = []
    if j > 0:
        els.append((breaks[j - 1], breaks[j]))
    elif kv.closed:
        els.append((breaks[last - 1], breaks[last]))
    if j < last:
        els.append((breaks[j], breaks[j + 1]))
    elif kv.closed:
        els.append((breaks[0], breaks[1]))
    return any(element_bisectable(a, b) for a, b in els)


def adaptive_loop(
    problem_name: str,
    theta: float = 0.9,
    max_dofs: int = 2000,
    quad: QuadratureSpec | None = None,
    precond: str = "both",
    tol: float = 1e-8,
    seed: int = 0,
    threads: int = 1,
    keep_solutions: bool = False,
    verbose: bool = False,
) -> AdaptiveRun:
    if problem_name not in PROBLEMS:
        raise ValueError(f"unknown problem {problem_name!r}; "
                         f"choose from {sorted(PROBLEMS)}")
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must satisfy 0<theta<=1")
    if precond not in ("diag", "mlas", "both", "none"):
        raise ValueError(f"unknown preconditioner choice {precond!r}")
    quad = quad or QuadratureSpec()
    problem = PROBLEMS[problem_name]()
    curve = problem.make_curve()
    kv0 = problem.initial_kv(curve)
    kappa0 = knots.mesh_ratio(kv0)
    hierarchy = knots.Hierarchy.from_root(kv0)
    rng = np.random.default_rng(seed)

    records: list[LevelRecord] = []
    solutions: list[np.ndarray] = []
    diagonals: list[np.ndarray] = []
    prolongs: list = []
    run = AdaptiveRun(problem, hierarchy, records, solutions)

    level = 0
    while True:
        t0 = time.perf_counter()
        kv = hierarchy.levels[level]
        N = kv.num_knots
        cache = CurveCache(kv, curve, quad, threads=threads)
        A, rhs, aux = problem.assemble(kv, cache)

        sel = hierarchy.selected_indices(level)
        C = mlprecond.selection_stencil(kv, sel, problem.operator)
        if problem.operator == "W":
            diagonals.append(np.diag(A)[sel])
        else:
            diagonals.append(mlprecond.stencil_diagonal(A, C))
        scale = float(A.sum()) if problem.operator == "V" else None
        pc = mlprecond.build(hierarchy, problem.operator, diagonals,
                             rank_one_scale=scale, prolongations=prolongs)

        want_diag = precond in ("diag", "both")
        want_mlas = precond in ("mlas", "both")
        x = None
        iters_diag = iters_mlas = None
        cond_diag = cond_mlas = None
        lanczos_diag = lanczos_mlas = None
        apply_ns = None

        # Adaptive grading toward the singularities spreads the spectrum of
        # the plain-basis matrix beyond double precision long before N=2000.
        # All solves and spectra therefore run on the symmetrically
        # Jacobi-scaled system: diagonal PCG is exactly CG on the scaled
        # matrix, and the preconditioned spectra are similarity-invariant, so
        # every recorded quantity is unchanged while staying computable.
        s = np.sqrt(np.diag(A))
        At = A / np.outer(s, s)
        bt = rhs / s

        if want_diag:
            rep = krylov.pcg(lambda v: At @ v, lambda v: v, bt, tol=tol)
            iters_diag, x = rep.n_iter, rep.x / s
            lanczos_diag = rep.cond_estimate()[2]
        if want_mlas:
            rep = krylov.pcg(lambda v: At @ v, lambda v: s * pc.apply(s * v), bt, tol=tol)
            iters_mlas, x = rep.n_iter, rep.x / s
            lanczos_mlas = rep.cond_estimate()[2]
            vecs = rng.standard_normal((100, pc.dim))
            t_apply = time.perf_counter_ns()
            for v in vecs:
                pc.apply(v)
            apply_ns = float(time.perf_counter_ns() - t_apply)
        if x is None:
            x = np.linalg.solve(At, bt) / s

        cond_method = "exact" if N <= EXACT_COND_LIMIT else "lanczos"
        if cond_method == "exact":
            if want_diag:
                ev = np.linalg.eigvalsh(At)
                cond_diag = float(ev[-1] / ev[0]) if ev[0] > 0 else lanczos_diag
            if want_mlas:
                M = mlprecond.dense_oracle(pc) * np.outer(s, s)
                lo, hi = krylov.exact_cond(At, M)
                cond_mlas = hi / lo if lo > 0 else lanczos_mlas
        else:
            cond_diag, cond_mlas = lanczos_diag, lanczos_mlas

        field_ = problem.estimate(kv, cache, x, aux)
        marked = doerfler_mark(field_, theta)
        minimal = marking_is_minimal(field_, marked, theta)

        rec = LevelRecord(
            problem=problem.name, level=level, N=N,
            kappa=float(knots.mesh_ratio(kv)), eta=field_.total,
            cond_diag=cond_diag, cond_mlas=cond_mlas,
            iters_diag=iters_diag, iters_mlas=iters_mlas,
            apply_ns=apply_ns, cond_method=cond_method,
            energy=float(x @ rhs), marking_minimal=minimal,
            wall_s=time.perf_counter() - t0,
            lanczos_diag=lanczos_diag, lanczos_mlas=lanczos_mlas,
            kappa0=float(kappa0),
        )
        records.append(rec)
        if keep_solutions:
            solutions.append(x)
        if verbose:
            print(f"[{problem.name}] level {level:2d} N={N:5d} eta={rec.eta:.3e} "
                  f"cond_mlas={cond_mlas if cond_mlas else float('nan'):.2f} "
                  f"({rec.wall_s:.1f}s)", flush=True)

        if N >= max_dofs:
            break
        if not marked:
            run.converged = True
            break
        # nodes whose elements sit at the float64 resolution floor cannot
        # refine; fall through to the largest refinable indicators instead
        effective = [z for z in marked if _node_refinable(kv, z)]
        if not effective:
            order = np.argsort(-field_.values)
            for idx in order:
                z = field_.nodes[int(idx)]
                if field_.values[int(idx)] > 0 and _node_refinable(kv, z):
                    effective = [z]
                    break
        if not effective:
            run.saturated = True
            break
        res = knots.refine(kv, [], effective, kappa0, bisectable=element_bisectable)
        if not res.new_nodes:
            run.saturated = True
            break
        fine = splines.refined_knot_vector(kv, res.kv)
        hierarchy.append(knots.RefineResult(fine, res.new_nodes, res.bisected, res.bumped))
        prolongs.append(mlprecond.ansatz_prolongation(kv, fine, problem.operator))
        level += 1
    return run
