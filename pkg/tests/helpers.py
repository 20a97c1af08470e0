"""Shared builders for preconditioner tests: random and synthetic hierarchies."""

from fractions import Fraction as F

import numpy as np

from igabem import knots, splines


def random_hierarchy(p, closed, n_steps, rng, with_weights=False, n0=4):
    """Adaptive-style hierarchy mixing bisections and multiplicity bumps."""
    breaks = [F(j, n0) for j in range(n0 + 1)]
    mults = [p + 1] + [1] * (n0 - 1) + [p + 1]
    w = None
    if with_weights:
        w = rng.uniform(0.5, 2.0, sum(mults[1:]))
        w[-1] = w[0]
    kv0 = knots.make_initial(breaks, mults, p, closed, w)
    kappa0 = knots.mesh_ratio(kv0)
    h = knots.Hierarchy.from_root(kv0)
    kv = kv0
    for _ in range(n_steps):
        n = kv.n_elements
        els = sorted(set(rng.choice(n, size=max(1, n // 4), replace=False).tolist()))
        nodes = []
        if p >= 2 and rng.random() < 0.6:
            j = int(rng.integers(1, len(kv.breakpoints) - 1))
            if kv.mults[j] < p:
                nodes = [kv.breakpoints[j]]
        res = knots.refine(kv, els, nodes, kappa0)
        if with_weights:
            fine = splines.refined_knot_vector(kv, res.kv)
            res = knots.RefineResult(fine, res.new_nodes, res.bisected, res.bumped)
        h.append(res)
        kv = res.kv
    return h


def synthetic_hierarchy(target_n, p=2, seed=0, fraction=0.3, concentrate=0.5):
    """Grow a hierarchy until the knot count reaches target_n.

    A `fraction` of the elements is marked per step; `concentrate` weights the
    draw toward the left end so that refinement is spatially uneven like an
    adaptive run.
    """
    rng = np.random.default_rng(seed)
    n0 = 8
    breaks = [F(j, n0) for j in range(n0 + 1)]
    kv = knots.make_initial(breaks, [p + 1] + [1] * (n0 - 1) + [p + 1], p, closed=False)
    kappa0 = knots.mesh_ratio(kv)
    h = knots.Hierarchy.from_root(kv)
    while h.levels[-1].num_knots < target_n:
        cur = h.levels[-1]
        n = cur.n_elements
        weights = (1.0 - concentrate) + concentrate * np.exp(
            -4.0 * np.arange(n) / max(n - 1, 1)
        )
        weights /= weights.sum()
        count = max(1, int(fraction * n))
        els = np.sort(rng.choice(n, size=count, replace=False, p=weights))
        h.append(knots.refine(cur, els.tolist(), [], kappa0))
    return h


def synthetic_diagonals(hierarchy, rng):
    """Positive stand-in Galerkin diagonal entries, one per selected function."""
    return [
        rng.uniform(0.5, 2.0, len(hierarchy.selected_indices(ell)))
        for ell in range(hierarchy.depth + 1)
    ]
