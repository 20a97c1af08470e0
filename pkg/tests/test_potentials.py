import math

import numpy as np
import pytest

from igabem import geometry, knots, potentials, quadrature
from igabem.assembly import CurveCache, QuadratureSpec, WeaklySingularKernel

QUAD = QuadratureSpec()


def unit_segment_cache():
    kv = knots.make_initial([0, 1], [2, 2], 1, closed=False)
    curve = geometry.BoundaryCurve(kv, np.array([[0.0, 0.0], [1.0, 0.0]]),
                                   closed=False, normal_sign=-1.0)
    return CurveCache(kv, curve, QUAD)


class TestSingleLayerPotential:
    def test_zero_density(self):
        cache = unit_segment_cache()
        out = potentials.layer_potential(
            cache, WeaklySingularKernel, lambda e, loc: np.zeros(len(loc)),
            np.array([0.25, 0.5]),
        )
        assert np.all(out == 0.0)

    def test_straight_element_closed_form(self):
        # -(1/2pi) int_0^1 log|x-y| dy has an elementary antiderivative
        cache = unit_segment_cache()
        lob = quadrature.lobatto01(8)
        vals = potentials.layer_potential(
            cache, WeaklySingularKernel, lambda e, loc: np.ones(len(loc)), lob
        )

        def exact(x):
            if x <= 0.0 or x >= 1.0:
                return 1 / (2 * math.pi)
            return -(x * math.log(x) - x + (1 - x) * math.log(1 - x) - (1 - x)) / (2 * math.pi)

        for j, t in enumerate(lob):
            assert abs(vals[0, j] - exact(float(t))) < 1e-13

    def test_multi_element_matches_singleton(self):
        # same slit, two partitions: values of V(const) agree
        curve = geometry.slit()
        dens = lambda e, loc: 2.0 * np.ones(len(loc))
        cache = CurveCache(curve.kv, curve, QUAD)
        lob = quadrature.lobatto01(6)
        vals = potentials.layer_potential(cache, WeaklySingularKernel, dens, lob)

        def exact(x):
            if abs(x) >= 1:
                return -(2 * math.log(2) - 2) / (2 * math.pi)
            return -((x + 1) * math.log(x + 1) - (x + 1)
                     + (1 - x) * math.log(1 - x) - (1 - x)) / (2 * math.pi)

        for e in range(4):
            for j, t in enumerate(lob):
                x = 2 * (e + float(t)) / 4 - 1
                assert abs(vals[e, j] - exact(x)) < 1e-13


class TestInterpolantDerivative:
    def test_constant_residual_derivative_vanishes(self):
        curve = geometry.slit()
        cache = CurveCache(curve.kv, curve, QUAD)
        lob = quadrature.lobatto01(8)
        s = potentials.element_arclength_nodes(cache, lob)
        d = potentials.interpolant_derivative(s, np.ones_like(s), s)
        assert np.abs(d).max() < 1e-9

    def test_polynomial_exactness(self):
        curve = geometry.slit()
        cache = CurveCache(curve.kv, curve, QUAD)
        lob = quadrature.lobatto01(8)
        s = potentials.element_arclength_nodes(cache, lob)
        vals = s**5 - 3 * s**2 + s
        d = potentials.interpolant_derivative(s, vals, s)
        assert np.abs(d - (5 * s**4 - 6 * s + 1)).max() < 1e-9

    def test_too_few_nodes(self):
        with pytest.raises(ValueError):
            potentials.interpolant_derivative(np.ones((2, 1)), np.ones((2, 1)),
                                              np.ones((2, 1)))


class TestProjection:
    def test_orthogonality_on_slit(self):
        curve = geometry.slit()
        cache = CurveCache(curve.kv, curve, QUAD)
        func = lambda e, loc, pts, sp: np.sin(3 * pts[:, 0])
        proj = potentials.l2_project(cache, func, 2)
        gx, gw = quadrature.gauss01(24)
        basis = potentials._legendre_table(2, gx)
        for e in range(cache.n_el):
            pts, _, sp = cache.frames(e, gx)
            diff = np.sin(3 * pts[:, 0]) - proj.eval_local(e, gx)
            for a in range(3):
                assert abs(np.dot(diff * basis[a], gw * sp * cache.h[e])) < 1e-10

    def test_reproduces_polynomials(self):
        curve = geometry.slit()
        cache = CurveCache(curve.kv, curve, QUAD)
        func = lambda e, loc, pts, sp: 2.0 * loc**2 - loc + 0.25
        proj = potentials.l2_project(cache, func, 2)
        loc = np.linspace(0, 1, 7)
        for e in range(cache.n_el):
            assert np.abs(proj.eval_local(e, loc) - func(e, loc, None, None)).max() < 1e-13
