"""Cas fabriqués : conditions aux limites et cohérence des dérivées."""

import math

import numpy as np
import pytest

from services.manufactured import (
    CASES, LayerFunction, TestCase, layer_part, make_case, layer_case, polynomial_case,
)

EPS_LIST = [1e-2, 1e-4, 1e-8, 1e-12]


def _central(func, x, step):
    return (func(x + step) - func(x - step)) / (2.0 * step)


class TestBoundaryConditions:
    @pytest.mark.parametrize("name", sorted(CASES))
    @pytest.mark.parametrize("eps", EPS_LIST)
    def test_boundary_values(self, name, eps):
        case = make_case(name, eps)
        assert isinstance(case, TestCase)
        assert abs(case.exact_u(0.0)) <= 1e-12
        assert abs(case.exact_u(1.0)) <= 1e-12
        assert abs(case.exact_p(1.0)) <= 1e-12

    def test_unknown_case(self):
        with pytest.raises(ValueError):
            make_case("cubic", 1e-2)

    @pytest.mark.parametrize("eps", [0.0, 1.0])
    def test_eps_range(self, eps):
        with pytest.raises(ValueError):
            layer_case(eps)


class TestDerivativeConsistency:
    """p = u', q = εp', f = q' - p' + p + u (a = b = c = 1)."""

    @pytest.mark.parametrize("name", sorted(CASES))
    @pytest.mark.parametrize("eps", [0.5, 0.1, 1e-2])
    def test_chain(self, name, eps):
        case = make_case(name, eps)
        x = np.linspace(0.05, 0.95, 37)
        step = 1e-5 * min(1.0, eps * 10)
        np.testing.assert_allclose(_central(case.exact_u, x, step), case.exact_p(x),
                                   rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(eps * _central(case.exact_p, x, step), case.exact_q(x),
                                   rtol=1e-6, atol=1e-8)
        rebuilt = (_central(case.exact_q, x, step) - _central(case.exact_p, x, step)
                   + case.exact_p(x) + case.exact_u(x))
        np.testing.assert_allclose(rebuilt, case.problem.f(x), rtol=1e-5, atol=1e-6)

    @pytest.mark.parametrize("eps", [1e-4, 1e-8, 1e-12])
    def test_chain_in_layer(self, eps):
        """Même chaîne dans la couche, via at(x, d) : d/dx = ∂x|d + (1/ε) pour e^{-d/ε}.

        ∂x est pris à d fixé (partie régulière seule) ; la partie couche est
        vérifiée par différence exacte en d.
        """
        case = layer_case(eps)
        u, p, q, f = case.exact_u, case.exact_p, case.exact_q, case.problem.f
        d = eps * np.linspace(0.0, 6.0, 13)
        x = 1.0 - d
        far = np.ones_like(d)
        layer = np.exp(-d / eps)
        np.testing.assert_allclose(u.at(x, d) - u.at(x, far), eps * layer, rtol=1e-3, atol=2e-15)
        np.testing.assert_allclose(p.at(x, d) - p.at(x, far), layer, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(q.at(x, d) - q.at(x, far), layer, rtol=1e-12, atol=1e-15)

        step = 1e-6
        dx = lambda g: (g.at(x + step, d) - g.at(x - step, d)) / (2.0 * step)
        np.testing.assert_allclose(dx(u) + layer, p.at(x, d), rtol=1e-7, atol=1e-8)
        np.testing.assert_allclose(eps * dx(p) + layer, q.at(x, d), rtol=1e-7, atol=1e-8)
        np.testing.assert_allclose(dx(q) - dx(p) + p.at(x, d) + u.at(x, d), f.at(x, d),
                                   rtol=1e-6, atol=1e-6)

    @pytest.mark.parametrize("eps", EPS_LIST)
    def test_problem_hypotheses(self, eps):
        layer_case(eps).problem.check()


class TestLayer:
    def test_at_matches_call(self):
        u = layer_case(1e-2).exact_u
        x = np.linspace(0.0, 1.0, 11)
        np.testing.assert_allclose(u.at(x, 1.0 - x), u(x), rtol=1e-15)

    def test_exact_distance_precision(self):
        """À ε = 1e-12, la partie couche reste exacte quand d est fourni."""
        eps = 1e-12
        layer = layer_part(layer_case(eps))
        assert layer.at(1.0 - eps, eps) == pytest.approx(eps * math.exp(-1.0), rel=1e-14)

    @pytest.mark.parametrize("eps", [1e-2, 1e-4, 1e-8])
    def test_layer_bound(self, eps):
        """|u - partie régulière| <= 2ε e^{-(1-x)/ε}"""
        case = layer_case(eps)
        x = np.linspace(0.0, 1.0, 2001)
        e1 = math.exp(-1.0 / eps)
        A = 1 - 2 * eps + 2 * eps * e1
        B = eps - eps * e1 - 1
        s = np.sin(0.5 * np.pi * x)
        smooth = -eps * e1 + A * s + x * (1 - x) + B * s ** 2
        bound = 2 * eps * np.exp(-(1 - x) / eps)
        assert np.all(np.abs(case.exact_u(x) - smooth) <= bound + 1e-15)
        np.testing.assert_allclose(layer_part(case)(x), case.exact_u(x) - smooth, atol=1e-14)

    def test_layer_function_is_frozen(self):
        f = LayerFunction(lambda x, d, e: d, 0.1)
        assert f(0.25) == pytest.approx(0.75)
        with pytest.raises(AttributeError):
            f.eps = 0.2

    def test_polynomial_case(self):
        case = polynomial_case(1e-8)
        assert case.name == "polynomial"
        assert case.exact_u(0.5) == pytest.approx(0.125)
        assert case.exact_q(1.0) == pytest.approx(2e-8)
