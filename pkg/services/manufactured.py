"""Cas tests fabriqués : solution exacte à couche limite et cas polynomial."""
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ldg_solver import Problem

logger = logging.getLogger(__name__)

HALF_PI = 0.5 * np.pi


@dataclass(frozen=True)
class LayerFunction:
    """Fonction de x dont la partie couche dépend de d = 1 - x.

    `at(x, d)` reçoit d calculé exactement (décalages du maillage) ; l'appel simple
    `f(x)` recalcule d = 1 - x.
    """
    body: Callable
    eps: float

    def at(self, x, d):
        return self.body(np.asarray(x, dtype=float), np.asarray(d, dtype=float), self.eps)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.at(x, 1.0 - x)


@dataclass(frozen=True)
class TestCase:
    __test__ = False   # pas une classe de test pytest

    name: str
    eps: float
    problem: Problem
    exact_u: Callable
    exact_p: Callable
    exact_q: Callable


def _one(x):
    return np.ones(np.shape(x))


def _zero(x):
    return np.zeros(np.shape(x))


def _consts(eps):
    e1 = np.exp(-1.0 / eps)          # sous-dépassement vers 0 accepté
    A = 1.0 - 2.0 * eps + 2.0 * eps * e1
    B = eps - eps * e1 - 1.0
    return e1, A, B


def _layer(d, eps):
    return np.exp(-d / eps)


def _layer_u(x, d, eps):
    e1, A, B = _consts(eps)
    s = np.sin(HALF_PI * x)
    return -eps * e1 + A * s + eps * _layer(d, eps) + x * (1.0 - x) + B * s ** 2


def _layer_p(x, d, eps):
    _, A, B = _consts(eps)
    return (A * HALF_PI * np.cos(HALF_PI * x) + _layer(d, eps) + (1.0 - 2.0 * x)
            + B * HALF_PI * np.sin(np.pi * x))


def _layer_q(x, d, eps):
    # q = εu'' ; la partie couche εe^{-d/ε}/ε se simplifie en e^{-d/ε}
    _, A, B = _consts(eps)
    return eps * (-A * HALF_PI ** 2 * np.sin(HALF_PI * x) - 2.0
                  + B * 0.5 * np.pi ** 2 * np.cos(np.pi * x)) + _layer(d, eps)


def _layer_f(x, d, eps):
    # f = εu''' - u'' + u' + u, termes en e^{-d/ε}/ε annulés à la main
    e1, A, B = _consts(eps)
    s, c = np.sin(HALF_PI * x), np.cos(HALF_PI * x)
    s2, c2 = np.sin(np.pi * x), np.cos(np.pi * x)
    third = -eps * (A * HALF_PI ** 3 * c + B * 0.5 * np.pi ** 3 * s2)
    second = A * HALF_PI ** 2 * s + 2.0 - B * 0.5 * np.pi ** 2 * c2
    first = A * HALF_PI * c + (1.0 - 2.0 * x) + B * HALF_PI * s2
    zeroth = -eps * e1 + A * s + x * (1.0 - x) + B * s ** 2
    return third + second + first + zeroth + (1.0 + eps) * _layer(d, eps)


def _layer_tail(x, d, eps):
    return eps * _layer(d, eps)


def unit_problem(f: Callable) -> Problem:
    """a = b = c = 1 (α = 1, γ = 1)."""
    return Problem(a=_one, b=_one, bprime=_zero, c=_one, f=f, alpha=1.0, gamma=1.0)


def layer_case(eps: float) -> TestCase:
    """Solution exacte à couche en x = 1 avec a = b = c = 1."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps doit être dans (0, 1) (reçu {eps})")
    return TestCase(
        name="layer",
        eps=eps,
        problem=unit_problem(LayerFunction(_layer_f, eps)),
        exact_u=LayerFunction(_layer_u, eps),
        exact_p=LayerFunction(_layer_p, eps),
        exact_q=LayerFunction(_layer_q, eps),
    )


def layer_part(case: TestCase) -> Callable:
    """Partie couche εe^{-(1-x)/ε} de la solution (cas « layer »)."""
    return LayerFunction(_layer_tail, case.eps)


def _poly_u(x, d, eps):
    return x * (1.0 - x) ** 2


def _poly_p(x, d, eps):
    return 1.0 - 4.0 * x + 3.0 * x ** 2


def _poly_q(x, d, eps):
    return eps * (-4.0 + 6.0 * x)


def _poly_f(x, d, eps):
    return 6.0 * eps + 5.0 - 9.0 * x + x ** 2 + x ** 3


def polynomial_case(eps: float) -> TestCase:
    """u = x(1-x)², reproduit exactement dès k = 3."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps doit être dans (0, 1) (reçu {eps})")
    return TestCase(
        name="polynomial",
        eps=eps,
        problem=unit_problem(LayerFunction(_poly_f, eps)),
        exact_u=LayerFunction(_poly_u, eps),
        exact_p=LayerFunction(_poly_p, eps),
        exact_q=LayerFunction(_poly_q, eps),
    )


CASES = {"layer": layer_case, "polynomial": polynomial_case}


def make_case(name: str, eps: float) -> TestCase:
    try:
        return CASES[name](eps)
    except KeyError:
        raise ValueError(f"cas inconnu : {name!r} ({', '.join(CASES)})") from None
