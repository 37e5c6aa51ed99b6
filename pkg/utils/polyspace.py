import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial import legendre
from scipy.special import roots_legendre

from .meshgen import Mesh

logger = logging.getLogger(__name__)

MAX_QUAD_POINTS = 64
# au-delà de 40ε de x = 1, e^{-(1-x)/ε} < 5e-18 : inutile de subdiviser
LAYER_CUTOFF = 40.0


class QuadratureError(ValueError):
    """Règle de quadrature ou argument de trace invalide."""


class ProjectionError(ArithmeticError):
    """Système local de projection singulier."""


class ProjectionSign(Enum):
    MINUS = "-"   # π⁻ : collocation à l'extrémité droite
    PLUS = "+"    # π⁺ : collocation à l'extrémité gauche


@dataclass(frozen=True)
class Quadrature:
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return len(self.nodes)


@lru_cache(maxsize=None)
def gauss_quadrature(n: int) -> Quadrature:
    """Règle de Gauss-Legendre à n points sur [-1, 1]."""
    if not 1 <= n <= MAX_QUAD_POINTS:
        raise QuadratureError(f"nombre de points non supporté : {n} (1..{MAX_QUAD_POINTS})")
    t, w = roots_legendre(n)
    t.setflags(write=False)
    w.setflags(write=False)
    return Quadrature(nodes=t, weights=w)


# --- Base de Legendre orthonormée sur l'élément de référence ---
# φ_m(x) = ψ_m(t) / sqrt(h), ψ_m = sqrt(2m+1) P_m, t ∈ [-1, 1]

def basis_values(t, k: int) -> np.ndarray:
    """ψ_m(t) pour m = 0..k ; forme (..., k+1)."""
    t = np.asarray(t, dtype=float)
    scale = np.sqrt(2.0 * np.arange(k + 1) + 1.0)
    # legvander promeut un scalaire en tableau 1-D
    return (legendre.legvander(t, k) * scale).reshape(t.shape + (k + 1,))


def basis_derivatives(t, k: int) -> np.ndarray:
    """dψ_m/dt pour m = 0..k ; forme (..., k+1)."""
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape + (k + 1,))
    for m in range(1, k + 1):
        coef = np.zeros(m + 1)
        coef[m] = np.sqrt(2.0 * m + 1.0)
        out[..., m] = legendre.legval(t, legendre.legder(coef))
    return out


def right_values(k: int) -> np.ndarray:
    return np.sqrt(2.0 * np.arange(k + 1) + 1.0)


def left_values(k: int) -> np.ndarray:
    m = np.arange(k + 1)
    return (-1.0) ** m * np.sqrt(2.0 * m + 1.0)


def sample(func: Callable, x, dist):
    """Évalue func en x ; les fonctions à couche reçoivent aussi d = 1 - x exact."""
    at = getattr(func, "at", None)
    if at is not None:
        return at(x, dist)
    return np.broadcast_to(np.asarray(func(x), dtype=float), np.shape(x))


@dataclass(frozen=True)
class ElementRule:
    """Quadrature par élément : points t, fractions ρ = (1 - t)/2, poids de référence.

    Dans les éléments où la couche n'est pas résolue, la règle est subdivisée
    géométriquement vers x = 1 (pas ε, 2ε, 4ε, ...). Poids nuls en remplissage.
    """
    mesh: Mesh
    rho: np.ndarray       # (N, M)
    weights: np.ndarray   # (N, M), somme 2 par élément
    n: int

    @property
    def t(self) -> np.ndarray:
        return 1.0 - 2.0 * self.rho

    @property
    def x(self) -> np.ndarray:
        h = self.mesh.widths[:, None]
        return self.mesh.left[:, None] + h * (1.0 - self.rho)

    @property
    def dist(self) -> np.ndarray:
        return self.mesh.right_dist[:, None] + self.mesh.widths[:, None] * self.rho

    @property
    def jacobian(self) -> np.ndarray:
        """h/2 par élément, forme (N, 1)."""
        return 0.5 * self.mesh.widths[:, None]

    def integrate(self, values) -> np.ndarray:
        """∫ sur chaque élément ; values de forme (N, M)."""
        return np.sum(self.weights * values, axis=-1) * self.jacobian[:, 0]

    def sample(self, func: Callable) -> np.ndarray:
        return sample(func, self.x, self.dist)


def _graded_breaks(h: float, eps: float) -> np.ndarray:
    # fractions depuis la droite : 0, ε/h, 2ε/h, 4ε/h, ..., 1
    steps = [0.0]
    s = 1.0
    while s * eps < h:
        steps.append(s * eps / h)
        s *= 2.0
    steps.append(1.0)
    return np.array(steps)


def element_rule(mesh: Mesh, quad: Quadrature, graded: bool = True) -> ElementRule:
    """Construit la règle par élément (gauss_quadrature(n) sur chaque sous-intervalle)."""
    tq, wq = quad.nodes, quad.weights
    # sur [-1, 1], ρ = (1 - t)/2 ; poids en mesure t
    base_rho = 0.5 * (1.0 - tq)
    eps = mesh.eps
    per_elem = []
    for e in range(mesh.N):
        h = mesh.widths[e]
        if graded and h > eps and mesh.right_dist[e] < LAYER_CUTOFF * eps:
            br = _graded_breaks(h, eps)
            a, b = br[:-1, None], br[1:, None]
            rho = (a + (b - a) * base_rho[None, :]).ravel()
            w = ((b - a) * wq[None, :]).ravel()
            per_elem.append((rho, w))
        else:
            per_elem.append((base_rho, wq))
    M = max(len(r) for r, _ in per_elem)
    rho = np.full((mesh.N, M), 0.5)
    weights = np.zeros((mesh.N, M))
    for e, (r, w) in enumerate(per_elem):
        rho[e, :len(r)] = r
        weights[e, :len(w)] = w
    return ElementRule(mesh=mesh, rho=rho, weights=weights, n=quad.n)


@dataclass(frozen=True)
class PiecewisePoly:
    """Fonction polynomiale par morceaux (degré ≤ k) dans la base orthonormée."""
    mesh: Mesh
    k: int
    coeffs: np.ndarray   # (N, k+1)

    @classmethod
    def zeros(cls, mesh: Mesh, k: int) -> "PiecewisePoly":
        return cls(mesh, k, np.zeros((mesh.N, k + 1)))

    @classmethod
    def constant(cls, mesh: Mesh, k: int, c: float) -> "PiecewisePoly":
        coeffs = np.zeros((mesh.N, k + 1))
        # φ_0 = 1/sqrt(h)
        coeffs[:, 0] = c * np.sqrt(mesh.widths)
        return cls(mesh, k, coeffs)

    def _check(self, other: "PiecewisePoly"):
        if other.mesh is not self.mesh or other.k != self.k:
            raise QuadratureError("fonctions définies sur des maillages ou degrés différents")

    def __add__(self, other):
        self._check(other)
        return PiecewisePoly(self.mesh, self.k, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check(other)
        return PiecewisePoly(self.mesh, self.k, self.coeffs - other.coeffs)

    def __neg__(self):
        return PiecewisePoly(self.mesh, self.k, -self.coeffs)

    def __mul__(self, scalar: float):
        return PiecewisePoly(self.mesh, self.k, scalar * self.coeffs)

    __rmul__ = __mul__

    @property
    def right_traces(self) -> np.ndarray:
        """v_j^- à l'extrémité droite de chaque élément."""
        return self.coeffs @ right_values(self.k) / np.sqrt(self.mesh.widths)

    @property
    def left_traces(self) -> np.ndarray:
        """v_{j-1}^+ à l'extrémité gauche de chaque élément."""
        return self.coeffs @ left_values(self.k) / np.sqrt(self.mesh.widths)

    def values(self, rule: ElementRule) -> np.ndarray:
        psi = basis_values(rule.t, self.k)                      # (N, M, k+1)
        return np.einsum("emk,ek->em", psi, self.coeffs) / np.sqrt(self.mesh.widths)[:, None]

    def derivative_values(self, rule: ElementRule) -> np.ndarray:
        dpsi = basis_derivatives(rule.t, self.k)
        h = self.mesh.widths[:, None]
        return np.einsum("emk,ek->em", dpsi, self.coeffs) * 2.0 / (h * np.sqrt(h))

    def element_norms(self) -> np.ndarray:
        """‖v‖_{I_j} : norme euclidienne des coefficients (base orthonormée)."""
        return np.linalg.norm(self.coeffs, axis=1)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))


@dataclass(frozen=True)
class FunctionField:
    """Fonction exacte vue comme un champ : valeurs aux points et traces continues."""
    mesh: Mesh
    func: Callable

    @property
    def right_traces(self) -> np.ndarray:
        return np.asarray(sample(self.func, self.mesh.nodes[1:], self.mesh.node_dist[1:]))

    @property
    def left_traces(self) -> np.ndarray:
        return np.asarray(sample(self.func, self.mesh.nodes[:-1], self.mesh.node_dist[:-1]))

    def values(self, rule: ElementRule) -> np.ndarray:
        return rule.sample(self.func)


def eval_trace(v, j: int, side: str) -> float:
    """Limite unilatérale v_j^- (side='minus', élément I_j) ou v_j^+ (side='plus', I_{j+1})."""
    N = v.mesh.N
    if side == "minus":
        if not 1 <= j <= N:
            raise QuadratureError(f"trace v_{j}^- hors domaine (1 <= j <= {N})")
        return float(v.right_traces[j - 1])
    if side == "plus":
        if not 0 <= j <= N - 1:
            raise QuadratureError(f"trace v_{j}^+ hors domaine (0 <= j <= {N - 1})")
        return float(v.left_traces[j])
    raise QuadratureError(f"côté inconnu : {side!r}")


def jumps(v) -> np.ndarray:
    """[v]_j pour j = 0..N : v⁺ - v⁻ à l'intérieur, [v]_0 = v_0⁺, [v]_N = -v_N⁻."""
    left, right = v.left_traces, v.right_traces
    out = np.empty(v.mesh.N + 1)
    out[0] = left[0]
    out[1:-1] = left[1:] - right[:-1]
    out[-1] = -right[-1]
    return out


def difference_jumps(exact, v) -> np.ndarray:
    """Sauts de exact - v (exact : FunctionField ou PiecewisePoly)."""
    return jumps(exact) - jumps(v)


def _moments(f: Callable, mesh: Mesh, k: int, rule: ElementRule) -> np.ndarray:
    # ⟨f, φ_m⟩_{I_j} = sqrt(h)/2 Σ w f ψ_m
    psi = basis_values(rule.t, k)
    fv = rule.sample(f)
    return np.einsum("em,em,emk->ek", rule.weights, fv, psi) * (0.5 * np.sqrt(mesh.widths))[:, None]


def project_l2(f: Callable, mesh: Mesh, k: int, quad: Quadrature) -> PiecewisePoly:
    rule = element_rule(mesh, quad)
    return PiecewisePoly(mesh, k, _moments(f, mesh, k, rule))


def project_gauss_radau(sign: ProjectionSign, f: Callable, mesh: Mesh, k: int,
                        quad: Quadrature) -> PiecewisePoly:
    """Projection de Gauss-Radau locale π⁻ (collocation droite) ou π⁺ (gauche).

    Sur chaque I_j : k conditions de moments contre P^{k-1} et une collocation.
    """
    rule = element_rule(mesh, quad)
    h = mesh.widths
    if sign is ProjectionSign.MINUS:
        end_vals = right_values(k)
        f_end = sample(f, mesh.nodes[1:], mesh.node_dist[1:])
    else:
        end_vals = left_values(k)
        f_end = sample(f, mesh.nodes[:-1], mesh.node_dist[:-1])

    # système de référence commun à tous les éléments (base orthonormée)
    system = np.zeros((k + 1, k + 1))
    system[:k, :k] = np.eye(k)
    system[k, :] = end_vals
    pivot = abs(np.linalg.det(system))
    if not np.isfinite(pivot) or pivot < 1e-12:
        raise ProjectionError(f"système de projection singulier (k={k})")

    rhs = np.empty((mesh.N, k + 1))
    if k > 0:
        rhs[:, :k] = _moments(f, mesh, k, rule)[:, :k]
    rhs[:, k] = np.sqrt(h) * np.asarray(f_end, dtype=float)
    coeffs = np.linalg.solve(system, rhs.T).T
    return PiecewisePoly(mesh, k, coeffs)
