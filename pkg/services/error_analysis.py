import logging
import math
from dataclasses import dataclass, asdict
from typing import Callable, Optional, Sequence

import numpy as np

from utils.meshgen import Mesh, MeshKind, max_dpsi
from utils.polyspace import (
    ElementRule, FunctionField, PiecewisePoly, ProjectionSign, Quadrature,
    basis_values, element_rule, gauss_quadrature, jumps, project_gauss_radau,
)
from .ldg_solver import LdgSolution, Problem, energy_norm_squared
from .manufactured import TestCase, layer_case

logger = logging.getLogger(__name__)

DEFAULT_QUAD_ERROR = 20


class AnalysisError(ValueError):
    """Arguments invalides pour un calcul d'erreur ou de taux."""


@dataclass(frozen=True)
class ErrorField:
    """e = exact - approx, exposé comme un champ (valeurs et traces)."""
    exact: FunctionField
    approx: PiecewisePoly

    @property
    def mesh(self) -> Mesh:
        return self.approx.mesh

    @property
    def left_traces(self) -> np.ndarray:
        return self.exact.left_traces - self.approx.left_traces

    @property
    def right_traces(self) -> np.ndarray:
        return self.exact.right_traces - self.approx.right_traces

    def values(self, rule: ElementRule) -> np.ndarray:
        return self.exact.values(rule) - self.approx.values(rule)


def error_field(func: Callable, v: PiecewisePoly) -> ErrorField:
    return ErrorField(FunctionField(v.mesh, func), v)


def _quad(quad: Optional[Quadrature]) -> Quadrature:
    return quad if quad is not None else gauss_quadrature(DEFAULT_QUAD_ERROR)


def error_energy_norm(exact, W: LdgSolution, problem: Problem,
                      quad: Optional[Quadrature] = None, parts: bool = False):
    """|||w - W||| ; exact = (u, p, q). Les sauts intérieurs de w sont nuls."""
    u, p, _ = exact
    if W.P.mesh is not W.U.mesh:
        raise AnalysisError("U et P sur des maillages différents")
    terms = energy_norm_squared(error_field(u, W.U), error_field(p, W.P), problem,
                                quad=_quad(quad), parts=True)
    if parts:
        return terms
    return math.sqrt(max(sum(terms), 0.0))


def l2_error(exact: Callable, v: PiecewisePoly, quad: Optional[Quadrature] = None) -> float:
    rule = element_rule(v.mesh, _quad(quad))
    diff = error_field(exact, v).values(rule)
    return math.sqrt(float(np.sum(rule.integrate(diff ** 2))))


def linf_error_fine(exact: Callable, v: PiecewisePoly, quad: Optional[Quadrature] = None) -> float:
    """max|exact - v| sur Ω^f, aux points de quadrature et aux extrémités des éléments."""
    rule = element_rule(v.mesh, _quad(quad))
    field = error_field(exact, v)
    fine = v.mesh.fine_elements
    vals = np.abs(field.values(rule))[fine]
    vals = np.where(rule.weights[fine] > 0.0, vals, 0.0)
    ends = np.concatenate([np.abs(field.left_traces[fine]), np.abs(field.right_traces[fine])])
    return float(max(vals.max(initial=0.0), ends.max(initial=0.0)))


def jump_norm(exact: Callable, v: PiecewisePoly) -> float:
    """(Σ_{j=0}^N [exact - v]_j²)^{1/2}"""
    return float(np.linalg.norm(jumps(error_field(exact, v))))


@dataclass(frozen=True)
class ErrorRecord:
    energy: float
    l2_u: float
    l2_p: float
    l2_q: float
    linf_u_fine: float
    jump_u: float
    jump_p: float
    energy_parts: tuple = ()

    def bookkeeping_gap(self) -> float:
        """|energy² - Σ parties| / energy²"""
        total = sum(self.energy_parts)
        return abs(self.energy ** 2 - total) / total if total > 0 else 0.0


def error_record(case: TestCase, W: LdgSolution, quad: Optional[Quadrature] = None) -> ErrorRecord:
    quad = _quad(quad)
    exact = (case.exact_u, case.exact_p, case.exact_q)
    parts = error_energy_norm(exact, W, case.problem, quad, parts=True)
    return ErrorRecord(
        energy=math.sqrt(max(sum(parts), 0.0)),
        l2_u=l2_error(case.exact_u, W.U, quad),
        l2_p=l2_error(case.exact_p, W.P, quad),
        l2_q=l2_error(case.exact_q, W.Q, quad),
        linf_u_fine=linf_error_fine(case.exact_u, W.U, quad),
        jump_u=jump_norm(case.exact_u, W.U),
        jump_p=jump_norm(case.exact_p, W.P),
        energy_parts=tuple(float(t) for t in parts),
    )


def quadrature_self_check(case: TestCase, W: LdgSolution, n: int = DEFAULT_QUAD_ERROR) -> float:
    """Variation relative de l'erreur en énergie entre n et 2n points."""
    exact = (case.exact_u, case.exact_p, case.exact_q)
    e_n = error_energy_norm(exact, W, case.problem, gauss_quadrature(n))
    e_2n = error_energy_norm(exact, W, case.problem, gauss_quadrature(2 * n))
    return abs(e_n - e_2n) / e_2n if e_2n > 0 else 0.0


# --- Taux de convergence ---

@dataclass(frozen=True)
class RatePair:
    r2: float
    rs: float


def _check_errors(eN: float, e2N: float):
    if not (eN > 0.0 and e2N > 0.0):
        raise AnalysisError(f"erreurs non positives : {eN}, {e2N}")


def rate_r2(eN: float, e2N: float) -> float:
    _check_errors(eN, e2N)
    return math.log(eN / e2N) / math.log(2.0)


def rate_rs(eN: float, e2N: float, N: int) -> float:
    """Taux par rapport à la puissance de N⁻¹ ln N (maillage S)."""
    _check_errors(eN, e2N)
    if N < 4:
        raise AnalysisError(f"N doit être >= 4 (reçu {N})")
    return math.log(eN / e2N) / math.log(2.0 * math.log(N) / math.log(2 * N))


def rate_pair(eN: float, e2N: float, N: int) -> RatePair:
    return RatePair(r2=rate_r2(eN, e2N), rs=rate_rs(eN, e2N, N))


def fitted_rate(ns: Sequence[int], errors: Sequence[float], scale: str = "N",
                kind: Optional[MeshKind] = None) -> float:
    """Ordre p tel que erreur ≈ C h(N)^p, pente des moindres carrés en log-log.

    scale : "N" (h = 1/N), "lnN" (h = N⁻¹ ln N) ou "psi" (h = N⁻¹ max|ψ'|, kind requis).
    """
    ns = np.asarray(ns, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(ns) < 2 or np.any(errors <= 0.0):
        raise AnalysisError("au moins deux erreurs positives sont nécessaires")
    if scale == "N":
        h = 1.0 / ns
    elif scale == "lnN":
        h = np.log(ns) / ns
    elif scale == "psi" and kind is not None:
        h = np.array([max_dpsi(kind, int(n)) for n in ns]) / ns
    else:
        raise AnalysisError(f"échelle inconnue : {scale!r}")
    slope, _ = np.polyfit(np.log(h), np.log(errors), 1)
    return float(slope)


# --- Erreurs de projection ---

@dataclass(frozen=True)
class ProjectionErrors:
    u_l2: float
    p_l2: float
    q_l2: float
    p_linf_fine: float
    q_linf_fine: float
    u_jump: float
    p_jump: float
    collocation_residual: float
    moment_residual: float
    predicted_factor: float   # N⁻¹ max|ψ'|

    def as_dict(self) -> dict:
        return asdict(self)


def projection_residuals(sign: ProjectionSign, func: Callable, proj: PiecewisePoly,
                         quad: Quadrature):
    """(collocation, moments) : écarts relatifs aux conditions de définition de π±."""
    mesh, k = proj.mesh, proj.k
    field = FunctionField(mesh, func)
    if sign is ProjectionSign.MINUS:
        gap = field.right_traces - proj.right_traces
    else:
        gap = field.left_traces - proj.left_traces
    rule = element_rule(mesh, quad)
    scale = max(float(np.max(np.abs(field.values(rule)), initial=0.0)), 1e-300)
    colloc = float(np.max(np.abs(gap))) / scale
    if k == 0:
        return colloc, 0.0
    diff = field.values(rule) - proj.values(rule)
    psi = basis_values(rule.t, k - 1)
    moments = np.einsum("em,em,emk->ek", rule.weights, diff, psi) \
        * (0.5 * np.sqrt(mesh.widths))[:, None]
    local = np.sqrt(rule.integrate(field.values(rule) ** 2))
    moment = float(np.max(np.abs(moments) / np.maximum(local, 1e-300)[:, None]))
    return colloc, moment


def projection_error_suite(mesh: Mesh, k: int, eps: float, case: Optional[TestCase] = None,
                           quad: Optional[Quadrature] = None) -> ProjectionErrors:
    """Normes d'approximation de (u - π⁻u, p - π⁺p, q - π⁺q)."""
    if mesh.spec.sigma < k + 1.5:
        logger.warning("sigma=%.2f < k + 1.5 : estimations d'approximation non garanties",
                       mesh.spec.sigma)
    case = case or layer_case(eps)
    quad = _quad(quad)
    pu = project_gauss_radau(ProjectionSign.MINUS, case.exact_u, mesh, k, quad)
    pp = project_gauss_radau(ProjectionSign.PLUS, case.exact_p, mesh, k, quad)
    pq = project_gauss_radau(ProjectionSign.PLUS, case.exact_q, mesh, k, quad)
    residuals = [
        projection_residuals(ProjectionSign.MINUS, case.exact_u, pu, quad),
        projection_residuals(ProjectionSign.PLUS, case.exact_p, pp, quad),
        projection_residuals(ProjectionSign.PLUS, case.exact_q, pq, quad),
    ]
    return ProjectionErrors(
        u_l2=l2_error(case.exact_u, pu, quad),
        p_l2=l2_error(case.exact_p, pp, quad),
        q_l2=l2_error(case.exact_q, pq, quad),
        p_linf_fine=linf_error_fine(case.exact_p, pp, quad),
        q_linf_fine=linf_error_fine(case.exact_q, pq, quad),
        u_jump=jump_norm(case.exact_u, pu),
        p_jump=jump_norm(case.exact_p, pp),
        collocation_residual=max(r[0] for r in residuals),
        moment_residual=max(r[1] for r in residuals),
        predicted_factor=max_dpsi(mesh.spec.kind, mesh.N) / mesh.N,
    )


@dataclass(frozen=True)
class ElementIdentity:
    """Membres de ‖Y‖² = ε(⟨X', Y⟩ + Y_j⁻[X]_j) + F_j(Y) par élément."""
    lhs: np.ndarray
    derivative_term: np.ndarray
    jump_term: np.ndarray
    forcing_term: np.ndarray

    @property
    def rhs(self) -> np.ndarray:
        return self.derivative_term + self.jump_term + self.forcing_term

    def relative_gap(self) -> float:
        scale = max(np.max(np.abs(self.lhs)), np.max(np.abs(self.derivative_term)),
                    np.max(np.abs(self.jump_term)), np.max(np.abs(self.forcing_term)))
        return float(np.max(np.abs(self.lhs - self.rhs)) / scale) if scale > 0 else 0.0


def element_identity_residuals(case: TestCase, W: LdgSolution,
                     quad: Optional[Quadrature] = None) -> ElementIdentity:
    """Y = Q - π⁺q, X = P - π⁺p, F_j(s) = ⟨q - π⁺q, s⟩_{I_j}."""
    mesh, k = W.mesh, W.U.k
    quad = _quad(quad)
    rule = element_rule(mesh, quad)
    pp = project_gauss_radau(ProjectionSign.PLUS, case.exact_p, mesh, k, quad)
    pq = project_gauss_radau(ProjectionSign.PLUS, case.exact_q, mesh, k, quad)
    X, Y = W.P - pp, W.Q - pq
    Yv = Y.values(rule)
    lhs = Y.element_norms() ** 2
    deriv = mesh.eps * rule.integrate(X.derivative_values(rule) * Yv)
    jump = mesh.eps * Y.right_traces * jumps(X)[1:]
    forcing = rule.integrate(error_field(case.exact_q, pq).values(rule) * Yv)
    return ElementIdentity(lhs=lhs, derivative_term=deriv, jump_term=jump, forcing_term=forcing)
