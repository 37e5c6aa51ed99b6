import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack

from utils.meshgen import Mesh
from utils.polyspace import (
    ElementRule, PiecewisePoly, Quadrature, basis_derivatives, basis_values,
    element_rule, gauss_quadrature, jumps, left_values, right_values,
)

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10


class ProblemError(ValueError):
    """Coefficients ne vérifiant pas les hypothèses du problème."""


class SolverError(ArithmeticError):
    """Échec de la factorisation (pivot nul, solution non finie)."""


@dataclass(frozen=True)
class Problem:
    """εu''' - (au')' + bu' + cu = f sur (0, 1), u(0) = u(1) = u'(1) = 0."""
    a: Callable
    b: Callable
    bprime: Callable
    c: Callable
    f: Callable
    alpha: float
    gamma: float

    def check(self, n_grid: int = 2001, n_random: int = 50, seed: int = 0):
        """Vérifie a >= α, c - b'/2 >= γ sur une grille et b' par différences centrées."""
        x = np.linspace(0.0, 1.0, n_grid)
        a = np.broadcast_to(self.a(x), x.shape)
        g = np.broadcast_to(self.c(x) - 0.5 * np.asarray(self.bprime(x)), x.shape)
        if np.min(a) < self.alpha * (1 - 1e-12):
            raise ProblemError(f"a(x) >= alpha non vérifié (min a = {np.min(a):.3e})")
        if np.min(g) < self.gamma * (1 - 1e-12):
            raise ProblemError(f"c - b'/2 >= gamma non vérifié (min = {np.min(g):.3e})")
        xs = np.random.default_rng(seed).uniform(0.01, 0.99, n_random)
        step = 1e-5
        fd = (np.asarray(self.b(xs + step)) - np.asarray(self.b(xs - step))) / (2 * step)
        exact = np.broadcast_to(self.bprime(xs), xs.shape)
        scale = np.maximum(np.abs(exact), 1.0)
        if np.max(np.abs(fd - exact) / scale) > 1e-6:
            raise ProblemError("bprime n'est pas la dérivée de b")


@dataclass(frozen=True)
class BlockSystem:
    """Système global : par élément les blocs (U, P, Q) de k+1 coefficients chacun."""
    mesh: Mesh
    k: int
    matrix: sp.csr_matrix
    rhs: np.ndarray
    kl: int
    ku: int

    @property
    def block_size(self) -> int:
        return 3 * (self.k + 1)


@dataclass(frozen=True)
class LdgSolution:
    U: PiecewisePoly
    P: PiecewisePoly
    Q: PiecewisePoly
    growth: float = float("nan")
    backward_error: float = float("nan")

    @property
    def mesh(self) -> Mesh:
        return self.U.mesh


@dataclass(frozen=True)
class FluxRecord:
    Uhat: float
    Phat: float
    Qhat: float
    Ptilde: float
    bUtilde: float


def _split_b(b):
    b = np.asarray(b, dtype=float)
    return 0.5 * (b + np.abs(b)), 0.5 * (b - np.abs(b))


def _node_coeff(func: Callable, mesh: Mesh) -> np.ndarray:
    return np.broadcast_to(np.asarray(func(mesh.nodes), dtype=float), mesh.nodes.shape)


def flux_values(W, j: int, problem: Problem) -> FluxRecord:
    """Flux numériques au nœud x_j (tableau des flux)."""
    mesh = W.mesh
    N = mesh.N
    if not 0 <= j <= N:
        raise IndexError(f"nœud {j} hors domaine (0..{N})")
    bj = float(_node_coeff(problem.b, mesh)[j])
    bp, bm = _split_b(bj)
    if j == 0:
        U0, P0, Q0 = (float(F.left_traces[0]) for F in (W.U, W.P, W.Q))
        return FluxRecord(0.0, P0, Q0, P0, float(bm) * U0)
    if j == N:
        UN, PN, QN = (float(F.right_traces[-1]) for F in (W.U, W.P, W.Q))
        return FluxRecord(0.0, 0.0, QN, PN, float(bp) * UN)
    Um, Up = float(W.U.right_traces[j - 1]), float(W.U.left_traces[j])
    Pp, Qp = float(W.P.left_traces[j]), float(W.Q.left_traces[j])
    return FluxRecord(Um, Pp, Qp, Pp, float(bp) * Um + float(bm) * Up)


def _reference_forms(rule: ElementRule, k: int):
    psi = basis_values(rule.t, k)         # (N, M, k+1)
    dpsi = basis_derivatives(rule.t, k)
    return psi, dpsi


def assemble(problem: Problem, mesh: Mesh, k: int, quad: Quadrature) -> BlockSystem:
    """Assemble les trois équations locales ; lignes et colonnes ordonnées par élément puis (U, P, Q)."""
    N, k1 = mesh.N, k + 1
    nb = 3 * k1
    eps = mesh.eps
    if quad.n < k + 1:
        raise ValueError(f"quadrature à {quad.n} points insuffisante pour k={k} (>= k+1)")
    rule = element_rule(mesh, quad)
    h = mesh.widths
    psi, dpsi = _reference_forms(rule, k)
    w = rule.weights

    # formes de référence : S[m, n] = Σ w dψ_m ψ_n, physique S/h
    a_q = rule.sample(problem.a)
    b_q = rule.sample(problem.b)
    g_q = rule.sample(problem.c) - rule.sample(problem.bprime)
    stiff = np.einsum("em,emi,emj->eij", w, dpsi, psi) / h[:, None, None]
    a_form = np.einsum("em,em,emi,emj->eij", w, a_q, dpsi, psi) / h[:, None, None]
    b_form = np.einsum("em,em,emi,emj->eij", w, b_q, dpsi, psi) / h[:, None, None]
    g_form = 0.5 * np.einsum("em,em,emi,emj->eij", w, g_q, psi, psi)

    R, L = right_values(k), left_values(k)
    RR, LL, RL, LR = np.outer(R, R), np.outer(L, L), np.outer(R, L), np.outer(L, R)
    a_n = _node_coeff(problem.a, mesh)
    bp_n, bm_n = _split_b(_node_coeff(problem.b, mesh))

    eye = np.eye(k1)
    last = np.zeros(N)
    last[-1] = 1.0
    interior_right = 1.0 - last
    inv_h = (1.0 / h)[:, None, None]

    # blocs lignes A (test r), B (test s), C (test v) ; colonnes U, P, Q
    own = np.zeros((N, nb, nb))
    uA, pA, qA = slice(0, k1), slice(k1, 2 * k1), slice(2 * k1, 3 * k1)
    rA, rB, rC = uA, pA, qA
    own[:, rA, pA] = eye
    own[:, rA, uA] = stiff - interior_right[:, None, None] * RR * inv_h
    own[:, rB, qA] = eye
    own[:, rB, pA] = eps * (stiff + LL * inv_h)
    own[:, rC, qA] = -stiff - LL * inv_h + last[:, None, None] * RR * inv_h
    own[:, rC, pA] = (a_form + a_n[:-1, None, None] * LL * inv_h
                      - last[:, None, None] * a_n[-1] * RR * inv_h)
    own[:, rC, uA] = (-b_form + g_form + bp_n[1:, None, None] * RR * inv_h
                      - bm_n[:-1, None, None] * LL * inv_h)

    # couplage élément e -> e+1 (nœud droit intérieur)
    nxt = np.zeros((N - 1, nb, nb))
    s_next = (1.0 / np.sqrt(h[:-1] * h[1:]))[:, None, None]
    nxt[:, rB, pA] = -eps * RL * s_next
    nxt[:, rC, qA] = RL * s_next
    nxt[:, rC, pA] = -a_n[1:-1, None, None] * RL * s_next
    nxt[:, rC, uA] = bm_n[1:-1, None, None] * RL * s_next

    # couplage élément e -> e-1 (nœud gauche intérieur)
    prv = np.zeros((N - 1, nb, nb))
    s_prev = (1.0 / np.sqrt(h[1:] * h[:-1]))[:, None, None]
    prv[:, rA, uA] = LR * s_prev
    prv[:, rC, uA] = -bp_n[1:-1, None, None] * LR * s_prev

    rows, cols, vals = [], [], []
    ii, jj = np.meshgrid(np.arange(nb), np.arange(nb), indexing="ij")
    for blocks, row_elems, col_elems in (
            (own, np.arange(N), np.arange(N)),
            (nxt, np.arange(N - 1), np.arange(1, N)),
            (prv, np.arange(1, N), np.arange(N - 1))):
        rows.append((row_elems[:, None, None] * nb + ii).ravel())
        cols.append((col_elems[:, None, None] * nb + jj).ravel())
        vals.append(blocks.ravel())
    rows, cols, vals = (np.concatenate(v) for v in (rows, cols, vals))
    keep = vals != 0.0
    size = N * nb
    matrix = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(size, size)).tocsr()

    f_q = rule.sample(problem.f)
    rhs = np.zeros((N, nb))
    rhs[:, rC] = np.einsum("em,em,emk->ek", w, f_q, psi) * (0.5 * np.sqrt(h))[:, None]

    coo = matrix.tocoo()
    kl = int(np.max(coo.row - coo.col, initial=0))
    ku = int(np.max(coo.col - coo.row, initial=0))
    logger.debug("système LDG : taille %d, kl=%d, ku=%d, nnz=%d", size, kl, ku, matrix.nnz)
    return BlockSystem(mesh=mesh, k=k, matrix=matrix, rhs=rhs.ravel(), kl=kl, ku=ku)


def _banded(matrix: sp.csr_matrix, kl: int, ku: int) -> np.ndarray:
    # stockage LAPACK gbtrf : ab[kl + ku + i - j, j] = A[i, j]
    n = matrix.shape[0]
    coo = matrix.tocoo()
    ab = np.zeros((2 * kl + ku + 1, n))
    ab[kl + ku + coo.row - coo.col, coo.col] = coo.data
    return ab


def solve(system: BlockSystem) -> LdgSolution:
    """Factorisation LU bande avec pivot partiel, puis contrôle du résidu."""
    A, b = system.matrix, system.rhs
    kl, ku = system.kl, system.ku
    ab = _banded(A, kl, ku)
    lu, piv, info = lapack.dgbtrf(ab, kl, ku)
    if info > 0:
        raise SolverError(f"pivot nul en position {info} : assemblage ou maillage dégénéré")
    if info < 0:
        raise SolverError(f"argument {-info} invalide pour dgbtrf")
    x, info = lapack.dgbtrs(lu, kl, ku, b, piv)
    if info != 0 or not np.all(np.isfinite(x)):
        raise SolverError("solution non finie")

    a_max = np.max(np.abs(A.data)) if A.nnz else 1.0
    growth = float(np.max(np.abs(lu[:kl + ku + 1])) / a_max)
    res = np.max(np.abs(A @ x - b), initial=0.0)
    a_norm = float(np.max(np.abs(A).sum(axis=1))) if A.nnz else 0.0
    denom = a_norm * np.max(np.abs(x), initial=0.0) + np.max(np.abs(b), initial=0.0)
    backward = float(res / denom) if denom > 0 else 0.0
    if backward > RESIDUAL_TOL:
        logger.warning("résidu relatif %.2e au-delà de la tolérance (croissance %.2e)",
                       backward, growth)
    logger.debug("résolution : croissance du pivot %.3e, erreur inverse %.3e", growth, backward)

    k1 = system.k + 1
    blocks = x.reshape(system.mesh.N, 3, k1)
    mesh, k = system.mesh, system.k
    return LdgSolution(U=PiecewisePoly(mesh, k, blocks[:, 0, :].copy()),
                       P=PiecewisePoly(mesh, k, blocks[:, 1, :].copy()),
                       Q=PiecewisePoly(mesh, k, blocks[:, 2, :].copy()),
                       growth=growth, backward_error=backward)


def solve_problem(problem: Problem, mesh: Mesh, k: int, n_quad: Optional[int] = None) -> LdgSolution:
    quad = gauss_quadrature(n_quad or k + 3)
    return solve(assemble(problem, mesh, k, quad))


def _inner(rule: ElementRule, u_vals, v_vals) -> float:
    return float(np.sum(rule.integrate(u_vals * v_vals)))


def bilinear_form(W, chi, problem: Problem, quad: Optional[Quadrature] = None) -> float:
    """B(W; χ) de la forme compacte, χ = (v, r, s).

    W peut contenir des FunctionField (solution exacte) ; χ doit être discret.
    """
    v, r, s = chi
    U, P, Q = W
    mesh = v.mesh
    for F in (U, P, Q, r, s):
        if F.mesh is not mesh:
            raise ValueError("B(W; χ) : maillages différents")
    if quad is None:
        quad = gauss_quadrature(v.k + 3)
    rule = element_rule(mesh, quad)
    eps = mesh.eps

    Uq, Pq, Qq = U.values(rule), P.values(rule), Q.values(rule)
    vq, rq, sq = v.values(rule), r.values(rule), s.values(rule)
    dv, dr, ds = v.derivative_values(rule), r.derivative_values(rule), s.derivative_values(rule)
    a_q, b_q = rule.sample(problem.a), rule.sample(problem.b)
    g_q = rule.sample(problem.c) - rule.sample(problem.bprime)
    a_n = _node_coeff(problem.a, mesh)
    bp_n, bm_n = _split_b(_node_coeff(problem.b, mesh))

    Um, Up = U.right_traces, U.left_traces     # Um[j-1] = U_j^-, Up[j] = U_j^+
    Pm, Pp = P.right_traces, P.left_traces
    Qm, Qp = Q.right_traces, Q.left_traces
    jr, js, jv = jumps(r)[1:-1], jumps(s)[1:-1], jumps(v)[1:-1]
    v0p, vNm = v.left_traces[0], v.right_traces[-1]
    s0p = s.left_traces[0]
    inner_ = slice(1, None)

    total = _inner(rule, Pq, rq) + _inner(rule, Uq, dr) + np.dot(Um[:-1], jr)
    total += _inner(rule, Qq, sq) + eps * (_inner(rule, Pq, ds) + np.dot(Pp[inner_], js)
                                           + Pp[0] * s0p)
    total += -_inner(rule, Qq, dv) - np.dot(Qp[inner_], jv) + Qm[-1] * vNm - Qp[0] * v0p
    total += (_inner(rule, a_q * Pq, dv) + np.dot(a_n[1:-1] * Pp[inner_], jv)
              - a_n[-1] * Pm[-1] * vNm + a_n[0] * Pp[0] * v0p)
    bU_flux = bp_n[1:-1] * Um[:-1] + bm_n[1:-1] * Up[inner_]
    total += (_inner(rule, g_q * Uq, vq) - _inner(rule, b_q * Uq, dv) - np.dot(bU_flux, jv)
              + bp_n[-1] * Um[-1] * vNm - bm_n[0] * Up[0] * v0p)
    return float(total)


def load_functional(problem: Problem, v: PiecewisePoly, quad: Optional[Quadrature] = None) -> float:
    """⟨f, v⟩"""
    rule = element_rule(v.mesh, quad or gauss_quadrature(v.k + 3))
    return _inner(rule, rule.sample(problem.f), v.values(rule))


def energy_norm_squared(U, P, problem: Problem, quad: Optional[Quadrature] = None,
                        parts: bool = False):
    """|||W|||² = ε/2 Σ[P]² + ‖a^{1/2}P‖² + ‖(c-b'/2)^{1/2}U‖² + 1/2 Σ|b_j|[U]².

    U, P : PiecewisePoly, ou différences exact - discret (voir error_analysis).
    """
    mesh = U.mesh
    rule = element_rule(mesh, quad or gauss_quadrature(20))
    Uq, Pq = U.values(rule), P.values(rule)
    a_q = rule.sample(problem.a)
    g_q = rule.sample(problem.c) - 0.5 * rule.sample(problem.bprime)
    b_n = np.abs(_node_coeff(problem.b, mesh))
    terms = (
        0.5 * mesh.eps * float(np.sum(jumps(P) ** 2)),
        _inner(rule, a_q * Pq, Pq),
        _inner(rule, g_q * Uq, Uq),
        0.5 * float(np.sum(b_n * jumps(U) ** 2)),
    )
    return terms if parts else sum(terms)


def dump_matrix(system: BlockSystem) -> str:
    """Matrice au format coordonnées : « ligne colonne valeur » par ligne."""
    coo = system.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    return "".join(f"{int(coo.row[i])} {int(coo.col[i])} {float(coo.data[i])!r}\n" for i in order)
