import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Tuple

import numpy as np

logger = logging.getLogger(__name__)


class MeshError(ValueError):
    """Paramètres de maillage invalides ou maillage dégénéré."""


class MeshKind(Enum):
    """Les trois maillages adaptés à la couche (S, BS, B)."""
    SHISHKIN = "s"
    BAKHVALOV_SHISHKIN = "bs"
    BAKHVALOV = "b"

    @classmethod
    def parse(cls, tag: str) -> "MeshKind":
        tag = tag.strip().lower()
        for kind in cls:
            if kind.value == tag:
                return kind
        raise MeshError(f"Type de maillage inconnu : {tag!r} (attendu s, bs ou b)")

    @property
    def label(self) -> str:
        return self.value.upper()


def _psi(kind: MeshKind, t, N: int, eps: float):
    # 1 - 2t calculé en premier : exact pour t = 1/2 - i/N
    t = np.asarray(t, dtype=float)
    if kind is MeshKind.SHISHKIN:
        return np.power(float(N), -2.0 * t)
    if kind is MeshKind.BAKHVALOV_SHISHKIN:
        return (1.0 - 2.0 * t) + 2.0 * t / N
    return (1.0 - 2.0 * t) + 2.0 * eps * t


def phi_eval(kind: MeshKind, t, N: int, eps: float):
    """Fonction génératrice φ du maillage (φ(0) = 0, croissante sur [0, 1/2])."""
    if N < 2:
        raise MeshError(f"N doit être >= 2 (reçu {N})")
    if not 0.0 < eps < 1.0:
        raise MeshError(f"eps doit être dans (0, 1) (reçu {eps})")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0) or np.any(t > 0.5):
        raise MeshError("φ n'est définie que sur [0, 1/2]")
    if kind is MeshKind.SHISHKIN:
        out = 2.0 * t * np.log(N)
    else:
        arg = _psi(kind, t, N, eps)
        if np.any(arg <= 0.0):
            raise MeshError(f"argument du logarithme <= 0 pour le maillage {kind.label}")
        out = -np.log(arg)
    return float(out) if out.ndim == 0 else out


def psi_eval(kind: MeshKind, t, N: int, eps: float):
    """ψ = e^{-φ}, sous forme fermée."""
    out = _psi(kind, t, N, eps)
    return float(out) if np.ndim(out) == 0 else out


def max_dpsi(kind: MeshKind, N: int) -> float:
    """max|ψ'| : 2 ln N pour le maillage S, 2 pour BS et B."""
    return 2.0 * np.log(N) if kind is MeshKind.SHISHKIN else 2.0


def max_dphi(kind: MeshKind, N: int, eps: float) -> float:
    """Majorant de φ' sur [0, 1/2] ; borne les largeurs fines par (σε/α) max φ' / N."""
    if kind is MeshKind.SHISHKIN:
        return 2.0 * np.log(N)
    if kind is MeshKind.BAKHVALOV_SHISHKIN:
        return 2.0 * N
    return 2.0 / eps


@dataclass(frozen=True)
class MeshSpec:
    kind: MeshKind
    N: int
    eps: float
    sigma: float
    alpha: float = 1.0

    def validate(self):
        if self.N < 4 or self.N % 2:
            raise MeshError(f"N doit être pair et >= 4 (reçu {self.N})")
        if not 0.0 < self.eps < 1.0:
            raise MeshError(f"eps doit être dans (0, 1) (reçu {self.eps})")
        if self.sigma <= 0.0 or self.alpha <= 0.0:
            raise MeshError("sigma et alpha doivent être > 0")

    @property
    def scale(self) -> float:
        """σε/α"""
        return self.sigma * self.eps / self.alpha


def transition_tau(spec: MeshSpec) -> Tuple[float, bool]:
    """Point de transition τ = min{1/2, (σε/α)φ(1/2)} et indicateur de bridage."""
    spec.validate()
    tau = spec.scale * phi_eval(spec.kind, 0.5, spec.N, spec.eps)
    if tau >= 0.5:
        return 0.5, True
    return tau, False


@dataclass(frozen=True)
class Mesh:
    nodes: np.ndarray
    offsets: np.ndarray          # d_i = 1 - x_i pour i >= N/2
    widths: np.ndarray
    tau: float
    clamped: bool
    spec: MeshSpec
    node_dist: np.ndarray = field(repr=False)

    @property
    def N(self) -> int:
        return self.spec.N

    @property
    def eps(self) -> float:
        return self.spec.eps

    @property
    def left(self) -> np.ndarray:
        return self.nodes[:-1]

    @property
    def right_dist(self) -> np.ndarray:
        """1 - x_j à l'extrémité droite de chaque élément."""
        return self.node_dist[1:]

    @property
    def fine_elements(self) -> np.ndarray:
        """Indices (base 0) des éléments de Ω^f = [1 - τ, 1]."""
        return np.arange(self.N // 2, self.N)

    def dist(self, i: int) -> float:
        return float(self.node_dist[i])


def build_mesh(spec: MeshSpec) -> Mesh:
    """Maillage adapté à la couche en x = 1.

    La partie fine est calculée par les décalages d_i = (σε/α)φ(1 - i/N) et les
    largeurs par différences de décalages, jamais par soustraction de nœuds arrondis.
    """
    tau, clamped = transition_tau(spec)
    N, half = spec.N, spec.N // 2
    if clamped:
        logger.warning("τ bridé à 1/2 (eps=%g, N=%d) : hors régime de convection dominante",
                       spec.eps, N)

    i_fine = np.arange(half, N + 1)
    t = (N - i_fine) / N
    phi = phi_eval(spec.kind, t, N, spec.eps)
    if clamped:
        offsets = tau * phi / phi_eval(spec.kind, 0.5, N, spec.eps)
    else:
        offsets = spec.scale * phi
    offsets[-1] = 0.0

    coarse_h = 2.0 * (1.0 - tau) / N
    nodes = np.empty(N + 1)
    nodes[:half] = 2.0 * np.arange(half) * (1.0 - tau) / N
    nodes[half:] = 1.0 - offsets

    widths = np.empty(N)
    widths[:half] = coarse_h
    widths[half:] = offsets[:-1] - offsets[1:]

    node_dist = np.empty(N + 1)
    node_dist[:half] = 1.0 - nodes[:half]
    node_dist[half:] = offsets

    if np.any(widths <= 0.0) or np.any(np.diff(nodes) <= 0.0):
        raise MeshError(
            f"maillage {spec.kind.label} dégénéré (N={N}, eps={spec.eps:g}) : "
            "N trop grand pour la résolution flottante de eps")

    logger.debug("maillage %s N=%d eps=%g : tau=%.6e, hmin=%.3e",
                 spec.kind.label, N, spec.eps, tau, widths.min())
    return Mesh(nodes=nodes, offsets=offsets, widths=widths, tau=tau,
                clamped=clamped, spec=spec, node_dist=node_dist)


def dump_nodes(mesh: Mesh) -> str:
    """Liste des nœuds, un réel par ligne en pleine précision."""
    return "\n".join(repr(float(x)) for x in mesh.nodes) + "\n"
