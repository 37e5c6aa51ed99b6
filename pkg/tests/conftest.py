import functools

import pytest

from utils.meshgen import MeshKind, MeshSpec, build_mesh
from services.ldg_solver import solve_problem
from services.manufactured import make_case


@functools.lru_cache(maxsize=None)
def solved(kind: MeshKind, k: int, eps: float, N: int, case: str = "layer"):
    """(cas, maillage, solution) pour σ = k + 1.5, mis en cache pour la session."""
    mesh = build_mesh(MeshSpec(kind, N, eps, k + 1.5))
    tc = make_case(case, eps)
    return tc, mesh, solve_problem(tc.problem, mesh, k)


@pytest.fixture(scope="session")
def solved_case():
    return solved


@pytest.fixture
def s_mesh():
    return build_mesh(MeshSpec(MeshKind.SHISHKIN, 16, 1e-4, 2.5))


@pytest.fixture
def uniform_mesh():
    """τ bridé à 1/2 sur le maillage S : nœuds i/N."""
    def make(N):
        return build_mesh(MeshSpec(MeshKind.SHISHKIN, N, 0.3, 2.5))
    return make
