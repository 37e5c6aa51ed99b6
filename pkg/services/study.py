"""Balayage de convergence : configuration, exécution des lignes, calcul des taux."""
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from utils.meshgen import MeshKind, MeshSpec, build_mesh
from utils.polyspace import gauss_quadrature
from .error_analysis import (
    DEFAULT_QUAD_ERROR, error_record, quadrature_self_check, rate_r2, rate_rs,
)
from .ldg_solver import solve_problem
from .manufactured import CASES, make_case

logger = logging.getLogger(__name__)

DEFAULT_N_LIST = (16, 32, 64, 128, 256, 512)
FORMATS = ("csv", "markdown")

# colonnes du tableau CSV puis colonnes de suivi
TABLE_COLUMNS = ["mesh", "k", "epsilon", "N", "energy_error", "energy_rate_r2", "energy_rate_rs",
                 "l2u_error", "l2u_rate", "l2p_error", "l2p_rate"]
META_COLUMNS = ["status", "message", "sigma", "clamped", "tau", "quad_assembly", "quad_error",
                "l2q_error", "linf_u_fine", "growth", "backward_error", "quad_drift", "wall_time"]
COLUMNS = TABLE_COLUMNS + META_COLUMNS

CONFIG_KEYS = ("mesh", "k", "eps", "nmin", "nmax", "sigma", "alpha", "format", "out",
               "plotdata", "workers", "quad_assembly", "quad_error", "case", "quad_check")


class ConfigError(ValueError):
    """Configuration d'étude invalide (fichier ou options)."""


def doubling_list(nmin: int, nmax: int) -> Tuple[int, ...]:
    """nmin, 2 nmin, ... <= nmax ; vide si nmin > nmax."""
    if nmin < 4 or nmin % 2:
        raise ConfigError(f"nmin doit être pair et >= 4 (reçu {nmin})")
    out = []
    n = nmin
    while n <= nmax:
        out.append(n)
        n *= 2
    return tuple(out)


@dataclass(frozen=True)
class StudyConfig:
    mesh_kinds: Tuple[MeshKind, ...] = tuple(MeshKind)
    degrees: Tuple[int, ...] = (0, 1, 2, 3)
    eps_list: Tuple[float, ...] = (1e-4, 1e-8, 1e-12)
    n_list: Tuple[int, ...] = DEFAULT_N_LIST
    sigma: Optional[float] = None           # None : σ = k + 1.5
    alpha: float = 1.0
    quad_assembly: Optional[int] = None     # None : k + 3 points
    quad_error: int = DEFAULT_QUAD_ERROR
    output_format: str = "csv"
    output_path: Optional[str] = None
    plotdata: Optional[str] = None
    workers: int = 1
    case: str = "layer"
    quad_check: bool = False

    def validate(self) -> "StudyConfig":
        if not self.mesh_kinds:
            raise ConfigError("aucun type de maillage")
        bad = [k for k in self.degrees if k not in (0, 1, 2, 3)]
        if bad or not self.degrees:
            raise ConfigError(f"degrés attendus dans 0..3 (reçu {list(self.degrees)})")
        if not self.eps_list or any(not 0.0 < e < 1.0 for e in self.eps_list):
            raise ConfigError(f"eps doit être dans (0, 1) (reçu {list(self.eps_list)})")
        for n in self.n_list:
            if n < 4 or n % 2:
                raise ConfigError(f"N doit être pair et >= 4 (reçu {n})")
        for a, b in zip(self.n_list, self.n_list[1:]):
            if b != 2 * a:
                raise ConfigError(f"la liste des N doit doubler à chaque pas ({a} puis {b})")
        if self.sigma is not None and self.sigma <= 0.0:
            raise ConfigError(f"sigma doit être > 0 (reçu {self.sigma})")
        if self.alpha <= 0.0:
            raise ConfigError(f"alpha doit être > 0 (reçu {self.alpha})")
        if self.output_format not in FORMATS:
            raise ConfigError(f"format inconnu : {self.output_format!r} ({', '.join(FORMATS)})")
        if self.workers < 1:
            raise ConfigError("workers doit être >= 1")
        if self.case not in CASES:
            raise ConfigError(f"cas inconnu : {self.case!r} ({', '.join(CASES)})")
        if self.quad_error < 1 or (self.quad_assembly is not None and self.quad_assembly < 1):
            raise ConfigError("nombre de points de quadrature invalide")
        return self

    def sigma_for(self, k: int) -> float:
        return self.sigma if self.sigma is not None else k + 1.5

    def quad_for(self, k: int) -> int:
        n = self.quad_assembly if self.quad_assembly is not None else k + 3
        if n < k + 1:
            raise ConfigError(f"quad_assembly={n} < k+1 pour k={k}")
        return n


# --- Lecture de la configuration ---

def _split(value: str) -> List[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _parse_degrees(value: str) -> Tuple[int, ...]:
    """« 0..3 » ou « 0,1,3 »."""
    if ".." in value:
        lo, hi = value.split("..", 1)
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(v) for v in _split(value))


def _parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "oui", "on"):
        return True
    if v in ("0", "false", "no", "non", "off", ""):
        return False
    raise ConfigError(f"booléen invalide : {value!r}")


def _optional_int(value: str) -> Optional[int]:
    return None if value.strip().lower() in ("auto", "") else int(value)


def read_config_file(path: str) -> Dict[str, str]:
    """Fichier texte « clé = valeur », `#` pour les commentaires."""
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"lecture impossible de {path} : {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno} : ligne sans '=' : {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lower().replace("-", "_")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno} : clé inconnue {key!r}")
        values[key] = value
    logger.debug("configuration lue depuis %s : %s", path, values)
    return values


def config_from_mapping(values: Dict[str, str], base: Optional[StudyConfig] = None) -> StudyConfig:
    """Applique des valeurs textuelles (fichier ou options) sur une configuration."""
    cfg = base or StudyConfig()
    changes = {}
    try:
        for key, value in values.items():
            if value is None:
                continue
            value = str(value)
            if key == "mesh":
                changes["mesh_kinds"] = tuple(MeshKind.parse(v) for v in _split(value))
            elif key == "k":
                changes["degrees"] = _parse_degrees(value)
            elif key == "eps":
                changes["eps_list"] = tuple(float(v) for v in _split(value))
            elif key in ("nmin", "nmax"):
                changes[key] = int(value)
            elif key == "sigma":
                changes["sigma"] = None if value.strip().lower() == "auto" else float(value)
            elif key == "alpha":
                changes["alpha"] = float(value)
            elif key == "format":
                changes["output_format"] = value.strip().lower()
            elif key == "out":
                changes["output_path"] = value or None
            elif key == "plotdata":
                changes["plotdata"] = value or None
            elif key == "workers":
                changes["workers"] = int(value)
            elif key == "quad_assembly":
                changes["quad_assembly"] = _optional_int(value)
            elif key == "quad_error":
                changes["quad_error"] = int(value)
            elif key == "case":
                changes["case"] = value.strip()
            elif key == "quad_check":
                changes["quad_check"] = _parse_bool(value)
            else:
                raise ConfigError(f"clé inconnue {key!r}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"valeur invalide : {exc}") from exc

    nmin = changes.pop("nmin", None)
    nmax = changes.pop("nmax", None)
    if nmin is not None or nmax is not None:
        lo = nmin if nmin is not None else (cfg.n_list[0] if cfg.n_list else DEFAULT_N_LIST[0])
        hi = nmax if nmax is not None else (cfg.n_list[-1] if cfg.n_list else DEFAULT_N_LIST[-1])
        changes["n_list"] = doubling_list(lo, hi)
    return replace(cfg, **changes).validate()


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, str]] = None) -> StudyConfig:
    """Valeurs par défaut <- fichier clé=valeur <- options de ligne de commande."""
    cfg = StudyConfig()
    if path:
        cfg = config_from_mapping(read_config_file(path), cfg)
    return config_from_mapping(overrides or {}, cfg)


# --- Exécution ---

@dataclass(frozen=True)
class RowJob:
    kind: MeshKind
    k: int
    eps: float
    N: int
    sigma: float
    alpha: float
    quad_assembly: int
    quad_error: int
    case: str
    quad_check: bool


def run_row(job: RowJob) -> dict:
    """Une ligne de l'étude ; les erreurs sont consignées dans la ligne (status ERR)."""
    start = time.perf_counter()
    row = {c: np.nan for c in COLUMNS}
    row.update(mesh=job.kind.label, k=job.k, epsilon=job.eps, N=job.N, sigma=job.sigma,
               quad_assembly=job.quad_assembly, quad_error=job.quad_error,
               status="ok", message="", clamped=False)
    try:
        mesh = build_mesh(MeshSpec(job.kind, job.N, job.eps, job.sigma, job.alpha))
        case = make_case(job.case, job.eps)
        W = solve_problem(case.problem, mesh, job.k, job.quad_assembly)
        rec = error_record(case, W, gauss_quadrature(job.quad_error))
        row.update(energy_error=rec.energy, l2u_error=rec.l2_u, l2p_error=rec.l2_p,
                   l2q_error=rec.l2_q, linf_u_fine=rec.linf_u_fine, clamped=mesh.clamped,
                   tau=mesh.tau, growth=W.growth, backward_error=W.backward_error)
        if job.quad_check:
            row["quad_drift"] = quadrature_self_check(case, W, job.quad_error)
            if row["quad_drift"] > 1e-3:
                logger.warning("%s k=%d eps=%g N=%d : l'erreur dépend de la quadrature (%.2e)",
                               job.kind.label, job.k, job.eps, job.N, row["quad_drift"])
    except (ValueError, ArithmeticError) as exc:
        logger.warning("ligne %s k=%d eps=%g N=%d en échec : %s",
                       job.kind.label, job.k, job.eps, job.N, exc)
        row.update(status="ERR", message=f"{type(exc).__name__}: {exc}")
    row["wall_time"] = time.perf_counter() - start
    logger.debug("ligne %s k=%d eps=%g N=%d : %.2fs", job.kind.label, job.k, job.eps, job.N,
                 row["wall_time"])
    return row


def study_jobs(config: StudyConfig) -> List[RowJob]:
    """Lignes dans l'ordre (maillage, k, ε, N) croissants."""
    kinds = sorted(set(config.mesh_kinds), key=list(MeshKind).index)
    return [RowJob(kind, k, eps, N, config.sigma_for(k), config.alpha, config.quad_for(k),
                   config.quad_error, config.case, config.quad_check)
            for kind in kinds
            for k in sorted(set(config.degrees))
            for eps in sorted(set(config.eps_list))
            for N in sorted(set(config.n_list))]


def _rate(func, eN, e2N, *extra) -> float:
    eN, e2N = float(eN), float(e2N)
    if not (math.isfinite(eN) and math.isfinite(e2N) and eN > 0.0 and e2N > 0.0):
        return math.nan
    return func(eN, e2N, *extra)


def add_rates(table: pd.DataFrame) -> pd.DataFrame:
    """Taux entre lignes consécutives d'un même balayage ; vides sur le premier N."""
    table = table.copy()
    for _, group in table.groupby(["mesh", "k", "epsilon"], sort=False):
        idx = list(group.index)
        for prev, cur in zip(idx, idx[1:]):
            p, c = table.loc[prev], table.loc[cur]
            if p["status"] != "ok" or c["status"] != "ok":
                continue
            table.at[cur, "energy_rate_r2"] = _rate(rate_r2, p["energy_error"], c["energy_error"])
            if p["mesh"] == MeshKind.SHISHKIN.label:
                table.at[cur, "energy_rate_rs"] = _rate(rate_rs, p["energy_error"],
                                                        c["energy_error"], int(p["N"]))
            table.at[cur, "l2u_rate"] = _rate(rate_r2, p["l2u_error"], c["l2u_error"])
            table.at[cur, "l2p_rate"] = _rate(rate_r2, p["l2p_error"], c["l2p_error"])
    return table


@dataclass
class ConvergenceReport:
    table: pd.DataFrame
    config: StudyConfig
    metadata: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return bool((self.table["status"] == "ERR").any()) if len(self.table) else False

    def sweeps(self):
        """(maillage, k, ε) -> sous-tableau, dans l'ordre du rapport."""
        return self.table.groupby(["mesh", "k", "epsilon"], sort=False)


def run_study(config: StudyConfig) -> ConvergenceReport:
    config.validate()
    jobs = study_jobs(config)
    logger.info("étude : %d lignes (%d workers)", len(jobs), config.workers)
    start = time.perf_counter()
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            # map conserve l'ordre des lignes
            rows = list(pool.map(run_row, jobs))
    else:
        rows = [run_row(job) for job in jobs]
    table = add_rates(pd.DataFrame(rows, columns=COLUMNS))
    metadata = {
        "sigma": {k: config.sigma_for(k) for k in sorted(set(config.degrees))},
        "quad_assembly": {k: config.quad_for(k) for k in sorted(set(config.degrees))},
        "quad_error": config.quad_error,
        "clamped": int(table["clamped"].fillna(False).astype(bool).sum()) if len(table) else 0,
        "failed": int((table["status"] == "ERR").sum()) if len(table) else 0,
        "wall_time": time.perf_counter() - start,
        "case": config.case,
    }
    logger.info("étude terminée en %.1fs (%d lignes en échec)", metadata["wall_time"],
                metadata["failed"])
    return ConvergenceReport(table=table, config=config, metadata=metadata)


def sweep_errors(report: ConvergenceReport, kind: MeshKind, k: int, eps: float,
                 column: str = "energy_error") -> Tuple[Sequence[int], Sequence[float]]:
    """(N, erreurs) d'un balayage, lignes en échec exclues."""
    t = report.table
    sel = t[(t["mesh"] == kind.label) & (t["k"] == k) & (t["epsilon"] == eps) & (t["status"] == "ok")]
    return sel["N"].astype(int).tolist(), sel[column].astype(float).tolist()
