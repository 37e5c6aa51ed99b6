import io
import logging
import math
import os
from typing import List

import pandas as pd

from utils.polyspace import FunctionField, Quadrature, element_rule
from .ldg_solver import LdgSolution
from .manufactured import TestCase
from .study import TABLE_COLUMNS, ConvergenceReport

logger = logging.getLogger(__name__)

# Dossier de sortie par défaut (relatif au répertoire courant)
OUTPUT_DIR = "results"
ERR = "ERR"

ERROR_COLUMNS = ["energy_error", "l2u_error", "l2p_error"]


def ensure_dirs(path: str = OUTPUT_DIR):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise OSError(f"création impossible du dossier {path} : {exc}") from exc


def format_error(x) -> str:
    """3 chiffres significatifs, ex. 3.01e-03 ; vide si absent."""
    return "" if x is None or not math.isfinite(float(x)) else f"{float(x):.2e}"


def format_rate(x) -> str:
    return "" if x is None or not math.isfinite(float(x)) else f"{float(x):.2f}"


def format_eps(eps: float) -> str:
    return f"{float(eps):g}"


def formatted_table(report: ConvergenceReport) -> pd.DataFrame:
    """Colonnes du tableau, mises en texte ; une ligne en échec porte ERR en erreur d'énergie."""
    t = report.table
    out = pd.DataFrame(index=t.index)
    out["mesh"] = t["mesh"]
    out["k"] = t["k"].astype(int).astype(str)
    out["epsilon"] = t["epsilon"].map(format_eps)
    out["N"] = t["N"].astype(int).astype(str)
    for col in TABLE_COLUMNS[4:]:
        fmt = format_error if col in ERROR_COLUMNS else format_rate
        out[col] = t[col].map(fmt)
    failed = t["status"] == ERR
    out.loc[failed, "energy_error"] = ERR
    return out[TABLE_COLUMNS]


def _csv(report: ConvergenceReport) -> str:
    buf = io.StringIO()
    formatted_table(report).to_csv(buf, index=False, lineterminator="\n")
    return buf.getvalue()


def _markdown(report: ConvergenceReport) -> str:
    """Un tableau par (k, ε) : une ligne par N, les maillages côte à côte.

    Pour chaque maillage : erreur en énergie et r₂, plus r_s pour S.
    Les erreurs L² restent dans la sortie CSV.
    """
    table = formatted_table(report)
    lines = []
    for (k, eps), group in table.groupby(["k", "epsilon"], sort=False):
        meshes = list(dict.fromkeys(group["mesh"]))
        header, cols = ["N"], []
        for mesh in meshes:
            header += [f"{mesh} énergie", f"{mesh} r₂"]
            cols += [(mesh, "energy_error"), (mesh, "energy_rate_r2")]
            if mesh == "S":
                header.append("S r_s")
                cols.append((mesh, "energy_rate_rs"))
        by_mesh = {m: g.set_index("N") for m, g in group.groupby("mesh", sort=False)}
        ns = sorted(set(group["N"]), key=int)
        lines.append(f"### P{k}, ε = {eps}")
        lines.append("")
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "|".join("---" for _ in header) + "|")
        for n in ns:
            cells = [n] + [by_mesh[m].at[n, c] if n in by_mesh[m].index else ""
                           for m, c in cols]
            lines.append("| " + " | ".join(cells) + " |")
        lines.append("")
    return "\n".join(lines)


def emit_table(report: ConvergenceReport, fmt: str = "csv") -> str:
    if fmt == "csv":
        return _csv(report)
    if fmt == "markdown":
        return _markdown(report)
    raise ValueError(f"format inconnu : {fmt!r}")


def write_text(text: str, path: str):
    """Écrit un fichier texte ; l'erreur système est relancée avec le chemin."""
    parent = os.path.dirname(path)
    if parent:
        ensure_dirs(parent)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"écriture impossible de {path} : {exc}") from exc
    logger.debug("écrit : %s", path)


def plotdata_name(mesh: str, k: int, eps: float) -> str:
    return f"{mesh.lower()}_k{int(k)}_eps{format_eps(eps)}.dat"


def plotdata_text(sweep: pd.DataFrame, k: int) -> str:
    """Colonnes N, erreurs et pente de référence N^{-(k+1/2)} calée sur le premier point."""
    ok = sweep[sweep["status"] != ERR]
    lines = ["# N energy_error reference l2u_error l2p_error"]
    if len(ok):
        n0, e0 = float(ok["N"].iloc[0]), float(ok["energy_error"].iloc[0])
        for _, row in ok.iterrows():
            ref = e0 * (float(row["N"]) / n0) ** (-(k + 0.5))
            lines.append(f"{int(row['N'])} {row['energy_error']:.6e} {ref:.6e} "
                         f"{row['l2u_error']:.6e} {row['l2p_error']:.6e}")
    return "\n".join(lines) + "\n"


def emit_plotdata(report: ConvergenceReport, out_dir: str = OUTPUT_DIR) -> List[str]:
    """Un fichier par balayage (maillage, k, ε) ; retourne les chemins écrits."""
    ensure_dirs(out_dir)
    paths = []
    for (mesh, k, eps), sweep in report.sweeps():
        path = os.path.join(out_dir, plotdata_name(mesh, k, eps))
        write_text(plotdata_text(sweep, int(k)), path)
        paths.append(path)
    logger.info("%d fichiers de tracé dans %s", len(paths), out_dir)
    return paths


def solution_profile_text(case: TestCase, W: LdgSolution, quad: Quadrature) -> str:
    """Profil de la solution discrète, élément par élément.

    Pour chaque élément : extrémité gauche (traces U⁺, P⁺), points de Gauss,
    extrémité droite (traces U⁻, P⁻). La colonne d = 1 - x garde la résolution
    dans la couche ; u et p sont les valeurs exactes aux mêmes points.
    """
    mesh = W.mesh
    rule = element_rule(mesh, quad, graded=False)
    inner = [rule.x, rule.dist, W.U.values(rule), W.P.values(rule),
             rule.sample(case.exact_u), rule.sample(case.exact_p)]
    u_ex, p_ex = FunctionField(mesh, case.exact_u), FunctionField(mesh, case.exact_p)
    lines = ["# element x d U P u p"]
    for e in range(mesh.N):
        rows = [(mesh.nodes[e], mesh.node_dist[e], W.U.left_traces[e], W.P.left_traces[e],
                 u_ex.left_traces[e], p_ex.left_traces[e])]
        rows += zip(*(col[e] for col in inner))
        rows.append((mesh.nodes[e + 1], mesh.node_dist[e + 1], W.U.right_traces[e],
                     W.P.right_traces[e], u_ex.right_traces[e], p_ex.right_traces[e]))
        lines += [f"{e} " + " ".join(f"{float(v):.16e}" for v in row) for row in rows]
    return "\n".join(lines) + "\n"
