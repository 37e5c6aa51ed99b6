# app.py

import argparse
import logging
import sys

from utils.meshgen import MeshKind, MeshSpec, build_mesh, dump_nodes
from utils.polyspace import gauss_quadrature
from services.ldg_solver import assemble, dump_matrix, solve_problem
from services.manufactured import CASES, make_case
from services.report_io import (
    OUTPUT_DIR, emit_plotdata, emit_table, solution_profile_text, write_text,
)
from services.study import CONFIG_KEYS, load_config, run_study

logger = logging.getLogger("ldg")


def _output(text: str, path):
    if path:
        write_text(text, path)
    else:
        sys.stdout.write(text)


def _add_mesh_args(p: argparse.ArgumentParser):
    p.add_argument("--mesh", default="s", help="s, bs ou b")
    p.add_argument("--N", type=int, required=True, help="nombre d'éléments (pair)")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--sigma", default="auto", help="réel ou auto (k + 1.5)")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--out", default=None, help="fichier de sortie (défaut : stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="app.py",
        description="Méthode LDG pour εu''' - (au')' + bu' + cu = f sur maillages adaptés à la couche")
    parser.add_argument("--verbose", "-v", action="store_true", help="traces de débogage")
    sub = parser.add_subparsers(dest="command", required=True)

    st = sub.add_parser("study", help="étude de convergence (tableaux d'erreurs et taux)")
    st.add_argument("--config", default=None, help="fichier clé=valeur (les options priment)")
    st.add_argument("--mesh", dest="mesh", help="ex. s,bs,b")
    st.add_argument("--k", dest="k", help="ex. 0..3 ou 1,2")
    st.add_argument("--eps", dest="eps", help="ex. 1e-4,1e-8,1e-12")
    st.add_argument("--nmin", dest="nmin")
    st.add_argument("--nmax", dest="nmax")
    st.add_argument("--sigma", dest="sigma", help="réel ou auto (k + 1.5)")
    st.add_argument("--alpha", dest="alpha")
    st.add_argument("--format", dest="format", choices=["csv", "markdown"])
    st.add_argument("--out", dest="out", help="fichier du tableau (défaut : stdout)")
    st.add_argument("--plotdata", dest="plotdata", nargs="?", const=OUTPUT_DIR,
                    help=f"dossier des données de tracé (défaut : {OUTPUT_DIR})")
    st.add_argument("--workers", dest="workers")
    st.add_argument("--quad-assembly", dest="quad_assembly", help="points par élément ou auto (k + 3)")
    st.add_argument("--quad-error", dest="quad_error")
    st.add_argument("--case", dest="case", choices=sorted(CASES))
    st.add_argument("--quad-check", dest="quad_check", action="store_const", const="true",
                    help="compare l'erreur en énergie avec n et 2n points")

    ms = sub.add_parser("mesh", help="nœuds du maillage, un par ligne")
    _add_mesh_args(ms)
    ms.add_argument("--k", type=int, default=1, help="degré (pour sigma=auto)")

    mx = sub.add_parser("matrix", help="matrice LDG assemblée, format « ligne colonne valeur »")
    _add_mesh_args(mx)
    mx.add_argument("--k", type=int, default=1)
    mx.add_argument("--quad", type=int, default=None, help="points de Gauss (défaut k + 3)")
    mx.add_argument("--case", default="layer", choices=sorted(CASES))

    so = sub.add_parser("solution", help="profil de U et P (traces et points de Gauss)")
    _add_mesh_args(so)
    so.add_argument("--k", type=int, default=1)
    so.add_argument("--quad", type=int, default=5, help="points de Gauss par élément dans le profil")
    so.add_argument("--case", default="layer", choices=sorted(CASES))
    return parser


def _mesh_from_args(args):
    sigma = args.k + 1.5 if str(args.sigma).lower() == "auto" else float(args.sigma)
    return build_mesh(MeshSpec(MeshKind.parse(args.mesh), args.N, args.eps, sigma, args.alpha))


def cmd_study(args) -> int:
    overrides = {key: getattr(args, key) for key in CONFIG_KEYS if getattr(args, key) is not None}
    config = load_config(args.config, overrides)
    report = run_study(config)
    _output(emit_table(report, config.output_format), config.output_path)
    if config.plotdata:
        emit_plotdata(report, config.plotdata)
    if report.failed:
        logger.error("%d ligne(s) en échec", report.metadata["failed"])
        return 1
    return 0


def cmd_mesh(args) -> int:
    _output(dump_nodes(_mesh_from_args(args)), args.out)
    return 0


def cmd_matrix(args) -> int:
    mesh = _mesh_from_args(args)
    case = make_case(args.case, args.eps)
    system = assemble(case.problem, mesh, args.k, gauss_quadrature(args.quad or args.k + 3))
    _output(dump_matrix(system), args.out)
    return 0


def cmd_solution(args) -> int:
    mesh = _mesh_from_args(args)
    case = make_case(args.case, args.eps)
    W = solve_problem(case.problem, mesh, args.k)
    _output(solution_profile_text(case, W, gauss_quadrature(args.quad)), args.out)
    return 0


COMMANDS = {"study": cmd_study, "mesh": cmd_mesh, "matrix": cmd_matrix, "solution": cmd_solution}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ValueError as exc:
        # ConfigError, MeshError, quadrature insuffisante
        logger.error("%s", exc)
        return 2
    except (OSError, ArithmeticError) as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
