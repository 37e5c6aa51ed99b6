"""Configuration, balayage, formats CSV/Markdown et données de tracé."""

import math

import numpy as np
import pandas as pd
import pytest

import app
from services import study
from services.ldg_solver import SolverError
from services.report_io import (
    emit_plotdata, emit_table, format_error, format_rate, plotdata_text, write_text,
)
from services.study import (
    COLUMNS, ConfigError, ConvergenceReport, StudyConfig, config_from_mapping, doubling_list,
    load_config, read_config_file, run_study, sweep_errors,
)
from utils.meshgen import MeshKind

HEADER = ("mesh,k,epsilon,N,energy_error,energy_rate_r2,energy_rate_rs,"
          "l2u_error,l2u_rate,l2p_error,l2p_rate")


def _small_config(**kw):
    base = dict(mesh_kinds=(MeshKind.SHISHKIN,), degrees=(1,), eps_list=(1e-4,), n_list=(16, 32))
    base.update(kw)
    return StudyConfig(**base).validate()


def _report(rows):
    table = pd.DataFrame([{**{c: np.nan for c in COLUMNS}, "status": "ok", **r} for r in rows],
                         columns=COLUMNS)
    return ConvergenceReport(table=table, config=StudyConfig())


@pytest.fixture(scope="module")
def small_report():
    return run_study(_small_config())


class TestConfig:
    def test_defaults(self):
        cfg = StudyConfig().validate()
        assert cfg.n_list == (16, 32, 64, 128, 256, 512)
        assert cfg.sigma_for(2) == 3.5
        assert cfg.quad_for(3) == 6

    def test_doubling(self):
        assert doubling_list(16, 128) == (16, 32, 64, 128)
        assert doubling_list(64, 32) == ()
        with pytest.raises(ConfigError):
            doubling_list(15, 64)

    def test_not_doubling(self):
        with pytest.raises(ConfigError):
            _small_config(n_list=(16, 48))

    @pytest.mark.parametrize("changes", [{"degrees": (4,)}, {"eps_list": (2.0,)},
                                         {"output_format": "html"}, {"workers": 0},
                                         {"case": "cubic"}])
    def test_invalid(self, changes):
        with pytest.raises(ConfigError):
            _small_config(**changes)

    def test_mapping(self):
        cfg = config_from_mapping({"mesh": "s,b", "k": "0..2", "eps": "1e-4,1e-8", "nmin": "16",
                                   "nmax": "64", "sigma": "auto", "quad_check": "yes"})
        assert cfg.mesh_kinds == (MeshKind.SHISHKIN, MeshKind.BAKHVALOV)
        assert cfg.degrees == (0, 1, 2)
        assert cfg.eps_list == (1e-4, 1e-8)
        assert cfg.n_list == (16, 32, 64)
        assert cfg.sigma is None and cfg.quad_check

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            config_from_mapping({"nmin": "seize"})
        with pytest.raises(ConfigError):
            config_from_mapping({"mesh": "q"})

    def test_file_then_flags(self, tmp_path):
        path = tmp_path / "etude.cfg"
        path.write_text("# étude réduite\nmesh = bs\nk = 0\nnmin = 16\nnmax = 32\nsigma = 2.5\n",
                        encoding="utf-8")
        assert read_config_file(str(path))["mesh"] == "bs"
        cfg = load_config(str(path), {"k": "1,2"})
        assert cfg.mesh_kinds == (MeshKind.BAKHVALOV_SHISHKIN,)
        assert cfg.degrees == (1, 2)
        assert cfg.sigma == 2.5
        assert cfg.n_list == (16, 32)

    def test_file_errors(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("couleur = bleu\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            read_config_file(str(path))
        with pytest.raises(ConfigError):
            read_config_file(str(tmp_path / "absent.cfg"))


class TestRunStudy:
    def test_rows_and_rates(self, small_report):
        t = small_report.table
        assert list(t["N"]) == [16, 32]
        assert list(t["status"]) == ["ok", "ok"]
        assert math.isnan(t["energy_rate_r2"].iloc[0])
        e16, e32 = t["energy_error"]
        assert t["energy_rate_r2"].iloc[1] == pytest.approx(math.log(e16 / e32) / math.log(2))
        assert not math.isnan(t["energy_rate_rs"].iloc[1])
        assert not small_report.failed
        assert small_report.metadata["sigma"] == {1: 2.5}

    def test_rs_only_for_shishkin(self):
        report = run_study(_small_config(mesh_kinds=(MeshKind.BAKHVALOV,), degrees=(0,)))
        assert report.table["energy_rate_rs"].isna().all()
        assert not report.table["energy_rate_r2"].isna().all()

    def test_ordering(self):
        cfg = _small_config(mesh_kinds=(MeshKind.BAKHVALOV, MeshKind.SHISHKIN), degrees=(1, 0),
                            eps_list=(1e-4, 1e-8))
        keys = [(j.kind, j.k, j.eps, j.N) for j in study.study_jobs(cfg)]
        assert keys[0] == (MeshKind.SHISHKIN, 0, 1e-8, 16)
        assert keys[-1] == (MeshKind.BAKHVALOV, 1, 1e-4, 32)
        assert len(keys) == 16

    def test_empty(self):
        report = run_study(_small_config(n_list=()))
        assert len(report.table) == 0
        assert not report.failed
        assert emit_table(report) == HEADER + "\n"

    def test_failed_row(self, monkeypatch):
        real = study.solve_problem

        def flaky(problem, mesh, k, n_quad=None):
            if mesh.N == 32:
                raise SolverError("pivot nul en position 7")
            return real(problem, mesh, k, n_quad)

        monkeypatch.setattr(study, "solve_problem", flaky)
        report = run_study(_small_config(n_list=(16, 32, 64)))
        t = report.table
        assert list(t["status"]) == ["ok", "ERR", "ok"]
        assert "pivot nul" in t["message"].iloc[1]
        assert report.failed
        assert t[["energy_rate_r2", "l2u_rate"]].iloc[1:].isna().all().all()
        lines = emit_table(report).splitlines()
        assert lines[2].split(",")[4] == "ERR"

    def test_deterministic_csv(self, small_report):
        again = run_study(_small_config())
        assert emit_table(again) == emit_table(small_report)

    @pytest.mark.slow
    def test_workers(self, small_report):
        parallel = run_study(_small_config(workers=2))
        assert emit_table(parallel) == emit_table(small_report)

    def test_sweep_errors(self, small_report):
        ns, errs = sweep_errors(small_report, MeshKind.SHISHKIN, 1, 1e-4)
        assert ns == [16, 32]
        assert errs[0] > errs[1] > 0


class TestTables:
    def test_formatting_rules(self):
        assert format_error(3.0123e-3) == "3.01e-03"
        assert format_rate(1.9514) == "1.95"
        assert format_error(float("nan")) == ""

    def test_single_row_csv(self):
        report = _report([dict(mesh="S", k=1, epsilon=1e-8, N=64, energy_error=3.0123e-3,
                               energy_rate_r2=1.5312, l2u_error=1e-4, l2p_error=2e-3)])
        lines = emit_table(report, "csv").splitlines()
        assert lines[0] == HEADER
        assert lines[1] == "S,1,1e-08,64,3.01e-03,1.53,,1.00e-04,,2.00e-03,"
        assert len(lines) == 2

    def test_rate_consistency(self, small_report):
        """r₂ recalculé depuis la colonne d'erreur reproduit la colonne de taux."""
        t = small_report.table
        row = emit_table(small_report).splitlines()[2].split(",")
        expected = math.log(t["energy_error"].iloc[0] / t["energy_error"].iloc[1]) / math.log(2)
        assert row[5] == f"{expected:.2f}"

    def test_markdown(self, small_report):
        text = emit_table(small_report, "markdown")
        assert text.startswith("### P1, ε = 0.0001")
        assert "| N | S énergie | S r₂ | S r_s |" in text
        assert any(line.startswith("| 32 | ") for line in text.splitlines())

    def test_markdown_meshes_side_by_side(self):
        rows = [dict(mesh=m, k=2, epsilon=1e-8, N=n, energy_error=e, energy_rate_r2=r)
                for m in ("S", "BS", "B")
                for n, e, r in ((16, 6.52e-4, 2.58), (32, 1.09e-4, np.nan))]
        text = emit_table(_report(rows), "markdown")
        lines = text.splitlines()
        assert lines[0] == "### P2, ε = 1e-08"
        assert lines[2] == "| N | S énergie | S r₂ | S r_s | BS énergie | BS r₂ | B énergie | B r₂ |"
        assert lines[4] == "| 16 | 6.52e-04 | 2.58 |  | 6.52e-04 | 2.58 | 6.52e-04 | 2.58 |"
        assert lines[5].startswith("| 32 | 1.09e-04 |")
        assert text.count("###") == 1

    def test_unknown_format(self, small_report):
        with pytest.raises(ValueError):
            emit_table(small_report, "html")


class TestPlotData:
    def test_files(self, tmp_path):
        rows = [dict(mesh="B", k=1, epsilon=1e-8, N=n, energy_error=0.1 * n ** -1.5,
                     l2u_error=n ** -2.0, l2p_error=n ** -2.0) for n in (16, 32, 64, 128, 256, 512)]
        paths = emit_plotdata(_report(rows), str(tmp_path))
        assert [p.rsplit("/", 1)[-1] for p in paths] == ["b_k1_eps1e-08.dat"]
        lines = open(paths[0], encoding="utf-8").read().splitlines()
        assert len(lines) == 7 and lines[0].startswith("#")
        data = np.loadtxt(paths[0])
        np.testing.assert_allclose(data[0, 2], data[0, 1], rtol=1e-6)
        slope_ref = fitted(data[:, 0], data[:, 2])
        slope_err = fitted(data[:, 0], data[:, 1])
        assert abs(slope_ref - slope_err) <= 0.15

    def test_skips_failed_rows(self):
        sweep = _report([dict(mesh="S", k=0, epsilon=1e-4, N=16, status="ERR"),
                         dict(mesh="S", k=0, epsilon=1e-4, N=32, energy_error=0.2,
                              l2u_error=0.1, l2p_error=0.1)]).table
        lines = plotdata_text(sweep, 0).splitlines()
        assert len(lines) == 2
        assert lines[1].split()[1] == lines[1].split()[2]

    def test_write_error_has_path(self, tmp_path):
        target = tmp_path / "fichier"
        target.write_text("x", encoding="utf-8")
        with pytest.raises(OSError, match="fichier"):
            write_text("y", str(target / "sous" / "t.csv"))


def fitted(ns, errors):
    return np.polyfit(np.log(ns), np.log(errors), 1)[0]


class TestCli:
    def test_study_to_file(self, tmp_path):
        out = tmp_path / "table.csv"
        code = app.main(["study", "--mesh", "s", "--k", "1", "--eps", "1e-4", "--nmin", "16",
                         "--nmax", "32", "--out", str(out), "--plotdata", str(tmp_path / "plots")])
        assert code == 0
        lines = out.read_text(encoding="utf-8").splitlines()
        assert lines[0] == HEADER and len(lines) == 3
        assert (tmp_path / "plots" / "s_k1_eps0.0001.dat").exists()

    def test_mesh_dump(self, capsys):
        assert app.main(["mesh", "--N", "16", "--eps", "1e-4", "--sigma", "2.5"]) == 0
        assert len(capsys.readouterr().out.splitlines()) == 17

    def test_matrix_dump(self, tmp_path):
        out = tmp_path / "a.txt"
        assert app.main(["matrix", "--N", "8", "--eps", "1e-2", "--k", "0", "--out", str(out)]) == 0
        first = out.read_text(encoding="utf-8").splitlines()[0].split()
        assert len(first) == 3

    def test_bad_config(self):
        assert app.main(["study", "--nmin", "15"]) == 2

    def test_matrix_quadrature_too_small(self):
        assert app.main(["matrix", "--N", "8", "--eps", "1e-2", "--k", "2", "--quad", "1"]) == 2

    def test_solution_profile(self, tmp_path):
        out = tmp_path / "profil.dat"
        code = app.main(["solution", "--mesh", "s", "--N", "64", "--eps", "1e-2", "--k", "1",
                         "--quad", "3", "--out", str(out)])
        assert code == 0
        lines = out.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "# element x d U P u p"
        assert len(lines) == 64 * (3 + 2) + 1
        data = np.array([[float(v) for v in line.split()] for line in lines[1:]])
        assert data.shape == (64 * 5, 7)
        x = data[:, 1]
        assert x[0] == 0.0 and x[-1] == 1.0
        assert np.all(np.diff(x) >= 0.0)
        np.testing.assert_allclose(data[:, 1] + data[:, 2], 1.0, atol=1e-14)
        scale = max(1.0, np.abs(data[:, 5]).max())
        assert abs(data[0, 5]) < 1e-14 and abs(data[-1, 5]) < 1e-14
        # U suit u, couche comprise
        assert np.abs(data[:, 3] - data[:, 5]).max() < 5e-2 * scale
