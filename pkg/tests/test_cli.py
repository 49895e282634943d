import json

import pytest

from mohl import cases, cli, postprocess as pp
from mohl.stepper import PolynomialField


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_run_writes_fields_fluxes_and_manifest(tmp_path):
    out = tmp_path / "mohl"
    assert run("run", "single_layer", "--tau", 0.5, "--out", out) == cli.EXIT_OK
    fields = pp.read_csv(out / "fields.csv")
    assert fields.columns == ("t_star", "x_star", "v", "u", "theta", "mu")
    fluxes = pp.read_csv(out / "fluxes.csv")
    assert len(fluxes.rows) == 6
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok" and man["method"]["method"] == "mohl"
    assert man["host"]["cpu_count"] >= 1 and man["host"]["kernel_backend"] in ("numba", "numpy")
    assert man["mesh_sizes"]["mesh_v_max"] <= 25
    assert cases.case_from_dict(man["case_config"]) == cases.single_layer()


@pytest.mark.parametrize("method", ["euler-implicit", "euler-explicit"])
def test_run_reference_methods(tmp_path, method):
    out = tmp_path / method
    assert run("run", "single_layer", "--method", method, "--dx", 0.05, "--tau", 0.2, "--out", out) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["grid"]["n_x"] == 21
    assert "backend" in man["grid"] or method == "euler-implicit"


def test_appendix_c_outputs(tmp_path):
    assert run("run", "appendix_c", "--out", tmp_path) == 0
    sol = pp.read_csv(tmp_path / "solution.csv")
    err = pp.read_csv(tmp_path / "error_vs_analytic.csv")
    assert len(sol.rows) == len(err.rows) == 401
    assert max(r[3] for r in err.rows) <= 1e-6
    assert json.loads((tmp_path / "manifest.json").read_text())["grid"]["k2"] == 5.0


def test_rerun_reproduces_fields(tmp_path):
    assert run("run", "multilayer", "--tau", 0.3, "--out", tmp_path / "a") == 0
    assert run("rerun", tmp_path / "a" / "manifest.json", "--out", tmp_path / "b") == 0
    a = (tmp_path / "a" / "fields.csv").read_bytes()
    b = (tmp_path / "b" / "fields.csv").read_bytes()
    assert a == b


def test_rerun_of_appendix_c(tmp_path):
    assert run("run", "appendix_c", "--out", tmp_path / "a") == 0
    assert run("rerun", tmp_path / "a" / "manifest.json", "--out", tmp_path / "b") == 0
    assert (tmp_path / "a" / "solution.csv").read_bytes() == (tmp_path / "b" / "solution.csv").read_bytes()


def test_compare_reports_errors_and_timing(tmp_path, capsys):
    code = run("compare", "single_layer", "--tau", 0.5, "--out", tmp_path,
               "--baseline", "method=euler-implicit,dx=0.02,dt=0.01", "--candidate", "method=mohl,tol=1e-5")
    assert code == 0
    errs = pp.read_csv(tmp_path / "errors.csv")
    assert len(errs.rows) > 1 and errs.rows[-1][0] == 1.0
    timing = pp.read_csv(tmp_path / "timing.csv")
    assert [r[0] for r in timing.rows] == ["baseline", "candidate"]
    assert timing.rows[1][4] < 1e-3
    assert "eps_inf_u" in capsys.readouterr().out


def test_tolerance_study_with_threads(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "2")
    code = run("tolerance-study", "single_layer", "--tau", 0.5, "--tols", "1e-2,1e-4",
               "--oracle-dx", 0.02, "--oracle-dt", 0.01, "--out", tmp_path)
    assert code == 0
    table = pp.read_csv(tmp_path / "tolerance_study.csv")
    assert [r[0] for r in table.rows] == [1e-2, 1e-4]
    assert all(r[1] == "ok" for r in table.rows)
    monkeypatch.setenv(cli.THREADS_ENV, "0")
    assert run("tolerance-study", "single_layer", "--tau", 0.1, "--tols", "1e-2", "--oracle-dx", 0.05,
               "--oracle-dt", 0.05, "--out", tmp_path) == cli.EXIT_CONFIG


def test_threaded_study_matches_serial():
    case = cases.single_layer()
    oracle, _ = cli.execute(case, cli.MethodSpec("euler-implicit", dt=0.05, dx=0.05), 0.2)
    serial = cli.tolerance_study(case, [1e-2, 1e-3], oracle, 0.2, threads=1)
    threaded = cli.tolerance_study(case, [1e-2, 1e-3], oracle, 0.2, threads=2)
    for a, b in zip(serial, threaded):
        assert a["eps_inf_u"] == b["eps_inf_u"] and a["mesh_v_max"] == b["mesh_v_max"]


@pytest.mark.parametrize("argv", [
    ("run", "no_such_case"),
    ("run", "single_layer", "--tol", "-1"),
    ("run", "experimental"),
    ("compare", "single_layer", "--baseline", "method=magic"),
    ("compare", "single_layer", "--candidate", "tol=abc"),
    ("tolerance-study", "single_layer", "--tols", "x"),
])
def test_configuration_errors_exit_3(tmp_path, argv):
    assert run(*argv, "--out", tmp_path) == cli.EXIT_CONFIG


def test_bad_manifest_and_case_file_exit_3(tmp_path):
    (tmp_path / "m.json").write_text("{")
    assert run("rerun", tmp_path / "m.json", "--out", tmp_path) == cli.EXIT_CONFIG
    (tmp_path / "c.json").write_text(json.dumps({"model": {}}))
    assert run("run", tmp_path / "c.json", "--out", tmp_path) == cli.EXIT_CONFIG


def test_solver_failures_exit_2(tmp_path):
    bad = cases.constant_coefficient_case(tau_star=0.5).replace(
        max_nodes=2, initial_nodes=2, min_nodes=2, v0=PolynomialField((40.0, -40.0, 10.0, 1.0)))
    path = cases.save_case(bad, tmp_path / "bad.json")
    assert run("run", path, "--out", tmp_path / "o") == cli.EXIT_SOLVER
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["status"] == "solver-failure"
    # explicit scheme above its stability bound
    assert run("run", "single_layer", "--method", "euler-explicit", "--dx", 0.01, "--dt", 0.1,
               "--tau", 0.2, "--out", tmp_path / "e") == cli.EXIT_SOLVER


def test_method_spec_parsing():
    spec = cli.MethodSpec.parse("method=euler-implicit, dx=1e-3 ,dt=0.01")
    assert spec == cli.MethodSpec("euler-implicit", None, 0.01, 1e-3)
    with pytest.raises(cases.ConfigError):
        cli.MethodSpec.parse("dx")
    assert cli.MethodSpec.parse("") == cli.MethodSpec()
