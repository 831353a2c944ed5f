import json

import pytest

from gravfact import cli

SMALL = {
    "samplePoints": {"geometry": 3, "causal": 20, "complex": 2, "green": 10},
    "trials": {"complex": 1, "green": 1, "observables": 2, "cauchy": 1, "tau": 1, "naturality": 1},
    "density": 40,
}


def write_config(tmp_path, cfg, name="config.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def load(path):
    return json.loads(path.read_text())


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    cfg = write_config(d, SMALL)
    code = cli.main(["verify", "--config", cfg, "--out", str(d / "out")])
    return code, d, cfg


def test_all_suites_pass_and_write_five_reports(full_run):
    code, d, _ = full_run
    assert code == cli.EXIT_OK
    files = sorted(p.name for p in (d / "out").iterdir())
    assert files == sorted(f"{s}.json" for s in cli.SUITES)


def test_reports_follow_the_schema(full_run):
    _, d, _ = full_run
    for s in cli.SUITES:
        rep = load(d / "out" / f"{s}.json")
        assert rep["suite"] == s and rep["pass"] is True
        ids = [r["id"] for r in rep["rows"]]
        assert ids == sorted(ids)
        assert set(rep["metadata"]) >= {"seed", "config_hash", "versions", "wall_time_s"}
        for r in rep["rows"]:
            assert set(r) == {"id", "description", "paperAnchor", "residual", "tolerance", "scale", "pass"}
            assert r["pass"] == (r["residual"] <= r["tolerance"] * r["scale"])


def test_every_row_is_in_the_catalog(full_run):
    _, d, _ = full_run
    for s in cli.SUITES:
        for r in load(d / "out" / f"{s}.json")["rows"]:
            assert cli.catalog_anchor(r["id"]) == r["paperAnchor"], r["id"]


def test_same_seed_gives_identical_normalized_reports(full_run, tmp_path):
    _, d, cfg = full_run
    for suite in ("geometry", "causal", "green"):
        assert cli.main(["verify", "--suite", suite, "--config", cfg, "--out", str(tmp_path)]) == cli.EXIT_OK
        a = cli.normalized(load(d / "out" / f"{suite}.json"))
        b = cli.normalized(load(tmp_path / f"{suite}.json"))
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_different_seed_changes_the_report(full_run, tmp_path):
    _, d, cfg = full_run
    assert cli.main(["verify", "--suite", "geometry", "--config", cfg, "--out", str(tmp_path), "--seed", "7"]) == 0
    rep = load(tmp_path / "geometry.json")
    assert rep["metadata"]["seed"] == 7
    assert rep["rows"] != load(d / "out" / "geometry.json")["rows"]


def test_zero_tolerance_forces_a_failure(tmp_path, capsys):
    cfg = write_config(tmp_path, {**SMALL, "tolerances": {"geometry.weyl.conformal_weight0": 0}})
    code = cli.main(["verify", "--suite", "geometry", "--config", cfg, "--out", str(tmp_path / "out")])
    assert code == cli.EXIT_FAIL
    rep = load(tmp_path / "out" / "geometry.json")
    assert [r["id"] for r in rep["rows"] if not r["pass"]] == ["geometry.weyl.conformal_weight0"]
    assert "geometry.weyl.conformal_weight0" in capsys.readouterr().out


def test_tol_scale_multiplies_tolerances(tmp_path):
    cfg = write_config(tmp_path, SMALL)
    code = cli.main(["verify", "--suite", "geometry", "--config", cfg, "--out", str(tmp_path), "--tol-scale", "1e-30"])
    assert code == cli.EXIT_FAIL
    assert cli.main(["verify", "--suite", "geometry", "--config", cfg, "--out", str(tmp_path),
                     "--tol-scale", "0"]) == cli.EXIT_CONFIG


def test_literal_two_parameter_potential_is_reported_failing(tmp_path):
    spacetimes = {"mannheim": {"type": "mannheim", "b": 1.0, "c": 0.05}}
    cfg = write_config(tmp_path, {**SMALL, "spacetimes": spacetimes,
                                  "backgrounds": {"geometry": ["schwarzschild", "mannheim"]}})
    assert cli.main(["verify", "--suite", "geometry", "--config", cfg, "--out", str(tmp_path)]) == cli.EXIT_FAIL
    bad = [r["id"] for r in load(tmp_path / "geometry.json")["rows"] if not r["pass"]]
    assert bad == ["geometry.bach.vanishes.mannheim"]


@pytest.mark.parametrize("text", [
    "{not json",
    "[1, 2]",
    json.dumps({"bogus": 1}),
    json.dumps({"suites": ["gravity"]}),
    json.dumps({"seed": "zero"}),
    json.dumps({"tolerances": {"geometry.weyl.conformal_weight0": -1}}),
    json.dumps({"backgrounds": {"green": ["nowhere"]}}),
    json.dumps({"spacetimes": {"x": {"type": "kerr"}}}),
    json.dumps({"spacetimes": {"x": {"type": "minkowski", "radius": 3}}}),
])
def test_config_errors_exit_2(tmp_path, text):
    p = tmp_path / "bad.json"
    p.write_text(text)
    code = cli.main(["verify", "--suite", "geometry", "--config", str(p), "--out", str(tmp_path / "out")])
    assert code == cli.EXIT_CONFIG
    assert not (tmp_path / "out").exists()


def test_missing_config_file_exits_2(tmp_path):
    assert cli.main(["verify", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_green_suite_on_schwarzschild_is_unsupported(tmp_path):
    cfg = write_config(tmp_path, {"backgrounds": {"green": ["schwarzschild"]}})
    assert cli.main(["verify", "--suite", "green", "--config", cfg, "--out", str(tmp_path / "out")]) \
        == cli.EXIT_UNSUPPORTED
    assert not (tmp_path / "out").exists()


def test_conformal_model_on_schwarzschild_is_unsupported(tmp_path):
    cfg = write_config(tmp_path, {"models": {"schwarzschild": ["gr", "conformal"]}})
    assert cli.main(["verify", "--suite", "complex", "--config", cfg, "--out", str(tmp_path)]) \
        == cli.EXIT_UNSUPPORTED


def test_unwritable_output_exits_4(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = write_config(tmp_path, SMALL)
    assert cli.main(["verify", "--suite", "geometry", "--config", cfg, "--out", str(blocker)]) == cli.EXIT_IO
    assert cli.main(["verify", "--suite", "geometry", "--config", cfg, "--out", str(blocker / "sub")]) == cli.EXIT_IO


def test_default_config_is_valid_and_supported():
    cfg = cli.load_config()
    cli.check_combinations(cfg, cli.selected_suites(cfg))
    assert cli.selected_suites(cfg) == list(cli.SUITES)
    assert cfg["backgrounds"]["geometry"] == ["schwarzschild", "mannheim_kazanas"]


def test_list_checks(capsys):
    assert cli.main(["list-checks"]) == 0
    out = capsys.readouterr().out
    assert "complex.q_squared.*" in out and "the differential squares to zero" in out


def test_suite_errors_become_failing_rows(monkeypatch, tmp_path):
    from gravfact.errors import QuadratureDivergence

    def boom(*a, **k):
        raise QuadratureDivergence("forced")

    monkeypatch.setattr(cli.G, "verify_geometry", boom)
    cfg = write_config(tmp_path, SMALL)
    assert cli.main(["verify", "--suite", "geometry", "--config", cfg, "--out", str(tmp_path)]) == cli.EXIT_FAIL
    rows = load(tmp_path / "geometry.json")["rows"]
    assert [r["id"] for r in rows] == ["geometry.error"] and rows[0]["pass"] is False
