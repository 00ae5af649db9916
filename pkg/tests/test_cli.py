"""Command-line interface: artifacts, exit codes, error reporting."""

import json

import jsonschema
import numpy as np
import pytest

from conftest import small_sim_dataset
from ghive.cli import main
from ghive.data_io import save_matrix_csv
from ghive.simulate import SimConfig


def _schema(name):
    from importlib.resources import files

    return json.loads(files("ghive").joinpath("schemas", name).read_text())


@pytest.fixture
def csv_data(tmp_path):
    data, _, _ = small_sim_dataset(n=50, p=3, m_dim=3, seed=16, rep_seed=4)
    xp, yp = tmp_path / "x.csv", tmp_path / "y.csv"
    save_matrix_csv(xp, data.x)
    save_matrix_csv(yp, data.y)
    return xp, yp


def _fit(tmp_path, csv_data, *extra):
    xp, yp = csv_data
    out = tmp_path / "fit.json"
    code = main(
        ["fit", "--x", str(xp), "--y", str(yp), "--family", "bernoulli",
         "--seed", "7", "--out", str(out), *extra]
    )
    return code, out


def test_fit_then_infer_happy_path(tmp_path, csv_data):
    code, fit_path = _fit(tmp_path, csv_data)
    assert code == 0
    doc = json.loads(fit_path.read_text())
    jsonschema.validate(doc, _schema("fit_result.schema.json"))
    assert doc["family"] == "bernoulli" and doc["k_hat"] >= 1

    xp, yp = csv_data
    out = tmp_path / "ci.json"
    code = main(
        ["infer", "--fit", str(fit_path), "--x", str(xp), "--y", str(yp),
         "--u", "e1", "--v", "e1", "--out", str(out)]
    )
    assert code == 0
    ci = json.loads(out.read_text())
    jsonschema.validate(ci, _schema("inference_result.schema.json"))
    half = 0.5 * (ci["ci_hi"] - ci["ci_lo"])
    assert half == pytest.approx(1.959964 * ci["se"], abs=1e-5 * max(1.0, ci["se"]))
    assert ci["ci_lo"] <= ci["estimate"] <= ci["ci_hi"]


def test_identity_projector_reports_the_raw_coefficient(tmp_path, csv_data):
    proj = tmp_path / "projector.csv"
    save_matrix_csv(proj, np.eye(3))
    code, fit_path = _fit(tmp_path, csv_data, "--projector", str(proj))
    assert code == 0
    doc = json.loads(fit_path.read_text())
    assert doc["mode"]["kind"] == "oracle-p"
    assert np.allclose(doc["theta_hat"]["data"], doc["f_hat"]["data"], atol=1e-14)

    xp, yp = csv_data
    out = tmp_path / "ci.json"
    assert (
        main(["infer", "--fit", str(fit_path), "--x", str(xp), "--y", str(yp),
              "--u", "e1", "--v", "e1", "--out", str(out)])
        == 0
    )
    ci = json.loads(out.read_text())
    assert ci["estimate"] == pytest.approx(doc["theta_hat"]["data"][0][0], rel=1e-12)


def test_fit_is_deterministic_across_invocations(tmp_path, csv_data):
    _, first = _fit(tmp_path, csv_data)
    body1 = first.read_bytes()
    _, second = _fit(tmp_path, csv_data)
    assert second.read_bytes() == body1


def test_fixed_factor_count_flag(tmp_path, csv_data):
    code, fit_path = _fit(tmp_path, csv_data, "--k", "2")
    assert code == 0
    doc = json.loads(fit_path.read_text())
    assert doc["k_hat"] == 2 and doc["mode"]["kind"] == "oracle-k"


def test_zero_factor_count_is_rejected_with_guidance(tmp_path, csv_data, capsys):
    code, _ = _fit(tmp_path, csv_data, "--k", "0")
    assert code == 2
    assert "--projector" in capsys.readouterr().err


def test_missing_fit_file_exits_two_with_the_path(tmp_path, csv_data, capsys):
    xp, yp = csv_data
    missing = tmp_path / "nowhere.json"
    code = main(
        ["infer", "--fit", str(missing), "--x", str(xp), "--y", str(yp),
         "--u", "e1", "--v", "e1", "--out", str(tmp_path / "o.json")]
    )
    assert code == 2
    assert str(missing) in capsys.readouterr().err


def test_malformed_csv_cell_is_located_in_the_error(tmp_path, capsys):
    xp = tmp_path / "x.csv"
    xp.write_text("1.0,2.0\n3.0,oops\n5.0,6.0\n")
    yp = tmp_path / "y.csv"
    save_matrix_csv(yp, np.zeros((3, 2)))
    code = main(
        ["fit", "--x", str(xp), "--y", str(yp), "--family", "gaussian",
         "--out", str(tmp_path / "f.json")]
    )
    assert code == 2
    err = capsys.readouterr().err
    assert "row" in err and "column" in err


def test_out_of_family_response_exits_two(tmp_path, capsys):
    xp, yp = tmp_path / "x.csv", tmp_path / "y.csv"
    rng = np.random.default_rng(0)
    save_matrix_csv(xp, rng.standard_normal((20, 2)))
    save_matrix_csv(yp, np.full((20, 2), 2.0))  # not a 0/1 response
    code = main(
        ["fit", "--x", str(xp), "--y", str(yp), "--family", "bernoulli",
         "--out", str(tmp_path / "f.json")]
    )
    assert code == 2
    assert "bernoulli" in capsys.readouterr().err


def test_direction_index_out_of_range_exits_two(tmp_path, csv_data, capsys):
    _, fit_path = _fit(tmp_path, csv_data)
    xp, yp = csv_data
    code = main(
        ["infer", "--fit", str(fit_path), "--x", str(xp), "--y", str(yp),
         "--u", "e9", "--v", "e1", "--out", str(tmp_path / "o.json")]
    )
    assert code == 2
    assert "e9" in capsys.readouterr().err or "range" in capsys.readouterr().err


def test_direction_vectors_can_come_from_files(tmp_path, csv_data):
    _, fit_path = _fit(tmp_path, csv_data)
    xp, yp = csv_data
    upath, vpath = tmp_path / "u.csv", tmp_path / "v.csv"
    save_matrix_csv(upath, np.array([[1.0, 0.0, 0.0]]))
    save_matrix_csv(vpath, np.array([[0.0, 1.0, 0.0]]))
    out = tmp_path / "o.json"
    code = main(
        ["infer", "--fit", str(fit_path), "--x", str(xp), "--y", str(yp),
         "--u", str(upath), "--v", str(vpath), "--out", str(out)]
    )
    assert code == 0
    fit_doc = json.loads(fit_path.read_text())
    ci = json.loads(out.read_text())
    assert ci["estimate"] == pytest.approx(fit_doc["theta_hat"]["data"][0][1])


def test_simulate_writes_reproducible_artifacts(tmp_path):
    args = ["simulate", "--family", "bernoulli", "--n", "30", "--p", "3",
            "--m", "3", "--k-true", "2", "--eta", "2", "--reps", "2",
            "--seed", "4"]
    d1, d2 = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(d1)]) == 0
    assert main(args + ["--out", str(d2)]) == 0
    metrics1 = (d1 / "simulate_metrics.csv").read_bytes()
    assert metrics1 == (d2 / "simulate_metrics.csv").read_bytes()
    assert b"frob_err" in metrics1
    cfg_doc = json.loads((d1 / "simulate_config.json").read_text())
    cfg = SimConfig.from_json_dict(cfg_doc)
    assert cfg.n == 30 and cfg.reps == 2 and cfg.family == "bernoulli"


def test_fstar_oracle_command_emits_the_bias_summary(tmp_path):
    out = tmp_path / "oracle.json"
    code = main(
        ["fstar-oracle", "--family", "gaussian", "--n", "50", "--p", "3",
         "--m", "3", "--k-true", "2", "--eta", "2", "--seed", "3",
         "--n-mc", "10000", "--out", str(out)]
    )
    assert code == 0
    doc = json.loads(out.read_text())
    assert set(doc) == {
        "config", "n_mc", "f_star", "bias1", "bias2", "converged_fraction",
    }
    assert doc["n_mc"] == 10000
    f_star = np.array(doc["f_star"]["data"])
    assert f_star.shape == tuple(doc["f_star"]["dims"])
    assert doc["bias2"] <= doc["bias1"] + 1e-12
    assert doc["converged_fraction"] == pytest.approx(1.0)


def test_reproduce_runs_a_named_experiment(tmp_path, capsys):
    out = tmp_path / "study"
    code = main(
        ["reproduce", "fig2-m", "--reps", "2", "--seed", "9", "--out", str(out)]
    )
    assert code == 0
    assert (out / "fig2-m_long.csv").exists()
    assert (out / "fig2-m_agg.csv").exists()
    stdout = capsys.readouterr().out
    assert "naive-mle" in stdout and "frob_err" in stdout


def test_unknown_experiment_name_is_an_argparse_error(tmp_path):
    code = main(["reproduce", "fig9", "--out", str(tmp_path / "x")])
    assert code == 2
