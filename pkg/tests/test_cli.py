"""Command-line surface: determinism, reports, validation, exit codes."""

import json

import numpy as np
import pytest

from amspim.cli import main
from amspim.tensor import load_tensor


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


def test_gen_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    code1, _ = run_cli(capsys, "gen", "--shape", "1,8,16,2,8", "--seed", "7",
                       "--out", str(a))
    code2, _ = run_cli(capsys, "gen", "--shape", "1,8,16,2,8", "--seed", "7",
                       "--out", str(b))
    assert code1 == 0 and code2 == 0
    for name in ("x.tensor", "w_q.tensor", "w_k.tensor", "w_v.tensor",
                 "w_o.tensor"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_gen_density_zero_all_zero(tmp_path, capsys):
    out = tmp_path / "z"
    code, _ = run_cli(capsys, "gen", "--shape", "1,8,16,2,8", "--density", "0",
                      "--out", str(out))
    assert code == 0
    assert not load_tensor(out / "x.tensor").data.any()


def test_gen_missing_shape_is_usage_error(tmp_path, capsys):
    code, out = run_cli(capsys, "gen", "--out", str(tmp_path))
    assert code != 0
    err = json.loads(out)
    assert "shape" in err["error"]


def test_simulate_reports(tmp_path, capsys):
    out = tmp_path / "run"
    code, text = run_cli(
        capsys, "simulate", "--shape", "1,8,16,2,8", "--seed", "3",
        "--out", str(out),
    )
    assert code == 0
    payload = json.loads(text)
    assert payload["traffic"]["in_elements"] + payload["traffic"][
        "out_elements"
    ] == payload["traffic"]["revised_formula"]
    assert payload["traffic"]["intermediate_elements"] == 0
    assert payload["accuracy"]["cosine_mean"] > 0.8
    assert (out / "simulate.json").exists()
    assert (out / "simulate.csv").exists()
    assert (out / "y.tensor").exists()


def test_simulate_from_generated_files(tmp_path, capsys):
    gen_dir = tmp_path / "gen"
    run_cli(capsys, "gen", "--shape", "1,8,16,2,8", "--seed", "5",
            "--out", str(gen_dir))
    code, text = run_cli(
        capsys, "simulate", "--shape", "1,8,16,2,8", "--seed", "5",
        "--input", str(gen_dir),
    )
    assert code == 0
    assert json.loads(text)["traffic"]["intermediate_elements"] == 0


def test_traffic_reference_numbers(capsys):
    code, text = run_cli(capsys, "traffic", "--shape", "1,512,1024,16,64")
    assert code == 0
    payload = json.loads(text)
    assert payload["original_elements"] == 11_534_336
    assert payload["revised_elements"] == 1_572_864
    assert round(payload["ratio"], 2) == 7.33


def test_traffic_csv_format(capsys):
    code, text = run_cli(
        capsys, "traffic", "--shape", "1,512,1024,16,64", "--format", "csv"
    )
    assert code == 0
    assert text.splitlines()[0] == "original_elements,revised_elements,ratio"


def test_montecarlo_zero_sigma(capsys):
    code, text = run_cli(
        capsys, "montecarlo", "--sigma", "0", "--trials", "10000",
        "--sawl-list", "8,16",
    )
    assert code == 0
    payload = json.loads(text)
    assert all(r["errors"] == 0 for r in payload["results"])


def test_montecarlo_six_sigma_flags(capsys):
    code, text = run_cli(
        capsys, "montecarlo", "--sigma", "0.029", "--trials", "1000",
        "--sawl-list", "8,16",
    )
    payload = json.loads(text)
    by_sawl = {r["sawl"]: r for r in payload["results"]}
    assert by_sawl[8]["six_sigma_pass"] is True
    assert by_sawl[16]["six_sigma_pass"] is False


def test_softmax_eval_summary(capsys):
    code, text = run_cli(
        capsys, "softmax-eval", "--n", "512", "--qo", "8", "--tokens", "50",
        "--seed", "1",
    )
    assert code == 0
    payload = json.loads(text)
    assert payload["l1_max"] <= 0.05
    assert payload["argmax_preserved"] == 50


def test_profile_file_and_synthetic(tmp_path, capsys):
    gen_dir = tmp_path / "gen"
    run_cli(capsys, "gen", "--shape", "1,8,16,2,8", "--seed", "2",
            "--density", "0.3", "--out", str(gen_dir))
    code, text = run_cli(
        capsys, "profile", "--input", str(gen_dir / "x.tensor")
    )
    assert code == 0
    payload = json.loads(text)
    assert 0.0 <= payload["valuewise"] <= 1.0
    assert payload["bitwise"] >= payload["valuewise"]
    code, text = run_cli(
        capsys, "profile", "--shape", "1,8,16,2,8", "--density", "0.5",
        "--seed", "2",
    )
    assert code == 0


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"shape": "1,512,1024,16,64"}))
    code, text = run_cli(capsys, "traffic", "--config", str(cfg))
    assert code == 0
    assert json.loads(text)["original_elements"] == 11_534_336
    code, text = run_cli(
        capsys, "traffic", "--config", str(cfg), "--shape", "1,1,1,1,1"
    )
    assert json.loads(text)["revised_elements"] == 3


def test_bad_config_file(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("nope")
    code, text = run_cli(capsys, "traffic", "--config", str(cfg),
                         "--shape", "1,1,1,1,1")
    assert code == 2
    assert "config" in json.loads(text)["error"]


def test_invalid_shape_error_json(capsys):
    code, text = run_cli(capsys, "traffic", "--shape", "1,2,3")
    assert code == 2
    assert "error" in json.loads(text)


def test_reports_embed_resolved_seed(capsys):
    code, text = run_cli(capsys, "traffic", "--shape", "1,1,2,2,1",
                         "--seed", "99")
    payload = json.loads(text)
    assert payload["seed"] == 99 and payload["command"] == "traffic"
