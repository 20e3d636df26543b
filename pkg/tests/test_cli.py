import json

import pytest

from helpers import csv_rows, matrix_fixtures
from nmadta.cli import CONTAINER, main
from nmadta.dataset import write_dataset


def write_config(tmp_path, data_name="net.csv", out="out", extra="", preset="MetaRegression"):
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"""[data]
path = {data_name}

[model]
preset = {preset}

[sampler]
chains = 2
warmup_iters = 60
keep_iters = 100
seed = 99

[outputs]
directory = {out}
grid_size = 20
{extra}""")
    return cfg


@pytest.fixture
def bin_csv(tmp_path, bin_data):
    path = tmp_path / "net.csv"
    with open(path, "w", newline="") as fh:
        write_dataset(bin_data, fh)
    return path


def test_validate_exit_codes(tmp_path, capsys):
    fx = matrix_fixtures()
    path = tmp_path / "one.csv"
    path.write_text(fx["one_study"])
    assert main(["validate", str(path), "--variant", "anova_plus"]) == 0
    assert main(["validate", str(path), "--variant", "anova"]) == 1
    assert "one-study" in capsys.readouterr().out


def test_parse_errors_exit_two(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["validate", str(empty), "--variant", "meta_regression"]) == 2
    assert main(["validate", str(tmp_path / "missing.csv"), "--variant", "meta_regression"]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[sampler]\nchains = 2\n")
    assert main(["fit", "--config", str(bad)]) == 2


def test_fit_validation_failure(tmp_path):
    (tmp_path / "net.csv").write_text(matrix_fixtures()["disconnected"])
    cfg = write_config(tmp_path, preset="Anova")
    assert main(["fit", "--config", str(cfg)]) == 1
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["status"] == "validation-failed"


def test_fit_outputs_and_manifest(tmp_path, bin_csv):
    cfg = write_config(tmp_path)
    assert main(["fit", "--config", str(cfg)]) == 0
    out = tmp_path / "out"
    for name in (CONTAINER, "diagnostics.tsv", "dic.txt", "pooled.csv", "rankings.csv", "report.json",
                 "sroc.svg", "manifest.json"):
        assert (out / name).exists(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["seed"] == 99
    assert set(manifest["artifacts"]) >= {CONTAINER, "pooled.csv"}
    # nothing outside the output directory besides the inputs
    assert sorted(p.name for p in tmp_path.iterdir()) == ["net.csv", "out", "run.ini"]


def test_rerun_is_byte_identical(tmp_path, bin_csv):
    cfg = write_config(tmp_path)
    assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "b"), "--threads", "2"]) == 0
    for name in (CONTAINER, "pooled.csv", "dic.txt", "diagnostics.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    a = json.loads((tmp_path / "a" / "manifest.json").read_text())
    b = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert a["artifacts"] == b["artifacts"]
    assert a["config_hash"] == b["config_hash"]


def test_seed_override_changes_draws(tmp_path, bin_csv):
    cfg = write_config(tmp_path)
    main(["fit", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["fit", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "100"])
    assert (tmp_path / "a" / CONTAINER).read_bytes() != (tmp_path / "b" / CONTAINER).read_bytes()


def test_resume(tmp_path, bin_csv):
    cfg = write_config(tmp_path)
    assert main(["fit", "--config", str(cfg)]) == 0
    assert main(["fit", "--config", str(cfg), "--resume"]) == 0
    idx = json.loads((tmp_path / "out" / (CONTAINER + ".index.json")).read_text())
    assert idx["draws_shape"][1] == 200


def test_compare_orders_by_dic(tmp_path, bin_csv, capsys):
    cfg = write_config(tmp_path, extra="figures = false\n\n[compare]\nspecs = V1, MetaRegression, Independent\n")
    assert main(["compare", "--config", str(cfg)]) == 0
    lines = (tmp_path / "out" / "compare.csv").read_text().splitlines()
    assert lines[0].startswith("label,variant,covariance,residual_deviance,pV,dic")
    dics = [float(line.split(",")[5]) for line in lines[1:]]
    assert dics == sorted(dics)
    assert [line.split(",")[7] for line in lines[1:]] == ["yes", "no", "no"]
    for label in ("V1", "MetaRegression", "Independent"):
        assert (tmp_path / "out" / "compare" / label / CONTAINER).exists()


def test_summarize(tmp_path, bin_csv):
    cfg = write_config(tmp_path, extra="figures = false\n")
    assert main(["fit", "--config", str(cfg)]) == 0
    args = ["summarize", "--container", str(tmp_path / "out" / CONTAINER), "--data", str(bin_csv),
            "--out", str(tmp_path / "summ")]
    assert main(args) == 0
    assert (tmp_path / "summ" / "pooled.csv").read_text() == (tmp_path / "out" / "pooled.csv").read_text()
    other = tmp_path / "other.csv"
    other.write_text(csv_rows([("S1", "A", "binary", "diseased", "NA", 3, 10),
                               ("S1", "A", "binary", "nondiseased", "NA", 1, 10)]))
    args[4] = str(other)
    assert main(args) == 1


def test_simulate(tmp_path, capsys):
    out = tmp_path / "sim" / "prostate.csv"
    assert main(["simulate", "--network", "prostate_like", "--seed", "3", "--out", str(out)]) == 0
    assert "37 studies, 4 tests" in capsys.readouterr().out
    truth = json.loads((tmp_path / "sim" / "prostate.csv.truth.json").read_text())
    assert truth["seed"] == 3
    assert main(["validate", str(out), "--variant", "meta_regression"]) == 0
