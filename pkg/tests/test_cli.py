import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from cylab import __version__
from cylab.cli import EXIT_FAIL, EXIT_PASS, EXIT_USAGE, main, make_config
from cylab.experiments import CLAIMS, COLUMNS, EXPERIMENTS, UsageError, parse_config_text

jsonschema = pytest.importorskip("jsonschema")
SCHEMA = json.loads((Path(__file__).parents[1] / "docs" / "summary.schema.json").read_text())


def run(tmp_path, *args):
    code = main([*args, "--out", str(tmp_path)])
    return code


def load(tmp_path, name):
    return json.loads((tmp_path / f"{name}.json").read_text()), (tmp_path / f"{name}.csv").read_text()


@pytest.mark.parametrize("name", EXPERIMENTS)
def test_every_experiment_passes_and_validates(tmp_path, name):
    assert run(tmp_path, name) == EXIT_PASS
    summary, text = load(tmp_path, name)
    jsonschema.validate(summary, SCHEMA)
    assert summary["passed"] is True
    assert summary["claim"] == CLAIMS[name]
    assert summary["n_rows"] == sum(1 for ln in text.splitlines()[4:] if ln)


def test_decay_region_one_example(tmp_path):
    assert run(tmp_path, "decay", "--b", "1", "--region", "I") == EXIT_PASS
    summary, _ = load(tmp_path, "decay")
    assert summary["fits"]["region_I"]["exponent"] == pytest.approx(-4, abs=0.3)
    assert summary["fits"]["region_I"]["stderr"] >= 0
    assert "region_V" not in summary["fits"]


def test_harmonic_example(tmp_path):
    run(tmp_path, "harmonic")
    summary, _ = load(tmp_path, "harmonic")
    assert all(c["value"] < 1e-6 for c in summary["checks"] if isinstance(c["value"], float) and "max" in c["name"])


def test_milnor_table(tmp_path):
    run(tmp_path, "milnor")
    _, text = load(tmp_path, "milnor")
    rows = list(csv.DictReader(ln for ln in text.splitlines() if not ln.startswith("#")))
    isolated = [r for r in rows if r["region"].startswith("isolated")]
    assert len(isolated) >= 10
    assert all(int(r["value"]) > 0 for r in isolated)
    # the non-isolated degeneration has no finite Milnor number
    assert any(r["value"] == "" and r["region"].startswith("line") for r in rows)
    assert rows[0]["value"] == "2"


def test_csv_layout(tmp_path):
    run(tmp_path, "taylor", "--seed", "7")
    _, text = load(tmp_path, "taylor")
    lines = text.splitlines()
    assert lines[0] == "# experiment: taylor"
    assert lines[1] == "# seed: 7"
    assert lines[2].startswith("# config: {")
    assert lines[3] == ",".join(COLUMNS)
    assert not any(ln.startswith("#") for ln in lines[4:])


@pytest.mark.parametrize("name", ["decay", "projection", "ale", "nonlinear"])
def test_deterministic_across_workers(tmp_path, name):
    a, b = tmp_path / "a", tmp_path / "b"
    run(a, name, "--workers", "1")
    run(b, name, "--workers", "3")
    assert (a / f"{name}.csv").read_bytes() == (b / f"{name}.csv").read_bytes()


def test_seed_changes_samples(tmp_path):
    run(tmp_path / "a", "harmonic", "--seed", "1")
    run(tmp_path / "b", "harmonic", "--seed", "2")
    assert (tmp_path / "a" / "harmonic.csv").read_text() != (tmp_path / "b" / "harmonic.csv").read_text()


@pytest.mark.parametrize("args", [
    ["nonsense"],
    ["decay", "--radii", "5:1:3"],
    ["decay", "--radii", "1:2"],
    ["decay", "--region", "X"],
    ["decay", "--alpha", "1.5"],
    ["decay", "--workers", "0"],
    ["decay", "--config", "/nonexistent/file.cfg"],
])
def test_usage_errors(tmp_path, args, capsys):
    assert run(tmp_path, *args) == EXIT_USAGE
    assert "usage error" in capsys.readouterr().err
    assert not list(tmp_path.iterdir())


def test_numerical_failure_keeps_partial_output(tmp_path):
    assert run(tmp_path, "decay", "--region", "I", "--radii", "1.2e3:2e3:3") == EXIT_FAIL
    summary, text = load(tmp_path, "decay")
    jsonschema.validate(summary, SCHEMA)
    assert summary["passed"] is False
    assert "decades" in summary["failures"][0]["error"]
    assert summary["n_rows"] > 0 and text.count("\n") > 4


def test_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nalpha = 0.8\nb = 2.5  # trailing\nradii = 1e3:1e7:9\nseed = 3\nregion = all\n")
    c = make_config(["decay", "--config", str(cfg), "--b", "4"])
    assert (c.alpha, c.b, c.radii, c.seed, c.region) == (0.8, 4.0, (1e3, 1e7, 9), 3, None)


@pytest.mark.parametrize("text", ["alpha 0.8", "colour = red", "seed = 1.5", "kappa = x", "radii = 1:2"])
def test_config_parse_errors(text):
    with pytest.raises(UsageError):
        parse_config_text(text)


def test_version_and_module_entry():
    out = subprocess.run([sys.executable, "-m", "cylab.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0
    assert out.stdout.strip() == f"cylab {__version__}"
