import json
import subprocess
from pathlib import Path

import pytest

from rcmlab.cli_experiments import emit_plot_data, load_config, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SMALL = {
    "heat-kernel": ["--set", "environment.lattice.L=8", "--set", 'environment.law={"variant":"polynomial_tail","params":{"p":1,"eps":0.5}}'],
    "exit-times": ["--set", "environment.lattice.L=64", "--set", "environment.lattice.boundary=\"torus\"",
                   "--set", "params.r_grid=[2,4,8]", "--set", "params.nsamples=1000"],
    "trap-return": ["--set", "environment.lattice.d2=2", "--set", "environment.lattice.L=6",
                    "--set", "params.N_grid=[3,4,5]"],
}


def _files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(Path(d).rglob("*")) if p.is_file()}


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    cfg = load_config(path)
    assert cfg.experiment in path.stem.replace("_", "-") or cfg.experiment == "harnack"


def test_validation_error_exit_code(tmp_path, capsys):
    assert main(["green", "--set", "environment.alpha=-1", "--out", str(tmp_path)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["errors"][0]["field"] == "environment.alpha"


def test_unknown_key_rejected(tmp_path, capsys):
    assert main(["green", "--set", "params.no_such_knob=1", "--out", str(tmp_path)]) == 2
    assert "no_such_knob" in capsys.readouterr().err


def test_cap_exit_code(tmp_path):
    out = tmp_path / "capped"
    assert main(["heat-kernel", "--set", "caps.dense_states=10", "--out", str(out)]) == 3
    assert json.loads((out / "summary.json").read_text())["status"] == 3


def test_console_script(tmp_path):
    r = subprocess.run(["rcmlab", "heat-kernel", *SMALL["heat-kernel"], "--threads", "1",
                        "--out", str(tmp_path / "hk")], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert json.loads(r.stdout)["status"] == 0


@pytest.mark.parametrize("experiment", sorted(SMALL))
def test_rerun_from_manifest_is_byte_identical(tmp_path, experiment):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main([experiment, *SMALL[experiment], "--out", str(a)]) in (0, 1)
    assert main([experiment, "--config", str(a / "manifest.json"), "--out", str(b)]) in (0, 1)
    assert _files(a) == _files(b)


def test_set_overrides_config(tmp_path):
    cfg = load_config(CONFIGS / "green.json", overrides=["params.B_radius=12", "params.exterior=box"])
    assert cfg.params["B_radius"] == 12.0 and cfg.params["exterior"] == "box"
    with pytest.raises(ValueError):
        load_config(CONFIGS / "green.json", experiment="llt")


def test_plot_data(tmp_path):
    out = tmp_path / "trap"
    assert main(["trap-return", *SMALL["trap-return"], "--out", str(out)]) in (0, 1)
    files = emit_plot_data(out)
    tidy = Path(files[-1]).read_text().splitlines()
    assert tidy[0] == "experiment,series,x,y,stderr" and len(tidy) == 1 + 2 * 3
    assert main(["plot-data", str(tmp_path / "nowhere")]) == 2
