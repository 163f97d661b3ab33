import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from flickerfusion.cli import main
from flickerfusion.fitting import synthetic_thresholds, write_thresholds
from flickerfusion.model import FULL, CffModel, load_model, psi, save_model


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_eval_conservative(capsys):
    code, out, err = run(capsys, "eval", "--e", "0", "--fs", "2.0", "--preset", "conservative")
    assert code == 0
    rows = list(csv.DictReader(out.splitlines()))
    assert float(rows[0]["cff_hz"]) == pytest.approx(41.8, abs=0.05)
    assert "preset: conservative" in err and "config digest:" in err


def test_eval_with_luminance(capsys):
    code, out, _ = run(capsys, "eval", "--e", "0", "10", "--fs", "1", "--luminance", "3")
    assert code == 0
    assert len(out.strip().splitlines()) == 3


def test_usage_errors_exit_2(capsys):
    assert run(capsys, "eval", "--bogus")[0] == 2
    assert run(capsys, "nope")[0] == 2
    assert run(capsys)[0] == 2
    code, _, err = run(capsys, "eval", "--e", "1", "2", "--fs", "1", "2", "3", "--error-json")
    assert code == 2
    doc = json.loads(err.strip().splitlines()[-1])
    assert doc["exit_code"] == 2


def test_domain_errors_exit_1(capsys):
    code, _, err = run(capsys, "eval", "--e", "-1", "--error-json")
    assert code == 1
    assert json.loads(err.strip().splitlines()[-1])["error"] == "DomainError"
    assert run(capsys, "predict", "--input", "/does/not/exist.json")[0] == 1


def test_fit_round_trip(tmp_path, capsys):
    write_thresholds(tmp_path / "t.csv", synthetic_thresholds(seed=0))
    out = tmp_path / "fit.json"
    code, _, _ = run(capsys, "fit", "--input", str(tmp_path / "t.csv"), "--mode", "relaxed",
                     "-o", str(out), "--report", str(tmp_path / "rep.json"))
    assert code == 0
    fitted = load_model(out)
    E, F = np.meshgrid(np.linspace(0, 60, 61), np.geomspace(0.0055, 2, 40))
    rms = np.sqrt(np.mean((psi(E, F, fitted.params) - psi(E, F, FULL)) ** 2))
    assert rms <= 3.0
    rep = json.loads((tmp_path / "rep.json").read_text())
    assert rep["iterations"] > 0
    side = json.loads((tmp_path / "fit.json.config.json").read_text())
    assert side["options"]["mode"] == "relaxed"


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"ppd": 12, "fov_h": 20, "fov_v": 16, "mode": "spatialOnly"}))
    out = tmp_path / "b.json"
    assert run(capsys, "bandwidth", "--config", str(cfg), "--ppd", "30", "-o", str(out))[0] == 0
    doc = json.loads(out.read_text())
    assert doc["config"]["ppd"] == 30.0          # flag wins
    assert doc["config"]["mode"] == "spatialOnly"  # file beats default
    assert doc["config"]["framerate"] == 200.0     # default
    side = json.loads((tmp_path / "b.json.config.json").read_text())
    assert side["options"]["ppd"] == 30.0 and len(side["digest"]) == 16
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run(capsys, "bandwidth", "--config", str(cfg))[0] == 2


def test_preset_env_var(tmp_path, capsys, monkeypatch):
    path = tmp_path / "m.json"
    save_model(CffModel.preset("conservative"), path)
    monkeypatch.setenv("CFF_PRESET_PATH", str(path))
    code, out, err = run(capsys, "eval", "--e", "0", "--fs", "2")
    assert float(out.splitlines()[1].split(",")[2]) == pytest.approx(41.78, abs=0.01)
    assert f"file:{path}" in err
    code, out, _ = run(capsys, "eval", "--e", "0", "--fs", "2", "--preset", "full")
    assert float(out.splitlines()[1].split(",")[2]) == pytest.approx(float(psi(0, 2, FULL)), abs=1e-8)


def test_sweep_fig6_monotone(tmp_path, capsys):
    out = tmp_path / "f6.csv"
    assert run(capsys, "sweep-fig6", "--ppd", "60", "--framerate", "200", "-o", str(out))[0] == 0
    rows = list(csv.DictReader(out.read_text().splitlines()))
    for mode in ("spatialOnly", "spatioTemporal"):
        sel = [r for r in rows if r["mode"] == mode]
        fov = [float(r["fov_h_deg"]) for r in sel]
        gain = [float(r["gain"]) for r in sel]
        assert fov == sorted(fov) and gain == sorted(gain)


@pytest.mark.parametrize("cmd", [["sweep-fig3", "--e-step", "5"], ["sweep-fig4"],
                                 ["sweep-fig6", "--fov", "10", "40", "--ppd", "30"],
                                 ["acuity"]])
def test_sweeps_byte_identical(tmp_path, capsys, cmd):
    out, side = tmp_path / "a.csv", tmp_path / "a.csv.config.json"
    assert run(capsys, *cmd, "-o", str(out))[0] == 0
    first = (out.read_bytes(), side.read_bytes())
    assert run(capsys, *cmd, "-o", str(out))[0] == 0
    assert (out.read_bytes(), side.read_bytes()) == first


def test_bandwidth_threads_independent(tmp_path, capsys):
    outs = []
    for n in ("1", "3"):
        p = tmp_path / f"b{n}.json"
        bands = tmp_path / f"b{n}.csv"
        assert run(capsys, "bandwidth", "--fov-h", "60", "--fov-v", "49", "--threads", n,
                   "-o", str(p), "--per-band-csv", str(bands))[0] == 0
        outs.append((p.read_bytes(), bands.read_bytes()))
    assert outs[0] == outs[1]


def test_bandwidth_filters_video(tmp_path, capsys):
    from flickerfusion.bandwidth import read_raw_video, write_raw_video

    rng = np.random.default_rng(0)
    v = np.repeat(rng.random((1, 20, 30)), 8, axis=0)
    write_raw_video(tmp_path / "v.raw", v, 200.0)
    code, _, _ = run(capsys, "bandwidth", "--ppd", "60", "--fov-h", "0.5", "--fov-v", "0.33",
                     "--window", "8", "--video", str(tmp_path / "v.raw"),
                     "--video-out", str(tmp_path / "o.raw"))
    assert code == 0
    out, meta = read_raw_video(tmp_path / "o.raw")
    src, _ = read_raw_video(tmp_path / "v.raw")
    assert meta["frames"] == 8 and np.array_equal(out, src)


def test_stimulus_command(tmp_path, capsys):
    d = tmp_path / "st"
    code, _, _ = run(capsys, "stimulus", "--index", "17", "--ft", "90", "--resolution", "32", "24",
                     "-o", str(d))
    assert code == 0
    pgm = sorted(d.glob("*.pgm"))
    assert len(pgm) == 4  # one 90 Hz period at 360 Hz
    meta = json.loads((d / "display.json").read_text())
    assert meta["mapping"] == "uniform-angular"
    assert json.loads((d / "stimuli.json").read_text())[0]["order"] == 5
    assert run(capsys, "stimulus", "--index", "40", "-o", str(d))[0] == 1


def test_predict_command(tmp_path, capsys):
    p = tmp_path / "d.json"
    p.write_text(json.dumps([{"eccentricity": 30, "fs": 1.0, "ft": 5},
                             {"eccentricity": 30, "fs": 1.0, "ft": 180}]))
    code, out, err = run(capsys, "predict", "--input", str(p))
    assert code == 0
    doc = json.loads(out)
    assert doc["label"] == "bad" and [r["visible"] for r in doc["descriptors"]] == [True, False]


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "flickerfusion.cli", "eval", "--fs", "0.001"],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert r.stdout.splitlines()[1].endswith("94.3")
    r = subprocess.run([sys.executable, "-m", "flickerfusion.cli", "fit"],
                       capture_output=True, text=True)
    assert r.returncode == 2
