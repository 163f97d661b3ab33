"""Acceptance checks, one per numbered criterion.

Each check prints a single ``PASS``/``FAIL`` line with the measured
quantities, then asserts. Run ``python3 tests/test_acceptance.py`` for
the summary lines alone, or ``pytest tests/test_acceptance.py -v -s``.
"""

import itertools
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from flickerfusion.bandwidth import AnalysisConfig, gain_sweep, retained_count
from flickerfusion.cli import main as cli_main
from flickerfusion.fitting import FitConfig, fit_cff, synthetic_thresholds
from flickerfusion.model import (
    PRESETS,
    CffModel,
    acuity_limit,
    effective_illuminance,
    peak_eccentricity,
    psi,
    psi_hat_unclamped,
    pupil_diameter,
)
from flickerfusion.quality import PerturbationDescriptor, predict_visibility
from flickerfusion.stimulus import DisplayGeometry, pixel_to_eccentricity
from flickerfusion.wavelet import n_levels, video_forward, video_inverse, wavedec

TABLE = {
    "conservative": ("-4.08", "-10.1", "94.4", "0.0484", "-0.280", "0.431", "-0.00140",
                     "0.00679", "-0.00912", "1.56"),
    "relaxed": ("-4.06", "-10.1", "94.3", "0.0464", "-0.282", "0.430", "-0.00129",
                "0.00672", "-0.00929", "1.58"),
    "full": ("-4.06", "-10.1", "94.3", "0.0440", "-0.281", "0.435", "-0.00111",
             "0.00613", "-0.00877", "1.58"),
}


LINES = {}


def report(number, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {detail}"
    LINES[number] = line
    sys.__stdout__.write(line + "\n")
    sys.__stdout__.flush()
    return ok


# ---------------------------------------------------------------------------


def criterion_1():
    digits = all(PRESETS[k].p == tuple(float(v) for v in TABLE[k]) for k in TABLE)
    round_trip = True
    for name in TABLE:
        model = CffModel.preset(name)
        text = model.to_json()
        again = CffModel.from_json(text)
        round_trip &= again == model and again.to_json() == text
    ok = digits and round_trip
    return report(1, ok, f"presets match table: {digits}; JSON round trip exact: {round_trip}")


def criterion_2():
    rng = np.random.default_rng(0)
    e = rng.uniform(0, 90, 1000)
    fs = rng.uniform(1e-4, 0.0055, 1000)
    flat = all(np.all(psi(e, fs, p) == p.p[2]) for p in PRESETS.values())
    acu = abs(acuity_limit(0.0) - math.log(64) / 0.106)
    d0 = abs(pupil_diameter(0.0) - 7.75)
    dinf = abs(pupil_diameter(1e40) - 2.0)
    ok = flat and acu <= 1e-9 and d0 <= 1e-6 and dinf <= 1e-6
    return report(2, ok, f"psi(fs<=fs0)==p2: {flat}; |A(0)-ln64/0.106|={acu:.1e}; "
                         f"|d(0)-7.75|={d0:.1e}; |d(inf)-2|={dinf:.1e}")


def criterion_3():
    params = PRESETS["conservative"]
    vertex = float(peak_eccentricity(2.0, params))
    grid = np.round(np.arange(0.0, 90.0 + 1e-9, 0.1), 1)
    argmax = float(grid[np.argmax(psi(grid, 2.0, params))])
    ok = 10 <= vertex <= 30 and 10 <= argmax <= 30 and abs(vertex - argmax) <= 0.5
    return report(3, ok, f"vertex {vertex:.2f} deg, grid argmax {argmax:.1f} deg "
                         f"(need both in [10, 30], within 0.5)")


def criterion_4():
    e = np.arange(0.0, 61.0, 2.0)
    vals = np.abs(psi(e, acuity_limit(e), PRESETS["full"]))
    worst = int(np.argmax(vals))
    n_bad = int(np.sum(vals > 2.0))
    ok = bool(vals.max() <= 2.0)
    return report(4, ok, f"max |psi(e, A(e))| = {vals.max():.2f} Hz at e = {e[worst]:.0f} deg "
                         f"(limit 2 Hz; {n_bad}/{e.size} grid points exceed)")


def criterion_5():
    rng = np.random.default_rng(5)
    lums = (3.0, 23.9, 380.0)
    x = np.log10([effective_illuminance(L) for L in lums])
    worst = 0.0
    for _ in range(100):
        e, fs = rng.uniform(0, 60), 10 ** rng.uniform(np.log10(0.0055), np.log10(4))
        y = np.array([psi_hat_unclamped(e, fs, L) for L in lums])
        A = np.stack([x, np.ones(3)], axis=1)
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = np.abs(A @ coef - y).max() / max(np.abs(y).max(), 1e-300)
        worst = max(worst, resid)
    ok = worst <= 1e-9
    return report(5, ok, f"max relative collinearity residual {worst:.1e} (limit 1e-9)")


def criterion_6():
    result = fit_cff(synthetic_thresholds(seed=0), FitConfig(mode="relaxed"))
    E, F = np.meshgrid(np.linspace(0, 60, 61), np.geomspace(0.0055, 2.0, 40))
    rms = float(np.sqrt(np.mean((psi(E, F, result.params) - psi(E, F, PRESETS["full"])) ** 2)))
    z1, z2 = float(psi(46.8, 2.0, result.params)), float(psi(56.8, 2.0, result.params))
    ok = rms <= 3.0 and z1 <= 2.0 and z2 <= 2.0
    return report(6, ok, f"relaxed fit RMS {rms:.2f} Hz (limit 3); psi(46.8, 2) = {z1:.2f}, "
                         f"psi(56.8, 2) = {z2:.2f} Hz (limit 2)")


def criterion_7():
    x = np.random.default_rng(7).standard_normal((16, 64, 64))
    err = float(np.abs(video_inverse(video_forward(x)) - x).max())
    c = wavedec(np.full(8, 3.0))
    sparse = int(np.count_nonzero(np.abs(c) > 1e-12)) == 1 and abs(c[0]) > 0
    levels = all(n_levels(2**k) == k for k in range(12))
    ok = err < 1e-9 and sparse and levels
    return report(7, ok, f"reconstruction error {err:.1e} (limit 1e-9); constant sparsity: "
                         f"{sparse}; log2(N) levels: {levels}")


def criterion_8():
    sizes = (16, 64, 256)
    n, mismatched = 0, []
    for ppd, w, h, t, mode in itertools.product((12.0, 60.0), sizes, sizes, (8, 64),
                                                ("spatialOnly", "spatioTemporal")):
        c = AnalysisConfig(ppd=ppd, fov_h=w / ppd, fov_v=h / ppd, temporal_window=t, mode=mode)
        a = retained_count(c)
        e = retained_count(replace(c, counting="enumerated"))
        n += 1
        if a.per_band != e.per_band:
            mismatched.append((ppd, w, h, t, mode))
    # off-center gaze at the largest size
    for ppd in (12.0, 60.0):
        c = AnalysisConfig(ppd=ppd, fov_h=256 / ppd, fov_v=256 / ppd, temporal_window=64,
                           gaze=(0.61, -0.27))
        n += 1
        if retained_count(c).per_band != retained_count(replace(c, counting="enumerated")).per_band:
            mismatched.append((ppd, 256, 256, 64, "gaze"))
    ok = not mismatched
    return report(8, ok, f"{n - len(mismatched)}/{n} configs agree band by band "
                         f"(up to 256x256x64, 12 and 60 ppd)")


def criterion_9():
    base = AnalysisConfig(ppd=60.0, fov_h=165.0, fov_v=135.0, framerate=200.0)
    st = retained_count(base).gain
    so = retained_count(replace(base, mode="spatialOnly")).gain
    rows = gain_sweep(base, [10, 20, 40, 60, 80, 100, 120, 140, 165],
                      modes=["spatialOnly", "spatioTemporal"])
    monotone = all(
        all(b >= a for a, b in zip(g, g[1:]))
        for g in ([r["gain"] for r in rows if r["mode"] == m]
                  for m in ("spatialOnly", "spatioTemporal")))
    ok = st >= 1000 and st / so >= 5 and monotone
    return report(9, ok, f"spatioTemporal gain {st:.1f} (need >= 1000); ratio to spatialOnly "
                         f"{st / so:.2f} (need >= 5); non-decreasing in FOV: {monotone}")


def criterion_10():
    rng = np.random.default_rng(10)
    control = all(
        predict_visibility([PerturbationDescriptor(rng.uniform(0, 90),
                                                   10 ** rng.uniform(-3, 1.6), 180.0)]).label
        == "good" for _ in range(500))
    c = float(psi(30.0, 1.0))
    bad = predict_visibility([PerturbationDescriptor(30.0, 1.0, 0.9 * c)]).label == "bad"
    monotone = True
    for _ in range(500):
        e, fs, ft = rng.uniform(0, 80), 10 ** rng.uniform(-3, 1.3), rng.uniform(0.5, 120)
        lo = predict_visibility([PerturbationDescriptor(e, fs, ft)]).label
        hi = predict_visibility([PerturbationDescriptor(e, fs, ft + rng.uniform(0, 60))]).label
        monotone &= not (lo == "good" and hi == "bad")
    geom = DisplayGeometry(resolution=(257, 191), fov=(80.0, 60.0))
    symmetric = True
    for _ in range(500):
        col, row = int(rng.integers(0, 257)), int(rng.integers(0, 191))
        e1 = pixel_to_eccentricity((col, row), geom)
        e2 = pixel_to_eccentricity((256 - col, 190 - row), geom)
        fs, ft = 10 ** rng.uniform(-3, 1.3), rng.uniform(0.5, 120)
        v1 = predict_visibility([PerturbationDescriptor(e1, fs, ft)]).visible
        v2 = predict_visibility([PerturbationDescriptor(e2, fs, ft)]).visible
        symmetric &= v1 == v2
    ok = control and bad and monotone and symmetric
    return report(10, ok, f"180 Hz control good: {control}; below psi(30, 1) bad: {bad}; "
                          f"ft-monotone: {monotone}; gaze symmetric: {symmetric}")


def _quiet_cli(argv):
    import contextlib
    import io

    with contextlib.redirect_stderr(io.StringIO()), contextlib.redirect_stdout(io.StringIO()):
        return cli_main(argv)


def criterion_11(tmp):
    tmp = Path(tmp)
    sweeps = [["sweep-fig3"], ["sweep-fig4"],
              ["sweep-fig6", "--ppd", "12", "60", "--framerate", "200"]]
    identical = True
    for cmd in sweeps:
        out = tmp / f"{cmd[0]}.csv"
        assert _quiet_cli(cmd + ["-o", str(out)]) == 0
        first = out.read_bytes()
        assert _quiet_cli(cmd + ["-o", str(out)]) == 0
        identical &= out.read_bytes() == first
    outs = []
    for n in (1, 2, 8):
        p = tmp / f"bw{n}.json"
        bands = tmp / f"bw{n}.csv"
        assert _quiet_cli(["bandwidth", "--threads", str(n), "-o", str(p),
                           "--per-band-csv", str(bands)]) == 0
        outs.append((p.read_bytes(), bands.read_bytes()))
    threads = all(o == outs[0] for o in outs)
    ok = identical and threads
    return report(11, ok, f"sweep reruns byte-identical: {identical}; "
                          f"bandwidth output independent of --threads (1, 2, 8): {threads}")


# ---------------------------------------------------------------------------


@pytest.mark.parametrize("number", range(1, 11))
def test_criterion(number):
    assert globals()[f"criterion_{number}"]()


def test_criterion_11(tmp_path):
    assert criterion_11(tmp_path)


if __name__ == "__main__":
    import tempfile

    results = [globals()[f"criterion_{k}"]() for k in range(1, 11)]
    with tempfile.TemporaryDirectory() as d:
        results.append(criterion_11(d))
    print(f"{sum(results)}/{len(results)} criteria pass")
    sys.exit(0 if all(results) else 1)
