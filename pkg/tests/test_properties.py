from dataclasses import replace

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from flickerfusion.bandwidth import AnalysisConfig, retained_count
from flickerfusion.model import PRESETS, psi, psi_hat_unclamped
from flickerfusion.quality import PerturbationDescriptor, predict_visibility
from flickerfusion.stimulus import DisplayGeometry, GaborStimulus, pixel_to_eccentricity, render_frame
from flickerfusion.wavelet import video_forward, video_inverse

ecc = st.floats(0.0, 90.0)
freq = st.floats(1e-3, 60.0)
preset = st.sampled_from(sorted(PRESETS))


@given(ecc, freq, preset)
def test_psi_nonnegative(e, fs, name):
    assert psi(e, fs, PRESETS[name]) >= 0.0


@given(ecc, st.floats(1e-4, 0.0055), preset)
def test_psi_flat_below_cutoff(e, fs, name):
    assert psi(e, fs, PRESETS[name]) == PRESETS[name].p[2]


@given(ecc, freq, st.lists(st.floats(1.0, 1e5), min_size=3, max_size=3, unique=True))
def test_ferry_porter_collinear(e, fs, tds):
    x = np.log10(tds)
    y = np.array([psi_hat_unclamped(e, fs, 1.0, illuminance=t) for t in tds])
    slope = (y[1] - y[0]) / (x[1] - x[0])
    pred = y[0] + slope * (x[2] - x[0])
    assert abs(y[2] - pred) <= 1e-9 * max(1.0, abs(y).max())


@given(ecc, freq, st.floats(0.1, 200.0), st.floats(0.0, 100.0))
def test_raising_ft_never_makes_good_bad(e, fs, ft, bump):
    lo = predict_visibility([PerturbationDescriptor(e, fs, ft)])
    hi = predict_visibility([PerturbationDescriptor(e, fs, ft + bump)])
    assert not (lo.label == "good" and hi.label == "bad")


@given(st.integers(0, 63), st.integers(0, 47), st.floats(0.1, 100.0), freq)
def test_gaze_direction_symmetry(col, row, ft, fs):
    geom = DisplayGeometry(resolution=(64, 48), fov=(40.0, 30.0))
    # pixels mirrored through the display center are equidistant from a centered gaze
    e1 = pixel_to_eccentricity((col, row), geom)
    e2 = pixel_to_eccentricity((63 - col, 47 - row), geom)
    assert abs(e1 - e2) < 1e-9
    v1 = predict_visibility([PerturbationDescriptor(e1, fs, ft)])
    v2 = predict_visibility([PerturbationDescriptor(e2, fs, ft)])
    assert v1.visible == v2.visible


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.2, 5.0), st.floats(0.0, 3.0),
       st.floats(0, 180), st.floats(0.5, 90.0), st.floats(0.0, 1.0))
def test_frames_in_range(x, y, sigma, fs, theta, ft, t):
    geom = DisplayGeometry(resolution=(32, 24), fov=(12.0, 9.0))
    f = render_frame(t, GaborStimulus((x, y), sigma, fs, theta, ft), geom)
    assert f.min() >= 0.0 and f.max() <= 1.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 4), st.integers(0, 5), st.integers(0, 5), st.integers(0, 2**31 - 1))
def test_video_reconstruction(kt, kh, kw, seed):
    x = np.random.default_rng(seed).standard_normal((2**kt, 2**kh, 2**kw))
    assert np.abs(video_inverse(video_forward(x)) - x).max() < 1e-9


@settings(max_examples=15, deadline=None)
@given(st.sampled_from([12.0, 24.0, 60.0]), st.integers(3, 6), st.integers(3, 6),
       st.integers(1, 4), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5),
       st.sampled_from(["spatialOnly", "spatioTemporal"]))
def test_counters_agree(ppd, kw, kh, kt, gx, gy, mode):
    w, h = 2**kw, 2**kh
    c = AnalysisConfig(ppd=ppd, fov_h=w / ppd, fov_v=h / ppd, temporal_window=2**kt,
                       gaze=(gx, gy), mode=mode)
    assert retained_count(c).per_band == retained_count(replace(c, counting="enumerated")).per_band


@settings(max_examples=15, deadline=None)
@given(st.floats(5.0, 80.0), st.floats(5.0, 80.0), st.floats(10.0, 60.0), st.floats(60.0, 240.0))
def test_spatiotemporal_superset(fov_h, fov_v, ppd, rate):
    c = AnalysisConfig(ppd=ppd, fov_h=fov_h, fov_v=fov_v, framerate=rate, temporal_window=32)
    st_ = retained_count(c)
    so = retained_count(replace(c, mode="spatialOnly"))
    assert st_.retained <= so.retained <= so.total
