"""Compression-gain analysis of perceptual wavelet coefficient discarding.

A video window of ``T`` frames is decomposed with a spatial Haar pyramid
per frame followed by a temporal Haar transform per spatial coefficient
(see :mod:`flickerfusion.wavelet`). Every coefficient gets

* an eccentricity: the minimum over its spatial support, measured from
  the gaze point with a uniform degrees-per-pixel mapping;
* a spatial frequency band ``[ppd / 2**(j+1), ppd / 2**j]`` for spatial
  level ``j`` (horizontal, vertical and diagonal subbands share it);
* a temporal band ``[f / 2**(k+1), f / 2**k]`` for temporal level ``k``.

Level 0 denotes the residual approximation (spatial) or DC (temporal).
The CFF of a band is the largest model value over ``fs_samples``
log-spaced frequencies of its range. ``spatialOnly`` drops spatial
coefficients whose CFF is zero in every frame; ``spatioTemporal`` also
drops temporal-detail coefficients whose lower band edge is above the CFF.

Two counters are provided. ``enumerated`` builds the coefficient mask
explicitly (power-of-two sizes only). ``analytic`` solves the discard
predicate for eccentricity intervals (roots of the model polynomial) and
counts how many coefficient supports fall in them, row by row, which
scales to full-field retinal displays.
"""

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
from numpy.polynomial import polynomial as npoly
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import DomainError, is_power_of_two
from .model import (
    DEFAULT_FS0,
    CffModel,
    CffParameters,
    eccentricity_polynomial,
    effective_illuminance,
    psi,
    psi_hat,
    zeta,
)
from .wavelet import video_forward, video_inverse

ASPECT = 135.0 / 165.0


class Mode(str, Enum):
    SPATIAL_ONLY = "spatialOnly"
    SPATIO_TEMPORAL = "spatioTemporal"


class Counting(str, Enum):
    ENUMERATED = "enumerated"
    ANALYTIC = "analytic"


@dataclass(frozen=True)
class AnalysisConfig:
    ppd: float = 60.0
    fov_h: float = 165.0
    fov_v: float = 135.0
    framerate: float = 200.0
    temporal_window: int = 128
    gaze: tuple = (0.0, 0.0)
    luminance: float = 380.0
    mode: Mode = Mode.SPATIO_TEMPORAL
    counting: Counting = Counting.ANALYTIC
    fs_samples: int = 5

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "counting", Counting(self.counting))
        object.__setattr__(self, "gaze", tuple(float(g) for g in self.gaze))
        if not (self.ppd > 0 and self.fov_h > 0 and self.fov_v > 0):
            raise DomainError("ppd and field of view must be strictly positive")
        if not self.framerate > 0:
            raise DomainError("framerate must be strictly positive")
        if self.temporal_window < 2 or not is_power_of_two(self.temporal_window):
            raise DomainError("temporal_window must be a power of two >= 2")
        if self.fs_samples < 1:
            raise DomainError("fs_samples must be at least 1")
        if self.width < 1 or self.height < 1:
            raise DomainError("derived resolution is empty")

    @property
    def width(self):
        return int(round(self.fov_h * self.ppd))

    @property
    def height(self):
        return int(round(self.fov_v * self.ppd))

    @property
    def gaze_absolute(self):
        """Gaze in degrees from the top-left screen corner (y down)."""
        return (self.width / self.ppd / 2.0 + self.gaze[0],
                self.height / self.ppd / 2.0 - self.gaze[1])

    def to_dict(self):
        return {
            "ppd": self.ppd, "fov_h": self.fov_h, "fov_v": self.fov_v,
            "framerate": self.framerate, "temporal_window": self.temporal_window,
            "gaze": list(self.gaze), "luminance": self.luminance,
            "mode": self.mode.value, "counting": self.counting.value,
            "fs_samples": self.fs_samples,
        }


@dataclass(frozen=True)
class BandDescriptor:
    spatial_level: int
    temporal_level: int
    fs_range: tuple
    ft_range: tuple
    coefficient_count: int
    support_size: float


@dataclass
class GainReport:
    total: int
    retained: int
    per_band: list = field(default_factory=list)

    @property
    def discarded(self):
        return self.total - self.retained

    @property
    def gain(self):
        return self.total / self.retained if self.retained else math.inf


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


def _axis_levels(n):
    return (int(n) - 1).bit_length()


def spatial_subbands(width, height):
    """Per spatial level ``j >= 1``: list of ``(rows, cols)`` of its subbands.

    Level ``L + 1`` is not produced; the residual approximation has shape
    ``(1, 1)`` after ``L = ceil(log2(max(width, height)))`` levels. Odd
    lengths keep the trailing sample in the approximation.
    """
    h, w = int(height), int(width)
    levels = []
    for _ in range(max(_axis_levels(w), _axis_levels(h))):
        wa, wd = ((w + 1) // 2, w // 2) if w > 1 else (w, 0)
        ha, hd = ((h + 1) // 2, h // 2) if h > 1 else (h, 0)
        levels.append([(ha, wd), (hd, wa), (hd, wd)])
        h, w = ha, wa
    return levels


def _support_distances(n_coeffs, scale, n_pixels, ppd, center):
    """Minimum angular distance from ``center`` to each coefficient support."""
    i = np.arange(n_coeffs)
    lo = i * scale / ppd
    hi = np.minimum((i + 1) * scale, n_pixels) / ppd
    return np.maximum(np.maximum(lo - center, center - hi), 0.0)


def _level_distances(config, level, rows, cols):
    """``(dy, dx)`` arrays for a subband with ``rows x cols`` coefficients."""
    gx, gy = config.gaze_absolute
    sx = 2 ** min(level, _axis_levels(config.width))
    sy = 2 ** min(level, _axis_levels(config.height))
    dx = _support_distances(cols, sx, config.width, config.ppd, gx)
    dy = _support_distances(rows, sy, config.height, config.ppd, gy)
    return dy, dx


def spatial_fs_range(level, n_spatial, ppd):
    if level == 0:
        return (0.0, ppd / 2.0 ** (n_spatial + 1))
    return (ppd / 2.0 ** (level + 1), ppd / 2.0**level)


def temporal_ft_range(level, n_temporal, framerate):
    if level == 0:
        return (0.0, framerate / 2.0 ** (n_temporal + 1))
    return (framerate / 2.0 ** (level + 1), framerate / 2.0**level)


def band_layout(config):
    """All spatio-temporal bands of one analysis window, finest first."""
    subbands = spatial_subbands(config.width, config.height)
    n_spatial = len(subbands)
    n_temporal = _axis_levels(config.temporal_window)
    T = config.temporal_window
    spatial = [(j, sum(r * c for r, c in subbands[j - 1])) for j in range(1, n_spatial + 1)]
    spatial.append((0, config.width * config.height - sum(n for _, n in spatial)))
    bands = []
    for j, n_sp in spatial:
        support = 2.0 ** (n_spatial if j == 0 else j) / config.ppd
        for k in list(range(1, n_temporal + 1)) + [0]:
            n_t = 1 if k == 0 else T // 2**k
            bands.append(BandDescriptor(
                spatial_level=j,
                temporal_level=k,
                fs_range=spatial_fs_range(j, n_spatial, config.ppd),
                ft_range=temporal_ft_range(k, n_temporal, config.framerate),
                coefficient_count=n_sp * n_t,
                support_size=support,
            ))
    return bands


# ---------------------------------------------------------------------------
# Model evaluation
# ---------------------------------------------------------------------------


def _as_model(model):
    if model is None:
        return CffModel()
    if isinstance(model, CffParameters):
        return CffModel(params=model)
    return model


def band_fs_samples(fs_range, n):
    lo, hi = fs_range
    lo = lo if lo > 0 else min(DEFAULT_FS0, hi)
    return np.geomspace(lo, hi, n) if n > 1 else np.array([hi])


class _Evaluator:
    """Band CFF as a function of eccentricity for one model and luminance."""

    def __init__(self, model, luminance):
        self.model = _as_model(model)
        self.luminance = luminance
        if luminance is None:
            self.log_ratio = 0.0
        else:
            td = effective_illuminance(luminance)
            self.log_ratio = math.log10(td / self.model.luminance.l0)

    def cff(self, e, fs):
        m = self.model
        if self.log_ratio == 0.0:
            return np.asarray(psi(e, fs, m.params))
        return np.asarray(psi_hat(e, fs, self.luminance, m.params, m.luminance))

    def band_cff(self, e, fs_values):
        e = np.asarray(e, dtype=float)
        out = np.zeros(e.shape)
        for fs in fs_values:
            out = np.maximum(out, self.cff(e, fs))
        return out

    def polynomials(self, fs):
        """``(P, F)``: unclamped psi and luminance factor as polynomials in e."""
        a, b, c = (float(v) for v in eccentricity_polynomial(fs, self.model.params))
        z = float(zeta(fs, self.model.params))
        q0, q1, q2 = self.model.luminance.q
        x = self.log_ratio
        return np.array([a, b, c]), np.array([1.0 + x * q2, x * z * q1, x * z * q0])


# ---------------------------------------------------------------------------
# Interval arithmetic on [0, e_max]
# ---------------------------------------------------------------------------


def _negative_set(coeffs, e_max, inclusive=False):
    """Intervals of ``[0, e_max]`` where the polynomial is < 0 (or <= 0)."""
    coeffs = npoly.polytrim(np.asarray(coeffs, dtype=float), tol=0.0)
    if coeffs.size == 1:
        v = coeffs[0]
        return [(0.0, e_max)] if (v < 0 or (inclusive and v == 0)) else []
    roots = npoly.polyroots(coeffs)
    real = sorted(r.real for r in roots
                  if abs(r.imag) <= 1e-12 * max(1.0, abs(r.real)) and 0 < r.real < e_max)
    edges = [0.0] + real + [e_max]
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        v = npoly.polyval(0.5 * (lo + hi), coeffs)
        if v < 0 or (inclusive and v == 0):
            if out and out[-1][1] == lo:
                out[-1] = (out[-1][0], hi)
            else:
                out.append((lo, hi))
    return out


def _union(a, b):
    merged = []
    for lo, hi in sorted(a + b):
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


def _intersect(a, b):
    out, i, j = [], 0, 0
    while i < len(a) and j < len(b):
        lo, hi = max(a[i][0], b[j][0]), min(a[i][1], b[j][1])
        if lo < hi:
            out.append((lo, hi))
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return out


def discard_intervals(evaluator, fs_values, ft, e_max):
    """Eccentricities where the band CFF is below ``ft`` (``ft=0``: equals zero)."""
    region = [(0.0, e_max)]
    for fs in fs_values:
        P, F = evaluator.polynomials(fs)
        if ft > 0:
            s = _union(_negative_set(P, e_max, inclusive=True),
                       _negative_set(npoly.polysub(npoly.polymul(F, P), [ft]), e_max))
        else:
            s = _union(_negative_set(P, e_max, inclusive=True),
                       _negative_set(F, e_max, inclusive=True))
        region = _intersect(region, s)
        if not region:
            break
    return region


def _count_below(dx_sorted, dy, r):
    """Number of supports with ``hypot(dx, dy) < r``."""
    if math.isinf(r):
        return dx_sorted.size * dy.size
    w2 = r * r - dy * dy
    w = np.where(dy < r, np.sqrt(np.maximum(w2, 0.0)), -1.0)
    return int(np.searchsorted(dx_sorted, w, side="left").sum())


def _count_in(dx, dy, intervals, e_max):
    if not intervals:
        return 0
    dx_sorted = np.sort(dx)
    total = 0
    for lo, hi in intervals:
        upper = math.inf if hi >= e_max else hi
        lower = _count_below(dx_sorted, dy, lo) if lo > 0 else 0
        total += _count_below(dx_sorted, dy, upper) - lower
    return total


# ---------------------------------------------------------------------------
# Counting
# ---------------------------------------------------------------------------


def _spatial_geometry(config):
    """Per spatial level (0 = residual): list of ``(dy, dx)`` per subband."""
    subbands = spatial_subbands(config.width, config.height)
    geo = {}
    for j, shapes in enumerate(subbands, start=1):
        geo[j] = [_level_distances(config, j, r, c) for r, c in shapes if r and c]
    n = len(subbands)
    geo[0] = [_level_distances(config, n, 1, 1)] if n else [
        _level_distances(config, 0, config.height, config.width)]
    return geo


def _temporal_thresholds(config):
    """``(level, ftLow, count)`` for every temporal band."""
    n_temporal = _axis_levels(config.temporal_window)
    T = config.temporal_window
    rows = [(k, temporal_ft_range(k, n_temporal, config.framerate)[0], T // 2**k)
            for k in range(1, n_temporal + 1)]
    rows.append((0, 0.0, 1))
    return rows


def _report(config, per_band):
    total = config.width * config.height * config.temporal_window
    retained = sum(b["retained"] for b in per_band)
    return GainReport(total=total, retained=retained, per_band=per_band)


def _analytic(config, model, threads=1):
    ev = _Evaluator(model, config.luminance)
    geo = _spatial_geometry(config)
    e_max = math.hypot(config.width, config.height) / config.ppd + 1.0
    layout = band_layout(config)
    n_spatial = len(spatial_subbands(config.width, config.height))

    def spatial_band(j):
        fs_values = band_fs_samples(spatial_fs_range(j, n_spatial, config.ppd),
                                    config.fs_samples)
        zero_set = discard_intervals(ev, fs_values, 0.0, e_max)
        n_zero = sum(_count_in(dx, dy, zero_set, e_max) for dy, dx in geo[j])
        out = {}
        for k, ft_low, _ in _temporal_thresholds(config):
            if config.mode is Mode.SPATIAL_ONLY or k == 0:
                out[k] = n_zero
            else:
                dset = discard_intervals(ev, fs_values, ft_low, e_max)
                out[k] = sum(_count_in(dx, dy, dset, e_max) for dy, dx in geo[j])
        return j, out

    levels = sorted(geo)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = dict(pool.map(spatial_band, levels))
    else:
        results = dict(spatial_band(j) for j in levels)
    per_band = []
    for band in layout:
        j, k = band.spatial_level, band.temporal_level
        n_t = 1 if k == 0 else config.temporal_window // 2**k
        discarded = results[j][k] * n_t
        per_band.append(_band_row(band, band.coefficient_count - discarded))
    return _report(config, per_band)


def _band_row(band, retained):
    return {
        "spatial_level": band.spatial_level,
        "temporal_level": band.temporal_level,
        "fs_low": band.fs_range[0], "fs_high": band.fs_range[1],
        "ft_low": band.ft_range[0], "ft_high": band.ft_range[1],
        "total": band.coefficient_count,
        "retained": int(retained),
    }


def coefficient_mask(config, model=None):
    """Boolean keep-mask in packed ``(T, H, W)`` coefficient layout.

    Requires power-of-two width, height and window.
    """
    W, H, T = config.width, config.height, config.temporal_window
    if not (is_power_of_two(W) and is_power_of_two(H)):
        raise DomainError(f"enumeration needs power-of-two resolution, got {W}x{H}")
    ev = _Evaluator(model, config.luminance)
    subbands = spatial_subbands(W, H)
    n_spatial = len(subbands)
    cff = np.empty((H, W))
    h, w = H, W
    for j, shapes in enumerate(subbands, start=1):
        (ha, wd), (hd, wa), _ = shapes
        fs_values = band_fs_samples(spatial_fs_range(j, n_spatial, config.ppd),
                                    config.fs_samples)
        regions = [
            (slice(0, ha), slice(wa, w), ha, wd),
            (slice(ha, h), slice(0, wa), hd, wa),
            (slice(ha, h), slice(wa, w), hd, wd),
        ]
        for rs, cs, rows, cols in regions:
            if rows and cols:
                dy, dx = _level_distances(config, j, rows, cols)
                cff[rs, cs] = ev.band_cff(np.hypot(dy[:, None], dx[None, :]), fs_values)
        h, w = ha, wa
    dy, dx = _level_distances(config, n_spatial, 1, 1)
    fs_values = band_fs_samples(spatial_fs_range(0, n_spatial, config.ppd),
                                config.fs_samples)
    cff[0, 0] = ev.band_cff(np.hypot(dy, dx), fs_values)[0]

    visible = cff > 0
    mask = np.empty((T, H, W), dtype=bool)
    mask[0] = visible
    for k, ft_low, count in _temporal_thresholds(config):
        if k == 0:
            continue
        sl = slice(T // 2**k, T // 2 ** (k - 1))
        if config.mode is Mode.SPATIAL_ONLY:
            mask[sl] = visible
        else:
            mask[sl] = visible & ~(cff < ft_low)
    return mask


def _enumerated(config, model):
    mask = coefficient_mask(config, model)
    H, W, T = config.height, config.width, config.temporal_window
    # label every packed position with its band to build the retention table
    s_label = np.zeros((H, W), dtype=int)
    h, w = H, W
    for j, shapes in enumerate(spatial_subbands(W, H), start=1):
        (ha, _), (_, wa), _ = shapes
        s_label[:h, :w] = j
        h, w = ha, wa
    s_label[0, 0] = 0
    t_label = np.zeros(T, dtype=int)
    for k in range(1, _axis_levels(T) + 1):
        t_label[T // 2**k:T // 2 ** (k - 1)] = k
    per_band = []
    for band in band_layout(config):
        sel = (t_label == band.temporal_level)[:, None, None] & \
              (s_label == band.spatial_level)[None, :, :]
        per_band.append(_band_row(band, int(mask[sel].sum())))
    return _report(config, per_band)


def retained_count(config, model=None, threads=1):
    """Count retained coefficients per band; returns a :class:`GainReport`."""
    if config.counting is Counting.ENUMERATED:
        return _enumerated(config, model)
    return _analytic(config, model, threads)


def gain_sweep(base, fov_list, model=None, modes=None, threads=1):
    """One row per (horizontal FOV, mode) with the vertical FOV at 165:135."""
    modes = [base.mode] if modes is None else [Mode(m) for m in modes]
    rows = []
    for fov_h in fov_list:
        for mode in modes:
            cfg = replace(base, fov_h=float(fov_h), fov_v=float(fov_h) * ASPECT, mode=mode)
            report = retained_count(cfg, model, threads)
            rows.append({
                "fov_h_deg": cfg.fov_h, "fov_v_deg": cfg.fov_v, "ppd": cfg.ppd,
                "framerate_hz": cfg.framerate, "mode": mode.value,
                "total_coeffs": report.total, "retained_coeffs": report.retained,
                "gain": report.gain,
            })
    return rows


SWEEP_COLUMNS = ("fov_h_deg", "fov_v_deg", "ppd", "framerate_hz", "mode",
                 "total_coeffs", "retained_coeffs", "gain")


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def sweep_csv_text(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in SWEEP_COLUMNS])
    return buf.getvalue()


def write_sweep_csv(rows, path):
    Path(path).write_text(sweep_csv_text(rows))


# ---------------------------------------------------------------------------
# Video filtering
# ---------------------------------------------------------------------------


def _next_pow2(n):
    return 1 << (int(n) - 1).bit_length()


class FoveatedWaveletFilter(BaseEstimator, TransformerMixin):
    """Zero perceptually invisible wavelet coefficients of a video.

    Input arrays have shape ``(frames, height, width)``. Spatial axes are
    edge-padded to powers of two and the time axis to a multiple of the
    analysis window; output is cropped back to the input shape. ``gaze`` is
    an offset in degrees from the center of the unpadded frame.
    """

    def __init__(self, ppd=60.0, framerate=200.0, temporal_window=128,
                 mode="spatioTemporal", gaze=(0.0, 0.0), luminance=380.0,
                 model=None, fs_samples=5):
        self.ppd = ppd
        self.framerate = framerate
        self.temporal_window = temporal_window
        self.mode = mode
        self.gaze = gaze
        self.luminance = luminance
        self.model = model
        self.fs_samples = fs_samples

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 3 or min(X.shape) < 1:
            raise DomainError("video arrays have shape (frames, height, width)")
        return X

    def fit(self, X, y=None):
        X = self._check(X)
        T, H, W = X.shape
        Hp, Wp = _next_pow2(H), _next_pow2(W)
        window = min(int(self.temporal_window), max(_next_pow2(T), 2))
        # keep the gaze anchored to the center of the unpadded frame
        gx = W / 2.0 - Wp / 2.0
        gy = H / 2.0 - Hp / 2.0
        gaze = (gx / self.ppd + self.gaze[0], -gy / self.ppd + self.gaze[1])
        self.config_ = AnalysisConfig(
            ppd=self.ppd, fov_h=Wp / self.ppd, fov_v=Hp / self.ppd,
            framerate=self.framerate, temporal_window=window, gaze=gaze,
            luminance=self.luminance, mode=self.mode, counting="enumerated",
            fs_samples=self.fs_samples,
        )
        self.mask_ = coefficient_mask(self.config_, self.model)
        self.input_shape_ = X.shape
        self.padding_ = {"height": Hp - H, "width": Wp - W}
        return self

    def transform(self, X):
        X = self._check(X)
        if X.shape[1:] != self.input_shape_[1:]:
            raise DomainError(f"frame shape {X.shape[1:]} differs from the fitted "
                              f"{self.input_shape_[1:]}")
        T, H, W = X.shape
        window = self.config_.temporal_window
        Hp, Wp = self.config_.height, self.config_.width
        n_windows = -(-T // window)
        padded = np.pad(X, ((0, n_windows * window - T), (0, Hp - H), (0, Wp - W)),
                        mode="edge")
        out = np.empty_like(padded)
        for i in range(n_windows):
            chunk = padded[i * window:(i + 1) * window]
            coeffs = video_forward(chunk)
            coeffs[~self.mask_] = 0.0
            out[i * window:(i + 1) * window] = video_inverse(coeffs)
        return out[:T, :H, :W]


def filter_video(frames, config, model=None):
    """Filter ``frames`` with the discard rule and geometry of ``config``."""
    flt = FoveatedWaveletFilter(
        ppd=config.ppd, framerate=config.framerate,
        temporal_window=config.temporal_window, mode=config.mode,
        gaze=config.gaze, luminance=config.luminance, model=model,
        fs_samples=config.fs_samples,
    )
    return flt.fit_transform(frames)


# ---------------------------------------------------------------------------
# Raw video I/O
# ---------------------------------------------------------------------------


def write_raw_video(path, frames, framerate):
    """Headerless 8-bit grayscale frames plus a ``<path>.json`` sidecar."""
    frames = np.asarray(frames, dtype=float)
    data = np.round(np.clip(frames, 0.0, 1.0) * 255).astype(np.uint8)
    Path(path).write_bytes(data.tobytes())
    T, H, W = frames.shape
    meta = {"width": W, "height": H, "frames": T, "framerate": framerate}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2) + "\n")


def read_raw_video(path, sidecar=None):
    meta = json.loads(Path(sidecar or str(path) + ".json").read_text())
    raw = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8)
    shape = (meta["frames"], meta["height"], meta["width"])
    if raw.size != math.prod(shape):
        raise DomainError(f"raw video holds {raw.size} bytes, sidecar implies {shape}")
    return raw.reshape(shape).astype(float) / 255.0, meta
