"""Gabor test stimuli and frame rendering.

Angular display coordinates have their origin at the display center, x to
the right and y up. A stimulus center is expressed relative to the
fixation point, so ``|center|`` is the stimulus eccentricity. The carrier
phase is anchored at the fixation point (the carrier uses ``x``, not
``x - x0``) unless ``phase`` is set. ``temporal_phase`` offsets the
contrast modulation; with the default of 0 a flicker at exactly half the
frame rate samples to all-zero contrast.

Order-5 stimuli use sigma = 0.5 deg as catalogued even though the
``sigma = 0.7 / fs`` rule would give 0.35 deg.
"""

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ._validation import DomainError
from .model import DEFAULT_FS0

GAUSSIAN_SIGMA_CYCLES = 0.7


@dataclass(frozen=True)
class GaborStimulus:
    center: tuple = (0.0, 0.0)
    sigma: float = 1.0
    fs: float = 1.0
    theta: float = 0.0
    ft: float = 0.0
    order: int = 0
    phase: float = 0.0
    temporal_phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if len(self.center) != 2:
            raise DomainError("center must be a 2D position in degrees")
        if not self.sigma > 0:
            raise DomainError("sigma must be positive (use math.inf for unbounded)")
        if self.fs < 0 or self.ft < 0:
            raise DomainError("frequencies must be non-negative")
        if not 0 <= int(self.order) <= 5:
            raise DomainError("order must lie in 0..5")

    @property
    def eccentricity(self):
        return math.hypot(*self.center)

    @property
    def unbounded(self):
        return math.isinf(self.sigma)

    @property
    def analysis_fs(self):
        """Spatial frequency used for model evaluation (``fs0`` for order 0)."""
        return DEFAULT_FS0 if self.fs < DEFAULT_FS0 else self.fs

    @property
    def extent(self):
        """Localization uncertainty ``2 sigma`` in degrees."""
        return 2.0 * self.sigma

    def to_dict(self):
        d = asdict(self)
        d["center"] = list(self.center)
        if self.unbounded:
            d["sigma"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["sigma"] = float(d.get("sigma", 1.0))
        d["center"] = tuple(d.get("center", (0.0, 0.0)))
        return cls(**d)


@dataclass(frozen=True)
class DisplayGeometry:
    resolution: tuple = (1280, 720)
    fov: tuple = (80.0, 87.0)
    background: float = 0.5

    def __post_init__(self):
        if len(self.resolution) != 2 or len(self.fov) != 2:
            raise DomainError("resolution and fov are (horizontal, vertical) pairs")
        if min(self.resolution) <= 0 or min(self.fov) <= 0:
            raise DomainError("resolution and fov must be strictly positive")
        object.__setattr__(self, "resolution", tuple(int(r) for r in self.resolution))
        object.__setattr__(self, "fov", tuple(float(f) for f in self.fov))

    @property
    def degrees_per_pixel(self):
        return (self.fov[0] / self.resolution[0], self.fov[1] / self.resolution[1])

    def pixel_centers(self):
        """Angular (x, y) grids of pixel centers, each of shape ``(h, w)``."""
        w, h = self.resolution
        dx, dy = self.degrees_per_pixel
        xs = (np.arange(w) + 0.5) * dx - self.fov[0] / 2
        ys = self.fov[1] / 2 - (np.arange(h) + 0.5) * dy
        return np.meshgrid(xs, ys)

    def metadata(self):
        return {
            "resolution": list(self.resolution),
            "fov_deg": list(self.fov),
            "mapping": "uniform-angular",
            "degrees_per_pixel": list(self.degrees_per_pixel),
        }


def gabor_value(x, stim):
    r"""Gabor wavelet at retinal positions ``x`` (degrees, last axis of size 2).

    .. math:: g = \exp(-|x - x_0|^2 / 2\sigma^2)\cos(2\pi f_s\, x\cdot[\cos\theta, \sin\theta] + \phi)
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise DomainError("positions need a trailing axis of size 2")
    x0 = np.asarray(stim.center)
    if stim.unbounded:
        envelope = np.ones(x.shape[:-1])
    else:
        envelope = np.exp(-np.sum((x - x0) ** 2, axis=-1) / (2.0 * stim.sigma**2))
    th = math.radians(stim.theta)
    proj = x[..., 0] * math.cos(th) + x[..., 1] * math.sin(th)
    return envelope * np.cos(2.0 * math.pi * stim.fs * proj + stim.phase)


def contrast(t, ft, phase=0.0):
    return np.sin(2.0 * math.pi * ft * np.asarray(t, dtype=float) + phase)


def render_frame(t, stim, geom=DisplayGeometry(), gaze=(0.0, 0.0)):
    """Normalized frame ``background + 0.5 c(t) g(x)`` at time ``t`` seconds.

    ``gaze`` is the fixation point in display coordinates.
    """
    if t < 0:
        raise DomainError("time must be non-negative")
    xs, ys = geom.pixel_centers()
    pos = np.stack([xs - gaze[0], ys - gaze[1]], axis=-1)
    amp = min(geom.background, 1.0 - geom.background)
    c = float(contrast(t, stim.ft, stim.temporal_phase))
    frame = geom.background + amp * c * gabor_value(pos, stim)
    return np.clip(frame, 0.0, 1.0)


def render_sequence(stim, geom=DisplayGeometry(), framerate=360.0, n_frames=None,
                    gaze=(0.0, 0.0)):
    """Frames ``(n, h, w)`` sampled at ``framerate``; one flicker period by default."""
    if n_frames is None:
        if stim.ft <= 0:
            raise DomainError("n_frames is required for a static stimulus")
        n_frames = max(int(round(framerate / stim.ft)), 1)
    return np.stack([render_frame(i / framerate, stim, geom, gaze) for i in range(n_frames)])


# (order, fs, sigma, eccentricities)
_CATALOG_ROWS = (
    (0, 0.0, math.inf, (0.0,)),
    (1, 0.011, 63.0, (0.0,)),
    (2, 0.041, 17.2, (0.0, 19.2)),
    (3, 0.154, 4.6, (0.0, 24.5, 48.2)),
    (4, 0.571, 1.2, (0.0, 14.8, 29.2, 42.7, 55.0)),
    (5, 2.000, 0.5, (0.0, 12.3, 24.4, 35.9, 46.8, 56.8)),
)


def stimulus_catalog(theta=0.0, ft=0.0):
    """The 18 measurement stimuli, centered along the temporal horizontal axis."""
    return [
        GaborStimulus(center=(e, 0.0), sigma=sigma, fs=fs, theta=theta, ft=ft, order=order)
        for order, fs, sigma, eccs in _CATALOG_ROWS
        for e in eccs
    ]


def pixel_to_eccentricity(px, geom=DisplayGeometry(), gaze=(0.0, 0.0)):
    """Eccentricity (degrees) of pixel center ``px = (col, row)`` for fixation ``gaze``.

    ``px`` may be an array with a trailing axis of size 2.
    """
    px = np.asarray(px, dtype=float)
    w, h = geom.resolution
    col, row = px[..., 0], px[..., 1]
    if np.any((col < 0) | (col > w - 1) | (row < 0) | (row > h - 1)):
        raise DomainError("pixel outside the display resolution")
    dx, dy = geom.degrees_per_pixel
    x = (col + 0.5) * dx - geom.fov[0] / 2
    y = geom.fov[1] / 2 - (row + 0.5) * dy
    out = np.hypot(x - gaze[0], y - gaze[1])
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------


def write_pgm(path, frame, sixteen_bit=False):
    """Write a normalized frame as binary PGM (8-bit, or 16-bit big-endian)."""
    frame = np.asarray(frame, dtype=float)
    if frame.ndim != 2:
        raise DomainError("PGM frames are 2D")
    maxval = 65535 if sixteen_bit else 255
    data = np.round(np.clip(frame, 0.0, 1.0) * maxval)
    data = data.astype(">u2" if sixteen_bit else np.uint8)
    h, w = frame.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path):
    """Read a binary PGM written by :func:`write_pgm`; returns values in [0, 1]."""
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end].decode("ascii"))
        pos = end
    pos += 1
    if tokens[0] != "P5":
        raise DomainError("only binary PGM (P5) is supported")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = ">u2" if maxval > 255 else np.uint8
    data = np.frombuffer(raw, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return data.astype(float) / maxval


def save_stimuli(path, stimuli):
    Path(path).write_text(json.dumps([s.to_dict() for s in stimuli], indent=2) + "\n")


def load_stimuli(path):
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict):
        doc = [doc]
    return [GaborStimulus.from_dict(d) for d in doc]
