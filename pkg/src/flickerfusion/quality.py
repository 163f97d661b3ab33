"""Binary flicker-visibility predictor for perturbed videos.

A video is described by the Gabor perturbations added to it. A
perturbation is visible when its modulation frequency is below the model
CFF at its eccentricity and spatial frequency; a video is labelled
``bad`` as soon as any perturbation is visible.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from ._validation import DomainError
from .model import CffModel, CffParameters, psi, psi_hat

GOOD = "good"
BAD = "bad"


@dataclass(frozen=True)
class PerturbationDescriptor:
    """One Gabor perturbation.

    ``eccentricity`` is either a constant or a per-frame sequence (gaze
    moving during the video); the minimum is used. ``radius`` is kept as
    metadata and does not enter the prediction.
    """

    eccentricity: object
    fs: float
    ft: float
    radius: float = 0.0
    luminance: float = None

    def __post_init__(self):
        e = np.atleast_1d(np.asarray(self.eccentricity, dtype=float))
        if e.size == 0 or not np.all(np.isfinite(e)) or np.any(e < 0):
            raise DomainError("eccentricity must be finite and non-negative")
        if not (math.isfinite(self.ft) and self.ft > 0):
            raise DomainError("ft must be strictly positive")
        if not (math.isfinite(self.fs) and self.fs >= 0):
            raise DomainError("fs must be non-negative")
        if self.luminance is not None and not self.luminance > 0:
            raise DomainError("luminance must be strictly positive")
        ecc = float(e[0]) if np.ndim(self.eccentricity) == 0 else tuple(float(v) for v in e)
        object.__setattr__(self, "eccentricity", ecc)

    @property
    def effective_eccentricity(self):
        return float(np.min(self.eccentricity))

    def to_dict(self):
        e = self.eccentricity
        d = {"eccentricity": list(e) if isinstance(e, tuple) else e,
             "fs": self.fs, "ft": self.ft, "radius": self.radius}
        if self.luminance is not None:
            d["luminance"] = self.luminance
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(eccentricity=d["eccentricity"], fs=float(d["fs"]), ft=float(d["ft"]),
                       radius=float(d.get("radius", 0.0)), luminance=d.get("luminance"))
        except KeyError as exc:
            raise DomainError(f"descriptor is missing field {exc}") from None


@dataclass
class VideoVerdict:
    label: str
    visible: list = field(default_factory=list)
    cff: list = field(default_factory=list)

    def to_dict(self, descriptors=None):
        rows = []
        for i, (v, c) in enumerate(zip(self.visible, self.cff)):
            row = {"visible": bool(v), "cff_hz": float(c)}
            if descriptors is not None:
                row.update(descriptors[i].to_dict())
            rows.append(row)
        return {"label": self.label, "descriptors": rows}


def descriptor_cff(desc, model=None):
    """Model CFF for one descriptor (luminance-scaled when it has a luminance)."""
    model = _as_model(model)
    e = desc.effective_eccentricity
    if desc.luminance is None:
        return float(psi(e, desc.fs, model.params))
    return float(psi_hat(e, desc.fs, desc.luminance, model.params, model.luminance))


def predict_visibility(descriptors, model=None):
    """Verdict for one video given its perturbation descriptors."""
    descriptors = list(descriptors)
    if not descriptors:
        raise DomainError("at least one descriptor is required")
    for d in descriptors:
        if not isinstance(d, PerturbationDescriptor):
            raise DomainError(f"not a PerturbationDescriptor: {d!r}")
    cff = [descriptor_cff(d, model) for d in descriptors]
    visible = [d.ft < c for d, c in zip(descriptors, cff)]
    return VideoVerdict(label=BAD if any(visible) else GOOD, visible=visible, cff=cff)


def _as_model(model):
    if model is None:
        return CffModel()
    if isinstance(model, CffParameters):
        return CffModel(params=model)
    return model


def plcc(x, y):
    """Pearson linear correlation coefficient."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise DomainError("series lengths differ")
    if x.size < 3:
        raise DomainError("need at least 3 paired values")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DomainError("series contain non-finite values")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = dx @ dx, dy @ dy
    if sxx <= 0 or syy <= 0:
        raise DomainError("degenerate (zero) variance")
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


# ---------------------------------------------------------------------------
# JSON I/O
# ---------------------------------------------------------------------------


def load_descriptors(path):
    """Descriptor list from JSON: an array, or ``{"descriptors": [...]}``."""
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict):
        doc = doc.get("descriptors", [doc])
    if not isinstance(doc, list):
        raise DomainError("descriptor JSON must be an array")
    return [PerturbationDescriptor.from_dict(d) for d in doc]


def save_descriptors(path, descriptors):
    Path(path).write_text(json.dumps([d.to_dict() for d in descriptors], indent=2) + "\n")


def save_verdict(path, verdict, descriptors=None):
    Path(path).write_text(json.dumps(verdict.to_dict(descriptors), indent=2) + "\n")


class FlickerVisibilityClassifier(BaseEstimator, ClassifierMixin):
    """Per-perturbation visibility (1 = visible) from ``X = (e, fs, ft[, L])``.

    There is nothing to learn; ``fit`` only validates input and records
    the classes.
    """

    def __init__(self, model=None):
        self.model = model

    def _rows(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] not in (3, 4):
            raise DomainError("X columns are (e, fs, ft[, luminance])")
        return X

    def fit(self, X, y=None):
        self._rows(X)
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, X):
        """Margin ``cff - ft``; positive means visible."""
        X = self._rows(X)
        m = _as_model(self.model)
        if X.shape[1] == 4:
            c = psi_hat(X[:, 0], X[:, 1], X[:, 3], m.params, m.luminance)
        else:
            c = psi(X[:, 0], X[:, 1], m.params)
        return np.asarray(c, dtype=float) - X[:, 2]

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(int)
