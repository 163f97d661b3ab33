"""Closed-form critical flicker fusion (CFF) model.

All functions broadcast over numpy arrays. Units are degrees of visual
angle for eccentricity, cycles per degree (cpd) for spatial frequency,
Hz for temporal frequency, cd/m^2 for luminance and Trolands (Td) for
retinal illuminance.

The CFF surface is

    psi(e, fs) = max(0, A(tau) + B(tau) * zeta * e + C(tau) * zeta * e**2)

with quadratics A, B, C in ``tau = max(log10(fs / fs0), 0)`` and
``zeta = exp(p9 * tau) - 1``, so eccentricity has no effect at or below
the cut-off frequency ``fs0``.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from ._validation import (
    DomainError,
    as_float_array,
    check_nonnegative,
    check_positive,
    scalar_or_array,
)

DEFAULT_FS0 = 0.0055
DEFAULT_ADAPTING_AREA = 80.0 * 87.0
REFERENCE_LUMINANCE = 380.0

#: Retinal illuminance (Td) reported for the three measured display
#: luminances. Direct evaluation of the pupil formula does not reproduce
#: these, so they are kept as constants.
PUBLISHED_ILLUMINANCE = {3.0: 67.3, 23.9: 321.0, 380.0: 1488.0}


class Variant(str, Enum):
    CONSERVATIVE = "conservative"
    RELAXED = "relaxed"
    FULL = "full"


@dataclass(frozen=True)
class CffParameters:
    """Coefficients ``p0..p9`` of the CFF surface plus the cut-off ``fs0``."""

    p: tuple
    fs0: float = DEFAULT_FS0
    variant: Variant = Variant.FULL

    def __post_init__(self):
        p = tuple(float(v) for v in self.p)
        if len(p) != 10:
            raise DomainError(f"expected 10 coefficients, got {len(p)}")
        if not all(math.isfinite(v) for v in p):
            raise DomainError("coefficients must be finite")
        if not self.fs0 > 0:
            raise DomainError("fs0 must be strictly positive")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "fs0", float(self.fs0))
        object.__setattr__(self, "variant", Variant(self.variant))

    @property
    def array(self):
        return np.array(self.p)

    def replace(self, p=None, variant=None):
        return CffParameters(
            p=self.p if p is None else tuple(p),
            fs0=self.fs0,
            variant=self.variant if variant is None else variant,
        )


@dataclass(frozen=True)
class LuminanceScaling:
    """Eccentricity-dependent Ferry-Porter slope ``q0..q2`` around ``l0``."""

    q: tuple = (5.71e-6, -1.78e-4, 0.204)
    l0: float = 1488.0

    def __post_init__(self):
        q = tuple(float(v) for v in self.q)
        if len(q) != 3:
            raise DomainError(f"expected 3 slope coefficients, got {len(q)}")
        if not self.l0 > 0:
            raise DomainError("l0 must be strictly positive")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "l0", float(self.l0))


@dataclass(frozen=True)
class AcuityParameters:
    """Parameters of the eccentricity-dependent acuity limit."""

    scale: float = math.log(64.0)
    e2: float = 2.3
    slope: float = 0.106

    def __post_init__(self):
        for name in ("scale", "e2", "slope"):
            if not getattr(self, name) > 0:
                raise DomainError(f"acuity {name} must be strictly positive")


@dataclass(frozen=True)
class PhotometricContext:
    luminance: float = REFERENCE_LUMINANCE
    area: float = DEFAULT_ADAPTING_AREA

    def __post_init__(self):
        if self.luminance < 0:
            raise DomainError("luminance must be non-negative")
        if not self.area > 0:
            raise DomainError("adapting area must be strictly positive")

    def pupil_diameter(self):
        return pupil_diameter(self.luminance, self.area)

    def retinal_illuminance(self):
        return retinal_illuminance(self.luminance, self.area)


CONSERVATIVE = CffParameters(
    p=(-4.08, -10.1, 94.4, 0.0484, -0.280, 0.431, -0.00140, 0.00679, -0.00912, 1.56),
    variant=Variant.CONSERVATIVE,
)
RELAXED = CffParameters(
    p=(-4.06, -10.1, 94.3, 0.0464, -0.282, 0.430, -0.00129, 0.00672, -0.00929, 1.58),
    variant=Variant.RELAXED,
)
FULL = CffParameters(
    p=(-4.06, -10.1, 94.3, 0.0440, -0.281, 0.435, -0.00111, 0.00613, -0.00877, 1.58),
    variant=Variant.FULL,
)
PRESETS = {v.variant.value: v for v in (CONSERVATIVE, RELAXED, FULL)}
DEFAULT_LUMINANCE_SCALING = LuminanceScaling()
DEFAULT_ACUITY = AcuityParameters()


def get_preset(name):
    try:
        return PRESETS[Variant(name).value]
    except ValueError:
        raise DomainError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# ---------------------------------------------------------------------------
# CFF surface
# ---------------------------------------------------------------------------


def tau(fs, params=FULL):
    """Log10 spatial frequency above the cut-off, clamped at zero."""
    fs = check_positive(fs, "spatial frequency")
    out = np.maximum(np.log10(fs) - math.log10(params.fs0), 0.0)
    return scalar_or_array(out)


def zeta(fs, params=FULL):
    """Eccentricity gate ``exp(p9 * tau) - 1``; zero at or below ``fs0``."""
    return scalar_or_array(np.expm1(params.p[9] * np.asarray(tau(fs, params))))


def eccentricity_polynomial(fs, params=FULL):
    """Coefficients ``(a, b, c)`` with ``psi_unclamped = a + b*e + c*e**2``.

    Each coefficient has the shape of ``fs``.
    """
    p = params.p
    t = np.asarray(tau(fs, params))
    z = np.expm1(p[9] * t)
    a = p[0] * t**2 + p[1] * t + p[2]
    b = (p[3] * t**2 + p[4] * t + p[5]) * z
    c = (p[6] * t**2 + p[7] * t + p[8]) * z
    return a, b, c


def psi_unclamped(e, fs, params=FULL):
    e = check_nonnegative(e, "eccentricity")
    a, b, c = eccentricity_polynomial(fs, params)
    return scalar_or_array(a + (b + c * e) * e)


def psi(e, fs, params=FULL):
    """Critical flicker fusion frequency in Hz at eccentricity ``e``.

    Parameters
    ----------
    e : float or array_like
        Eccentricity in degrees, ``e >= 0``.
    fs : float or array_like
        Spatial frequency in cpd, ``fs > 0``.
    params : CffParameters
        Model coefficients; defaults to the full (acuity-extended) preset.

    Returns
    -------
    float or ndarray
        Non-negative CFF in Hz, broadcast over ``e`` and ``fs``.
    """
    return scalar_or_array(np.maximum(psi_unclamped(e, fs, params), 0.0))


def peak_eccentricity(fs, params=FULL):
    """Vertex ``-b / (2c)`` of the eccentricity quadratic at ``fs``.

    Returns ``nan`` where the quadratic has no interior maximum.
    """
    _, b, c = eccentricity_polynomial(fs, params)
    b, c = np.asarray(b, float), np.asarray(c, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        vertex = np.where(c < 0, -b / (2 * c), np.nan)
    return scalar_or_array(vertex)


# ---------------------------------------------------------------------------
# Acuity and photometry
# ---------------------------------------------------------------------------


def acuity_limit(e, acuity=DEFAULT_ACUITY):
    """Highest resolvable spatial frequency (cpd) at eccentricity ``e``."""
    e = check_nonnegative(e, "eccentricity")
    return scalar_or_array(acuity.scale * acuity.e2 / (acuity.slope * (e + acuity.e2)))


def pupil_diameter(luminance, area=DEFAULT_ADAPTING_AREA):
    """Pupil diameter in mm for a field of ``luminance`` over ``area`` deg^2."""
    luminance = check_nonnegative(luminance, "luminance")
    check_positive(area, "adapting area")
    x = (luminance * np.asarray(area, float) / 846.0) ** 0.41
    return scalar_or_array(7.75 - 5.75 * (x / (x + 2.0)))


def retinal_illuminance(luminance, area=DEFAULT_ADAPTING_AREA):
    """Retinal illuminance in Td, ``pi * d**2 / 4 * L``."""
    d = np.asarray(pupil_diameter(luminance, area))
    return scalar_or_array(math.pi * d**2 / 4.0 * np.asarray(luminance, float))


def effective_illuminance(luminance, area=DEFAULT_ADAPTING_AREA):
    """Retinal illuminance, preferring the published value for measured luminances.

    The three luminances of the measurement display map to their reported
    Td values; anything else is evaluated with :func:`retinal_illuminance`.
    """
    lum = as_float_array(luminance, "luminance")
    out = np.asarray(retinal_illuminance(lum, area), dtype=float).copy()
    if np.isclose(area, DEFAULT_ADAPTING_AREA):
        for lum_ref, td in PUBLISHED_ILLUMINANCE.items():
            out = np.where(lum == lum_ref, td, out)
    return scalar_or_array(out)


def luminance_slope(e, fs, params=FULL, lum=DEFAULT_LUMINANCE_SCALING):
    """Ferry-Porter slope ``zeta(fs) * (q0 e^2 + q1 e) + q2``."""
    e = check_nonnegative(e, "eccentricity")
    q0, q1, q2 = lum.q
    return scalar_or_array(np.asarray(zeta(fs, params)) * (q0 * e**2 + q1 * e) + q2)


def luminance_factor(e, fs, illuminance, params=FULL, lum=DEFAULT_LUMINANCE_SCALING):
    illuminance = check_positive(illuminance, "retinal illuminance")
    s = np.asarray(luminance_slope(e, fs, params, lum))
    return scalar_or_array(s * np.log10(illuminance / lum.l0) + 1.0)


def psi_hat_unclamped(e, fs, luminance, params=FULL, lum=DEFAULT_LUMINANCE_SCALING,
                      ctx=None, illuminance=None):
    """Luminance-scaled CFF before the final clamp at zero.

    Linear in ``log10(illuminance)`` for fixed ``(e, fs)``. Without an
    explicit ``illuminance`` the value comes from :func:`effective_illuminance`.
    """
    if illuminance is None:
        area = DEFAULT_ADAPTING_AREA if ctx is None else ctx.area
        illuminance = effective_illuminance(luminance, area)
    factor = np.asarray(luminance_factor(e, fs, illuminance, params, lum))
    return scalar_or_array(factor * np.asarray(psi(e, fs, params)))


def psi_hat(e, fs, luminance, params=FULL, lum=DEFAULT_LUMINANCE_SCALING,
            ctx=None, illuminance=None):
    """CFF in Hz at display luminance ``luminance`` (cd/m^2).

    ``illuminance`` (Td) overrides the value derived from the luminance;
    ``ctx`` supplies the adapting area otherwise.
    """
    pre = psi_hat_unclamped(e, fs, luminance, params, lum, ctx, illuminance)
    return scalar_or_array(np.maximum(pre, 0.0))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CffModel:
    """Bundle of every parameter record needed to evaluate the model."""

    params: CffParameters = FULL
    luminance: LuminanceScaling = field(default=DEFAULT_LUMINANCE_SCALING)
    acuity: AcuityParameters = field(default=DEFAULT_ACUITY)

    def to_dict(self):
        return {
            "variant": self.params.variant.value,
            "p": list(self.params.p),
            "fs0": self.params.fs0,
            "q": list(self.luminance.q),
            "l0": self.luminance.l0,
            "acuity": asdict(self.acuity),
        }

    @classmethod
    def from_dict(cls, doc):
        missing = {"variant", "p", "fs0"} - set(doc)
        if missing:
            raise DomainError(f"model document missing keys: {sorted(missing)}")
        params = CffParameters(p=tuple(doc["p"]), fs0=doc["fs0"], variant=doc["variant"])
        lum = LuminanceScaling(
            q=tuple(doc.get("q", DEFAULT_LUMINANCE_SCALING.q)),
            l0=doc.get("l0", DEFAULT_LUMINANCE_SCALING.l0),
        )
        acuity = AcuityParameters(**doc.get("acuity", asdict(DEFAULT_ACUITY)))
        return cls(params, lum, acuity)

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    @classmethod
    def preset(cls, name):
        return cls(params=get_preset(name))


def load_model(path):
    return CffModel.from_json(Path(path).read_text())


def save_model(model, path):
    Path(path).write_text(model.to_json() + "\n")
