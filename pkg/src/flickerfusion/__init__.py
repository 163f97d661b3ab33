"""Eccentricity-dependent critical flicker fusion (CFF) model and tools."""

__version__ = "0.1.0"

from ._validation import DomainError
from .model import (
    CONSERVATIVE,
    FULL,
    PRESETS,
    RELAXED,
    AcuityParameters,
    CffModel,
    CffParameters,
    LuminanceScaling,
    PhotometricContext,
    Variant,
    acuity_limit,
    effective_illuminance,
    get_preset,
    load_model,
    peak_eccentricity,
    psi,
    psi_hat,
    pupil_diameter,
    retinal_illuminance,
    save_model,
)
from .stimulus import DisplayGeometry, GaborStimulus, render_frame, stimulus_catalog
from .fitting import (
    ConvergenceError,
    CffRegressor,
    FitConfig,
    FitResult,
    LuminanceRegressor,
    ThresholdSample,
    UnderdeterminedError,
    fit_cff,
    fit_luminance,
)
from .wavelet import haar_forward, haar_inverse, video_forward, video_inverse
from .bandwidth import (
    AnalysisConfig,
    FoveatedWaveletFilter,
    GainReport,
    band_layout,
    filter_video,
    gain_sweep,
    retained_count,
)
from .quality import (
    FlickerVisibilityClassifier,
    PerturbationDescriptor,
    VideoVerdict,
    plcc,
    predict_visibility,
)
