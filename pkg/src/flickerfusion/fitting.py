"""Penalized least-squares fitting of the CFF model to threshold data.

Each measured threshold is localized only to its stimulus extent
``[e - u, e + u]`` (clipped at zero). The loss, per fit mode:

conservative
    squared error between the minimum of psi over the extent and the
    measured CFF, plus a hinge penalty (weight ``under``) wherever psi
    drops below it: psi may not be lower than the measurement anywhere
    the stimulus could have been detected.
relaxed
    squared error at the nominal eccentricity, plus an optional hinge
    penalty (weight ``over``) wherever psi exceeds the measurement over
    the extent. ``over`` defaults to 0: with thresholds sampled at the
    stimulus centers the bound biases the surface downwards by several Hz.
full
    relaxed loss plus a squared penalty on ``psi(e, acuity_limit(e))``.

Samples whose flicker was never visible enter as ``w_zero * psi**2`` at
their nominal position. psi is evaluated on ``extent_points`` uniformly
spaced eccentricities over every extent.
"""

import csv
import json
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._lm import levenberg_marquardt
from ._validation import DomainError
from .model import (
    DEFAULT_ACUITY,
    DEFAULT_FS0,
    DEFAULT_LUMINANCE_SCALING,
    CffParameters,
    LuminanceScaling,
    PhotometricContext,
    Variant,
    acuity_limit,
    effective_illuminance,
    get_preset,
    psi,
    zeta,
)

N_PARAMS = 10
DEFAULT_WEIGHTS = {"under": 10.0, "over": 0.0, "zero": 10.0, "acuity": 5.0}


class UnderdeterminedError(DomainError):
    """Too few finite thresholds to constrain the model."""


class ConvergenceError(RuntimeError):
    """The optimizer hit its iteration limit; ``result`` holds the best fit."""

    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class ThresholdSample:
    e: float
    fs: float
    cff: float = None
    visible: bool = True
    extent: float = None
    luminance: float = None
    subject: str = None

    def __post_init__(self):
        if self.e < 0 or not self.fs > 0:
            raise DomainError(f"invalid sample location e={self.e}, fs={self.fs}")
        if self.visible:
            if self.cff is None or not math.isfinite(self.cff):
                raise DomainError("visible samples need a finite cff")
        elif self.cff is not None and not math.isnan(self.cff):
            raise DomainError("invisible samples carry no cff")
        else:
            object.__setattr__(self, "cff", None)
        if self.extent is None:
            object.__setattr__(self, "extent", 1.4 / self.fs)
        elif self.extent < 0:
            raise DomainError("extent must be non-negative")


@dataclass
class FitConfig:
    mode: Variant = Variant.RELAXED
    penalty_weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    max_iterations: int = 2000
    convergence_tol: float = 1e-9
    initialization: str = "table3"
    seed: int = 0
    n_starts: int = 8
    acuity_grid: tuple = tuple(float(e) for e in range(0, 61, 2))
    extent_points: int = 9
    extent_limit: float = None
    aggregate: bool = True
    n_jobs: int = 1

    def __post_init__(self):
        self.mode = Variant(self.mode)
        weights = dict(DEFAULT_WEIGHTS)
        weights.update(self.penalty_weights or {})
        if any(w < 0 for w in weights.values()):
            raise DomainError("penalty weights must be non-negative")
        self.penalty_weights = weights
        if self.convergence_tol <= 0 or self.max_iterations <= 0:
            raise DomainError("tolerance and iteration limit must be positive")
        if self.initialization not in ("table3", "multistart"):
            raise DomainError("initialization is 'table3' or 'multistart'")
        if self.extent_points < 1:
            raise DomainError("extent_points must be at least 1")


@dataclass
class FitResult:
    params: CffParameters
    adjusted_r2: float
    final_loss: float
    residuals: np.ndarray
    n_iter: int = 0
    converged: bool = True
    loss_history: list = field(default_factory=list)
    start_index: int = 0

    def report(self):
        return {
            "adjustedR2": None if math.isnan(self.adjusted_r2) else self.adjusted_r2,
            "finalLoss": self.final_loss,
            "iterations": self.n_iter,
            "residuals": [float(r) for r in self.residuals],
        }


def adjusted_r2(predicted, observed, num_params=N_PARAMS):
    """Degrees-of-freedom adjusted coefficient of determination."""
    predicted = np.asarray(predicted, dtype=float)
    observed = np.asarray(observed, dtype=float)
    n = observed.size
    if predicted.shape != observed.shape:
        raise DomainError("predicted and observed differ in length")
    if n <= num_params + 1:
        raise DomainError(f"need more than {num_params + 1} observations, got {n}")
    ss_tot = np.sum((observed - observed.mean()) ** 2)
    if ss_tot <= 0:
        raise DomainError("observed values have zero variance")
    r2 = 1.0 - np.sum((observed - predicted) ** 2) / ss_tot
    return float(1.0 - (1.0 - r2) * (n - 1) / (n - num_params - 1))


# ---------------------------------------------------------------------------
# Model gradient
# ---------------------------------------------------------------------------


def psi_jacobian(e, fs, p, fs0=DEFAULT_FS0):
    """Unclamped psi and its gradient w.r.t. ``p0..p9`` at points ``(e, fs)``.

    Returns ``(value, jac)`` with shapes ``(n,)`` and ``(n, 10)``.
    """
    e = np.asarray(e, dtype=float)
    t = np.maximum(np.log10(np.asarray(fs, dtype=float) / fs0), 0.0)
    ez = np.exp(p[9] * t)
    z = ez - 1.0
    t2 = t * t
    quad_b = p[3] * t2 + p[4] * t + p[5]
    quad_c = p[6] * t2 + p[7] * t + p[8]
    value = p[0] * t2 + p[1] * t + p[2] + quad_b * z * e + quad_c * z * e**2
    ze, ze2 = z * e, z * e**2
    jac = np.stack(
        [t2, t, np.ones_like(t), t2 * ze, t * ze, ze, t2 * ze2, t * ze2, ze2,
         (quad_b * e + quad_c * e**2) * t * ez],
        axis=-1,
    )
    return value, jac


# ---------------------------------------------------------------------------
# Loss assembly
# ---------------------------------------------------------------------------


class _Problem:
    """Residual vector and Jacobian for one fit, with points precomputed."""

    def __init__(self, e, fs, cff, visible, extent, config, fs0=DEFAULT_FS0):
        self.config = config
        self.fs0 = fs0
        w = config.penalty_weights
        self.sw_over = math.sqrt(w["over"])
        self.sw_under = math.sqrt(w["under"])
        self.sw_zero = math.sqrt(w["zero"])
        self.sw_acuity = math.sqrt(w["acuity"])
        vis = np.asarray(visible, dtype=bool)
        self.cff = np.asarray(cff, dtype=float)[vis]
        self.e_vis, self.fs_vis = e[vis], fs[vis]
        self.e_inv, self.fs_inv = e[~vis], fs[~vis]
        k = config.extent_points
        lo = np.maximum(e[vis] - extent[vis], 0.0)
        hi = e[vis] + extent[vis]
        if config.extent_limit is not None:
            hi = np.minimum(hi, max(config.extent_limit, 0.0))
            hi = np.maximum(hi, lo)
        frac = np.linspace(0.0, 1.0, k) if k > 1 else np.array([0.5])
        self.grid_e = lo[:, None] + (hi - lo)[:, None] * frac[None, :]
        self.grid_fs = np.broadcast_to(fs[vis][:, None], self.grid_e.shape)
        self.use_acuity = config.mode is Variant.FULL
        if self.use_acuity:
            self.ac_e = np.asarray(config.acuity_grid, dtype=float)
            self.ac_fs = np.asarray(acuity_limit(self.ac_e, DEFAULT_ACUITY))

    def _clamped(self, e, fs, p):
        v, J = psi_jacobian(e, fs, p, self.fs0)
        active = v > 0
        return np.where(active, v, 0.0), J * active[..., None]

    def evaluate(self, p):
        """Return residuals and Jacobian."""
        res, jacs = [], []
        n_vis, k = self.grid_e.shape
        gv, gJ = self._clamped(self.grid_e.ravel(), self.grid_fs.ravel(), p)
        gv = gv.reshape(n_vis, k)
        gJ = gJ.reshape(n_vis, k, N_PARAMS)
        target = self.cff[:, None]
        if self.config.mode is Variant.CONSERVATIVE:
            idx = np.argmin(gv, axis=1)
            rows = np.arange(n_vis)
            res.append(gv[rows, idx] - self.cff)
            jacs.append(gJ[rows, idx])
            under = gv < target
            res.append((self.sw_under * np.where(under, gv - target, 0.0)).ravel())
            jacs.append((self.sw_under * gJ * under[..., None]).reshape(-1, N_PARAMS))
        else:
            nv, nJ = self._clamped(self.e_vis, self.fs_vis, p)
            res.append(nv - self.cff)
            jacs.append(nJ)
            if self.sw_over > 0:
                over = gv > target
                res.append((self.sw_over * np.where(over, gv - target, 0.0)).ravel())
                jacs.append((self.sw_over * gJ * over[..., None]).reshape(-1, N_PARAMS))
        if self.e_inv.size:
            iv, iJ = self._clamped(self.e_inv, self.fs_inv, p)
            res.append(self.sw_zero * iv)
            jacs.append(self.sw_zero * iJ)
        if self.use_acuity:
            av, aJ = self._clamped(self.ac_e, self.ac_fs, p)
            res.append(self.sw_acuity * av)
            jacs.append(self.sw_acuity * aJ)
        return np.concatenate(res), np.concatenate(jacs)

    def residuals(self, p):
        return self.evaluate(p)[0]

    def jacobian(self, p):
        return self.evaluate(p)[1]


def _starting_points(config):
    base = np.array(get_preset(config.mode).p)
    if config.initialization == "table3":
        return [base]
    rng = np.random.default_rng(config.seed)
    starts = [base]
    for _ in range(max(config.n_starts, 1) - 1):
        starts.append(base * (1.0 + 0.1 * rng.standard_normal(base.size)))
    return starts


def _fit_arrays(e, fs, cff, visible, extent, config):
    visible = np.asarray(visible, dtype=bool)
    n_finite = int(np.sum(visible & np.isfinite(cff)))
    if n_finite < N_PARAMS + 1:
        raise UnderdeterminedError(
            f"need at least {N_PARAMS + 1} finite thresholds, got {n_finite}")
    problem = _Problem(e, fs, cff, visible, extent, config)
    starts = _starting_points(config)

    def run(x0):
        return levenberg_marquardt(problem.residuals, problem.jacobian, x0,
                                   max_iter=config.max_iterations,
                                   tol=config.convergence_tol)

    if config.n_jobs > 1 and len(starts) > 1:
        with ThreadPoolExecutor(config.n_jobs) as pool:
            runs = list(pool.map(run, starts))
    else:
        runs = [run(x0) for x0 in starts]
    # lowest loss wins; ties go to the earliest start
    best_idx = min(range(len(runs)), key=lambda i: (runs[i].loss, i))
    best = runs[best_idx]

    params = CffParameters(p=tuple(best.x), fs0=DEFAULT_FS0, variant=config.mode)
    pred = np.asarray(psi(e, fs, params))
    obs = np.where(visible, cff, 0.0)
    try:
        r2 = adjusted_r2(pred[visible], np.asarray(cff)[visible], N_PARAMS)
    except DomainError:
        r2 = float("nan")
    result = FitResult(
        params=params,
        adjusted_r2=r2,
        final_loss=best.loss,
        residuals=pred - obs,
        n_iter=best.n_iter,
        converged=best.converged,
        loss_history=best.history,
        start_index=best_idx,
    )
    if not best.converged:
        raise ConvergenceError(
            f"no convergence within {config.max_iterations} iterations", result)
    return result


def aggregate_samples(samples):
    """Average samples per ``(e, fs, luminance)`` across subjects.

    A location counts as visible if any subject saw flicker there; its CFF
    is the mean over the subjects who did.
    """
    groups = defaultdict(list)
    for s in samples:
        groups[(s.e, s.fs, s.luminance)].append(s)
    out = []
    for (e, fs, lum), group in groups.items():
        seen = [s.cff for s in group if s.visible]
        out.append(ThresholdSample(
            e=e, fs=fs,
            cff=float(np.mean(seen)) if seen else None,
            visible=bool(seen),
            extent=float(np.mean([s.extent for s in group])),
            luminance=lum,
        ))
    return out


def _sample_arrays(samples):
    e = np.array([s.e for s in samples], dtype=float)
    fs = np.array([s.fs for s in samples], dtype=float)
    cff = np.array([np.nan if s.cff is None else s.cff for s in samples], dtype=float)
    visible = np.array([s.visible for s in samples], dtype=bool)
    extent = np.array([s.extent for s in samples], dtype=float)
    return e, fs, cff, visible, extent


def synthetic_thresholds(params=None, noise=1.0, seed=0,
                         invisible=((46.8, 2.0), (56.8, 2.0))):
    """Thresholds at the measurement-stimulus locations drawn from ``params``.

    Gaussian noise with standard deviation ``noise`` Hz is added to each
    CFF; locations listed in ``invisible`` are emitted as never-visible.
    """
    from .stimulus import stimulus_catalog

    params = get_preset("full") if params is None else params
    rng = np.random.default_rng(seed)
    hidden = {(float(e), float(fs)) for e, fs in invisible}
    out = []
    for st in stimulus_catalog():
        e, fs = st.eccentricity, st.analysis_fs
        if (e, fs) in hidden:
            out.append(ThresholdSample(e=e, fs=fs, visible=False, subject="synthetic"))
            continue
        cff = float(psi(e, fs, params)) + float(rng.normal(0.0, noise))
        out.append(ThresholdSample(e=e, fs=fs, cff=cff, subject="synthetic"))
    return out


def fit_cff(samples, config=None):
    """Fit CFF parameters to threshold samples; returns a :class:`FitResult`."""
    config = FitConfig() if config is None else config
    if config.aggregate:
        samples = aggregate_samples(samples)
    return _fit_arrays(*_sample_arrays(samples), config)


class CffRegressor(BaseEstimator, RegressorMixin):
    """Scikit-learn estimator around :func:`fit_cff`.

    ``X`` has columns ``(e_deg, fs_cpd)`` and optionally ``extent_deg``;
    ``y`` holds thresholds in Hz, with NaN (or ``visible=False``) marking
    locations where flicker was never seen.

    Examples
    --------
    >>> from flickerfusion.fitting import CffRegressor
    >>> reg = CffRegressor(mode="relaxed").fit(X, y)  # doctest: +SKIP
    >>> reg.predict([[20.0, 1.0]])  # doctest: +SKIP
    """

    def __init__(self, mode="relaxed", under_weight=10.0, over_weight=0.0,
                 zero_weight=10.0, acuity_weight=5.0, max_iter=2000, tol=1e-9,
                 initialization="table3", n_starts=8, random_state=0, extent_points=9,
                 extent_limit=None, n_jobs=1):
        self.mode = mode
        self.under_weight = under_weight
        self.over_weight = over_weight
        self.zero_weight = zero_weight
        self.acuity_weight = acuity_weight
        self.max_iter = max_iter
        self.tol = tol
        self.initialization = initialization
        self.n_starts = n_starts
        self.random_state = random_state
        self.extent_points = extent_points
        self.extent_limit = extent_limit
        self.n_jobs = n_jobs

    def _config(self):
        return FitConfig(
            mode=self.mode,
            penalty_weights={"under": self.under_weight, "over": self.over_weight,
                             "zero": self.zero_weight, "acuity": self.acuity_weight},
            max_iterations=self.max_iter,
            convergence_tol=self.tol,
            initialization=self.initialization,
            seed=self.random_state,
            n_starts=self.n_starts,
            extent_points=self.extent_points,
            extent_limit=self.extent_limit,
            aggregate=False,
            n_jobs=self.n_jobs,
        )

    def fit(self, X, y, visible=None):
        X = check_array(X, dtype=float)
        if X.shape[1] not in (2, 3):
            raise DomainError("X needs columns (e, fs) or (e, fs, extent)")
        y = np.asarray(y, dtype=float).ravel()
        if y.shape[0] != X.shape[0]:
            raise DomainError("X and y differ in length")
        visible = np.isfinite(y) if visible is None else np.asarray(visible, dtype=bool)
        e, fs = X[:, 0], X[:, 1]
        if np.any(e < 0) or np.any(fs <= 0):
            raise DomainError("e must be >= 0 and fs > 0")
        extent = X[:, 2] if X.shape[1] == 3 else 1.4 / fs
        result = _fit_arrays(e, fs, y, visible, extent, self._config())
        self.result_ = result
        self.params_ = result.params
        self.adjusted_r2_ = result.adjusted_r2
        self.loss_ = result.final_loss
        self.n_iter_ = result.n_iter
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        return np.asarray(psi(X[:, 0], X[:, 1], self.params_), dtype=float)


# ---------------------------------------------------------------------------
# Luminance scaling
# ---------------------------------------------------------------------------


def _luminance_design(e, fs, luminance, base, lum, area):
    """Rows ``psi * log10(l / l0) * [zeta e^2, zeta e, 1]`` and base psi."""
    base_psi = np.asarray(psi(e, fs, base), dtype=float)
    x = np.log10(np.asarray(effective_illuminance(luminance, area)) / lum.l0)
    z = np.asarray(zeta(fs, base), dtype=float)
    design = (base_psi * x)[:, None] * np.stack([z * e**2, z * e, np.ones_like(e)], axis=1)
    return design, base_psi


def fit_luminance(samples, base, ctx=None, lum=DEFAULT_LUMINANCE_SCALING):
    """Least-squares slope coefficients ``q`` with ``base`` and ``l0`` held fixed.

    The scaled model is linear in ``q``, so this is an ordinary linear
    least-squares problem over the visible samples that carry a luminance.
    """
    ctx = PhotometricContext() if ctx is None else ctx
    used = [s for s in samples if s.visible and s.luminance is not None]
    if len({s.luminance for s in used}) < 2:
        raise DomainError("luminance fit needs samples at two or more luminances")
    e = np.array([s.e for s in used], dtype=float)
    fs = np.array([s.fs for s in used], dtype=float)
    L = np.array([s.luminance for s in used], dtype=float)
    cff = np.array([s.cff for s in used], dtype=float)
    design, base_psi = _luminance_design(e, fs, L, base, lum, ctx.area)
    if np.linalg.matrix_rank(design) < 3:
        raise DomainError("luminance fit is degenerate (too little illuminance or "
                          "eccentricity variation)")
    q, *_ = np.linalg.lstsq(design, cff - base_psi, rcond=None)
    return LuminanceScaling(q=tuple(q), l0=lum.l0)


class LuminanceRegressor(BaseEstimator, RegressorMixin):
    """Estimator wrapper for :func:`fit_luminance`.

    ``X`` columns are ``(e_deg, fs_cpd, luminance_cdm2)``.
    """

    def __init__(self, base="full", l0=1488.0, area=80.0 * 87.0):
        self.base = base
        self.l0 = l0
        self.area = area

    def _base(self):
        return get_preset(self.base) if isinstance(self.base, str) else self.base

    def fit(self, X, y):
        X = check_array(X, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        samples = [ThresholdSample(e=r[0], fs=r[1], cff=c, luminance=r[2])
                   for r, c in zip(X, y)]
        self.scaling_ = fit_luminance(samples, self._base(),
                                      PhotometricContext(area=self.area),
                                      LuminanceScaling(l0=self.l0))
        pred = self.predict(X)
        try:
            self.adjusted_r2_ = adjusted_r2(pred, y, 3)
        except DomainError:
            self.adjusted_r2_ = float("nan")
        self.n_features_in_ = 3
        return self

    def predict(self, X):
        check_is_fitted(self, "scaling_")
        X = check_array(X, dtype=float)
        design, base_psi = _luminance_design(X[:, 0], X[:, 1], X[:, 2], self._base(),
                                             self.scaling_, self.area)
        return np.maximum(base_psi + design @ np.array(self.scaling_.q), 0.0)


# ---------------------------------------------------------------------------
# CSV / JSON I/O
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("subject_id", "e_deg", "fs_cpd", "cff_hz", "visible", "extent_deg",
               "luminance_cdm2")


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "y", "t"):
        return True
    if t in ("0", "false", "no", "n", "f"):
        return False
    raise DomainError(f"cannot parse visible flag {text!r}")


def _opt_float(text):
    text = (text or "").strip()
    return float(text) if text else None


def read_thresholds(path):
    """Load :class:`ThresholdSample` rows from a threshold CSV file."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise DomainError(f"threshold CSV missing columns: {sorted(missing)}")
        samples = []
        for row in reader:
            visible = _parse_bool(row["visible"])
            cff = _opt_float(row["cff_hz"])
            if cff is None and visible:
                raise DomainError("empty cff_hz is only allowed when visible is false")
            samples.append(ThresholdSample(
                e=float(row["e_deg"]), fs=float(row["fs_cpd"]),
                cff=cff if visible else None, visible=visible,
                extent=_opt_float(row["extent_deg"]),
                luminance=_opt_float(row["luminance_cdm2"]),
                subject=row["subject_id"] or None,
            ))
    return samples


def write_thresholds(path, samples):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for s in samples:
            writer.writerow([
                s.subject or "",
                repr(float(s.e)), repr(float(s.fs)),
                "" if s.cff is None else repr(float(s.cff)),
                "true" if s.visible else "false",
                repr(float(s.extent)),
                "" if s.luminance is None else repr(float(s.luminance)),
            ])


def write_fit_report(path, result):
    Path(path).write_text(json.dumps(result.report(), indent=2) + "\n")
