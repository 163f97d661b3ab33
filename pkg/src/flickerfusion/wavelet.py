"""Multilevel Haar wavelet transforms with packed, critically sampled layout.

The two-tap pair is orthonormal, ``a = (x0 + x1) / sqrt(2)`` and
``d = (x0 - x1) / sqrt(2)``; analysis and synthesis filters therefore form
a (trivially) biorthogonal pair with perfect reconstruction.

Coefficients are stored in place: a single step along an axis of length
``n`` writes the approximation to ``[0, n/2)`` and the detail to
``[n/2, n)``. Along one axis the fully decomposed layout is
``[a_L, d_L, d_{L-1}, ..., d_1]`` with ``L = log2(n)``.
"""

import math

import numpy as np

from ._validation import DomainError, is_power_of_two

_SQRT_HALF = math.sqrt(0.5)


def _check_axis(n, axis):
    if not is_power_of_two(n):
        raise DomainError(f"axis {axis} has length {n}, which is not a power of two")


def n_levels(n):
    """Number of dyadic levels for an axis of length ``n``."""
    _check_axis(n, "?")
    return int(n).bit_length() - 1


def haar_step(x, axis=-1):
    """One analysis step along ``axis``: returns ``(approximation, detail)``."""
    x = np.asarray(x, dtype=float)
    even = np.take(x, np.arange(0, x.shape[axis], 2), axis=axis)
    odd = np.take(x, np.arange(1, x.shape[axis], 2), axis=axis)
    return (even + odd) * _SQRT_HALF, (even - odd) * _SQRT_HALF


def haar_step_inverse(approx, detail, axis=-1):
    approx = np.asarray(approx, dtype=float)
    detail = np.asarray(detail, dtype=float)
    even = (approx + detail) * _SQRT_HALF
    odd = (approx - detail) * _SQRT_HALF
    axis = axis % approx.ndim
    out = np.stack([even, odd], axis=axis + 1)
    shape = list(approx.shape)
    shape[axis] *= 2
    return out.reshape(shape)


def _view(x, axis, stop):
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(0, stop)
    return tuple(idx)


def wavedec(x, axis=-1):
    """Full multilevel decomposition along one axis, in packed layout."""
    out = np.array(x, dtype=float, copy=True)
    axis = axis % out.ndim
    n = out.shape[axis]
    _check_axis(n, axis)
    while n > 1:
        sl = _view(out, axis, n)
        a, d = haar_step(out[sl], axis)
        out[sl] = np.concatenate([a, d], axis=axis)
        n //= 2
    return out


def waverec(c, axis=-1):
    out = np.array(c, dtype=float, copy=True)
    axis = axis % out.ndim
    total = out.shape[axis]
    _check_axis(total, axis)
    n = 1
    while n < total:
        sl = _view(out, axis, 2 * n)
        block = out[sl]
        a = np.take(block, np.arange(n), axis=axis)
        d = np.take(block, np.arange(n, 2 * n), axis=axis)
        out[sl] = haar_step_inverse(a, d, axis)
        n *= 2
    return out


def haar_forward(signal, axes=None):
    """Separable multilevel Haar transform, ``log2(N)`` levels on every axis.

    Parameters
    ----------
    signal : array_like
        Input whose transformed axes all have power-of-two lengths.
    axes : sequence of int, optional
        Axes to transform; all axes by default.

    Returns
    -------
    ndarray
        Coefficients with the same shape as ``signal``.
    """
    out = np.asarray(signal, dtype=float)
    axes = range(out.ndim) if axes is None else axes
    for ax in axes:
        out = wavedec(out, ax)
    return out


def haar_inverse(coefficients, axes=None):
    out = np.asarray(coefficients, dtype=float)
    axes = range(out.ndim) if axes is None else axes
    for ax in reversed(list(axes)):
        out = waverec(out, ax)
    return out


def pyramid_forward(x, axes=(-2, -1)):
    """Mallat (pyramid) decomposition over ``axes``.

    Each level transforms every axis of the current approximation block
    whose length still exceeds one, and recurses on the approximation.
    """
    out = np.array(x, dtype=float, copy=True)
    axes = [a % out.ndim for a in axes]
    sizes = [out.shape[a] for a in axes]
    for a, n in zip(axes, sizes):
        _check_axis(n, a)
    while any(n > 1 for n in sizes):
        idx = [slice(None)] * out.ndim
        for a, n in zip(axes, sizes):
            idx[a] = slice(0, n)
        block = out[tuple(idx)]
        for a, n in zip(axes, sizes):
            if n > 1:
                lo, hi = haar_step(block, a)
                block = np.concatenate([lo, hi], axis=a)
        out[tuple(idx)] = block
        sizes = [max(n // 2, 1) for n in sizes]
    return out


def pyramid_inverse(c, axes=(-2, -1)):
    out = np.array(c, dtype=float, copy=True)
    axes = [a % out.ndim for a in axes]
    full = [out.shape[a] for a in axes]
    for a, n in zip(axes, full):
        _check_axis(n, a)
    # replay the forward block sizes from the coarsest level up
    schedule = []
    sizes = list(full)
    while any(n > 1 for n in sizes):
        schedule.append(list(sizes))
        sizes = [max(n // 2, 1) for n in sizes]
    for sizes in reversed(schedule):
        idx = [slice(None)] * out.ndim
        for a, n in zip(axes, sizes):
            idx[a] = slice(0, n)
        block = out[tuple(idx)]
        for a, n in reversed(list(zip(axes, sizes))):
            if n > 1:
                half = n // 2
                lo = np.take(block, np.arange(half), axis=a)
                hi = np.take(block, np.arange(half, n), axis=a)
                block = haar_step_inverse(lo, hi, a)
        out[tuple(idx)] = block
    return out


def video_forward(frames):
    """Spatial pyramid per frame followed by a full temporal transform.

    ``frames`` has shape ``(t, h, w)``.
    """
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 3:
        raise DomainError("video arrays have shape (frames, height, width)")
    return wavedec(pyramid_forward(frames, axes=(1, 2)), axis=0)


def video_inverse(coefficients):
    return pyramid_inverse(waverec(coefficients, axis=0), axes=(1, 2))
