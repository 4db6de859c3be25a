"""Fourier primitives on token signals.

A feature matrix ``X`` (n tokens by d channels) is treated as d signals of
length n. The DC part of each channel is its projection on the constant
Fourier basis vector, ``(1/n) 1 1^T X``; the HC part is everything else.
"""

from dataclasses import dataclass
import math
import warnings

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import (
    check_count,
    check_features,
    check_matrix,
    check_row_stochastic,
    check_signal,
)
from .rng import make_rng

__all__ = [
    "ComplexSpectrum",
    "ConvergenceWarning",
    "DegenerateSignalError",
    "PowerIterationResult",
    "SpectralSplit",
    "SpectralSplitter",
    "dc_project",
    "dft",
    "dft_matrix",
    "hc_dc_ratio",
    "hc_project",
    "idft",
    "low_pass_iterate",
    "power_iteration",
    "spectral_norm",
    "spectral_split",
]


class DegenerateSignalError(ValueError):
    """Both the DC and the HC energy of a signal are zero (or DC is required)."""


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ComplexSpectrum:
    coefficients: np.ndarray

    @property
    def dc_coefficient(self):
        return self.coefficients[0]

    @property
    def hc_coefficients(self):
        return self.coefficients[1:]

    def __len__(self):
        return len(self.coefficients)


@dataclass(frozen=True)
class SpectralSplit:
    dc: np.ndarray
    hc: np.ndarray

    @property
    def dc_norm(self):
        return float(np.linalg.norm(self.dc))

    @property
    def hc_norm(self):
        return float(np.linalg.norm(self.hc))


def dft_matrix(n):
    """Unitary DFT matrix; row k is the Fourier basis vector at frequency k.

    Uses the positive exponent ``exp(2 pi j k m / n) / sqrt(n)`` so the rows
    coincide with the basis vectors ``f_k``.
    """
    n = check_count(n, "n")
    k = np.arange(n)
    return np.exp(2j * np.pi * np.outer(k, k) / n) / math.sqrt(n)


def dft(signal):
    """Forward transform, applied as a dense ``O(n^2)`` product."""
    z = check_signal(signal)
    return ComplexSpectrum(dft_matrix(z.size) @ z)


def idft(spectrum):
    """Inverse of :func:`dft` (the conjugate transpose of the unitary matrix)."""
    coeffs = np.asarray(
        spectrum.coefficients if isinstance(spectrum, ComplexSpectrum) else spectrum,
        dtype=complex,
    )
    return dft_matrix(coeffs.size).conj().T @ coeffs


def _column_means(x):
    # two-pass mean: the correction term removes the rounding of the first
    # pass, so centered columns sum to zero at the roundoff of the residuals
    m = x.mean(axis=0)
    return m + (x - m).mean(axis=0)


def dc_project(x):
    """``(1/n) 1 1^T x``: every column replaced by its mean."""
    x = check_features(x)
    return np.broadcast_to(_column_means(x), x.shape).copy()


def hc_project(x):
    """``(I - (1/n) 1 1^T) x``: every column with its mean removed."""
    x = check_features(x)
    return x - _column_means(x)


def spectral_split(x):
    x = check_features(x)
    dc = dc_project(x)
    return SpectralSplit(dc=dc, hc=x - dc)


def _as_operand(x):
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        return check_signal(arr).reshape(-1, 1)
    return check_features(arr)


def hc_dc_ratio(x):
    """``||HC[x]|| / ||DC[x]||`` (2-norm for a signal, Frobenius for a matrix).

    Returns ``inf`` when only the DC part vanishes. Raises
    :class:`DegenerateSignalError` when both parts vanish.
    """
    split = spectral_split(_as_operand(x))
    hc, dc = split.hc_norm, split.dc_norm
    if dc == 0.0:
        if hc == 0.0:
            raise DegenerateSignalError("HC/DC ratio undefined: signal is zero")
        return math.inf
    return hc / dc


@dataclass(frozen=True)
class PowerIterationResult:
    value: float
    vector: np.ndarray
    iterations: int
    converged: bool


def _power_iterate(gram, v, rtol, max_iter):
    lam = float(v @ gram @ v)
    for it in range(1, max_iter + 1):
        w = gram @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, v, it, True
        v = w / norm
        new = float(v @ gram @ v)
        if abs(new - lam) <= rtol * abs(new):
            return new, v, it, True
        lam = new
    return lam, v, max_iter, False


def power_iteration(m, rtol=1e-12, max_iter=10_000, seed=0):
    """Largest singular value of ``m`` by power iteration on ``m^T m``.

    The iteration starts from the normalized all-ones vector. That start is
    exactly orthogonal to the top right singular vector for some structured
    inputs (for a centered row-stochastic matrix it lies in the null space),
    so the converged estimate is re-checked from a start perturbed by a
    seeded unit Gaussian and the larger Rayleigh quotient wins.
    """
    m = check_matrix(m, "m")
    if m.size == 0:
        return PowerIterationResult(0.0, np.zeros(m.shape[1]), 0, True)
    gram = m.T @ m
    n = gram.shape[0]
    v0 = np.full(n, 1.0 / math.sqrt(n))
    lam, v, iters, ok = _power_iterate(gram, v0, rtol, max_iter)

    g = make_rng(seed).standard_normal(n)
    g /= np.linalg.norm(g)
    restart = v + g
    restart /= np.linalg.norm(restart)
    lam2, v2, iters2, ok2 = _power_iterate(gram, restart, rtol, max_iter)
    if lam2 > lam:
        lam, v, ok = lam2, v2, ok2
    iters += iters2
    if not ok:
        warnings.warn(
            f"power iteration did not converge in {max_iter} iterations; "
            f"last estimate {math.sqrt(max(lam, 0.0)):.6g}",
            ConvergenceWarning,
            stacklevel=2,
        )
    return PowerIterationResult(math.sqrt(max(lam, 0.0)), v, iters, ok)


def spectral_norm(m, **kwargs):
    """``||m||_2``; see :func:`power_iteration` for the convergence rule."""
    return power_iteration(m, **kwargs).value


def low_pass_iterate(a, z, t_max):
    """HC/DC ratio of ``A^t z`` for ``t = 0..t_max``.

    A row-stochastic ``A`` with positive entries is a low-pass filter, so the
    trajectory tends to 0. A zero-mean probe ``z`` is rejected.
    """
    a = check_row_stochastic(a)
    z = check_signal(z, "z")
    t_max = check_count(t_max, "t_max", minimum=0)
    if z.size != a.shape[0]:
        raise ValueError(f"z has length {z.size}, A is {a.shape}")
    # a mean at roundoff level of the entries counts as zero
    if abs(z.mean()) <= 1e-14 * np.abs(z).max(initial=0.0):
        raise DegenerateSignalError("probe signal has zero mean (no DC energy)")
    out = np.empty(t_max + 1)
    for t in range(t_max + 1):
        if t:
            z = a @ z
        out[t] = hc_dc_ratio(z)
    return out


class SpectralSplitter(TransformerMixin, BaseEstimator):
    """Keep the DC or the HC part of every column of a feature matrix.

    Stateless apart from remembering the number of channels seen in ``fit``,
    so it can sit inside a :class:`sklearn.pipeline.Pipeline`.

    Parameters
    ----------
    component : {"hc", "dc"}
    """

    def __init__(self, component="hc"):
        self.component = component

    def fit(self, X, y=None):
        if self.component not in ("hc", "dc"):
            raise ValueError(f"component must be 'hc' or 'dc', got {self.component!r}")
        self.n_features_in_ = check_features(X).shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_features(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        return hc_project(X) if self.component == "hc" else dc_project(X)
