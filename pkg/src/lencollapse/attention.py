"""Synthetic softmax attention and the filter-rate bounds it obeys.

Queries and keys are i.i.d. Gaussian, logits are ``Q K^T / sqrt(d)`` and the
attention map is the row softmax of the logits divided by a temperature
``tau``. ``sigma_a`` (largest singular value of the centered attention map)
controls how fast one attention layer removes high-frequency energy.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
import math

import numpy as np

from ._validation import (
    check_count,
    check_features,
    check_matrix,
    check_positive,
    check_row_stochastic,
    check_tau,
)
from .rng import derive_seed, make_rng
from .spectral import hc_project, spectral_norm

__all__ = [
    "AttentionConfig",
    "AttentionMatrix",
    "BoundReport",
    "ScoreStats",
    "SweepRow",
    "estimate_score_stats",
    "fenton_monte_carlo",
    "fenton_params",
    "norm_lemma_check",
    "sample_attention",
    "sample_logits",
    "sigma_a",
    "sigma_a_sweep",
    "softmax_attention",
    "theorem2_check",
    "theorem3_bound",
]


@dataclass(frozen=True)
class AttentionConfig:
    n: int
    d: int = 64
    sigma_q: float = 1.0
    sigma_k: float = 1.0
    tau: float = 1.0
    seed: int = 0

    def __post_init__(self):
        check_count(self.n, "n")
        check_count(self.d, "d")
        check_positive(self.sigma_q, "sigma_q")
        check_positive(self.sigma_k, "sigma_k")
        check_tau(self.tau)
        check_count(self.seed, "seed", minimum=0)


@dataclass(frozen=True)
class AttentionMatrix:
    data: np.ndarray
    config: AttentionConfig = None

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    @property
    def n(self):
        return self.data.shape[0]


@dataclass(frozen=True)
class ScoreStats:
    sigma_s: float
    c_cross: float
    samples: int

    @property
    def tau_s(self):
        return 1.0 / self.sigma_s


@dataclass(frozen=True)
class BoundReport:
    lhs: float
    rhs: float
    holds: bool
    tolerance: float

    @property
    def slack(self):
        return self.rhs - self.lhs


def _bound_report(lhs, rhs, tolerance, scale=0.0):
    # relative tolerance, measured against the larger of rhs and the
    # magnitude of the quantities whose roundoff produced lhs
    ref = max(rhs, scale)
    return BoundReport(
        lhs=float(lhs),
        rhs=float(rhs),
        holds=bool(lhs <= rhs + tolerance * ref),
        tolerance=float(tolerance),
    )


def softmax_attention(logits, tau=1.0):
    """Row softmax of ``logits / tau`` with the row maximum subtracted first."""
    tau = check_tau(tau)
    p = check_matrix(logits, "logits") / tau
    p = p - p.max(axis=1, keepdims=True)
    e = np.exp(p)
    return e / e.sum(axis=1, keepdims=True)


def sample_logits(config):
    """``Q K^T / sqrt(d)`` for one draw of Gaussian queries and keys."""
    rng = make_rng(config.seed)
    q = rng.normal(0.0, config.sigma_q, size=(config.n, config.d))
    k = rng.normal(0.0, config.sigma_k, size=(config.n, config.d))
    return q @ k.T / math.sqrt(config.d)


def sample_attention(config):
    return AttentionMatrix(softmax_attention(sample_logits(config), config.tau), config)


def sigma_a(a):
    """Largest singular value of ``(I - 11^T/n) A``."""
    a = check_row_stochastic(np.asarray(a))
    return spectral_norm(hc_project(a))


def theorem2_check(x, a, w_v, tolerance=1e-9):
    """Compare ``||HC[A X W_V]||_F`` with ``sigma_a ||W_V||_2 ||HC[X]||_F``."""
    a = check_row_stochastic(np.asarray(a))
    x = check_features(x)
    w_v = check_matrix(w_v, "w_v")
    if x.shape[0] != a.shape[0]:
        raise ValueError(f"X has {x.shape[0]} rows but A is {a.shape}")
    if w_v.shape[0] != x.shape[1]:
        raise ValueError(f"W_V has {w_v.shape[0]} rows but X has {x.shape[1]} columns")
    out = a @ x @ w_v
    lhs = np.linalg.norm(hc_project(out))
    rhs = sigma_a(a) * spectral_norm(w_v) * np.linalg.norm(hc_project(x))
    return _bound_report(lhs, rhs, tolerance, scale=np.linalg.norm(out))


def norm_lemma_check(a, b, tolerance=1e-9):
    """Both forms of ``||AB||_F <= ||A||_2 ||B||_F`` (and the transposed one)."""
    a = check_matrix(a, "a")
    b = check_matrix(b, "b")
    ab = np.linalg.norm(a @ b)
    left = _bound_report(ab, spectral_norm(a) * np.linalg.norm(b), tolerance)
    right = _bound_report(ab, np.linalg.norm(a) * spectral_norm(b), tolerance)
    return left, right


def theorem3_bound(n, sigma_s):
    """Length-dependent upper bound on ``sigma_a`` for Gaussian logits.

    ``sqrt(n / (2 sqrt(1 + exp(-2 sigma_s^2)) (n-1)^(3/2) + 1))``
    """
    n = check_count(n, "n")
    if not np.isfinite(sigma_s) or sigma_s < 0:
        raise ValueError(f"sigma_s must be a finite non-negative number, got {sigma_s!r}")
    factor = 2.0 * math.sqrt(1.0 + math.exp(-2.0 * sigma_s**2))
    return math.sqrt(n / (factor * (n - 1) ** 1.5 + 1.0))


def estimate_score_stats(config, trials):
    """Pooled standard deviation of raw logits over ``trials`` seeded draws.

    ``c_cross`` is the excess variance over ``sigma_q^2 sigma_k^2``; with
    independent queries and keys it is zero up to sampling noise.
    """
    trials = check_count(trials, "trials")
    total = 0
    s1 = 0.0
    s2 = 0.0
    for t in range(trials):
        logits = sample_logits(replace(config, seed=derive_seed(config.seed, t)))
        total += logits.size
        s1 += logits.sum()
        s2 += np.square(logits).sum()
    mean = s1 / total
    var = max(s2 / total - mean**2, 0.0)
    sigma_s = math.sqrt(var)
    return ScoreStats(
        sigma_s=sigma_s,
        c_cross=var - (config.sigma_q * config.sigma_k) ** 2,
        samples=total,
    )


def fenton_params(n, sigma):
    """Fenton-Wilkinson log-normal fit to a sum of ``n`` i.i.d. ``exp(N(0, sigma^2))``.

    Returns ``(mu_sum, sigma_sum_sq)``.
    """
    n = check_count(n, "n")
    sigma = check_positive(sigma, "sigma")
    s2 = sigma * sigma
    sigma_sum_sq = math.log(math.expm1(s2) / n + 1.0)
    mu_sum = math.log(n) + (s2 - sigma_sum_sq) / 2.0
    return mu_sum, sigma_sum_sq


def fenton_monte_carlo(n, sigma, samples=100_000, seed=0, chunk=10_000):
    """Sample mean and variance of ``log(sum_i exp(X_i))``, ``X_i ~ N(0, sigma^2)``."""
    n = check_count(n, "n")
    sigma = check_positive(sigma, "sigma")
    samples = check_count(samples, "samples", minimum=2)
    rng = make_rng(seed)
    logs = np.empty(samples)
    for lo in range(0, samples, chunk):
        hi = min(lo + chunk, samples)
        x = rng.normal(0.0, sigma, size=(hi - lo, n))
        m = x.max(axis=1)
        logs[lo:hi] = m + np.log(np.exp(x - m[:, None]).sum(axis=1))
    return float(logs.mean()), float(logs.var(ddof=1))


@dataclass(frozen=True)
class SweepRow:
    n: int
    tau: float
    sigma_s_hat: float
    sigma_a_mean: float
    sigma_a_std: float
    theorem3_bound: float
    trials: int
    seed: int
    sigma_a_values: tuple = field(default=(), repr=False, compare=False)

    def as_record(self):
        rec = asdict(self)
        rec.pop("sigma_a_values")
        return rec


def _sweep_trial(config):
    logits = sample_logits(config)
    a = softmax_attention(logits, config.tau)
    return sigma_a(a), logits.size, float(logits.sum()), float(np.square(logits).sum())


def sigma_a_sweep(n_values, template, trials=100, taus=None, threads=1):
    """Mean ``sigma_a`` per (tau, n) paired with the length bound.

    Trial ``t`` at every (n, tau) uses ``derive_seed(template.seed, t)``, so
    rows that differ only in ``tau`` share their logits. ``sigma_s_hat`` is
    the pooled logit std of the row divided by ``tau`` (the temperature
    raises the effective logit spread) and feeds the bound.
    """
    trials = check_count(trials, "trials")
    threads = check_count(threads, "threads")
    n_values = [check_count(n, "n", minimum=2) for n in n_values]
    taus = [template.tau] if taus is None else [check_tau(t) for t in taus]

    jobs = [
        replace(template, n=n, tau=tau, seed=derive_seed(template.seed, t))
        for tau in taus
        for n in n_values
        for t in range(trials)
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_sweep_trial, jobs))
    else:
        results = [_sweep_trial(job) for job in jobs]

    rows = []
    for i, (tau, n) in enumerate((tau, n) for tau in taus for n in n_values):
        chunk = results[i * trials : (i + 1) * trials]
        values = np.array([r[0] for r in chunk])
        count = sum(r[1] for r in chunk)
        mean = sum(r[2] for r in chunk) / count
        var = max(sum(r[3] for r in chunk) / count - mean**2, 0.0)
        sigma_s_hat = math.sqrt(var) / tau
        rows.append(
            SweepRow(
                n=n,
                tau=tau,
                sigma_s_hat=sigma_s_hat,
                sigma_a_mean=float(values.mean()),
                sigma_a_std=float(values.std(ddof=1)) if trials > 1 else 0.0,
                theorem3_bound=theorem3_bound(n, sigma_s_hat),
                trials=trials,
                seed=template.seed,
                sigma_a_values=tuple(values.tolist()),
            )
        )
    return rows
