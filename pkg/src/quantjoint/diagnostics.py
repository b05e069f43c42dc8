"""Posterior summaries, the one-sided sign rule and convergence checks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)
SIGNIFICANCE = 0.95


@dataclass(frozen=True)
class ParamSummary:
    mean: float
    sd: float
    quantiles: tuple
    sign_fraction: float
    significant: bool
    ess: float
    geweke_z: float

    def as_dict(self) -> dict:
        d = {"mean": self.mean, "sd": self.sd}
        for p, q in zip(QUANTILES, self.quantiles):
            d[f"q{100 * p:g}"] = q
        d.update(sign_fraction=self.sign_fraction, significant=self.significant, ess=self.ess,
                 geweke_z=self.geweke_z)
        return d


@dataclass(frozen=True)
class Summary:
    parameters: dict
    metadata: dict

    def __getitem__(self, name) -> ParamSummary:
        return self.parameters[name]


def sign_fraction(x) -> float:
    """Share of draws on the majority side of zero; exact zeros count half to each side."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return math.nan
    pos = int(np.count_nonzero(x > 0))
    neg = int(np.count_nonzero(x < 0))
    zero = x.size - pos - neg
    # integer numerator keeps the result >= 0.5 exactly
    return (2 * max(pos, neg) + zero) / (2 * x.size)


def autocorrelation(x) -> np.ndarray:
    """Sample autocorrelation at every lag (FFT, biased normalisation)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    if acov[0] <= 0:
        out = np.zeros(n)
        out[0] = 1.0
        return out
    return acov / acov[0]


def effective_sample_size(x) -> float:
    """ESS by the initial positive sequence estimator, capped at the draw count.

    Autocorrelations are summed in adjacent pairs until a pair sum turns
    negative.  A constant chain has ESS 1.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 2:
        return float(n)
    if np.ptp(x) == 0:
        return 1.0
    rho = autocorrelation(x)
    total = 0.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair < 0:
            break
        total += pair
    tau = -1.0 + 2.0 * total
    tau = max(tau, 1.0 / n)
    return float(min(n / tau, n))


def geweke_z(x, first=0.1, last=0.5) -> float:
    """Difference of means of the first 10% and last 50%, scaled by ESS-based standard errors."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    na = int(math.floor(first * n))
    nb = int(math.floor(last * n))
    if na < 2 or nb < 2:
        return math.nan
    a = x[:na]
    b = x[n - nb:]
    va = np.var(a, ddof=1) / effective_sample_size(a) if np.ptp(a) > 0 else 0.0
    vb = np.var(b, ddof=1) / effective_sample_size(b) if np.ptp(b) > 0 else 0.0
    diff = a.mean() - b.mean()
    if va + vb == 0:
        return 0.0 if diff == 0 else math.copysign(math.inf, diff)
    return float(diff / math.sqrt(va + vb))


def summarize_draws(x) -> ParamSummary:
    x = np.asarray(x, dtype=float)
    sf = sign_fraction(x)
    return ParamSummary(
        mean=float(np.mean(x)),
        sd=float(np.std(x, ddof=1)) if x.shape[0] > 1 else 0.0,
        quantiles=tuple(float(q) for q in np.quantile(x, QUANTILES)),
        sign_fraction=sf,
        significant=bool(sf >= SIGNIFICANCE),
        ess=effective_sample_size(x),
        geweke_z=geweke_z(x),
    )


def summarize(sample) -> Summary:
    """Per-parameter summary of a ``PosteriorSample``."""
    params = {name: summarize_draws(sample.draws[:, j]) for j, name in enumerate(sample.names)}
    return Summary(parameters=params, metadata=dict(sample.metadata))


def emit_figure_data(battery, parameter: str = "alpha") -> list:
    """Long-format rows ``(tau, draw, value, significant)`` for box plots across quantile levels."""
    rows = []
    for sample in battery:
        x = sample[parameter]
        flag = sign_fraction(x) >= SIGNIFICANCE
        tau = sample.metadata.get("tau")
        for i, v in enumerate(x):
            rows.append((tau, i, float(v), bool(flag)))
    return rows
