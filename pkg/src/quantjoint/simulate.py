"""Synthetic cohorts drawn from the joint model's generative structure.

Each subject gets random effects ``(g0, g1) ~ N(0, re_cov)``, visits at
``0, spacing, 2 spacing, ...`` (optionally jittered) and responses
``beta_l[0] + beta_l[1] t + g0 + g1 t + error``.  The event time solves
``H(t) = -log U`` for the piecewise exp-linear cumulative hazard, with
hazard ``lambda_k exp(alpha (g0 + g1 t) + eta_s)``, and is censored at
the horizon.

Setting ``scale_sd > 0`` adds a subject-level log error scale ``v_i``:
errors are multiplied by ``exp(v_i)`` and the log-hazard gains
``scale_assoc * v_i``.  Subjects with noisy trajectories then sit low on
the lower quantiles while carrying extra risk, which flips the sign of
the association at low quantile levels.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .ald import mixture_draw
from .model import HazardGrid, JointDataset, LongitudinalRecord, SurvivalRecord

ERROR_FAMILIES = ("gaussian", "ald")


@dataclass(frozen=True)
class SimScenario:
    """Generative settings.

    ``sigma2`` is the error variance for ``gaussian`` errors and the ALD
    scale for ``ald`` errors (located so that its ``tau``-quantile is 0).
    ``beta_s`` pairs names with coefficients of Bernoulli(0.5) baseline
    covariates.
    """

    n: int = 300
    n_visits: int = 8
    spacing: float = 1.0
    jitter: float = 0.0
    beta_l: tuple = (2.0, -0.3)
    re_cov: tuple = ((1.0, 0.0), (0.0, 0.04))
    error: str = "ald"
    sigma2: float = 0.25
    tau: float = 0.5
    alpha: float = -0.5
    hazard_cuts: tuple = (0.0, 8.0)
    hazard_values: tuple = (0.1,)
    beta_s: tuple = ()
    horizon: float = 8.0
    scale_sd: float = 0.0
    scale_assoc: float = 0.0
    drop_after_exit: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one subject")
        if self.n_visits < 2:
            raise ValueError("every subject needs at least two visits")
        if not self.spacing > 0 or self.jitter < 0 or self.jitter >= self.spacing:
            raise ValueError("need spacing > 0 and 0 <= jitter < spacing")
        if self.error not in ERROR_FAMILIES:
            raise ValueError(f"error family must be one of {ERROR_FAMILIES}")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        cov = np.asarray(self.re_cov, dtype=float)
        if cov.shape != (2, 2) or not np.allclose(cov, cov.T) or np.min(np.linalg.eigvalsh(cov)) < 0:
            raise ValueError("re_cov must be a symmetric positive semi-definite 2x2 matrix")
        if len(self.beta_l) != 2:
            raise ValueError("beta_l holds (intercept, time slope)")
        HazardGrid(self.hazard_cuts, self.hazard_values)
        if self.horizon > self.hazard_cuts[-1] or self.horizon <= self.hazard_cuts[0]:
            raise ValueError("horizon must lie inside the hazard grid")
        if self.scale_sd < 0:
            raise ValueError("scale_sd must be nonnegative")

    @property
    def grid(self) -> HazardGrid:
        return HazardGrid(self.hazard_cuts, self.hazard_values)

    def with_(self, **changes) -> "SimScenario":
        return replace(self, **changes)


@dataclass
class TrueValues:
    beta_l: np.ndarray
    sigma2: float
    alpha: float
    re_cov: np.ndarray
    hazard_cuts: np.ndarray
    hazard_values: np.ndarray
    beta_s: dict
    gamma: np.ndarray
    log_scale: np.ndarray
    event_time: np.ndarray
    scenario: dict = field(default_factory=dict)

    def to_json(self) -> str:
        def plain(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, dict):
                return {k: plain(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [plain(x) for x in v]
            if isinstance(v, float) and math.isinf(v):
                return "inf"
            return v

        d = {k: plain(v) for k, v in asdict(self).items() if k not in ("gamma", "log_scale", "event_time")}
        d["gamma"] = self.gamma.tolist()
        d["log_scale"] = self.log_scale.tolist()
        d["event_time"] = [t if math.isfinite(t) else None for t in self.event_time.tolist()]
        return json.dumps(d, indent=2, sort_keys=True)


def invert_hazard(u: float, level: float, slope: float, grid: HazardGrid, entry: float = 0.0) -> float:
    """Smallest ``t >= entry`` whose cumulative hazard reaches ``-log(u)``.

    The hazard on interval ``k`` is ``lambda_k exp(level + slope t)``;
    ``level`` collects ``alpha g0 + eta_s`` and ``slope`` is ``alpha g1``.
    Returns ``inf`` when the grid ends first.
    """
    if not 0.0 < u <= 1.0:
        raise ValueError("u must lie in (0, 1]")
    target = -math.log(u)
    if target == 0.0:
        return float(entry)
    cuts, lam = grid.cuts, grid.values
    for k in range(grid.k):
        a = max(cuts[k], entry)
        b = cuts[k + 1]
        if b <= a:
            continue
        scale = lam[k] * math.exp(level)
        if slope == 0.0:
            piece = scale * (b - a)
            if target <= piece:
                return a + target / scale
        else:
            ea = math.exp(slope * a)
            piece = scale * ea * math.expm1(slope * (b - a)) / slope
            if target <= piece:
                return a + math.log1p(slope * target / (scale * ea)) / slope
        target -= piece
    return math.inf


def simulate(scenario: SimScenario, rng) -> tuple:
    """Draw a cohort; returns ``(JointDataset, TrueValues)``."""
    sc = scenario
    n = sc.n
    cov = np.asarray(sc.re_cov, dtype=float)
    vals, vecs = np.linalg.eigh(cov)
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))  # works for singular covariances too
    gamma = rng.standard_normal((n, 2)) @ root.T
    log_scale = rng.normal(0.0, sc.scale_sd, size=n) if sc.scale_sd > 0 else np.zeros(n)
    names = [name for name, _ in sc.beta_s]
    coefs = np.array([c for _, c in sc.beta_s], dtype=float)
    x_surv = (rng.random((n, len(names))) < 0.5).astype(float)
    eta_s = x_surv @ coefs if names else np.zeros(n)
    u = 1.0 - rng.random(n)  # in (0, 1]
    grid = sc.grid
    event_time = np.array([
        invert_hazard(u[i], sc.alpha * gamma[i, 0] + eta_s[i] + sc.scale_assoc * log_scale[i],
                      sc.alpha * gamma[i, 1], grid)
        for i in range(n)
    ])
    exit_ = np.minimum(event_time, sc.horizon)
    event = event_time <= sc.horizon
    if not event.any():
        warnings.warn("every subject is censored; the baseline hazard is not identifiable", RuntimeWarning)

    base = np.arange(sc.n_visits) * sc.spacing
    shifts = rng.uniform(-0.5 * sc.jitter, 0.5 * sc.jitter, size=(n, sc.n_visits)) if sc.jitter else 0.0
    times = np.maximum(np.broadcast_to(base[None, :] + shifts, (n, sc.n_visits)), 0.0)
    times[:, 0] = 0.0
    if sc.error == "ald":
        err, _ = mixture_draw(0.0, sc.sigma2, sc.tau, rng, size=(n, sc.n_visits))
    else:
        err = rng.normal(0.0, math.sqrt(sc.sigma2), size=(n, sc.n_visits))
    err = err * np.exp(log_scale)[:, None]
    b0, b1 = sc.beta_l
    y = b0 + b1 * times + gamma[:, [0]] + gamma[:, [1]] * times + err

    long_recs, surv_recs = [], []
    for i in range(n):
        sid = str(i + 1)
        covs = {name: float(x_surv[i, j]) for j, name in enumerate(names)}
        for j in range(sc.n_visits):
            if sc.drop_after_exit and times[i, j] > exit_[i]:
                continue
            long_recs.append(LongitudinalRecord(sid, float(times[i, j]), float(y[i, j]), covs))
        surv_recs.append(SurvivalRecord(sid, 0.0, float(exit_[i]), bool(event[i])))
    truth = TrueValues(
        beta_l=np.array(sc.beta_l, dtype=float),
        sigma2=float(sc.sigma2),
        alpha=float(sc.alpha),
        re_cov=cov,
        hazard_cuts=grid.cuts,
        hazard_values=grid.values,
        beta_s=dict(zip(names, coefs.tolist())),
        gamma=gamma,
        log_scale=log_scale,
        event_time=event_time,
        scenario=asdict(sc),
    )
    return JointDataset(tuple(long_recs), tuple(surv_recs)), truth


SCENARIOS = {
    # random intercept and slope shared, ALD errors at the median
    "default": SimScenario(),
    # Gaussian errors: median and mean regression target the same line
    "symmetric": SimScenario(error="gaussian", sigma2=0.5),
    # noisy subjects carry extra risk: association negative at low tau, positive at the median
    "hetero": SimScenario(error="gaussian", sigma2=0.25, alpha=0.8, re_cov=((0.25, 0.0), (0.0, 0.01)),
                          scale_sd=0.9, scale_assoc=2.0),
}


def scenario(name: str, **overrides) -> SimScenario:
    try:
        base = SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
    return base.with_(**overrides) if overrides else base
