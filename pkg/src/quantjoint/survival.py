"""Proportional hazards with a piecewise-constant baseline.

The log-hazard of subject ``i`` at time ``u`` is
``log lambda_k + alpha * (g0_i + g1_i * u) + eta_s_i`` for ``u`` in grid
interval ``k``, so every cumulative hazard is a sum of closed-form
integrals of ``exp(linear in u)`` over the pieces where the subject's risk
window ``(entry, exit]`` meets the grid.

Full conditionals of ``alpha``, the shared effects and the survival
coefficients all have the form

    f(x) = -Q x^2 / 2 + L x - sum_m C_m * int_{a_m}^{b_m} exp(p_m x + (q_m x + r_m) u) du

with ``C_m >= 0``, which is concave in ``x``.  ``explin_logf`` evaluates it
for the ARS kernel; ``terms`` rows are ``(C, p, q, r, a, b)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ars
from .ars import DEFAULT_MAX_POINTS, make_sampler
from ._jit import jit
from .distributions import draw_gamma
from .model import HazardGrid

_SERIES_CUTOFF = 1.0
_SERIES_TERMS = 30
_NEWTON_STEPS = 200


@jit
def moment_integrals(z):
    """``(J0, J1, J2)`` with ``Jn = int_0^1 v^n exp(z v) dv``."""
    if abs(z) < _SERIES_CUTOFF:
        j0 = 1.0
        j1 = 0.5
        j2 = 1.0 / 3.0
        term = 1.0  # z^n / n!
        for n in range(1, _SERIES_TERMS):
            term *= z / n
            j0 += term / (n + 1)
            j1 += term / (n + 2)
            j2 += term / (n + 3)
            if abs(term) < 1e-18:
                break
        return j0, j1, j2
    ez = math.exp(z)
    j0 = math.expm1(z) / z
    j1 = (ez * (z - 1.0) + 1.0) / (z * z)
    j2 = (ez * (z * z - 2.0 * z + 2.0) - 2.0) / (z * z * z)
    return j0, j1, j2


@jit
def explin_integral(k, a, b):
    """``int_a^b exp(k u) du``; a power series near ``k (b - a) = 0`` avoids cancellation."""
    w = b - a
    if w <= 0.0:
        return 0.0
    if k == 0.0:
        return w
    z = k * w
    if abs(z) < _SERIES_CUTOFF:
        j0 = moment_integrals(z)[0]
        return w * math.exp(k * a) * j0
    return (math.exp(k * b) - math.exp(k * a)) / k


@jit
def explin_eval(x, quad, lin, terms):
    """Value, first and second derivative of the exp-linear log-density family."""
    f = -0.5 * quad * x * x + lin * x
    df = -quad * x + lin
    d2 = -quad
    for m in range(terms.shape[0]):
        c = terms[m, 0]
        if c == 0.0:
            continue
        p = terms[m, 1]
        q = terms[m, 2]
        r = terms[m, 3]
        a = terms[m, 4]
        b = terms[m, 5]
        w = b - a
        if w <= 0.0:
            continue
        k = q * x + r
        j0, j1, j2 = moment_integrals(k * w)
        base = c * w * math.exp(p * x + k * a)
        i0 = base * j0
        i1 = base * (a * j0 + w * j1)
        i2 = base * (a * a * j0 + 2.0 * a * w * j1 + w * w * j2)
        f -= i0
        df -= p * i0 + q * i1
        d2 -= p * p * i0 + 2.0 * p * q * i1 + q * q * i2
    return f, df, d2


@jit
def explin_logf(x, params):
    """Value and slope only; the ARS kernel never needs the curvature."""
    quad, lin, terms = params
    f = -0.5 * quad * x * x + lin * x
    df = -quad * x + lin
    for m in range(terms.shape[0]):
        c = terms[m, 0]
        w = terms[m, 5] - terms[m, 4]
        if c == 0.0 or w <= 0.0:
            continue
        p = terms[m, 1]
        q = terms[m, 2]
        a = terms[m, 4]
        k = q * x + terms[m, 3]
        z = k * w
        base = c * w * math.exp(p * x + k * a)
        if abs(z) < _SERIES_CUTOFF:
            j0, j1, _ = moment_integrals(z)
        else:
            ez = math.exp(z)
            j0 = math.expm1(z) / z
            j1 = (ez * (z - 1.0) + 1.0) / (z * z)
        i0 = base * j0
        f -= i0
        df -= p * i0 + q * base * (a * j0 + w * j1)
    if math.isnan(f):
        return -np.inf, df
    return f, df

_EXPLIN = make_sampler(explin_logf)
_explin_from_mode = _EXPLIN.ars_from_mode


@jit
def explin_draw(x0, quad, lin, terms, rng, tol):
    """One ARS draw from the exp-linear family.

    Abscissae are bracketed around a damped Newton step from ``x0``, with
    ``1 / sqrt(-f'')`` as the initial offset, so three points usually
    suffice and are reused by the sampler.
    """
    f0, df0, d20 = explin_eval(x0, quad, lin, terms)
    step = 1.0
    if d20 < 0.0 and math.isfinite(d20):
        step = 1.0 / math.sqrt(-d20)
    if not step > 0.0:
        step = 1e-8
    start = x0
    # usually one step; far in a tail keep stepping until within a few sds of the mode
    for _ in range(_NEWTON_STEPS):
        if not (d20 < 0.0 and math.isfinite(df0) and math.isfinite(d20)):
            break
        move = -df0 / d20
        limit = 8.0 * max(step, 1.0)
        if move > limit:
            move = limit
        elif move < -limit:
            move = -limit
        start += move
        if abs(move) <= 4.0 * step:
            break
        f0, df0, d20 = explin_eval(start, quad, lin, terms)
        if d20 < 0.0 and math.isfinite(d20):
            step = 1.0 / math.sqrt(-d20)
    params = (quad, lin, terms)
    x, st, bad = _explin_from_mode(params, start, step, -np.inf, np.inf, True, rng, DEFAULT_MAX_POINTS, tol)
    if st == ars.NONFINITE and start != x0:
        x, st, bad = _explin_from_mode(params, x0, step, -np.inf, np.inf, True, rng, DEFAULT_MAX_POINTS, tol)
    return x, st, bad

@dataclass(frozen=True)
class RiskPieces:
    """Intersections of each subject's risk window with the grid intervals.

    Pieces of subject ``i`` are ``start[i]:start[i+1]``; each has an
    interval index and bounds ``(a, b)``.  ``event_k[i]`` is the interval
    holding an observed event, ``-1`` when censored.
    """

    start: np.ndarray
    k: np.ndarray
    a: np.ndarray
    b: np.ndarray
    event_k: np.ndarray


def interval_of(cuts, t):
    """Index ``k`` with ``cuts[k] < t <= cuts[k+1]``."""
    return int(np.searchsorted(cuts, t, side="left")) - 1


def build_pieces(cuts, entry, exit_, event) -> RiskPieces:
    cuts = np.asarray(cuts, dtype=float)
    entry = np.atleast_1d(np.asarray(entry, dtype=float))
    exit_ = np.atleast_1d(np.asarray(exit_, dtype=float))
    event = np.atleast_1d(np.asarray(event, dtype=bool))
    if np.any(entry < cuts[0]) or np.any(exit_ > cuts[-1]):
        bad = np.flatnonzero((entry < cuts[0]) | (exit_ > cuts[-1]))[:5]
        raise ValueError(f"risk window outside the hazard grid [{cuts[0]}, {cuts[-1]}] for subjects {bad.tolist()}")
    start = [0]
    ks, as_, bs = [], [], []
    for e, s in zip(entry, exit_):
        k0 = max(interval_of(cuts, e), 0)
        k1 = interval_of(cuts, s)
        for k in range(k0, k1 + 1):
            a = max(cuts[k], e)
            b = min(cuts[k + 1], s)
            if b > a:
                ks.append(k)
                as_.append(a)
                bs.append(b)
        start.append(len(ks))
    event_k = np.where(event, [interval_of(cuts, s) for s in exit_], -1).astype(np.int64)
    return RiskPieces(
        start=np.asarray(start, dtype=np.int64),
        k=np.asarray(ks, dtype=np.int64),
        a=np.asarray(as_, dtype=float),
        b=np.asarray(bs, dtype=float),
        event_k=event_k,
    )


@jit
def piece_exposures(start, pk, pa, pb, alpha, gamma, eta_s, out):
    """Per-piece ``exp(alpha g0 + eta_s) * int_a^b exp(alpha g1 u) du`` (hazard value excluded)."""
    n = start.shape[0] - 1
    for i in range(n):
        level = math.exp(alpha * gamma[i, 0] + eta_s[i])
        slope = alpha * gamma[i, 1]
        for j in range(start[i], start[i + 1]):
            out[j] = level * explin_integral(slope, pa[j], pb[j])


def _as_gamma(gamma, n):
    g = np.zeros((n, 2))
    gam = np.asarray(gamma, dtype=float).reshape(n, -1)
    g[:, : gam.shape[1]] = gam
    return g


def exposures(pieces: RiskPieces, alpha, gamma, eta_s) -> np.ndarray:
    n = pieces.start.shape[0] - 1
    out = np.empty(pieces.k.shape[0])
    piece_exposures(
        pieces.start, pieces.k, pieces.a, pieces.b, float(alpha), _as_gamma(gamma, n),
        np.broadcast_to(np.asarray(eta_s, dtype=float), (n,)).copy(), out,
    )
    return out


def cumulative_hazards(pieces: RiskPieces, grid_values, alpha, gamma, eta_s) -> np.ndarray:
    """Cumulative hazard over each subject's risk window."""
    n = pieces.start.shape[0] - 1
    contrib = np.asarray(grid_values)[pieces.k] * exposures(pieces, alpha, gamma, eta_s)
    owner = np.repeat(np.arange(n), np.diff(pieces.start))
    return np.bincount(owner, weights=contrib, minlength=n)


def cumulative_hazard(entry, exit_, grid: HazardGrid, alpha, gamma0, gamma1, eta_s=0.0) -> float:
    """``int_entry^exit lambda0(u) exp(alpha (gamma0 + gamma1 u) + eta_s) du`` in closed form."""
    pieces = build_pieces(grid.cuts, [entry], [exit_], [False])
    return float(cumulative_hazards(pieces, grid.values, alpha, [[gamma0, gamma1]], [eta_s])[0])


def log_survival_likelihoods(pieces: RiskPieces, grid_values, exit_, alpha, gamma, eta_s) -> np.ndarray:
    n = pieces.start.shape[0] - 1
    g = _as_gamma(gamma, n)
    eta = np.broadcast_to(np.asarray(eta_s, dtype=float), (n,))
    out = -cumulative_hazards(pieces, grid_values, alpha, g, eta)
    ev = pieces.event_k >= 0
    lam = np.asarray(grid_values)
    out[ev] += np.log(lam[pieces.event_k[ev]]) + alpha * (g[ev, 0] + g[ev, 1] * exit_[ev]) + eta[ev]
    return out


def log_survival_likelihood(entry, exit_, event, grid: HazardGrid, alpha, gamma0, gamma1, eta_s=0.0) -> float:
    """``d * log hazard(exit) - cumulative hazard`` for one subject."""
    pieces = build_pieces(grid.cuts, [entry], [exit_], [event])
    return float(
        log_survival_likelihoods(pieces, grid.values, np.array([exit_], dtype=float), alpha, [[gamma0, gamma1]], [eta_s])[0]
    )


def lambda_conditional(pieces: RiskPieces, k: int, alpha, gamma, eta_s, prior):
    """Gamma ``(shape, rate)`` of every baseline piece given everything else."""
    a0, b0 = prior
    expo = exposures(pieces, alpha, gamma, eta_s)
    rate = b0 + np.bincount(pieces.k, weights=expo, minlength=k)
    ev = pieces.event_k[pieces.event_k >= 0]
    shape = a0 + np.bincount(ev, minlength=k).astype(float)
    return shape, rate


def update_lambda(pieces: RiskPieces, k: int, alpha, gamma, eta_s, prior, rng) -> np.ndarray:
    shape, rate = lambda_conditional(pieces, k, alpha, gamma, eta_s, prior)
    return draw_gamma(shape, rate, rng)


@jit
def _beta_s_kernel(beta, x_surv, prec, mean, event, start, pk, pa, pb, lam, alpha, gamma, rng, tol, terms):
    """Coordinate-wise ARS sweep over the survival coefficients."""
    n = x_surv.shape[0]
    p = x_surv.shape[1]
    for j in range(p):
        lin = prec[j, j] * mean[j]
        for l in range(p):
            if l != j:
                lin -= prec[j, l] * (beta[l] - mean[l])
        for i in range(n):
            if event[i]:
                lin += x_surv[i, j]
            rest = alpha * gamma[i, 0]
            for l in range(p):
                if l != j:
                    rest += x_surv[i, l] * beta[l]
            c = 0.0
            for h in range(start[i], start[i + 1]):
                c += lam[pk[h]] * explin_integral(alpha * gamma[i, 1], pa[h], pb[h])
            terms[i, 0] = c * math.exp(rest)
            terms[i, 1] = x_surv[i, j]
            terms[i, 2] = 0.0
            terms[i, 3] = 0.0
            terms[i, 4] = 0.0
            terms[i, 5] = 1.0
        x, st, bad = explin_draw(beta[j], prec[j, j], lin, terms, rng, tol)
        if st != 0:
            return st, bad, j
        beta[j] = x
    return 0, np.nan, -1


def update_beta_s(beta_s, x_surv, prior_mean, prior_cov, event, pieces: RiskPieces, grid_values, alpha, gamma, rng,
                  tol=ars.DEFAULT_TOL) -> np.ndarray:
    """Coordinate-wise ARS update of the survival-only coefficients (no-op when there are none)."""
    beta = np.array(beta_s, dtype=float)
    if beta.shape[0] == 0:
        return beta
    n = x_surv.shape[0]
    terms = np.zeros((n, 6))
    st, bad, j = _beta_s_kernel(
        beta, np.ascontiguousarray(x_surv, dtype=float), np.linalg.inv(prior_cov), np.asarray(prior_mean, dtype=float),
        np.asarray(event, dtype=np.bool_), pieces.start, pieces.k, pieces.a, pieces.b,
        np.asarray(grid_values, dtype=float), float(alpha), _as_gamma(gamma, n), rng, tol, terms,
    )
    ars.raise_for_status(st, bad, f"beta_s[{j}]")
    return beta
