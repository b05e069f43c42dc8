"""Gibbs orchestration for the three fit modes.

Per iteration the blocks run in a fixed order:

    beta_l -> random effects -> weights -> sigma2 -> re_cov -> lambda -> beta_s -> alpha

Longitudinal blocks draw from one random stream and survival blocks from
another, both spawned from the chain seed.  With ``alpha`` held at zero
the random effects do not see the survival data, so the longitudinal
draws are then identical whether or not the survival blocks run.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import __version__
from .ald import QuantileLevel
from .ars import DEFAULT_TOL, ARSError, raise_for_status
from ._jit import jit
from .distributions import rng_stream
from .longitudinal import (
    LongState,
    update_beta_l,
    update_random_effects_longonly,
    update_re_cov,
    update_sigma2,
    update_weights,
)
from .model import (
    SHARED_EFFECTS,
    DesignBundle,
    JointDataset,
    ModelSpec,
    build_designs,
    default_grid,
)
from .survival import RiskPieces, build_pieces, explin_draw, explin_integral, update_beta_s, update_lambda

BLOCKS = ("beta_l", "random_effects", "weights", "sigma2", "re_cov", "lambda", "beta_s", "alpha")


class SamplerError(RuntimeError):
    """A block failed; carries the block name and the 1-based iteration."""

    def __init__(self, block: str, iteration: int, cause: Exception):
        super().__init__(f"{block} update failed at iteration {iteration}: {cause}")
        self.block = block
        self.iteration = iteration
        self.cause = cause

    def __reduce__(self):  # survive the trip back from worker processes
        return (type(self), (self.block, self.iteration, self.cause))


@dataclass(frozen=True)
class SurvState:
    lam: np.ndarray
    beta_s: np.ndarray
    alpha: float


@dataclass(frozen=True)
class ChainState:
    long: LongState
    surv: Optional[SurvState]
    iteration: int = 0


@dataclass(frozen=True)
class ProgressEvent:
    iteration: int
    total: int
    block_seconds: dict

    def as_dict(self) -> dict:
        return {"iteration": self.iteration, "total": self.total, "block_seconds": dict(self.block_seconds)}


@dataclass
class PosteriorSample:
    """Stored draws: one column per scalar parameter, one row per kept iteration."""

    names: tuple
    draws: np.ndarray
    metadata: dict = field(default_factory=dict)
    subject_ids: tuple = ()
    random_effects_mean: Optional[np.ndarray] = None
    final_state: Optional["ChainState"] = None

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.draws[:, self.names.index(name)]
        except ValueError:
            raise KeyError(name) from None

    def __contains__(self, name) -> bool:
        return name in self.names

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def tau(self) -> Optional[float]:
        return self.metadata.get("tau")

    def as_dict(self) -> dict:
        return {n: self.draws[:, j] for j, n in enumerate(self.names)}


def parameter_names(design: DesignBundle, spec: ModelSpec, grid_k: int) -> tuple:
    names = [f"beta_{n}" for n in design.long_names]
    names.append("sigma2")
    active = [SHARED_EFFECTS[c] for c in design.shared_active]
    for a in range(len(active)):
        names.append(f"re_var_{active[a]}")
        for b in range(a + 1, len(active)):
            names.append(f"re_cov_{active[a]}_{active[b]}")
    if spec.is_joint:
        names += [f"lambda_{k + 1}" for k in range(grid_k)]
        names += [f"beta_s_{n}" for n in design.surv_names]
        names.append("alpha")
    return tuple(names)


def chain_seed(master: int, index: int) -> np.random.SeedSequence:
    """Seed of chain ``index`` in a battery; chain 0 is what ``run_chain`` uses by default."""
    return np.random.SeedSequence(int(master), spawn_key=(int(index),))


@jit
def _shared_effects_kernel(gamma, active, prec, resid, var, time_, row_start, exit_, event,
                           pstart, pk, pa, pb, lam, alpha, eta_s, rng, tol, terms):
    """Coordinate-wise ARS sweep over every subject's shared effects.

    ``resid`` is ``y - X beta - xi w`` and ``var`` the record variances.
    Returns ``(status, abscissa, subject, coordinate)``.
    """
    n = gamma.shape[0]
    use_surv = alpha != 0.0
    for i in range(n):
        for c in range(2):
            if not active[c]:
                continue
            o = 1 - c
            quad = prec[c, c]
            lin = -prec[c, o] * gamma[i, o]
            for j in range(row_start[i], row_start[i + 1]):
                zc = 1.0 if c == 0 else time_[j]
                zo = 1.0 if o == 0 else time_[j]
                r = resid[j] - zo * gamma[i, o]
                quad += zc * zc / var[j]
                lin += zc * r / var[j]
            nt = 0
            if use_surv:
                if event[i]:
                    lin += alpha * (1.0 if c == 0 else exit_[i])
                if c == 0:
                    # exp(alpha g0) factors out of every piece
                    tot = 0.0
                    for h in range(pstart[i], pstart[i + 1]):
                        tot += lam[pk[h]] * explin_integral(alpha * gamma[i, 1], pa[h], pb[h])
                    terms[0, 0] = tot * math.exp(eta_s[i])
                    terms[0, 1] = alpha
                    terms[0, 2] = 0.0
                    terms[0, 3] = 0.0
                    terms[0, 4] = 0.0
                    terms[0, 5] = 1.0
                    nt = 1
                else:
                    level = math.exp(eta_s[i] + alpha * gamma[i, 0])
                    for h in range(pstart[i], pstart[i + 1]):
                        terms[nt, 0] = lam[pk[h]] * level
                        terms[nt, 1] = 0.0
                        terms[nt, 2] = alpha
                        terms[nt, 3] = 0.0
                        terms[nt, 4] = pa[h]
                        terms[nt, 5] = pb[h]
                        nt += 1
            x, st, bad = explin_draw(gamma[i, c], quad, lin, terms[:nt], rng, tol)
            if st != 0:
                return st, bad, i, c
            gamma[i, c] = x
    return 0, np.nan, -1, -1


@jit
def _alpha_terms(gamma, event, exit_, pstart, pk, pa, pb, lam, eta_s, terms):
    """Fill one exp-linear row per risk piece; return the event part of the linear term."""
    n = gamma.shape[0]
    lin = 0.0
    for i in range(n):
        if event[i]:
            lin += gamma[i, 0] + gamma[i, 1] * exit_[i]
        level = math.exp(eta_s[i])
        for h in range(pstart[i], pstart[i + 1]):
            terms[h, 0] = lam[pk[h]] * level
            terms[h, 1] = gamma[i, 0]
            terms[h, 2] = gamma[i, 1]
            terms[h, 3] = 0.0
            terms[h, 4] = pa[h]
            terms[h, 5] = pb[h]
    return lin


def update_shared_effects(gamma, re_cov, resid, var, design: DesignBundle, pieces: RiskPieces,
                          lam, alpha, eta_s, rng, tol=DEFAULT_TOL) -> np.ndarray:
    """Survival-aware ARS update of the shared random effects (joint modes)."""
    g = np.array(gamma, dtype=float)
    act = np.zeros(2, dtype=np.bool_)
    act[list(design.shared_active)] = True
    idx = list(design.shared_active)
    prec = np.zeros((2, 2))
    prec[np.ix_(idx, idx)] = np.linalg.inv(re_cov)
    width = max(int(np.max(np.diff(pieces.start))) if pieces.start.shape[0] > 1 else 1, 1)
    terms = np.zeros((width, 6))
    st, bad, i, c = _shared_effects_kernel(
        g, act, prec, np.ascontiguousarray(resid, dtype=float), np.ascontiguousarray(var, dtype=float),
        design.time, design.row_start, design.exit, design.event, pieces.start, pieces.k, pieces.a, pieces.b,
        np.asarray(lam, dtype=float), float(alpha), np.ascontiguousarray(eta_s, dtype=float), rng, tol, terms,
    )
    if st != 0:
        raise_for_status(st, bad, f"random effect {SHARED_EFFECTS[c]} of subject {design.subject_ids[i]}")
    return g


def alpha_conditional(gamma, design: DesignBundle, pieces: RiskPieces, lam, eta_s, prior):
    """``(quad, lin, terms)`` of the exp-linear log full conditional of ``alpha``."""
    mean0, var0 = prior
    terms = np.zeros((pieces.k.shape[0], 6))
    lin = _alpha_terms(
        np.ascontiguousarray(gamma, dtype=float), design.event, design.exit, pieces.start, pieces.k,
        pieces.a, pieces.b, np.asarray(lam, dtype=float), np.ascontiguousarray(eta_s, dtype=float), terms,
    )
    return 1.0 / var0, mean0 / var0 + lin, terms


def update_alpha(alpha, gamma, design: DesignBundle, pieces: RiskPieces, lam, eta_s, prior, rng,
                 tol=DEFAULT_TOL) -> float:
    quad, lin, terms = alpha_conditional(gamma, design, pieces, lam, eta_s, prior)
    x, st, bad = explin_draw(float(alpha), quad, lin, terms, rng, tol)
    if st != 0:
        raise_for_status(st, bad, "alpha")
    return float(x)


@dataclass
class _Context:
    """Per-chain constants."""

    design: DesignBundle
    spec: ModelSpec
    level: Optional[QuantileLevel]
    xi: float
    phi: float
    z: np.ndarray
    pieces: Optional[RiskPieces]
    grid: object
    names: tuple


def _prepare(data, spec: ModelSpec, design: Optional[DesignBundle] = None, grid=None) -> _Context:
    if len(spec.tau_levels) > 1:
        raise ValueError("run_chain fits one quantile level; use run_quantile_battery for several")
    design = design if design is not None else build_designs(data, spec)
    level = spec.tau_levels[0] if spec.is_quantile else None
    xi = level.xi if level is not None else 0.0
    phi = level.phi if level is not None else 1.0
    pieces = None
    if spec.is_joint:
        grid = grid if grid is not None else default_grid(design, spec.grid_k)
        pieces = build_pieces(grid.cuts, design.entry, design.exit, design.event)
    names = parameter_names(design, spec, grid.k if grid is not None else 0)
    return _Context(design, spec, level, xi, phi, design.z_shared, pieces, grid, names)


def initial_state(ctx: _Context) -> ChainState:
    """Least-squares fixed effects, zero random effects, occurrence/exposure hazard."""
    d = ctx.design
    beta, *_ = np.linalg.lstsq(d.x_long, d.y, rcond=None)
    resid = d.y - d.x_long @ beta
    if ctx.level is not None:
        tau = ctx.level.tau
        sigma2 = float(np.mean(np.where(resid >= 0, tau * resid, (tau - 1.0) * resid)))
        w = np.full(d.n_records, max(sigma2, 1e-8))
    else:
        sigma2 = float(np.var(resid))
        w = np.ones(d.n_records)
    sigma2 = max(sigma2, 1e-8)
    q = len(d.shared_active)
    long = LongState(beta_l=beta, gamma=np.zeros((d.n, 2)), sigma2=sigma2, w=w, re_cov=np.eye(q))
    surv = None
    if ctx.spec.is_joint:
        k = ctx.grid.k
        expo = np.bincount(ctx.pieces.k, weights=ctx.pieces.b - ctx.pieces.a, minlength=k)
        ev = np.bincount(ctx.pieces.event_k[ctx.pieces.event_k >= 0], minlength=k)
        total = max(float(ev.sum()), 1.0) / max(float(expo.sum()), 1e-12)
        lam = np.where(expo > 0, (ev + 0.5) / np.maximum(expo, 1e-12), total)
        alpha = ctx.spec.fixed_alpha if ctx.spec.fixed_alpha is not None else 0.0
        surv = SurvState(lam=lam, beta_s=np.zeros(d.x_surv.shape[1]), alpha=float(alpha))
    return ChainState(long=long, surv=surv)


def _flatten(ctx: _Context, state: ChainState) -> np.ndarray:
    lo = state.long
    vals = list(lo.beta_l) + [lo.sigma2]
    q = lo.re_cov.shape[0]
    for a in range(q):
        vals.append(lo.re_cov[a, a])
        for b in range(a + 1, q):
            vals.append(lo.re_cov[a, b])
    if state.surv is not None:
        vals += list(state.surv.lam) + list(state.surv.beta_s) + [state.surv.alpha]
    return np.asarray(vals, dtype=float)


def run_chain(
    data: Optional[JointDataset],
    spec: ModelSpec,
    seed=None,
    *,
    design: Optional[DesignBundle] = None,
    grid=None,
    init: Optional[ChainState] = None,
    progress: Optional[Callable[[ProgressEvent], None]] = None,
    progress_every: int = 1000,
    tol: float = DEFAULT_TOL,
) -> PosteriorSample:
    """Run one Gibbs chain and return its thinned post-burn-in draws.

    ``seed`` defaults to chain 0 of ``spec.mcmc.seed``.  Blocks named in
    ``spec.skip_blocks`` stay at their initial values; ``spec.fixed_alpha``
    pins the association.
    """
    ctx = _prepare(data, spec, design, grid)
    d = ctx.design
    if seed is None:
        seed = chain_seed(spec.mcmc.seed, 0)
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    long_rng, surv_rng = (rng_stream(s) for s in seed.spawn(2))
    state = init if init is not None else initial_state(ctx)
    lo = state.long
    beta, gamma, sigma2, w, re_cov = lo.beta_l.copy(), lo.gamma.copy(), lo.sigma2, lo.w.copy(), lo.re_cov.copy()
    sv = state.surv
    if sv is not None:
        lam, beta_s, alpha = sv.lam.copy(), sv.beta_s.copy(), sv.alpha
    if spec.fixed_alpha is not None:
        alpha = float(spec.fixed_alpha)
    skip = spec.skip_blocks
    active = list(d.shared_active)
    quantile = ctx.level is not None
    xi, phi = ctx.xi, ctx.phi
    pr = spec.priors
    beta_mean, beta_cov = pr.beta_moments(d.x_long.shape[1])
    re_prior = pr.re_cov_prior(len(active))
    if spec.is_joint:
        bs_mean, bs_cov = pr.beta_s_moments(d.x_surv.shape[1])
    mc = spec.mcmc
    stored = np.empty((mc.n_stored, len(ctx.names)))
    gamma_sum = np.zeros_like(gamma)
    timings = {b: 0.0 for b in BLOCKS}
    n_kept = 0
    z = ctx.z
    started = time.perf_counter()

    for it in range(1, mc.chain_length + 1):
        block = "beta_l"
        try:
            t0 = time.perf_counter()
            eta_ls = np.einsum("ij,ij->i", z, gamma[d.subject][:, active])
            if "beta_l" not in skip:
                beta = update_beta_l(d.x_long, d.y - eta_ls, w, sigma2, xi, phi, beta_mean, beta_cov, long_rng)
            t1 = time.perf_counter()
            timings["beta_l"] += t1 - t0

            block = "random_effects"
            xb = d.x_long @ beta
            if "random_effects" not in skip:
                var = sigma2 * phi * w
                resid = d.y - xb - xi * w
                if spec.is_joint:
                    eta_s = d.x_surv @ beta_s
                    gamma = update_shared_effects(gamma, re_cov, resid, var, d, ctx.pieces, lam,
                                                  alpha, eta_s, long_rng, tol)
                else:
                    g = update_random_effects_longonly(z, d.subject, d.n, resid, w, sigma2, phi, re_cov, long_rng)
                    gamma = np.zeros((d.n, 2))
                    gamma[:, active] = g
                eta_ls = np.einsum("ij,ij->i", z, gamma[d.subject][:, active])
            t2 = time.perf_counter()
            timings["random_effects"] += t2 - t1

            block = "weights"
            r = d.y - xb - eta_ls
            if quantile and "weights" not in skip:
                w = update_weights(r, sigma2, xi, phi, long_rng)
            t3 = time.perf_counter()
            timings["weights"] += t3 - t2

            block = "sigma2"
            if "sigma2" not in skip:
                sigma2 = update_sigma2(r, w, xi, phi, pr.sigma2, long_rng, quantile=quantile)
            block = "re_cov"
            if "re_cov" not in skip:
                re_cov = update_re_cov(gamma[:, active], re_prior, long_rng)
            t4 = time.perf_counter()
            timings["sigma2"] += t4 - t3

            if spec.is_joint:
                eta_s = d.x_surv @ beta_s
                block = "lambda"
                if "lambda" not in skip:
                    lam = update_lambda(ctx.pieces, ctx.grid.k, alpha, gamma, eta_s, pr.lam, surv_rng)
                t5 = time.perf_counter()
                timings["lambda"] += t5 - t4
                block = "beta_s"
                if "beta_s" not in skip and beta_s.shape[0]:
                    beta_s = update_beta_s(beta_s, d.x_surv, bs_mean, bs_cov, d.event, ctx.pieces, lam, alpha,
                                           gamma, surv_rng, tol)
                    eta_s = d.x_surv @ beta_s
                t6 = time.perf_counter()
                timings["beta_s"] += t6 - t5
                block = "alpha"
                if "alpha" not in skip and spec.fixed_alpha is None:
                    alpha = update_alpha(alpha, gamma, d, ctx.pieces, lam, eta_s, pr.alpha, surv_rng, tol)
                timings["alpha"] += time.perf_counter() - t6
        except (ARSError, np.linalg.LinAlgError, ValueError) as exc:
            raise SamplerError(block, it, exc) from exc

        if it > mc.burn_in and (it - mc.burn_in) % mc.thin == 0 and n_kept < mc.n_stored:
            cur = ChainState(
                LongState(beta, gamma, sigma2, w, re_cov),
                SurvState(lam, beta_s, alpha) if spec.is_joint else None,
                it,
            )
            stored[n_kept] = _flatten(ctx, cur)
            gamma_sum += gamma
            n_kept += 1
        if progress is not None and (it % progress_every == 0 or it == mc.chain_length):
            progress(ProgressEvent(it, mc.chain_length, dict(timings)))

    meta = {
        "mode": spec.mode,
        "tau": ctx.level.tau if ctx.level is not None else None,
        "seed": int(spec.mcmc.seed),
        "seed_entropy": int(seed.entropy),
        "seed_spawn_key": list(seed.spawn_key),
        "spec_hash": spec.fingerprint(),
        "version": __version__,
        "chain_length": mc.chain_length,
        "burn_in": mc.burn_in,
        "thin": mc.thin,
        "wall_seconds": time.perf_counter() - started,
        "block_seconds": timings,
    }
    if ctx.grid is not None:
        meta["grid_cuts"] = ctx.grid.cuts.tolist()
    return PosteriorSample(
        names=ctx.names,
        draws=stored,
        metadata=meta,
        subject_ids=d.subject_ids,
        random_effects_mean=gamma_sum / max(n_kept, 1),
        final_state=ChainState(
            LongState(beta, gamma, sigma2, w, re_cov),
            SurvState(lam, beta_s, alpha) if spec.is_joint else None,
            mc.chain_length,
        ),
    )


def _battery_worker(args):
    data, spec, seed, design, grid = args
    return run_chain(data, spec, seed, design=design, grid=grid)


def run_quantile_battery(data: JointDataset, spec: ModelSpec, jobs: int = 1, grid=None) -> list:
    """Independent chains, one per quantile level, seeded by level index from the master seed.

    Mean mode runs a single chain.  ``jobs > 1`` spreads chains over
    worker processes; results do not depend on ``jobs``.
    """
    levels = spec.tau_levels if spec.is_quantile else (None,)
    first = spec.for_tau(levels[0]) if levels[0] is not None else spec
    design = build_designs(data, first)
    if spec.is_joint and grid is None:
        grid = default_grid(design, spec.grid_k)
    tasks = []
    for i, q in enumerate(levels):
        sub = spec.for_tau(q) if q is not None else spec
        tasks.append((data, sub, chain_seed(spec.mcmc.seed, i), design, grid))
    if jobs <= 1 or len(tasks) == 1:
        return [_battery_worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
        return list(pool.map(_battery_worker, tasks))
