"""Data records, model settings and design-matrix assembly."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .ald import QuantileLevel

TIME = "time"
MODES = ("long-quantile", "mean-joint", "quantile-joint")
SHARED_EFFECTS = ("intercept", "slope")


class DataValidationError(ValueError):
    """Input data are inconsistent with the model."""


@dataclass(frozen=True)
class LongitudinalRecord:
    subject_id: str
    time: float
    response: float
    covariates: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class SurvivalRecord:
    subject_id: str
    entry: float
    exit: float
    event: bool


def subject_sort_key(sid):
    s = str(sid)
    try:
        return (0, int(s), s)
    except ValueError:
        try:
            return (1, float(s), s)
        except ValueError:
            return (2, 0, s)


def _finite(value, what):
    if not math.isfinite(value):
        raise DataValidationError(f"non-finite {what}: {value!r}")
    return value


@dataclass(frozen=True)
class JointDataset:
    """Longitudinal records plus (optionally) one survival record per subject.

    Records are stored in canonical order: subjects sorted by identifier,
    measurements sorted by time within subject.
    """

    longitudinal: tuple
    survival: tuple = ()

    def __post_init__(self):
        long_recs = tuple(sorted(self.longitudinal, key=lambda r: (subject_sort_key(r.subject_id), r.time)))
        surv_recs = tuple(sorted(self.survival, key=lambda r: subject_sort_key(r.subject_id)))
        object.__setattr__(self, "longitudinal", long_recs)
        object.__setattr__(self, "survival", surv_recs)
        if not long_recs:
            raise DataValidationError("no longitudinal records")
        names = None
        for r in long_recs:
            _finite(r.time, f"time for subject {r.subject_id}")
            _finite(r.response, f"response for subject {r.subject_id}")
            keys = tuple(sorted(r.covariates))
            if names is None:
                names = keys
            elif keys != names:
                raise DataValidationError(f"subject {r.subject_id}: covariate set {keys} differs from {names}")
            for k, v in r.covariates.items():
                _finite(v, f"covariate {k} for subject {r.subject_id}")
        if surv_recs:
            seen = set()
            for r in surv_recs:
                if r.subject_id in seen:
                    raise DataValidationError(f"duplicate survival record for subject {r.subject_id}")
                seen.add(r.subject_id)
                _finite(r.entry, "entry time")
                _finite(r.exit, "exit time")
                if not r.entry < r.exit:
                    raise DataValidationError(f"subject {r.subject_id}: entry {r.entry} not before exit {r.exit}")
            long_ids = {r.subject_id for r in long_recs}
            if long_ids != seen:
                only_long = sorted(long_ids - seen, key=subject_sort_key)[:5]
                only_surv = sorted(seen - long_ids, key=subject_sort_key)[:5]
                raise DataValidationError(
                    f"subject mismatch: longitudinal only {only_long}, survival only {only_surv}"
                )

    @property
    def subject_ids(self) -> tuple:
        out = []
        for r in self.longitudinal:
            if not out or out[-1] != r.subject_id:
                out.append(r.subject_id)
        return tuple(out)

    @property
    def n(self) -> int:
        return len(self.subject_ids)

    @property
    def has_survival(self) -> bool:
        return bool(self.survival)

    @property
    def covariate_names(self) -> tuple:
        return tuple(sorted(self.longitudinal[0].covariates))


def _read_rows(path: Path, required: Sequence[str]):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise DataValidationError(f"{path}: missing column(s) {missing}")
        rows = list(reader)
    return header, rows


def _parse_float(text, path, line, col):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise DataValidationError(f"{path}:{line}: column {col!r} has non-numeric value {text!r}") from None
    if not math.isfinite(value):
        raise DataValidationError(f"{path}:{line}: column {col!r} is missing or non-finite")
    return value


def read_longitudinal_csv(path) -> list:
    path = Path(path)
    header, rows = _read_rows(path, ("id", "time", "y"))
    covs = [c for c in header if c not in ("id", "time", "y")]
    out = []
    for i, row in enumerate(rows, start=2):
        out.append(
            LongitudinalRecord(
                subject_id=row["id"],
                time=_parse_float(row["time"], path, i, "time"),
                response=_parse_float(row["y"], path, i, "y"),
                covariates={c: _parse_float(row[c], path, i, c) for c in covs},
            )
        )
    return out


def read_survival_csv(path) -> list:
    path = Path(path)
    _, rows = _read_rows(path, ("id", "entry", "exit", "event"))
    out = []
    for i, row in enumerate(rows, start=2):
        ev = row["event"].strip()
        if ev not in ("0", "1"):
            raise DataValidationError(f"{path}:{i}: event must be 0 or 1, got {ev!r}")
        out.append(
            SurvivalRecord(
                subject_id=row["id"],
                entry=_parse_float(row["entry"], path, i, "entry"),
                exit=_parse_float(row["exit"], path, i, "exit"),
                event=ev == "1",
            )
        )
    return out


def read_dataset(long_path, surv_path=None) -> JointDataset:
    surv = read_survival_csv(surv_path) if surv_path is not None else []
    return JointDataset(tuple(read_longitudinal_csv(long_path)), tuple(surv))


def _fmt(x: float) -> str:
    return repr(float(x))


def write_longitudinal_csv(path, records: Iterable[LongitudinalRecord]):
    records = list(records)
    covs = sorted(records[0].covariates) if records else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "time", "y", *covs])
        for r in records:
            w.writerow([r.subject_id, _fmt(r.time), _fmt(r.response), *(_fmt(r.covariates[c]) for c in covs)])


def write_survival_csv(path, records: Iterable[SurvivalRecord]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "entry", "exit", "event"])
        for r in records:
            w.writerow([r.subject_id, _fmt(r.entry), _fmt(r.exit), int(bool(r.event))])


@dataclass(frozen=True)
class PriorSpec:
    """Prior hyperparameters.

    ``beta_mean``/``beta_cov`` (longitudinal fixed effects) and
    ``beta_s_mean``/``beta_s_cov`` (survival coefficients) accept a scalar,
    broadcast over the coefficients, or a full vector/matrix.  ``sigma2``
    and ``lam`` are ``(shape, rate)`` pairs, ``alpha`` is ``(mean, variance)``
    and ``re_cov`` is ``(df, scale matrix)`` of an inverse-Wishart.
    """

    beta_mean: object = 0.0
    beta_cov: object = 1e6
    sigma2: tuple = (0.01, 0.01)
    lam: tuple = (0.01, 0.01)
    alpha: tuple = (0.0, 10.0)
    re_cov: tuple = (4.0, None)
    beta_s_mean: object = 0.0
    beta_s_cov: object = 100.0

    def __post_init__(self):
        for name in ("sigma2", "lam"):
            a, b = getattr(self, name)
            if not (a > 0 and b > 0):
                raise ValueError(f"prior {name} needs positive (shape, rate), got {(a, b)}")
        if not self.alpha[1] > 0:
            raise ValueError("alpha prior variance must be positive")

    @staticmethod
    def _vector(value, p):
        v = np.asarray(value, dtype=float)
        if v.ndim == 0:
            return np.full(p, float(v))
        if v.shape != (p,):
            raise ValueError(f"prior mean has shape {v.shape}, expected ({p},)")
        return v

    @staticmethod
    def _matrix(value, p):
        v = np.asarray(value, dtype=float)
        if v.ndim == 0:
            m = float(v) * np.eye(p)
        elif v.ndim == 1:
            m = np.diag(v)
        else:
            m = v
        if m.shape != (p, p):
            raise ValueError(f"prior covariance has shape {m.shape}, expected ({p}, {p})")
        if not np.allclose(m, m.T):
            raise ValueError("prior covariance must be symmetric")
        if p and np.min(np.linalg.eigvalsh(m)) <= 0:
            raise ValueError("prior covariance must be positive definite")
        return m

    def beta_moments(self, p):
        return self._vector(self.beta_mean, p), self._matrix(self.beta_cov, p)

    def beta_s_moments(self, p):
        return self._vector(self.beta_s_mean, p), self._matrix(self.beta_s_cov, p)

    def re_cov_prior(self, q):
        df, scale = self.re_cov
        scale = np.eye(q) if scale is None else self._matrix(scale, q)
        if df <= q - 1:
            raise ValueError("inverse-Wishart degrees of freedom too small")
        return float(df), scale


@dataclass(frozen=True)
class McmcSettings:
    chain_length: int = 10000
    burn_in: int = 1000
    thin: int = 9
    seed: int = 0

    def __post_init__(self):
        if self.chain_length < 1 or self.burn_in < 0 or self.thin < 1:
            raise ValueError("chain_length >= 1, burn_in >= 0 and thin >= 1 required")
        if self.burn_in >= self.chain_length:
            raise ValueError("burn_in must be shorter than the chain")

    @property
    def n_stored(self) -> int:
        return (self.chain_length - self.burn_in) // self.thin


@dataclass(frozen=True)
class ModelSpec:
    """What to fit.

    ``tau_levels`` empty means mean regression (mode ``mean-joint``).
    ``l_covariates`` lists the longitudinal fixed effects besides the
    intercept; the reserved name ``time`` refers to the measurement time.
    ``s_covariates`` are baseline survival covariates, taken from each
    subject's first longitudinal record.
    """

    mode: str = "quantile-joint"
    tau_levels: tuple = (QuantileLevel(0.5),)
    l_covariates: tuple = (TIME,)
    s_covariates: tuple = ()
    shared_effects: tuple = SHARED_EFFECTS
    priors: PriorSpec = field(default_factory=PriorSpec)
    grid_k: int = 10
    mcmc: McmcSettings = field(default_factory=McmcSettings)
    fixed_alpha: Optional[float] = None
    skip_blocks: frozenset = frozenset()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        taus = tuple(t if isinstance(t, QuantileLevel) else QuantileLevel(float(t)) for t in self.tau_levels)
        object.__setattr__(self, "tau_levels", taus)
        object.__setattr__(self, "l_covariates", tuple(self.l_covariates))
        object.__setattr__(self, "s_covariates", tuple(self.s_covariates))
        object.__setattr__(self, "skip_blocks", frozenset(self.skip_blocks))
        shared = tuple(e for e in SHARED_EFFECTS if e in self.shared_effects)
        unknown = set(self.shared_effects) - set(SHARED_EFFECTS)
        if unknown:
            raise ValueError(f"unknown shared effect(s) {sorted(unknown)}")
        object.__setattr__(self, "shared_effects", shared)
        if self.mode == "mean-joint" and taus:
            raise ValueError("mean-joint mode takes no quantile levels")
        if self.mode != "mean-joint" and not taus:
            raise ValueError(f"{self.mode} mode needs at least one quantile level")
        if self.is_joint and not shared:
            raise ValueError("joint modes need at least one shared random effect")
        if self.grid_k < 1:
            raise ValueError("grid_k must be positive")

    @property
    def is_joint(self) -> bool:
        return self.mode != "long-quantile"

    @property
    def is_quantile(self) -> bool:
        return self.mode != "mean-joint"

    def to_dict(self) -> dict:
        """Plain, JSON-serialisable description (used for hashing and manifests)."""

        def plain(v):
            if v is None or isinstance(v, (str, bool, int, float)):
                return v
            return np.asarray(v, dtype=float).tolist()

        p = self.priors
        return {
            "mode": self.mode,
            "tau": [q.tau for q in self.tau_levels],
            "l_covariates": list(self.l_covariates),
            "s_covariates": list(self.s_covariates),
            "shared_effects": list(self.shared_effects),
            "grid_k": self.grid_k,
            "fixed_alpha": self.fixed_alpha,
            "skip_blocks": sorted(self.skip_blocks),
            "mcmc": {
                "chain_length": self.mcmc.chain_length,
                "burn_in": self.mcmc.burn_in,
                "thin": self.mcmc.thin,
                "seed": self.mcmc.seed,
            },
            "priors": {
                "beta_mean": plain(p.beta_mean),
                "beta_cov": plain(p.beta_cov),
                "sigma2": list(p.sigma2),
                "lambda": list(p.lam),
                "alpha": list(p.alpha),
                "re_cov_df": p.re_cov[0],
                "re_cov_scale": plain(p.re_cov[1]),
                "beta_s_mean": plain(p.beta_s_mean),
                "beta_s_cov": plain(p.beta_s_cov),
            },
        }

    def fingerprint(self) -> str:
        """SHA-256 of the canonical JSON form of ``to_dict``."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def for_tau(self, tau) -> "ModelSpec":
        q = tau if isinstance(tau, QuantileLevel) else QuantileLevel(float(tau))
        return replace(self, tau_levels=(q,))


@dataclass(frozen=True)
class HazardGrid:
    """Piecewise-constant baseline hazard on ``(cuts[k], cuts[k+1]]``."""

    cuts: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        cuts = np.asarray(self.cuts, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if cuts.ndim != 1 or cuts.shape[0] < 2:
            raise ValueError("need at least two cut points")
        if not np.all(np.diff(cuts) > 0):
            raise ValueError("cut points must be strictly increasing")
        if values.shape != (cuts.shape[0] - 1,):
            raise ValueError("need one hazard value per interval")
        if not np.all(values > 0):
            raise ValueError("hazard values must be positive")
        object.__setattr__(self, "cuts", cuts)
        object.__setattr__(self, "values", values)

    @property
    def k(self) -> int:
        return self.values.shape[0]

    def with_values(self, values) -> "HazardGrid":
        return HazardGrid(self.cuts, values)


@dataclass(frozen=True)
class DesignBundle:
    """Arrays the sampler works on; rows in canonical record order."""

    subject_ids: tuple
    y: np.ndarray
    time: np.ndarray
    x_long: np.ndarray
    long_names: tuple
    subject: np.ndarray
    row_start: np.ndarray
    shared_active: tuple
    entry: Optional[np.ndarray] = None
    exit: Optional[np.ndarray] = None
    event: Optional[np.ndarray] = None
    x_surv: Optional[np.ndarray] = None
    surv_names: tuple = ()

    @property
    def n(self) -> int:
        return len(self.subject_ids)

    @property
    def n_records(self) -> int:
        return self.y.shape[0]

    @property
    def z_shared(self) -> np.ndarray:
        """Shared-effect design: columns for the active effects among (1, t)."""
        full = np.column_stack([np.ones_like(self.time), self.time])
        return full[:, list(self.shared_active)]

    @property
    def has_survival(self) -> bool:
        return self.entry is not None


def build_designs(data: JointDataset, spec: ModelSpec) -> DesignBundle:
    """Assemble longitudinal, shared and survival designs.

    The longitudinal design is ``[1, covariates...]`` in the order of
    ``spec.l_covariates``; the shared design per record is ``[1, t]``
    restricted to ``spec.shared_effects``.
    """
    available = set(data.covariate_names) | {TIME}
    for name in spec.l_covariates + spec.s_covariates:
        if name not in available:
            raise DataValidationError(f"unknown covariate {name!r}; available: {sorted(available)}")
    if spec.is_joint and not data.has_survival:
        raise DataValidationError("joint modes need survival records")
    recs = data.longitudinal
    ids = data.subject_ids
    index = {sid: i for i, sid in enumerate(ids)}
    y = np.array([r.response for r in recs], dtype=float)
    t = np.array([r.time for r in recs], dtype=float)
    subj = np.array([index[r.subject_id] for r in recs], dtype=np.int64)
    cols = [np.ones_like(y)]
    for name in spec.l_covariates:
        cols.append(t if name == TIME else np.array([r.covariates[name] for r in recs], dtype=float))
    x_long = np.column_stack(cols)
    counts = np.bincount(subj, minlength=len(ids))
    row_start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    shared_active = tuple(SHARED_EFFECTS.index(e) for e in spec.shared_effects)
    bundle = dict(
        subject_ids=ids,
        y=y,
        time=t,
        x_long=x_long,
        long_names=("intercept",) + spec.l_covariates,
        subject=subj,
        row_start=row_start,
        shared_active=shared_active,
    )
    if spec.is_joint:
        surv = {r.subject_id: r for r in data.survival}
        entry = np.array([surv[s].entry for s in ids], dtype=float)
        exit_ = np.array([surv[s].exit for s in ids], dtype=float)
        event = np.array([surv[s].event for s in ids], dtype=bool)
        first = row_start[:-1]
        xs_cols = []
        for name in spec.s_covariates:
            if name == TIME:
                raise DataValidationError("time cannot be a baseline survival covariate")
            xs_cols.append(np.array([recs[j].covariates[name] for j in first], dtype=float))
        x_surv = np.column_stack(xs_cols) if xs_cols else np.zeros((len(ids), 0))
        bundle.update(entry=entry, exit=exit_, event=event, x_surv=x_surv, surv_names=spec.s_covariates)
    return DesignBundle(**bundle)


def default_grid(data_or_design, k: int) -> HazardGrid:
    """Grid with ``k`` intervals holding (near) equal numbers of events.

    Interior cuts sit midway between consecutive ordered event times at the
    ``j/k`` positions; the outer cuts are the earliest entry and the latest
    exit.  Values start at 1 and are replaced by the sampler.
    """
    if isinstance(data_or_design, JointDataset):
        if not data_or_design.has_survival:
            raise DataValidationError("no survival records")
        entry = np.array([r.entry for r in data_or_design.survival])
        exit_ = np.array([r.exit for r in data_or_design.survival])
        event = np.array([r.event for r in data_or_design.survival], dtype=bool)
    else:
        entry, exit_, event = data_or_design.entry, data_or_design.exit, data_or_design.event
    if k < 1:
        raise ValueError("k must be positive")
    times = np.sort(exit_[event])
    if times.size == 0:
        raise DataValidationError("no events: baseline hazard is not identifiable")
    lo, hi = float(entry.min()), float(exit_.max())
    d = times.size
    inner = []
    for j in range(1, min(k, d)):
        idx = int(round(j * d / k))
        idx = min(max(idx, 1), d - 1)
        inner.append(0.5 * (times[idx - 1] + times[idx]))
    cuts = np.unique(np.concatenate([[lo], np.array(inner, dtype=float), [hi]]))
    cuts = cuts[(cuts >= lo) & (cuts <= hi)]
    return HazardGrid(cuts, np.ones(cuts.shape[0] - 1))
