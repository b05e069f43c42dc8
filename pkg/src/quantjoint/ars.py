"""Adaptive rejection sampling for univariate log-concave densities.

The sampler keeps a sorted set of abscissae with log-density values (and
derivatives, when available).  From these it builds a piecewise-linear
upper hull of the log-density, either from tangents (Gilks & Wild, 1992)
or, without derivatives, from extended chords (Gilks, 1992).  Chords
between abscissae form the lower squeezing hull.  Every evaluated
proposal is added to the abscissae, so the envelope tightens as it is
used.

``make_sampler`` binds the kernels to a ``logf(x, params) -> (value,
derivative)`` callable, compiled for a jitted ``logf`` or as plain
Python for any callable.
"""

import math
from typing import Callable, NamedTuple

import numpy as np

from ._jit import jit

OK = 0
NONCONCAVE = 1
MAX_ITER = 2
BAD_ENVELOPE = 3
NONFINITE = 4

STATUS_MESSAGES = {
    NONCONCAVE: "log-density is not concave",
    MAX_ITER: "maximum number of envelope refinements exceeded",
    BAD_ENVELOPE: "initial abscissae do not give a proper envelope",
    NONFINITE: "log-density returned a non-finite value",
}

DEFAULT_TOL = 1e-8
DEFAULT_MAX_POINTS = 64
DEFAULT_MAX_ITER = 2000


class ARSError(RuntimeError):
    """Adaptive rejection sampling failed.

    ``abscissa`` holds the point where the failure was detected, when
    there is one.
    """

    def __init__(self, message, abscissa=float("nan"), status=None):
        super().__init__(message)
        self.abscissa = abscissa
        self.status = status


class NonConcavityError(ARSError):
    pass


class MaxRefinementError(ARSError):
    pass


def raise_for_status(status, abscissa, context=""):
    if status == OK:
        return
    msg = STATUS_MESSAGES.get(status, "unknown ARS failure")
    if not math.isnan(abscissa):
        msg += f" (at x={abscissa!r})"
    if context:
        msg = f"{context}: {msg}"
    if status == NONCONCAVE:
        raise NonConcavityError(msg, abscissa, status)
    if status == MAX_ITER:
        raise MaxRefinementError(msg, abscissa, status)
    raise ARSError(msg, abscissa, status)


@jit
def _violation(value, bound, tol):
    # value exceeding bound by more than the relative tolerance
    return value - bound > tol * max(1.0, abs(value))


@jit
def _check_local(xs, hs, ds, m, i, tangent, tol):
    """Check concavity around index ``i``; return offending abscissa or nan."""
    lo = max(i - 2, 0)
    hi = min(i + 2, m - 1)
    for j in range(lo + 1, hi):
        # chord through the neighbours must not lie above the middle point
        w = (xs[j + 1] - xs[j]) / (xs[j + 1] - xs[j - 1])
        chord = w * hs[j - 1] + (1.0 - w) * hs[j + 1]
        if _violation(chord, hs[j], tol):
            return xs[j]
    if tangent:
        for j in range(lo, hi):
            # each tangent must stay above the neighbouring point
            t_right = hs[j] + ds[j] * (xs[j + 1] - xs[j])
            if _violation(hs[j + 1], t_right, tol):
                return xs[j + 1]
            t_left = hs[j + 1] + ds[j + 1] * (xs[j] - xs[j + 1])
            if _violation(hs[j], t_left, tol):
                return xs[j]
    return np.nan


@jit
def _build_envelope(xs, hs, ds, m, lower, upper, tangent, seg_lo, seg_hi, seg_x, seg_h, seg_d):
    """Fill the upper-hull segment arrays.  Returns the segment count, -1 if improper."""
    ns = 0
    if tangent:
        lo = lower
        for i in range(m):
            if i < m - 1:
                dd = ds[i] - ds[i + 1]
                scale = abs(ds[i]) + abs(ds[i + 1])
                if dd > 1e-14 * scale and dd > 0.0:
                    z = (hs[i + 1] - hs[i] - xs[i + 1] * ds[i + 1] + xs[i] * ds[i]) / dd
                    z = min(max(z, xs[i]), xs[i + 1])
                else:
                    z = 0.5 * (xs[i] + xs[i + 1])
                hi = z
            else:
                hi = upper
            seg_lo[ns] = lo
            seg_hi[ns] = hi
            seg_x[ns] = xs[i]
            seg_h[ns] = hs[i]
            seg_d[ns] = ds[i]
            ns += 1
            lo = hi
    else:
        if m < 3:
            return -1
        # left tail: first chord extended
        c0 = (hs[1] - hs[0]) / (xs[1] - xs[0])
        seg_lo[ns] = lower
        seg_hi[ns] = xs[0]
        seg_x[ns] = xs[0]
        seg_h[ns] = hs[0]
        seg_d[ns] = c0
        ns += 1
        for i in range(m - 1):
            has_left = i >= 1
            has_right = i + 2 <= m - 1
            if has_left:
                cl = (hs[i] - hs[i - 1]) / (xs[i] - xs[i - 1])
            else:
                cl = 0.0
            if has_right:
                cr = (hs[i + 2] - hs[i + 1]) / (xs[i + 2] - xs[i + 1])
            else:
                cr = 0.0
            if has_left and has_right:
                dd = cl - cr
                if dd > 1e-14 * (abs(cl) + abs(cr)) and dd > 0.0:
                    z = (hs[i + 1] - hs[i] - cr * xs[i + 1] + cl * xs[i]) / dd
                    z = min(max(z, xs[i]), xs[i + 1])
                else:
                    z = xs[i + 1]
                if z > xs[i]:
                    seg_lo[ns] = xs[i]
                    seg_hi[ns] = z
                    seg_x[ns] = xs[i]
                    seg_h[ns] = hs[i]
                    seg_d[ns] = cl
                    ns += 1
                if z < xs[i + 1]:
                    seg_lo[ns] = z
                    seg_hi[ns] = xs[i + 1]
                    seg_x[ns] = xs[i + 1]
                    seg_h[ns] = hs[i + 1]
                    seg_d[ns] = cr
                    ns += 1
            elif has_left:
                seg_lo[ns] = xs[i]
                seg_hi[ns] = xs[i + 1]
                seg_x[ns] = xs[i]
                seg_h[ns] = hs[i]
                seg_d[ns] = cl
                ns += 1
            else:
                seg_lo[ns] = xs[i]
                seg_hi[ns] = xs[i + 1]
                seg_x[ns] = xs[i + 1]
                seg_h[ns] = hs[i + 1]
                seg_d[ns] = cr
                ns += 1
        cm = (hs[m - 1] - hs[m - 2]) / (xs[m - 1] - xs[m - 2])
        seg_lo[ns] = xs[m - 1]
        seg_hi[ns] = upper
        seg_x[ns] = xs[m - 1]
        seg_h[ns] = hs[m - 1]
        seg_d[ns] = cm
        ns += 1
    if math.isinf(seg_lo[0]) and not seg_d[0] > 0.0:
        return -1
    if math.isinf(seg_hi[ns - 1]) and not seg_d[ns - 1] < 0.0:
        return -1
    return ns


@jit
def _segment_log_masses(ns, seg_lo, seg_hi, seg_x, seg_h, seg_d, cum):
    """Cumulative (unnormalised, max-shifted) segment masses written to ``cum``."""
    lm = np.empty(ns)
    top = -np.inf
    for j in range(ns):
        width = seg_hi[j] - seg_lo[j]
        d = seg_d[j]
        if not width > 0.0:
            lm[j] = -np.inf
            continue
        if d > 0.0:
            u_hi = seg_h[j] + d * (seg_hi[j] - seg_x[j])
            lm[j] = u_hi + math.log(-math.expm1(-d * width)) - math.log(d)
        elif d < 0.0:
            u_lo = seg_h[j] + d * (seg_lo[j] - seg_x[j])
            lm[j] = u_lo + math.log(-math.expm1(d * width)) - math.log(-d)
        else:
            lm[j] = seg_h[j] + math.log(width)
        if lm[j] > top:
            top = lm[j]
    acc = 0.0
    for j in range(ns):
        acc += math.exp(lm[j] - top)
        cum[j] = acc
    return acc


@jit
def _draw_from_envelope(ns, seg_lo, seg_hi, seg_d, cum, rng):
    target = rng.random() * cum[ns - 1]
    j = 0
    while j < ns - 1 and cum[j] < target:
        j += 1
    while j > 0 and not (cum[j] > cum[j - 1]):
        j -= 1
    u = rng.random()
    lo = seg_lo[j]
    hi = seg_hi[j]
    d = seg_d[j]
    width = hi - lo
    if d > 0.0:
        x = hi + math.log1p((1.0 - u) * math.expm1(-d * width)) / d
    elif d < 0.0:
        x = lo + math.log1p(u * math.expm1(d * width)) / d
    else:
        x = lo + u * width
    if x < lo:
        x = lo
    if x > hi:
        x = hi
    return x, j


@jit
def _squeeze(xs, hs, m, x):
    if x < xs[0] or x > xs[m - 1]:
        return -np.inf
    lo = 0
    hi = m - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if xs[mid] <= x:
            lo = mid
        else:
            hi = mid
    w = (x - xs[lo]) / (xs[hi] - xs[lo])
    return (1.0 - w) * hs[lo] + w * hs[hi]


class Sampler(NamedTuple):
    """ARS kernels bound to one log-density ``logf(x, params) -> (value, derivative)``."""

    ars_core: Callable
    ars_known: Callable
    bracket_mode: Callable
    ars_from_mode: Callable


def make_sampler(logf, compiled=True) -> Sampler:
    """Build ARS kernels for ``logf``.

    ``logf`` is bound through the closure rather than passed as an
    argument: a compiled function handed around at run time is embedded
    as a raw pointer, which blocks numba's on-disk cache.  With
    ``compiled=False`` the kernels are plain Python and ``logf`` may be
    any callable.
    """
    wrap = jit if compiled else _identity

    @wrap
    def ars_known(params, x_init, h_init, d_init, lower, upper, tangent, rng, out, max_points, max_iter, tol):
        """``ars_core`` with ``logf`` (value and derivative) at ``x_init`` already known."""
        n0 = x_init.shape[0]
        cap = max(max_points, n0)
        nseg_cap = 2 * cap + 2
        work = np.empty(3 * cap + 6 * nseg_cap)
        xs = work[:cap]
        hs = work[cap:2 * cap]
        ds = work[2 * cap:3 * cap]
        m = 0
        for i in range(n0):
            x = x_init[i]
            if not (x > lower and x < upper):
                return BAD_ENVELOPE, x
            if m > 0 and not x > xs[m - 1]:
                return BAD_ENVELOPE, x
            h = h_init[i]
            d = d_init[i]
            if not (math.isfinite(h) and (math.isfinite(d) or not tangent)):
                return NONFINITE, x
            xs[m] = x
            hs[m] = h
            ds[m] = d
            m += 1
        for i in range(m):
            bad = _check_local(xs, hs, ds, m, i, tangent, tol)
            if not math.isnan(bad):
                return NONCONCAVE, bad

        base = 3 * cap
        seg_lo = work[base:base + nseg_cap]
        seg_hi = work[base + nseg_cap:base + 2 * nseg_cap]
        seg_x = work[base + 2 * nseg_cap:base + 3 * nseg_cap]
        seg_h = work[base + 3 * nseg_cap:base + 4 * nseg_cap]
        seg_d = work[base + 4 * nseg_cap:base + 5 * nseg_cap]
        cum = work[base + 5 * nseg_cap:base + 6 * nseg_cap]
        ns = _build_envelope(xs, hs, ds, m, lower, upper, tangent, seg_lo, seg_hi, seg_x, seg_h, seg_d)
        if ns < 0:
            return BAD_ENVELOPE, np.nan
        total = _segment_log_masses(ns, seg_lo, seg_hi, seg_x, seg_h, seg_d, cum)
        if not (total > 0.0 and math.isfinite(total)):
            return BAD_ENVELOPE, np.nan

        n_out = out.shape[0]
        k = 0
        it = 0
        while k < n_out:
            it += 1
            if it > max_iter * n_out:
                return MAX_ITER, np.nan
            x, j = _draw_from_envelope(ns, seg_lo, seg_hi, seg_d, cum, rng)
            u_x = seg_h[j] + seg_d[j] * (x - seg_x[j])
            w = rng.random()
            l_x = _squeeze(xs, hs, m, x)
            if w <= math.exp(l_x - u_x):
                out[k] = x
                k += 1
                continue
            h, d = logf(x, params)
            if h == -np.inf:
                continue
            if not (math.isfinite(h) and (math.isfinite(d) or not tangent)):
                return NONFINITE, x
            if _violation(h, u_x, tol):
                return NONCONCAVE, x
            if w <= math.exp(h - u_x):
                out[k] = x
                k += 1
            if m < cap:
                # insert keeping abscissae sorted
                pos = m
                while pos > 0 and xs[pos - 1] > x:
                    xs[pos] = xs[pos - 1]
                    hs[pos] = hs[pos - 1]
                    ds[pos] = ds[pos - 1]
                    pos -= 1
                if (pos > 0 and xs[pos - 1] == x) or (pos < m and xs[pos + 1] == x):
                    # duplicate abscissa: undo the shift
                    for q in range(pos, m):
                        xs[q] = xs[q + 1]
                        hs[q] = hs[q + 1]
                        ds[q] = ds[q + 1]
                    continue
                xs[pos] = x
                hs[pos] = h
                ds[pos] = d
                m += 1
                bad = _check_local(xs, hs, ds, m, pos, tangent, tol)
                if not math.isnan(bad):
                    return NONCONCAVE, bad
                ns = _build_envelope(xs, hs, ds, m, lower, upper, tangent, seg_lo, seg_hi, seg_x, seg_h, seg_d)
                if ns < 0:
                    return BAD_ENVELOPE, np.nan
                _segment_log_masses(ns, seg_lo, seg_hi, seg_x, seg_h, seg_d, cum)
        return OK, np.nan

    @wrap
    def ars_core(params, x_init, lower, upper, tangent, rng, out, max_points, max_iter, tol):
        """Draw ``len(out)`` exact variates from ``exp(logf)``.

        Returns ``(status, abscissa)``; ``status`` is ``OK`` on success.  The
        envelope keeps adapting across the draws, which stay independent.
        """
        n0 = x_init.shape[0]
        hv = np.empty(n0)
        dv = np.empty(n0)
        for i in range(n0):
            x = x_init[i]
            if not (x > lower and x < upper) or (i > 0 and not x > x_init[i - 1]):
                return BAD_ENVELOPE, x
            h, d = logf(x, params)
            hv[i] = h
            dv[i] = d
        return ars_known(params, x_init, hv, dv, lower, upper, tangent, rng, out, max_points, max_iter, tol)

    @wrap
    def bracket_mode(params, x0, step, lower, upper, out, hv, dv):
        """Place three abscissae around a mode guess.

        ``out`` receives ``(x0 - left, x0, x0 + right)`` where each offset
        starts at ``step`` and doubles until the log-density has dropped below
        its value at ``x0``.  Against a finite bound the outer point is put
        halfway to the bound instead.  ``hv`` and ``dv`` receive ``logf`` at
        the three points.  Returns a status code.
        """
        h0, d0 = logf(x0, params)
        if not math.isfinite(h0):
            return NONFINITE
        for side in range(2):
            sign = -1.0 if side == 0 else 1.0
            bound = lower if side == 0 else upper
            slot = 0 if side == 0 else 2
            if math.isfinite(bound):
                x = 0.5 * (x0 + bound)
                h, d = logf(x, params)
                out[slot] = x
                hv[slot] = h
                dv[slot] = d
                continue
            good = 0.0  # largest offset known to have h >= h0
            bad = -1.0  # smallest offset known to give -inf / nan
            delta = step
            found = False
            x = x0
            h = h0
            d = d0
            for _ in range(200):
                x = x0 + sign * delta
                h, d = logf(x, params)
                if math.isfinite(h):
                    if h < h0:
                        found = True
                        break
                    good = delta
                    if bad > 0.0:
                        delta = 0.5 * (good + bad)
                    else:
                        delta *= 2.0
                else:
                    bad = delta
                    delta = 0.5 * (good + bad)
                    if not delta > good:
                        break
            if not found:
                return BAD_ENVELOPE
            out[slot] = x
            hv[slot] = h
            dv[slot] = d
        out[1] = x0
        hv[1] = h0
        dv[1] = d0
        return OK


    @wrap
    def ars_from_mode(params, x0, step, lower, upper, tangent, rng, max_points, tol):
        """Single draw with abscissae bracketed around ``x0``.  Returns (x, status, abscissa)."""
        buf = np.empty(10)
        xi = buf[0:3]
        hv = buf[3:6]
        dv = buf[6:9]
        out = buf[9:10]
        st = bracket_mode(params, x0, step, lower, upper, xi, hv, dv)
        if st != OK:
            return x0, st, x0
        st, bad = ars_known(params, xi, hv, dv, lower, upper, tangent, rng, out, max_points, DEFAULT_MAX_ITER, tol)
        return out[0], st, bad

    return Sampler(ars_core, ars_known, bracket_mode, ars_from_mode)


def _identity(fn):
    return fn
