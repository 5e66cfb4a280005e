"""Slow, independent reference implementations for cross-validation.

Every fast path in the package has an oracle here that reaches the same
quantity by direct simulation: forward orbits for return times and
Birkhoff/Monte-Carlo statistics, plain backward Newton iteration (never
the Abel function) for orbit sums, and Ulam's method for densities.

Randomness policy: all stochastic oracles take an integer seed and use
numpy's default_rng (PCG64); results are deterministic given (seed,
parameters). Hot loops compile with numba when it is importable and fall
back to vectorized numpy otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .map_model import (
    PMMap,
    eval_fb,
    eval_fb_deriv,
    eval_fg,
    _fb_inverse_complex_vec,
    _fb_inverse_real_vec,
)

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba present in normal installs
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap


__all__ = [
    "OrbitSample",
    "iterate_return",
    "brute_sum",
    "UlamDensity",
    "ulam_induced",
    "ulam_branches",
    "birkhoff_average",
    "sample_return_times",
    "monte_carlo_sigma2",
]


# ---------------------------------------------------------------------------
# branch tables for the compiled kernels
# ---------------------------------------------------------------------------

def _affine_tables(m: PMMap):
    """Forward-affine coefficients of the good branches, or None.

    Each inverse branch v(w) = s*w + c gives the forward map
    f_g(x) = x/s - c/s on its cell. Non-affine branches disable the
    compiled path.
    """
    fs, fi, los, his = [], [], [], []
    for br in m.good_branches:
        w = np.array([0.1, 0.45, 0.9])
        dv = np.array([br.deriv(t) for t in w], dtype=float)
        if np.ptp(dv) > 1e-12 * max(1.0, abs(dv[0])):
            return None
        s = dv[0]
        c = float(br.eval(0.0))
        if abs(br.eval(0.7) - (s * 0.7 + c)) > 1e-12:
            return None
        fs.append(1.0 / s)
        fi.append(-c / s)
        los.append(br.cell[0])
        his.append(br.cell[1])
    return (np.array(fs), np.array(fi), np.array(los), np.array(his))


@njit(cache=True)
def _step_scalar(x, alpha, hc, a, fs, fi, los, his):
    if x < a:
        u = x**alpha
        h = hc[len(hc) - 1]
        for k in range(len(hc) - 2, -1, -1):
            h = h * u + hc[k]
        return x * h
    for b in range(len(fs)):
        if los[b] <= x <= his[b]:
            return fs[b] * x + fi[b]
    return fs[len(fs) - 1] * x + fi[len(fs) - 1]


@njit(cache=True)
def _orbit_fill(x, out, alpha, hc, a, fs, fi, los, his):
    for i in range(out.shape[0]):
        x = _step_scalar(x, alpha, hc, a, fs, fi, los, his)
        out[i] = x
    return x


@njit(cache=True)
def _tau_fill(x, max_steps, taus, alpha, hc, a, fs, fi, los, his):
    """Collect successive return times to [a,1] along one orbit."""
    count = 0
    t = 0
    for _ in range(max_steps):
        x = _step_scalar(x, alpha, hc, a, fs, fi, los, his)
        t += 1
        if x >= a:
            taus[count] = t
            count += 1
            t = 0
            if count == taus.shape[0]:
                break
    return count, x


@njit(cache=True)
def _backstep_fill(y, d, alpha, hc, out_y, out_d):
    """Bad-branch backward orbit chunks, bracketed Newton per step."""
    lanes = y.shape[0]
    steps = out_y.shape[0]
    for j in range(lanes):
        yj = y[j]
        dj = d[j]
        for s in range(steps):
            t = yj
            lo = 0.0
            hi = t
            w = t
            for _ in range(100):
                u = w**alpha
                h = hc[len(hc) - 1]
                hp = 0.0
                for k in range(len(hc) - 2, -1, -1):
                    hp = hp * u + h
                    h = h * u + hc[k]
                r = w * h - t
                fp = h + alpha * u * hp
                # accept on the relative residual and leave through one last
                # Newton increment: deep Abel evaluations amplify position
                # error, and a bisection midpoint must never be the final word
                if abs(r) <= 1e-14 * t:
                    w = w - r / fp
                    break
                if r > 0:
                    hi = w
                else:
                    lo = w
                wn = w - r / fp
                if not (lo < wn < hi):
                    wn = 0.5 * (lo + hi)
                if wn == w:
                    break
                w = wn
            u = w**alpha
            h = hc[len(hc) - 1]
            hp = 0.0
            for k in range(len(hc) - 2, -1, -1):
                hp = hp * u + h
                h = h * u + hc[k]
            dj = dj / (h + alpha * u * hp)
            yj = w
            out_y[s, j] = yj
            out_d[s, j] = dj
        y[j] = yj
        d[j] = dj


# ---------------------------------------------------------------------------
# forward-orbit oracles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OrbitSample:
    """One direct first-return computation; tau == orbit_cap flags failure."""

    x0: float
    tau: int
    endpoint: float
    orbit_cap: int

    @property
    def returned(self) -> bool:
        return self.tau < self.orbit_cap


def iterate_return(m: PMMap, x: float, cap: int = 10**7) -> OrbitSample:
    """First return to [a,1] by direct iteration of f; exact integer tau."""
    if not m.a <= x <= 1:
        raise ValueError(f"iterate_return needs x in [a,1], got {x!r}")
    tables = _affine_tables(m)
    if tables is not None and HAVE_NUMBA:
        taus = np.zeros(1, dtype=np.int64)
        count, end = _tau_fill(x, cap, taus, m.alpha,
                               np.asarray(m.h_coeffs, float), m.a, *tables)
        if count == 1:
            return OrbitSample(x, int(taus[0]), float(end), cap)
        return OrbitSample(x, cap, float(end), cap)
    y = eval_fg(m, x)
    tau = 1
    while y < m.a and tau < cap:
        y = eval_fb(m, y)
        tau += 1
    return OrbitSample(x, tau, float(y), cap)


def _orbit_chunks(m: PMMap, x0: float, total: int, chunk: int):
    """Yield forward-orbit segments of length <= chunk starting after x0."""
    tables = _affine_tables(m)
    x = x0
    done = 0
    hc = np.asarray(m.h_coeffs, float)
    while done < total:
        n = min(chunk, total - done)
        out = np.empty(n)
        if tables is not None and HAVE_NUMBA:
            x = _orbit_fill(x, out, m.alpha, hc, m.a, *tables)
        else:
            xi = x
            for i in range(n):
                xi = eval_fb(m, xi) if xi < m.a else eval_fg(m, xi)
                out[i] = xi
            x = xi
        done += n
        yield out


def birkhoff_average(m: PMMap, obs, steps: int, seed: int = 0):
    """(mean, stderr) of obs along one orbit; 1% burn-in, batch means."""
    if steps < 10**4:
        raise ValueError("birkhoff_average needs steps >= 1e4")
    phi = getattr(obs, "eval", obs)
    rng = np.random.default_rng(seed)
    x0 = m.a + (1 - m.a) * rng.random()
    burn = steps // 100
    n_batches = 50
    batch = (steps - burn) // n_batches
    sums = np.zeros(n_batches)
    got = np.zeros(n_batches, dtype=np.int64)
    x = x0
    for seg in _orbit_chunks(m, x0, burn, min(burn, 1 << 17)):
        x = seg[-1]
    for b in range(n_batches):
        rem = batch
        for seg in _orbit_chunks(m, x, rem, min(rem, 1 << 17)):
            sums[b] += float(np.sum(phi(seg)))
            got[b] += len(seg)
            x = seg[-1]
    means = sums / got
    mean = float(means.mean())
    stderr = float(means.std(ddof=1) / math.sqrt(n_batches))
    return mean, stderr


def sample_return_times(m: PMMap, count: int, seed: int = 0,
                        cap: int = 10**8) -> np.ndarray:
    """Return times observed along one orbit started from a random seed.

    The naive estimator mean(taus) is biased low for heavy tails: the
    orbit window truncates long excursions.
    """
    rng = np.random.default_rng(seed)
    x0 = m.a + (1 - m.a) * rng.random()
    tables = _affine_tables(m)
    if tables is not None and HAVE_NUMBA:
        taus = np.zeros(count, dtype=np.int64)
        got, _ = _tau_fill(x0, cap, taus, m.alpha,
                           np.asarray(m.h_coeffs, float), m.a, *tables)
        return taus[:got]
    taus = []
    x = x0
    steps = 0
    while len(taus) < count and steps < cap:
        s = iterate_return(m, x, cap - steps)
        if not s.returned:
            break
        taus.append(s.tau)
        steps += s.tau
        x = s.endpoint
    return np.asarray(taus, dtype=np.int64)


# ---------------------------------------------------------------------------
# backward-orbit sum oracle
# ---------------------------------------------------------------------------

def brute_sum(Q, m: PMMap, z, terms: int, chunk: int = 1 << 16):
    """(value, tail_bound): direct summation of r[Q](n; z) over n = 0..terms.

    Backward orbit by repeated Newton inversion only; no Abel function is
    involved, so this is an independent check of the Euler-Maclaurin path.
    The tail bound integrates the decay envelope |r(n)| <= C n^{delta-bb}
    with C fitted to the deepest computed terms. Accepts a vector z and
    then returns vector (values, tail_bounds).
    """
    q = getattr(Q, "eval", Q)
    qbar, beta, gamma, delta = Q.decay
    bb = (beta + (1 + m.alpha) * gamma) / m.alpha
    s = bb - delta
    if s <= 1:
        raise ValueError("decay too slow to sum: need beta_bar > 1 + delta")
    complex_in = np.iscomplexobj(z)
    dtype = complex if complex_in else float
    z_arr = np.atleast_1d(np.asarray(z, dtype=dtype))
    scalar = np.isscalar(z) or np.asarray(z).ndim == 0
    value = np.asarray(q(z_arr, np.ones_like(z_arr), 0), dtype=dtype).copy()
    y = z_arr.copy()
    d = np.ones_like(z_arr)
    hc = np.asarray(m.h_coeffs, float)
    done = 0
    c_env = np.zeros(z_arr.shape)
    while done < terms:
        n_chunk = min(chunk, terms - done)
        out_y = np.empty((n_chunk, len(z_arr)), dtype=dtype)
        out_d = np.empty_like(out_y)
        if HAVE_NUMBA and not complex_in:
            _backstep_fill(y, d, m.alpha, hc, out_y, out_d)
        else:
            step = _fb_inverse_complex_vec if complex_in else _fb_inverse_real_vec
            for i in range(n_chunk):
                y = step(m, y, seed=y)
                d = d / eval_fb_deriv(m, y)
                out_y[i] = y
                out_d[i] = d
        ns = np.arange(done + 1, done + n_chunk + 1, dtype=float)
        r = np.asarray(q(out_y, out_d, ns[:, None]), dtype=dtype)
        value += r.sum(axis=0)
        k_env = min(n_chunk, 4096)
        env = np.abs(r[-k_env:]) * ns[-k_env:, None] ** s
        c_env = np.maximum(c_env, env.max(axis=0))
        done += n_chunk
    tail = 2.0 * c_env * terms ** (1.0 - s) / (s - 1.0)
    if scalar:
        return (complex(value[0]) if complex_in else float(value[0])), float(tail[0])
    return value, tail


# ---------------------------------------------------------------------------
# Ulam densities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UlamDensity:
    """Piecewise-constant probability density on uniform cells."""

    edges: np.ndarray
    values: np.ndarray

    def __call__(self, x):
        idx = np.clip(np.searchsorted(self.edges, x, side="right") - 1,
                      0, len(self.values) - 1)
        return self.values[idx]


def _accumulate_intervals(T: np.ndarray, y: np.ndarray, p: float, wb: float):
    """Add source intervals y[k]..y[k+1] (target cell k) into T.

    Each interval must be shorter than one cell (contracting branches),
    so it meets at most two source cells.
    """
    bins = T.shape[0]
    lo = np.minimum(y[:-1], y[1:])
    hi = np.maximum(y[:-1], y[1:])
    if (hi - lo).max() > wb * (1 + 1e-9):
        raise ValueError("branch is not contracting at the cell scale")
    ks = np.arange(bins)
    i0 = np.clip(((lo - p) / wb).astype(int), 0, bins - 1)
    edge = p + (i0 + 1) * wb
    part1 = np.clip(np.minimum(hi, edge) - lo, 0.0, None)
    part2 = np.clip(hi - np.maximum(lo, edge), 0.0, None)
    i1 = np.minimum(i0 + 1, bins - 1)
    np.add.at(T, (i0, ks), part1)
    np.add.at(T, (i1, ks), part2)


def _stationary_density(T: np.ndarray, p: float, q: float) -> UlamDensity:
    bins = T.shape[0]
    T = T / T.sum(axis=1, keepdims=True)
    pi = np.full(bins, 1.0 / bins)
    for _ in range(20000):
        nxt = pi @ T
        if np.abs(nxt - pi).sum() < 1e-13:
            pi = nxt
            break
        pi = nxt
    else:
        raise ArithmeticError("Ulam power iteration did not converge")
    wb = (q - p) / bins
    edges = np.linspace(p, q, bins + 1)
    return UlamDensity(edges, pi / wb)


def ulam_branches(branches, p: float, q: float, bins: int) -> UlamDensity:
    """Ulam density for an expanding map given by contracting inverse branches."""
    if bins < 16:
        raise ValueError("need bins >= 16")
    E = np.linspace(p, q, bins + 1)
    wb = (q - p) / bins
    w = (E - p) / (q - p)
    T = np.zeros((bins, bins))
    for br in branches:
        y = np.asarray([br.eval(t) for t in w], dtype=float)
        _accumulate_intervals(T, y, p, wb)
    return _stationary_density(T, p, q)


def ulam_induced(m: PMMap, af, bins: int, depth: int = 4096) -> UlamDensity:
    """Ulam density of the induced map on [a,1].

    Branches of the induced map are v_iota composed with depth-n backward
    orbits of the bad branch; depth truncates the branch family, and the
    lost mass is absorbed by row normalization.
    """
    from .induced import backward_orbit

    if bins < 16:
        raise ValueError("need bins >= 16")
    E = np.linspace(m.a, 1.0, bins + 1)
    wb = (1.0 - m.a) / bins
    pts, _ = backward_orbit(af, E, depth)
    T = np.zeros((bins, bins))
    for br in m.good_branches:
        for n in range(depth + 1):
            y = np.asarray(br.eval(pts[n]), dtype=float)
            _accumulate_intervals(T, y, m.a, wb)
    return _stationary_density(T, m.a, 1.0)


# ---------------------------------------------------------------------------
# Monte-Carlo diffusion oracle
# ---------------------------------------------------------------------------

def _step_lanes(m: PMMap, x: np.ndarray, hc: np.ndarray) -> np.ndarray:
    bad = x < m.a
    if bad.any():
        xb = x[bad]
        u = xb**m.alpha
        h = np.zeros_like(xb)
        for c in hc[::-1]:
            h = h * u + c
        x[bad] = xb * h
    for br in m.good_branches:
        lo, hi = br.cell
        sel = ~bad & (x >= lo) & (x <= hi)
        if sel.any():
            x[sel] = br.inverse(x[sel]) if br.inverse is not None else \
                np.asarray([eval_fg(m, t) for t in x[sel]])
    return x


def monte_carlo_sigma2(m: PMMap, obs, samples: int, block: int = 2000,
                       seed: int = 0, lanes: int = 256):
    """(sigma2, stderr): variance of normalized block sums of centered obs.

    Runs `lanes` independent orbits totalling `samples` steps, centers by
    the global empirical mean, and estimates Var(S_block)/block; stderr
    comes from grouping blocks into 32 batches.
    """
    if samples < 10**5:
        raise ValueError("monte_carlo_sigma2 needs samples >= 1e5")
    phi = getattr(obs, "eval", obs)
    rng = np.random.default_rng(seed)
    hc = np.asarray(m.h_coeffs, float)
    x = m.a + (1 - m.a) * rng.random(lanes)
    per_lane = samples // lanes
    n_blocks = per_lane // block
    if n_blocks * lanes < 64 or n_blocks < 1:
        raise ValueError("too few blocks; lower block or raise samples")
    for _ in range(1000 + block):
        _step_lanes(m, x, hc)
    bsums = np.zeros((n_blocks, lanes))
    total = 0.0
    for b in range(n_blocks):
        acc = np.zeros(lanes)
        for _ in range(block):
            _step_lanes(m, x, hc)
            acc += phi(x)
        bsums[b] = acc
        total += float(acc.sum())
    mean = total / (n_blocks * lanes * block)
    centered = bsums - block * mean
    v = centered.ravel() ** 2 / block
    groups = np.array_split(v, 32)
    gmeans = np.array([g.mean() for g in groups])
    sigma2 = float(v.mean())
    stderr = float(gmeans.std(ddof=1) / math.sqrt(len(gmeans)))
    return sigma2, stderr
