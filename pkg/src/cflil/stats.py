"""Limit-theorem statistics along sampled digit sequences."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .sampler import DigitTrajectory, LevelTable
from .seqpot import AlphaFamily, level_arrays, log_alpha_array, minimal_tail_value

Q_BOUND = 4.0 + 2.0 * math.log(2.0)
APPROXIMANT_CAP = 10_000


def lil_norm(n) -> np.ndarray:
    """sqrt(2 n loglog n), NaN below n = 16."""
    n = np.asarray(n, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.sqrt(2.0 * n * np.log(np.log(n)))
    return np.where(n >= 16, out, np.nan)


def digit_statistic(log_digit, log_alpha, gamma) -> np.ndarray:
    """gamma_k * log(x_k / alpha_k), clipped at 0 against round-off."""
    return np.maximum(gamma * (log_digit - log_alpha), 0.0)


def log_q_series(log_digits) -> np.ndarray:
    """log q_0 .. log q_N from digit logs (q_n = x_{n-1} q_{n-1} + q_{n-2})."""
    ld = np.asarray(log_digits, dtype=float)
    out = np.empty(len(ld) + 1)
    out[0] = 0.0
    r = 0.0  # q_{n-2}/q_{n-1}, with q_{-1} = 0
    acc = 0.0
    for k, l in enumerate(ld):
        step = l + math.log1p(r * math.exp(-l)) if l < 700 else l
        acc += step
        out[k + 1] = acc
        r = math.exp(-step)
    return out


def shifted_values(log_digits, tail: float = 0.0):
    """log S^k(x) for k < N from the digits and the value ``tail`` of S^N(x)."""
    ld = np.asarray(log_digits, dtype=float)
    out = np.empty(len(ld))
    t = float(tail)
    for k in range(len(ld) - 1, -1, -1):
        l = ld[k]
        lt = -(l + math.log1p(t * math.exp(-l))) if l < 700 else -l
        out[k] = lt
        t = math.exp(lt)
    return out


@dataclass
class ShiftedValue:
    k: int
    value: float
    width: float


def shifted_value_table(traj: DigitTrajectory, tail_level: int | None = None) -> list[ShiftedValue]:
    """S^k(x) with the enclosure between a minimal tail and a terminated expansion."""
    n = traj.length
    lvl = n if tail_level is None else tail_level
    hi = np.exp(shifted_values(traj.log_digit, minimal_tail_value(traj.family, lvl)))
    lo = np.exp(shifted_values(traj.log_digit, 0.0))
    return [ShiftedValue(k, float(hi[k]), float(abs(hi[k] - lo[k]))) for k in range(n)]


@dataclass
class StatSeries:
    """Per-step arrays for n = 1..N (index n-1) plus log q_0..log q_N."""

    stat: np.ndarray
    S: np.ndarray
    lil_ratio: np.ndarray
    max_abs_lil: float
    log_q: np.ndarray
    ld_num: np.ndarray
    ld_den: np.ndarray

    @property
    def n(self) -> int:
        return len(self.stat)


def _levels(family: AlphaFamily, n: int):
    arr = level_arrays(family, 0, n + 1)
    return arr.log_alpha, arr.gamma


def log_diameter_series(traj: DigitTrajectory, log_q: np.ndarray | None = None) -> np.ndarray:
    """log diam of the cylinder of the first n digits, n = 1..N.

    diam ~ phi_w / alpha_n with phi_w the squared product of S^k at the
    minimal-tail representative; the product equals 1/(q_n + t_n q_{n-1}).
    """
    fam = traj.family
    N = traj.length
    lq = log_q_series(traj.log_digit) if log_q is None else log_q
    la = log_alpha_array(fam, np.arange(1, N + 1))
    t = np.array([minimal_tail_value(fam, n) for n in range(1, N + 1)])
    prod = lq[1:] + np.log1p(t * np.exp(lq[:-1] - lq[1:]))
    return -2.0 * prod - la


def lil_series(traj: DigitTrajectory) -> StatSeries:
    if traj.length < 16:
        raise ValueError("trajectory must have at least 16 digits")
    N = traj.length
    la, g = _levels(traj.family, N)
    stat = digit_statistic(traj.log_digit, la[:N], g[:N])
    S = np.cumsum(stat - 1.0)
    n = np.arange(1, N + 1)
    lil = S / lil_norm(n)
    lq = log_q_series(traj.log_digit)
    num = np.cumsum(traj.log_cond_prob)
    den = log_diameter_series(traj, lq)
    return StatSeries(stat, S, lil, float(np.nanmax(np.abs(lil))), lq, num, den)


@dataclass
class QIdentity:
    values: np.ndarray
    max_abs: float
    bound: float = Q_BOUND

    @property
    def ok(self) -> bool:
        return self.max_abs <= self.bound


def q_identity(traj: DigitTrajectory) -> QIdentity:
    """sum_{k<n} log S^k(x) + log q_n(x) for every n <= length."""
    lS = shifted_values(traj.log_digit, minimal_tail_value(traj.family, traj.length))
    lq = log_q_series(traj.log_digit)
    vals = np.cumsum(lS) + lq[1:]
    return QIdentity(vals, float(np.max(np.abs(vals))))


# -- shifted-value and approximant forms ----------------------------------------------


@dataclass
class ShiftedSeries:
    shifted: np.ndarray               # running sums, n = 1..N
    approximant: np.ndarray           # log(q(S^k alpha)/q(S^k x)) orientation
    approximant_inverted: np.ndarray  # the same with the ratio inverted
    digit: np.ndarray
    gap: np.ndarray                   # per-step |shifted summand - digit summand|

    def ratio(self, which: str = "shifted") -> np.ndarray:
        s = getattr(self, which)
        return s / lil_norm(np.arange(1, len(s) + 1))


class _Continuants:
    """log q_{n-k}(S^k x) = log K(x_k .. x_{n-1}) for all k < n, advanced in n."""

    def __init__(self, N: int):
        self.cur = np.zeros(N)          # log K(x_k .. x_{n-1})
        self.prev = np.full(N, -np.inf)  # log K(x_k .. x_{n-2})
        self.n = 0

    def push(self, l: float) -> np.ndarray:
        n = self.n + 1
        c = self.cur[:n].copy()
        p = self.prev[:n].copy()
        c[n - 1], p[n - 1] = 0.0, -np.inf  # empty word: K = 1, before it 0
        new = l + c + np.log1p(np.exp(p - c - l))
        self.prev[:n] = c
        self.cur[:n] = new
        self.n = n
        return new


def shifted_lil_series(traj: DigitTrajectory) -> ShiftedSeries:
    N = traj.length
    if N > APPROXIMANT_CAP:
        raise ValueError(f"approximant form is O(n^2); n = {N} exceeds the cap {APPROXIMANT_CAP}")
    fam = traj.family
    la, g = _levels(fam, N)
    ld = np.asarray(traj.log_digit, dtype=float)
    la = la[:N]
    g = g[:N]
    tail = minimal_tail_value(fam, N)
    lSx = shifted_values(ld, tail)
    lSa = shifted_values(la, tail)
    s_sh = g * (lSa - lSx) - 1.0
    s_dig = digit_statistic(ld, la, g) - 1.0
    gprev = np.concatenate([[0.0], g[:-1]])
    w = gprev - g
    cx, ca = _Continuants(N), _Continuants(N)
    acc = np.empty(N)
    for n in range(1, N + 1):
        dx = cx.push(ld[n - 1])
        da = ca.push(la[n - 1])
        acc[n - 1] = float(np.dot(w[:n], da - dx))
    steps = np.arange(1, N + 1)
    approximant = acc - steps
    approx_inv = -acc - steps
    return ShiftedSeries(np.cumsum(s_sh), approximant, approx_inv, np.cumsum(s_dig),
                         np.abs(s_sh - s_dig))


# -- local dimension ---------------------------------------------------------------------


@dataclass
class LocalDimension:
    n: int
    estimate: float
    log_mass: float
    log_diam: float
    log_diam_q: float
    log_theta: float
    threshold_violations: int


def local_dimension(traj: DigitTrajectory, n: int, delta: float = 0.5) -> LocalDimension:
    """log nu_0(cylinder) / log diam(cylinder) for the first n digits, with diagnostics."""
    if n < 1 or n > traj.length:
        raise ValueError("need 1 <= n <= trajectory length")
    fam = traj.family
    ld = np.asarray(traj.log_digit[:n], dtype=float)
    lS = shifted_values(ld, minimal_tail_value(fam, n))
    la_n = fam.log_alpha(n)
    log_diam = 2.0 * math.fsum(lS) - la_n
    if log_diam >= -1.0:
        raise ValueError("cylinder too coarse for a dimension estimate (log diam >= -1)")
    log_mass = math.fsum(traj.log_cond_prob[:n])
    lq = log_q_series(ld)[-1]
    la, g = _levels(fam, n)
    # Theta_n with sqrt(phi(S^k x)) = S^k x for the Gauss-map potential
    lSx = shifted_values(np.asarray(traj.log_digit, dtype=float),
                         minimal_tail_value(fam, traj.length))[:n]
    log_xi = g[:n] * (la[:n] + lSx)
    gn = g[n]
    log_theta = ((1 + delta) / (2 * gn)) * math.log(max(n, 1)) + 0.5 * la[n] \
        + float(np.sum(np.log(g[:n]) + log_xi))
    # Borel-Cantelli threshold x_k <= b_k^2 = alpha_k k^((1+delta)/gamma_k)
    k = np.arange(1, n)
    bound = la[1:n] + (1 + delta) * np.log(k) / g[1:n]
    viol = int(np.sum(ld[1:n] > bound))
    return LocalDimension(n, log_mass / log_diam, log_mass, log_diam, -2.0 * lq - la_n,
                          log_theta, viol)


# -- distribution tests -----------------------------------------------------------------


@dataclass
class KSReport:
    ks_stat: float
    p_value: float
    n: int


def distribution_tests(samples, target: str = "exp1") -> KSReport:
    x = np.asarray(samples, dtype=float)
    if x.size < 100:
        raise ValueError("need at least 100 samples")
    dist = {"exp1": "expon", "std_normal": "norm"}.get(target)
    if dist is None:
        raise ValueError(f"unknown target {target!r}")
    res = sps.kstest(x, dist)
    return KSReport(float(res.statistic), float(res.pvalue), int(x.size))


# -- batch accumulation ------------------------------------------------------------------


class BatchLIL:
    """Running digit sums for a batch of seeds fed block by block.

    Tracks S_n per seed, snapshots at chosen n and max |S_n|/sqrt(2n loglog n)
    over a window of n.
    """

    def __init__(self, n_seeds: int, snapshots=(), window=(1000, 10 ** 6)):
        self.S = np.zeros(n_seeds)
        self.n = 0
        self.snap = {int(s): None for s in snapshots}
        self.window = window
        self.max_ratio = np.zeros(n_seeds)
        self.max_ratio_all = np.zeros(n_seeds)

    def feed(self, tab: LevelTable, log_digit: np.ndarray):
        st = digit_statistic(log_digit, tab.log_alpha, tab.gamma) - 1.0
        cs = self.S[:, None] + np.cumsum(st, axis=1)
        n = self.n + np.arange(1, st.shape[1] + 1)
        norm = lil_norm(n)
        with np.errstate(invalid="ignore"):
            r = np.abs(cs) / norm
        lo, hi = self.window
        inwin = (n >= lo) & (n <= hi)
        if inwin.any():
            self.max_ratio = np.maximum(self.max_ratio, r[:, inwin].max(axis=1))
        fin = n >= 16
        if fin.any():
            self.max_ratio_all = np.maximum(self.max_ratio_all, r[:, fin].max(axis=1))
        for s in self.snap:
            if self.n < s <= self.n + st.shape[1]:
                self.snap[s] = cs[:, s - self.n - 1].copy()
        self.S = cs[:, -1].copy()
        self.n += st.shape[1]
