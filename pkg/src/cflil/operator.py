"""Grid discretization of the level Ruelle operators and their normalized ratios.

A function on ``X_n`` is stored as a :class:`CylinderGrid`: values on depth-d
cylinders, slot ``j`` of coordinate ``i`` meaning digit ``alpha_{n+i} + j`` and
slot ``m`` collecting every digit from ``alpha_{n+i} + m`` on.  The leading
tail bucket may additionally carry a polynomial in ``u = log(a / alpha_n)`` so
that digit-logarithm statistics are integrated over the whole tail instead of
at a single representative digit.

All sums over digits are written in the scaled variable ``v = a / alpha``:

    sum_{a >= A} a^-q = alpha^(1-q) * sum_i h * (v0 + i h)^-q,   h = 1/alpha

which stays finite for alpha far beyond the double range.
"""

from __future__ import annotations

import csv
import io
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .seqpot import AlphaFamily, DomainError, alpha_float, minimal_tail_value

R_METRIC = 0.5
MAX_PROFILE_DEGREE = 4
DEFAULT_DEPTH = 3
DEFAULT_WIDTH = 64

# Bernoulli numbers B2..B8
_BERN = (1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0)
# smallest (v0 / h) handed to the Euler-Maclaurin tail
_EM_START = 64.0
_SERIES_EPS = 1e-18


class ConfigurationError(ValueError):
    """Grids whose level, depth or width do not fit together."""


class ConvergenceError(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


# -- tail sums ------------------------------------------------------------------


def _em_tail(q, v, h, j, s=None):
    """Euler-Maclaurin value of sum_{i>=0} h log^j(v+ih) (v+ih)^-q (v/h large)."""
    if s is None:
        s = q - 1.0
    ell = np.log(v)
    base = np.exp(-s * ell)  # v^(1-q)
    # integral_v^inf log^j(t) t^-q dt
    integral = np.zeros_like(base)
    fact = 1.0
    for i in range(j + 1):
        if i > 0:
            fact *= j - i + 1
        integral = integral + fact * ell ** (j - i) / s ** (i + 1)
    integral = integral * base
    # derivatives: G^(k)(v) = P_k(log v) v^(-q-k); P stored as coefficient rows
    P = np.zeros((j + 1,) + np.shape(ell))
    P[j] = 1.0

    def horner(coef):
        acc = np.zeros_like(ell)
        for c in coef[::-1]:
            acc = acc * ell + c
        return acc

    g0 = horner(P) * base / v
    total = integral + 0.5 * h * g0
    fac = 1.0
    for k in range(1, 8):
        dP = np.zeros_like(P)
        dP[:-1] = P[1:] * np.arange(1, j + 1).reshape((-1,) + (1,) * np.ndim(ell))
        P = dP - (q + (k - 1)) * P
        if k % 2 == 1:
            idx = (k + 1) // 2
            fac = math.factorial(k + 1)
            deriv = horner(P) * base / v ** (k + 1)
            total = total - _BERN[idx - 1] / fac * h ** (k + 1) * deriv
    return total


def scaled_tail_sum(q, v0, h, j: int = 0, prefix: int | None = None, s=None):
    """``sum_{i>=0} h * log(v_i)^j * v_i^-q`` with ``v_i = v0 + i h``.

    ``q``, ``v0`` and ``h`` broadcast.  The first terms are summed explicitly
    (``prefix`` of them, or as many as needed to reach ``v/h >= 64``) and the
    rest by Euler-Maclaurin through B8.  ``s`` may carry ``q - 1`` when it is
    known more accurately than the subtraction (q close to 1).
    """
    q, v0, h = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (q, v0, h)))
    if s is not None:
        s = np.broadcast_to(np.asarray(s, dtype=float), q.shape)
    if np.any(q < 1.0) or np.any((q - 1.0 if s is None else s) <= 0.0):
        raise DomainError("tail sum diverges for exponent <= 1")
    if j < 0 or j > MAX_PROFILE_DEGREE:
        raise DomainError("log power must be in 0..4")
    with np.errstate(divide="ignore"):
        ratio = np.where(h > 0, v0 / np.where(h > 0, h, 1.0), np.inf)
    if prefix is None:
        K = np.ceil(np.clip(_EM_START - ratio, 0.0, None)).astype(np.int64)
    else:
        K = np.full(q.shape, int(prefix), dtype=np.int64)
    head = np.zeros(q.shape)
    kmax = int(K.max()) if K.size else 0
    if kmax > 0:
        if prefix is not None and q.size == 1:
            v = v0.reshape(-1)[0] + h.reshape(-1)[0] * np.arange(kmax, dtype=float)
            terms = np.log(v) ** j * np.exp(-q.reshape(-1)[0] * np.log(v))
            head = np.full(q.shape, h.reshape(-1)[0] * math.fsum(terms))
        else:
            for i in range(kmax):
                live = i < K
                v = v0 + i * h
                with np.errstate(divide="ignore", invalid="ignore"):
                    t = np.where(live, h * np.log(v) ** j * v ** (-q), 0.0)
                head = head + t
    v1 = v0 + K * h
    tail = _em_tail(q, v1, h, j, s)
    out = head + tail
    return out if out.ndim else float(out)


def tail_sum(delta: float, start: int, xi: float = 0.0, j: int = 0) -> float:
    """``sum_{a >= start} log(a+xi)^j / (a+xi)^(2 delta)`` (explicit 10^4 terms + EM)."""
    if 2.0 * delta <= 1.0:
        raise DomainError("tail sum diverges for 2*delta <= 1")
    if start < 1:
        raise DomainError("start must be >= 1")
    return float(scaled_tail_sum(2.0 * delta, start + xi, 1.0, j, prefix=10_000))


def _binom_neg(p: float, n_terms: int) -> np.ndarray:
    """Coefficients of (1+x)^-p."""
    c = np.empty(n_terms)
    c[0] = 1.0
    for i in range(1, n_terms):
        c[i] = c[i - 1] * (-p - (i - 1)) / i
    return c


def _series_terms(p: float, rho: float, cap: int = 80) -> int:
    if rho <= 0.0:
        return 1
    c, term = 1.0, 1.0
    for i in range(1, cap):
        c *= (p + i - 1) / i
        term = c * rho ** i
        if term < _SERIES_EPS:
            return i
    raise ConfigurationError(f"xi/alpha = {rho:.3g} too large for the series expansion")


# -- grids ------------------------------------------------------------------------


@lru_cache(maxsize=256)
def _slot_digits(family: AlphaFamily, level: int, width: int) -> np.ndarray:
    a = alpha_float(family, level)
    return a + np.arange(width + 1, dtype=float)


@lru_cache(maxsize=64)
def representative_values(family: AlphaFamily, level: int, depth: int, width: int) -> np.ndarray:
    """Minimal-tail representative value of every depth-d cylinder slot."""
    t = np.asarray(minimal_tail_value(family, level + depth))
    for i in reversed(range(depth)):
        d = _slot_digits(family, level + i, width).reshape((-1,) + (1,) * (depth - 1 - i))
        t = 1.0 / (d + t)
    t = np.broadcast_to(t, (width + 1,) * depth).copy()
    t.setflags(write=False)
    return t


def _poly_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    deg = a.shape[0] + b.shape[0] - 2
    if deg > MAX_PROFILE_DEGREE:
        raise ConfigurationError("tail profile degree above 4")
    shape = np.broadcast_shapes(a.shape[1:], b.shape[1:])
    out = np.zeros((deg + 1,) + shape)
    for i in range(a.shape[0]):
        for k in range(b.shape[0]):
            out[i + k] = out[i + k] + a[i] * b[k]
    return out


@dataclass
class CylinderGrid:
    """Piecewise-constant function on the depth-``depth`` cylinders of ``X_level``.

    ``values`` has shape ``(width+1,)*depth``.  ``profile`` (optional) has shape
    ``(J+1,) + (width+1,)*(depth-1)`` and gives, for the leading tail bucket,
    the coefficients of ``log(a/alpha_level)^J``; ``values[width]`` then holds
    that polynomial at the representative digit.  ``log_scale`` is a common
    factor ``exp(log_scale)`` not applied to the stored numbers.
    """

    family: AlphaFamily
    level: int
    depth: int
    width: int
    values: np.ndarray
    profile: np.ndarray | None = None
    log_scale: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        shape = (self.width + 1,) * self.depth
        if self.depth < 1 or self.width < 1:
            raise ConfigurationError("depth and width must be >= 1")
        if self.values.shape != shape:
            self.values = np.broadcast_to(self.values, shape).copy()
        if self.profile is not None:
            pr = np.asarray(self.profile, dtype=float)
            if pr.ndim == 1:
                pr = pr.reshape((-1,) + (1,) * (self.depth - 1))
            pr = np.broadcast_to(pr, (pr.shape[0],) + shape[1:]).copy()
            if pr.shape[0] - 1 > MAX_PROFILE_DEGREE:
                raise ConfigurationError("tail profile degree above 4")
            self.profile = pr

    # construction ---------------------------------------------------------------

    @classmethod
    def constant(cls, family, level, c=1.0, depth=DEFAULT_DEPTH, width=DEFAULT_WIDTH):
        return cls(family, level, depth, width, np.full((width + 1,) * depth, float(c)))

    @classmethod
    def first_digit(cls, family, level, func, depth=DEFAULT_DEPTH, width=DEFAULT_WIDTH):
        """Grid of ``func(a)`` for the leading digit (tail bucket at ``alpha+width``)."""
        a = _slot_digits(family, level, width)
        v = np.asarray([func(x) for x in a], dtype=float)
        return cls(family, level, depth, width, v.reshape((-1,) + (1,) * (depth - 1)))

    @classmethod
    def log_poly(cls, family, level, coeffs, depth=DEFAULT_DEPTH, width=DEFAULT_WIDTH):
        """``sum_J coeffs[J] * log(a/alpha_level)^J`` of the leading digit, exact on the tail."""
        coeffs = np.asarray(coeffs, dtype=float)
        la = family.log_alpha(level)
        u = np.log1p(np.arange(width + 1) * math.exp(-la)) if la < 700 else np.zeros(width + 1)
        v = np.polynomial.polynomial.polyval(u, coeffs)
        return cls(family, level, depth, width, v.reshape((-1,) + (1,) * (depth - 1)),
                   profile=coeffs)

    @classmethod
    def digit_log(cls, family, level, depth=DEFAULT_DEPTH, width=DEFAULT_WIDTH):
        """The digit logarithm: ``log a`` of the leading digit."""
        return cls.log_poly(family, level, [family.log_alpha(level), 1.0], depth, width)

    @classmethod
    def value_function(cls, family, level, depth=DEFAULT_DEPTH, width=DEFAULT_WIDTH):
        """``x -> [x_0, x_1, ...]`` at the cylinder representatives."""
        return cls(family, level, depth, width, representative_values(family, level, depth, width))

    @classmethod
    def indicator(cls, family, level, slot=0, depth=DEFAULT_DEPTH, width=DEFAULT_WIDTH):
        """Indicator of leading slot ``slot`` (``slot == width`` is the tail bucket)."""
        v = np.zeros(width + 1)
        v[slot] = 1.0
        return cls(family, level, depth, width, v.reshape((-1,) + (1,) * (depth - 1)))

    # basic properties ---------------------------------------------------------------

    @property
    def shape(self):
        return self.values.shape

    def representatives(self) -> np.ndarray:
        return representative_values(self.family, self.level, self.depth, self.width)

    def tail_poly(self) -> np.ndarray:
        """Leading-tail polynomial coefficients (degree 0 if no profile)."""
        if self.profile is not None:
            return self.profile
        return self.values[self.width][None, ...]

    def oscillation(self) -> float:
        """max - min over slots (infinite if a non-constant tail profile is present)."""
        if self.profile is not None and np.any(self.profile[1:] != 0):
            return math.inf
        return float(self.values.max() - self.values.min())

    def midpoint(self) -> float:
        return 0.5 * float(self.values.max() + self.values.min())

    def _like(self, values, profile=None, log_scale=None):
        return CylinderGrid(self.family, self.level, self.depth, self.width, values,
                            profile, self.log_scale if log_scale is None else log_scale)

    def copy(self):
        return self._like(self.values.copy(),
                          None if self.profile is None else self.profile.copy())

    # arithmetic ---------------------------------------------------------------------

    def embed(self, depth: int) -> "CylinderGrid":
        """Same function on a deeper grid (constant in the new trailing slots)."""
        if depth < self.depth:
            raise ConfigurationError("cannot embed into a shallower grid")
        extra = depth - self.depth
        v = self.values.reshape(self.values.shape + (1,) * extra)
        pr = None
        if self.profile is not None:
            pr = self.profile.reshape(self.profile.shape + (1,) * extra)
        return CylinderGrid(self.family, self.level, depth, self.width, v, pr, self.log_scale)

    def _check(self, other):
        if (other.family != self.family or other.level != self.level
                or other.width != self.width):
            raise ConfigurationError("grids live on different levels or widths")
        d = max(self.depth, other.depth)
        return self.embed(d), other.embed(d)

    def _combine(self, other, op):
        if isinstance(other, CylinderGrid):
            if other.log_scale != self.log_scale:
                raise ConfigurationError("combine grids with equal log_scale only")
            a, b = self._check(other)
            v = op(a.values, b.values)
            if a.profile is None and b.profile is None:
                return a._like(v)
            pa, pb = a.tail_poly(), b.tail_poly()
            if op is np.multiply:
                pr = _poly_mul(pa, pb)
            else:
                n = max(pa.shape[0], pb.shape[0])
                pa = np.concatenate([pa, np.zeros((n - pa.shape[0],) + pa.shape[1:])])
                pb = np.concatenate([pb, np.zeros((n - pb.shape[0],) + pb.shape[1:])])
                pr = op(pa, pb)
            return a._like(v, pr)
        c = float(other)
        v = op(self.values, c)
        pr = None
        if self.profile is not None:
            pr = self.profile.copy()
            if op is np.multiply:
                pr = pr * c
            else:
                pr[0] = op(pr[0], c)
        return self._like(v, pr)

    def __add__(self, other):
        return self._combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __rsub__(self, other):
        return (self * -1.0) + other

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __pow__(self, k: int):
        out = CylinderGrid.constant(self.family, self.level, 1.0, self.depth, self.width)
        out.log_scale = self.log_scale
        for _ in range(int(k)):
            out = out * self
        return out

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


def lift_through_shift(h: CylinderGrid) -> CylinderGrid:
    """``h o T``: a level-(n+1) grid seen as a depth-(d+1) grid at level n."""
    if h.level < 1:
        raise ConfigurationError("level-0 grids have no preimage level")
    if h.profile is not None:
        raise ConfigurationError("cannot lift a grid with a tail profile")
    v = np.broadcast_to(h.values[None, ...], (h.width + 1,) * (h.depth + 1)).copy()
    return CylinderGrid(h.family, h.level - 1, h.depth + 1, h.width, v, None, h.log_scale)


# -- the Ruelle operator -------------------------------------------------------------


@dataclass(frozen=True)
class _LevelWeights:
    p: float
    log_alpha: float
    coef: np.ndarray        # binomial coefficients of (1+x)^-p
    explicit: np.ndarray    # (I, m): h (1 + j h)^-(p+i)
    tail: np.ndarray        # (I, J+1): scaled tail sums of log^J v * v^-(p+i)


@lru_cache(maxsize=512)
def _level_weights(family: AlphaFamily, level: int, depth: int, width: int) -> _LevelWeights:
    lv = family.level(level)
    p = 2.0 * lv.delta
    la = lv.log_alpha
    h = math.exp(-la) if la < 700 else 0.0
    xi = representative_values(family, level + 1, depth, width)
    rho = float(xi.max()) * h
    n_terms = _series_terms(p, rho)
    coef = _binom_neg(p, n_terms)
    qs = p + np.arange(n_terms)
    j = np.arange(width)
    explicit = h * np.exp(-np.outer(qs, np.log1p(j * h)))
    v0 = 1.0 + width * h
    ss = lv.gamma + np.arange(n_terms)  # q - 1 without cancellation
    tail = np.stack([scaled_tail_sum(qs, v0, h, J, s=ss) for J in range(MAX_PROFILE_DEGREE + 1)],
                    axis=1)
    return _LevelWeights(p, la, coef, explicit, np.atleast_2d(tail))


def _ruelle_raw(f: CylinderGrid, out_depth: int) -> tuple[np.ndarray, float]:
    """Stored values of ``L_n f`` at level n+1 and the log of the dropped factor."""
    n, m = f.level, f.width
    if f.depth not in (out_depth, out_depth + 1):
        raise ConfigurationError(
            f"input depth {f.depth} cannot feed an output of depth {out_depth}")
    w = _level_weights(f.family, n, out_depth, m)
    xi = representative_values(f.family, n + 1, out_depth, m)
    la = w.log_alpha
    h = math.exp(-la) if la < 700 else 0.0
    r = xi * h
    rest = f.values.shape[1:]
    F = f.values[:m].reshape(m, -1)
    tp = f.tail_poly().reshape(f.tail_poly().shape[0], -1)
    B = w.explicit @ F + w.tail[:, : tp.shape[0]] @ tp        # (I, prod(rest))
    B = B.reshape((-1,) + rest)
    if f.depth == out_depth:
        B = B[..., None]  # y's last coordinate is dropped
    acc = w.coef[-1] * B[-1]
    for i in range(len(w.coef) - 2, -1, -1):
        acc = w.coef[i] * B[i] + r * acc
    acc = np.broadcast_to(acc, (m + 1,) * out_depth)
    return np.array(acc), (1.0 - w.p) * la


def apply_ruelle(f: CylinderGrid, out_depth: int | None = None) -> CylinderGrid:
    """``L_n f`` as a grid at level n+1.

    ``out_depth`` defaults to ``f.depth``; an input one slot deeper than the
    output is used in full (the output's last coordinate is not dropped).
    """
    d = f.depth if out_depth is None else out_depth
    vals, ls = _ruelle_raw(f, d)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("non-finite operator output")
    return CylinderGrid(f.family, f.level + 1, d, f.width, vals, None, f.log_scale + ls)


# -- normalizer --------------------------------------------------------------------


@dataclass
class NormalizerTrack:
    """``G_n = L_0^n(1)`` as ``grid * exp(grid.log_scale)`` with ``max(grid) = 1``.

    ``incoming`` holds ``L_{n-1}(G_{n-1}/max)`` exactly as computed (before the
    rescale); ratio steps divide by it so that ``P(1) = 1`` to round-off.
    """

    level: int
    grid: CylinderGrid
    incoming: np.ndarray
    oscillation: float
    history: tuple = ()

    @property
    def log_scale(self) -> float:
        return self.grid.log_scale

    def log_max(self) -> float:
        return self.grid.log_scale


def initial_track(family: AlphaFamily, depth=DEFAULT_DEPTH, width=DEFAULT_WIDTH) -> NormalizerTrack:
    g = CylinderGrid.constant(family, 0, 1.0, depth, width)
    return NormalizerTrack(0, g, g.values, 0.0, (0.0,))


def advance_normalizer(track: NormalizerTrack) -> NormalizerTrack:
    g = track.grid
    raw, ls = _ruelle_raw(g, g.depth)
    top, low = float(raw.max()), float(raw.min())
    if not (np.isfinite(top) and low > 0):
        raise FloatingPointError(f"normalizer degenerate at level {track.level + 1}")
    log_scale = g.log_scale + ls + math.log(top)
    if abs(log_scale) > 1e15:
        raise OverflowError("normalizer log-scale beyond 1e15")
    grid = CylinderGrid(g.family, g.level + 1, g.depth, g.width, raw / top, None, log_scale)
    osc = top / low - 1.0
    return NormalizerTrack(track.level + 1, grid, raw, osc, track.history + (osc,))


class _TrackCache:
    def __init__(self, maxsize=256):
        self._d: OrderedDict = OrderedDict()
        self._lock = threading.Lock()
        self.maxsize = maxsize

    def get(self, family, level, depth, width) -> NormalizerTrack:
        with self._lock:
            key = (family, depth, width)
            lv = level
            while lv >= 0 and (key + (lv,)) not in self._d:
                lv -= 1
            tr = self._d[key + (lv,)] if lv >= 0 else initial_track(family, depth, width)
            if lv < 0:
                self._store(key + (0,), tr)
            while tr.level < level:
                tr = advance_normalizer(tr)
                self._store(key + (tr.level,), tr)
            self._d.move_to_end(key + (level,))
            return tr

    def _store(self, k, tr):
        self._d[k] = tr
        while len(self._d) > self.maxsize:
            self._d.popitem(last=False)

    def clear(self):
        with self._lock:
            self._d.clear()


_TRACKS = _TrackCache()


def normalizer(family: AlphaFamily, level: int, depth=DEFAULT_DEPTH, width=DEFAULT_WIDTH) -> NormalizerTrack:
    """Cached normalizer track at ``level``."""
    return _TRACKS.get(family, level, depth, width)


# -- ratio operator -----------------------------------------------------------------


def ratio_step(f: CylinderGrid, out_depth: int | None = None) -> CylinderGrid:
    """``P_n^1 f = L_n(f G_n) / G_{n+1}``."""
    d = f.depth if out_depth is None else out_depth
    if f.depth not in (d, d + 1):
        raise ConfigurationError("ratio step changes depth by at most one")
    tr = normalizer(f.family, f.level, d, f.width)
    nxt = normalizer(f.family, f.level + 1, d, f.width)
    g = CylinderGrid(f.family, f.level, d, f.width, tr.grid.values)
    num, _ = _ruelle_raw(f * g if f.depth == d else f * g.embed(d + 1), d)
    out = num / nxt.incoming
    return CylinderGrid(f.family, f.level + 1, d, f.width, out, None, f.log_scale)


def ratio_apply(f: CylinderGrid, k: int, track: NormalizerTrack | None = None) -> CylinderGrid:
    """``P_n^k f``: k normalized steps, level n -> n+k.

    ``track`` may be passed for symmetry with the level bookkeeping; the
    cached normalizer for ``(family, depth, width)`` is used either way.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if track is not None and track.level != f.level:
        raise ConfigurationError("track level differs from grid level")
    g = f
    for _ in range(k):
        g = ratio_step(g)
    return g


@dataclass
class Integral:
    value: float
    k: int
    oscillation: float
    trace: list = field(default_factory=list)


def integrate_info(f: CylinderGrid, tol: float = 1e-10, k_max: int = 64) -> Integral:
    """Iterate ratio steps until the grid is flat to ``tol``; see :func:`integrate`."""
    if tol <= 0:
        raise ValueError("tol must be > 0")
    g = f
    prev = None
    trace = []
    for k in range(k_max + 1):
        osc = g.oscillation()
        mid = g.midpoint() if math.isfinite(osc) else math.nan
        trace.append(osc)
        if osc < tol and (k == 0 and osc == 0.0 or prev is not None and abs(mid - prev) < tol):
            return Integral(mid, k, osc, trace)
        prev = mid if math.isfinite(osc) else None
        if k < k_max:
            g = ratio_step(g)
    raise ConvergenceError(f"no convergence after {k_max} ratio steps", trace)


def integrate(f: CylinderGrid, track: NormalizerTrack | None = None, tol: float = 1e-10,
              k_max: int = 64) -> float:
    """``int f dnu_n`` as the flat limit of ``P_n^k f``."""
    if track is not None and track.level != f.level:
        raise ConfigurationError("track level differs from grid level")
    return integrate_info(f, tol, k_max).value


def lipschitz_estimate(f: CylinderGrid, r: float = R_METRIC) -> float:
    """Max of ``|f(x)-f(y)| / d_r(x,y)`` over slot pairs, ``d_r = r^(i+1)`` at first mismatch i."""
    v = f.values
    best = 0.0
    for i in range(f.depth):
        # children of every prefix of length i, reduced over the deeper slots
        sub = v.reshape(v.shape[:i + 1] + (-1,))
        cmax, cmin = sub.max(axis=-1), sub.min(axis=-1)
        order_max = np.sort(cmax, axis=-1)
        order_min = np.sort(cmin, axis=-1)
        am = cmax.argmax(axis=-1)
        an = cmin.argmin(axis=-1)
        same = am == an
        full = order_max[..., -1] - order_min[..., 0]
        alt = np.maximum(order_max[..., -1] - order_min[..., 1],
                         order_max[..., -2] - order_min[..., 0])
        gap = np.where(same, alt, full)
        best = max(best, float(gap.max()) / r ** (i + 1))
    return best


# -- CSV ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def dump_grid(f: CylinderGrid, fh=None) -> str:
    """Write a grid as CSV; returns the text.

    ``#`` header lines carry family, level, depth, width, log_scale and the
    profile degree.  Columns: ``j0..j{d-1}, representative, value`` and, when a
    tail profile is present, ``c0..cJ`` (filled on rows whose ``j0`` is the
    tail bucket).
    """
    buf = io.StringIO()
    fam = ";".join(f"{k}={v}" for k, v in f.family.to_mapping().items())
    J = -1 if f.profile is None else f.profile.shape[0] - 1
    buf.write(f"# family={fam}\n# level={f.level}\n# depth={f.depth}\n# width={f.width}\n")
    buf.write(f"# log_scale={_fmt(f.log_scale)}\n# profile_degree={J}\n")
    w = csv.writer(buf, lineterminator="\n")
    head = [f"j{i}" for i in range(f.depth)] + ["representative", "value"]
    head += [f"c{k}" for k in range(J + 1)]
    w.writerow(head)
    reps = f.representatives()
    for idx in np.ndindex(*f.values.shape):
        row = [str(i) for i in idx] + [_fmt(reps[idx]), _fmt(f.values[idx])]
        if J >= 0:
            if idx[0] == f.width:
                row += [_fmt(f.profile[(k,) + idx[1:]]) for k in range(J + 1)]
            else:
                row += [""] * (J + 1)
        w.writerow(row)
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text


def load_grid(text: str) -> CylinderGrid:
    meta = {}
    lines = text.splitlines()
    body = []
    for ln in lines:
        if ln.startswith("# "):
            k, _, v = ln[2:].partition("=")
            meta[k] = v
        else:
            body.append(ln)
    fam = dict(kv.split("=", 1) for kv in meta["family"].split(";"))
    family = AlphaFamily.from_mapping(fam)
    depth, width, J = int(meta["depth"]), int(meta["width"]), int(meta["profile_degree"])
    vals = np.zeros((width + 1,) * depth)
    prof = None if J < 0 else np.zeros((J + 1,) + (width + 1,) * (depth - 1))
    rows = csv.reader(body)
    next(rows)
    for row in rows:
        idx = tuple(int(x) for x in row[:depth])
        vals[idx] = float(row[depth + 1])
        if prof is not None and idx[0] == width:
            for k in range(J + 1):
                prof[(k,) + idx[1:]] = float(row[depth + 2 + k])
    return CylinderGrid(family, int(meta["level"]), depth, width, vals, prof,
                        float(meta["log_scale"]))
