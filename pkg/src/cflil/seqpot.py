"""Digit-floor families and the scalar quantities derived from them.

A family describes the sequence of lower bounds ``alpha_n`` on the partial
quotients.  Everything downstream (level exponents, continued-fraction values,
potentials, the dimension growth condition) is a pure function of a family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

KINDS = ("polynomial", "geometric", "doubly_exponential", "explicit")

# beyond this many bits alpha_n is kept in log form only
_MAX_INT_BITS = 4096
# cylinder width targeted by minimal-tail padding
_CF_WIDTH = 1e-15


class DomainError(ValueError):
    """Argument outside the domain where a formula is defined."""


@dataclass(frozen=True)
class AlphaFamily:
    """Parametric digit floors ``alpha_n = ceil(formula(n)) + offset`` (at least 2).

    ``param`` is ``p`` for polynomial (``c n^p``), ``lambda`` for geometric
    (``c lambda^n``) and ``b`` for doubly exponential (``c^(b^n)``).
    """

    kind: str
    c: float = 1.0
    param: float = 2.0
    offset: int = 0
    values: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown family kind {self.kind!r}; expected one of {KINDS}")
        if self.offset < 0:
            raise ValueError("offset must be >= 0")
        if self.kind == "explicit":
            if not self.values:
                raise ValueError("explicit family needs a non-empty list of values")
            if any(int(v) < 1 for v in self.values):
                raise ValueError("explicit values must be positive integers")
        elif self.kind == "polynomial":
            if self.c <= 0 or self.param <= 0:
                raise ValueError("polynomial family needs c > 0 and p > 0")
        elif self.kind == "geometric":
            if self.c < 1 or self.param <= 1:
                raise ValueError("geometric family needs c >= 1 and lambda > 1")
        elif self.c <= 1 or self.param <= 1:
            raise ValueError("doubly exponential family needs c > 1 and b > 1")

    @classmethod
    def polynomial(cls, c: float, p: float, offset: int = 0) -> "AlphaFamily":
        return cls("polynomial", float(c), float(p), int(offset))

    @classmethod
    def geometric(cls, c: float, lam: float, offset: int = 0) -> "AlphaFamily":
        return cls("geometric", float(c), float(lam), int(offset))

    @classmethod
    def doubly_exponential(cls, c: float, b: float, offset: int = 0) -> "AlphaFamily":
        return cls("doubly_exponential", float(c), float(b), int(offset))

    @classmethod
    def explicit(cls, values: Iterable[int]) -> "AlphaFamily":
        return cls("explicit", values=tuple(int(v) for v in values))

    @classmethod
    def from_mapping(cls, spec: Mapping[str, object]) -> "AlphaFamily":
        """Build a family from a key-value tree ``{kind, c, p|lambda|b, offset}``."""
        if "kind" not in spec:
            raise KeyError("kind")
        kind = str(spec["kind"])
        if kind == "explicit":
            vals = spec.get("values")
            if vals is None:
                raise KeyError("values")
            if isinstance(vals, str):
                vals = [v for v in vals.replace(",", " ").split() if v]
            return cls.explicit(int(v) for v in vals)
        key = {"polynomial": "p", "geometric": "lambda", "doubly_exponential": "b"}.get(kind)
        if key is None:
            raise ValueError(f"unknown family kind {kind!r}")
        if key not in spec:
            raise KeyError(key)
        return cls(kind, float(spec.get("c", 1.0)), float(spec[key]), int(spec.get("offset", 0)))

    def to_mapping(self) -> dict:
        if self.kind == "explicit":
            return {"kind": self.kind, "values": list(self.values)}
        key = {"polynomial": "p", "geometric": "lambda", "doubly_exponential": "b"}[self.kind]
        return {"kind": self.kind, "c": self.c, key: self.param, "offset": self.offset}

    def label(self) -> str:
        if self.kind == "explicit":
            head = ",".join(str(v) for v in self.values[:4])
            return f"explicit([{head}{',...' if len(self.values) > 4 else ''}])"
        return f"{self.kind}({self.c:g},{self.param:g},+{self.offset})"

    @property
    def is_monotone(self) -> bool:
        return self.kind != "explicit"

    # -- alpha_n --------------------------------------------------------

    def log_alpha(self, n: int) -> float:
        return _log_alpha(self, n)

    def alpha(self, n: int) -> int | None:
        """Exact integer ``alpha_n``, or None when it has more than 4096 bits."""
        return _alpha_int(self, n)

    def level(self, n: int) -> "LevelParams":
        return _level(self, n)

    def levels(self, n_max: int) -> list["LevelParams"]:
        return [self.level(n) for n in range(n_max + 1)]


def _is_int(x: float) -> bool:
    return float(x).is_integer()


def _ceil_real(v: float) -> int:
    # formulas like 4**1.5 land a few ulps off the integer they represent
    r = round(v)
    if abs(v - r) <= 1e-9 * max(1.0, abs(v)):
        return int(r)
    return int(math.ceil(v))


@lru_cache(maxsize=1 << 16)
def _alpha_int(family: AlphaFamily, n: int) -> int | None:
    if n < 0:
        raise DomainError("n must be >= 0")
    kind, c, q, off = family.kind, family.c, family.param, family.offset
    if kind == "explicit":
        if n >= len(family.values):
            raise IndexError(f"explicit family has {len(family.values)} values; n={n} is out of range")
        return max(2, family.values[n])
    if kind == "polynomial":
        if _is_int(c) and _is_int(q):
            base = int(c) * n ** int(q)
        else:
            base = _ceil_real(c * float(n) ** q)
    elif kind == "geometric":
        lv = math.log(c) + n * math.log(q)
        if lv / math.log(2) > _MAX_INT_BITS:
            return None
        if _is_int(c) and _is_int(q):
            base = int(c) * int(q) ** n
        elif lv > 700:
            return None
        else:
            base = _ceil_real(c * q ** n)
    else:
        lv = _dexp_log(c, q, n)
        if lv / math.log(2) > _MAX_INT_BITS:
            return None
        if _is_int(c) and _is_int(q):
            base = int(c) ** (int(q) ** n)
        elif lv > 700:
            return None
        else:
            base = _ceil_real(c ** (q ** n))
    if base.bit_length() > _MAX_INT_BITS:
        return None
    return max(2, base + off)


@lru_cache(maxsize=1 << 16)
def _log_alpha(family: AlphaFamily, n: int) -> float:
    a = _alpha_int(family, n)
    if a is not None:
        return math.log(a)
    if family.kind == "geometric":
        return math.log(family.c) + n * math.log(family.param)
    # doubly exponential; the +offset and the ceiling are below float resolution here
    return _dexp_log(family.c, family.param, n)


def _dexp_log(c: float, b: float, n: int) -> float:
    try:
        return math.exp(n * math.log(b)) * math.log(c)
    except OverflowError:
        return math.inf


def alpha_at(family: AlphaFamily, n: int) -> int:
    """Integer digit floor at position ``n``."""
    a = family.alpha(n)
    if a is None:
        raise OverflowError(f"alpha_{n} of {family.label()} exceeds {_MAX_INT_BITS} bits; use log_alpha")
    return a


# -- gamma ----------------------------------------------------------------


def gamma_from_log_alpha(log_alpha: float) -> float:
    """Solve ``log(gamma) + gamma * log_alpha = 0`` for gamma in (0, 1].

    Works on t = log(gamma), where h(t) = t + L e^t is increasing and convex,
    so Newton started right of the root decreases monotonically onto it.  A
    bisection step takes over if an iterate leaves the bracket.
    """
    L = float(log_alpha)
    if L < 0:
        raise DomainError("alpha must be >= 1")
    if L == 0.0:
        return 1.0
    if not math.isfinite(L):
        raise DomainError("log alpha must be finite")
    lo, hi = -math.log1p(L) - math.log(max(L, 1.0)) - 1.0, 0.0
    # seed from the large-alpha asymptotics when they make sense
    if L > math.e:
        t = math.log(math.log(L) / L)
        t = min(max(t, lo), hi)
    else:
        t = hi
    for _ in range(200):
        h = t + L * math.exp(t)
        if h > 0:
            hi = t
        else:
            lo = t
        dh = 1.0 + L * math.exp(t)
        t_new = t - h / dh
        if not (lo <= t_new <= hi):
            t_new = 0.5 * (lo + hi)
        if abs(t_new - t) <= 1e-16 * max(1.0, abs(t)):
            t = t_new
            break
        t = t_new
    return math.exp(t)


def gamma_of_alpha(alpha: float) -> float:
    """The unique gamma in (0, 1] with ``gamma * alpha**gamma == 1``."""
    if alpha < 1:
        raise DomainError("alpha must be >= 1")
    return gamma_from_log_alpha(math.log(alpha))


def gamma_asymptotic(alpha: float) -> float:
    """Leading-order form ``log log alpha / log alpha``, defined for alpha > e."""
    if alpha <= math.e:
        raise DomainError("gamma_asymptotic needs alpha > e")
    la = math.log(alpha)
    return math.log(la) / la


# -- per-level parameters ------------------------------------------------------


@dataclass(frozen=True)
class LevelParams:
    n: int
    alpha: int | None
    log_alpha: float
    gamma: float
    delta: float
    epsilon: float

    @property
    def alpha_float(self) -> float:
        return math.exp(self.log_alpha) if self.alpha is None else float(self.alpha)

    @property
    def exponent(self) -> float:
        """Weight exponent ``2 delta = 1 + gamma`` of the level potential."""
        return 1.0 + self.gamma

    def gate(self, C: float, threshold: float = 0.1) -> bool:
        """Distortion gate ``C * epsilon_n < threshold``."""
        return C * self.epsilon < threshold


@lru_cache(maxsize=1 << 16)
def _level(family: AlphaFamily, n: int) -> LevelParams:
    la = family.log_alpha(n)
    g = gamma_from_log_alpha(la)
    prev = family.log_alpha(n - 1) if n >= 1 else la
    return LevelParams(
        n=n,
        alpha=family.alpha(n),
        log_alpha=la,
        gamma=g,
        delta=(g + 1.0) / 2.0,
        epsilon=math.exp(-la - prev),
    )


# -- continued fractions --------------------------------------------------


def cf_value(digits: Sequence[float], tail: float = 0.0) -> float:
    """Backward evaluation of ``1/(d0 + 1/(d1 + ... + 1/(d_k + tail)))``."""
    if len(digits) == 0:
        raise DomainError("empty digit list")
    t = float(tail)
    for d in reversed(digits):
        if d < 1:
            raise DomainError("continued-fraction digits must be >= 1")
        t = 1.0 / (float(d) + t)
    return t


def _tail_depth(family: AlphaFamily, level: int) -> int:
    """Number of minimal digits needed for a cylinder narrower than 1e-15."""
    logq_prev, logq = 0.0, 0.0
    target = -math.log(_CF_WIDTH)
    k = 0
    while 2.0 * logq < target:
        try:
            la = family.log_alpha(level + k)
        except IndexError:
            break
        # q_{k+1} >= alpha q_k
        logq_prev, logq = logq, logq + la
        k += 1
        if k > 200:
            break
    return k


@lru_cache(maxsize=None)
def minimal_tail_value(family: AlphaFamily, level: int) -> float:
    """Value of the all-minimal point ``[alpha_level, alpha_level+1, ...]``.

    Explicit families whose list ends before the width target is met are
    treated as terminating there.
    """
    depth = _tail_depth(family, level)
    if depth == 0:
        return 0.0
    t = 0.0
    for k in reversed(range(depth)):
        t = 1.0 / (_alpha_f(family, level + k) + t)
    return t


def _alpha_f(family: AlphaFamily, n: int) -> float:
    """alpha_n as a float (``inf`` once it leaves the double range)."""
    la = family.log_alpha(n)
    if la > 709.0:
        return math.inf
    a = family.alpha(n)
    return math.exp(la) if a is None else float(a)


alpha_float = _alpha_f


@dataclass(frozen=True)
class CFPoint:
    """A point of ``X_level`` given by leading digits and a tail rule.

    ``tail="minimal"`` pads with the family's own floors from position
    ``level + len(digits)``; ``tail="terminated"`` stops the expansion.
    """

    family: AlphaFamily
    level: int
    digits: tuple[float, ...]
    tail: str = "minimal"

    def __post_init__(self):
        if self.tail not in ("minimal", "terminated"):
            raise ValueError("tail must be 'minimal' or 'terminated'")
        if self.level < 0:
            raise DomainError("level must be >= 0")
        if self.tail == "terminated" and not self.digits:
            raise DomainError("a terminated point needs at least one digit")

    @property
    def value(self) -> float:
        if self.tail == "terminated":
            return cf_value(self.digits)
        t = minimal_tail_value(self.family, self.level + len(self.digits))
        if not self.digits:
            return t
        return cf_value(self.digits, t)

    def enclosure(self) -> tuple[float, float]:
        """Two terminating convergents at consecutive depths around the value."""
        full = list(self.digits)
        if self.tail == "minimal":
            k = self.level + len(full)
            for j in range(_tail_depth(self.family, k) + 1):
                try:
                    full.append(_alpha_f(self.family, k + j))
                except IndexError:
                    break
        a = cf_value(full[:-1]) if len(full) > 1 else 0.0
        b = cf_value(full)
        return (min(a, b), max(a, b))


def potential_value(family: AlphaFamily, level: int, value: float) -> float:
    """Level potential ``value ** (2 delta_level)``."""
    if value <= 0:
        raise DomainError("potential needs a positive value")
    return math.exp(log_potential_value(family, level, value))


def log_potential_value(family: AlphaFamily, level: int, value: float) -> float:
    if value <= 0:
        raise DomainError("potential needs a positive value")
    return 2.0 * family.level(level).delta * math.log(value)


def log_potential_word(family: AlphaFamily, level: int, digits: Sequence[float],
                       deltas: Sequence[float] | None = None) -> float:
    """``log phi_w`` at the minimal-tail point of ``X_{level+len(w)}``.

    ``deltas`` overrides the level exponents (``deltas=[1]*k`` gives the
    Gauss-map derivative product).
    """
    k = len(digits)
    if deltas is not None and len(deltas) != k:
        raise ValueError("deltas must match the word length")
    t = minimal_tail_value(family, level + k)
    total = 0.0
    for i in reversed(range(k)):
        t = 1.0 / (float(digits[i]) + t)
        d = family.level(level + i).delta if deltas is None else float(deltas[i])
        total += 2.0 * d * math.log(t)
    return total


# -- summability and growth ---------------------------------------------------


@dataclass(frozen=True)
class SummabilityReport:
    partial_sum: float
    tail_bound: float
    converges: bool | None

    @property
    def total_bound(self) -> float:
        return self.partial_sum + self.tail_bound


def summability_report(family: AlphaFamily, N: int) -> SummabilityReport:
    """Partial sum of ``1/alpha_n`` for n <= N with an analytic tail bound."""
    if N < 10:
        raise DomainError("N must be >= 10")
    if family.kind == "explicit":
        N = min(N, len(family.values) - 1)
    partial = math.fsum(math.exp(-family.log_alpha(n)) for n in range(N + 1))
    c, q = family.c, family.param
    if family.kind == "polynomial":
        conv = q > 1
        tail = N ** (1.0 - q) / (c * (q - 1.0)) if conv else math.inf
    elif family.kind == "geometric":
        conv = True
        tail = q ** (-(N + 1)) / (c * (1.0 - 1.0 / q))
    elif family.kind == "doubly_exponential":
        conv = True
        # terms after N shrink faster than any ratio 1/2
        tail = 2.0 * math.exp(-family.log_alpha(N + 1))
    else:
        conv, tail = None, 0.0
    return SummabilityReport(partial, tail, conv)


@dataclass(frozen=True)
class GrowthReport:
    n: np.ndarray
    values: np.ndarray
    window_max: float
    window_slope: float
    satisfied: bool
    delta: float


def growth_condition(family: AlphaFamily, delta: float, N: int) -> GrowthReport:
    """Evaluate the finite-n form of the dimension growth condition.

    E_n = ( log(a_n)/2 * ((1+delta) log n / loglog a_n + 1) - sum_{k<n} loglog a_k ) / n

    for n = 1..N.  Satisfied when the window [N/2, N] stays below 1 and the
    least-squares trend there is non-increasing.  E_n is NaN where
    ``alpha_n <= e``; such an n inside the window is a domain error.
    """
    if delta <= 0:
        raise DomainError("delta must be > 0")
    if N < 4:
        raise DomainError("N must be >= 4")
    la = np.array([family.log_alpha(k) for k in range(N + 1)])
    if np.any(la <= 0):
        k = int(np.argmax(la <= 0))
        raise DomainError(f"loglog alpha_k undefined at k={k}")
    lla = np.log(la)
    n = np.arange(1, N + 1)
    csum = np.cumsum(lla)[:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        head = la[1:] / 2.0 * ((1.0 + delta) * np.log(n) / lla[1:] + 1.0)
        vals = (head - csum) / n
    vals = np.where(lla[1:] > 0, vals, np.nan)
    lo = N // 2
    win = slice(lo - 1, N)
    if np.any(lla[lo:N + 1] <= 0):
        k = lo + int(np.argmax(lla[lo:N + 1] <= 0))
        raise DomainError(f"alpha_k <= e inside the evaluation window at k={k}")
    w = vals[win]
    finite = np.isfinite(w)
    wmax = float(np.max(w)) if finite.all() else math.inf
    if finite.sum() >= 2:
        slope = float(np.polyfit(n[win][finite], w[finite], 1)[0])
    else:
        slope = math.inf
    return GrowthReport(n, vals, wmax, slope, bool(wmax < 1.0 and slope <= 0.0), float(delta))


# -- vectorized level tables -------------------------------------------------


def gamma_from_log_alpha_array(log_alpha: np.ndarray) -> np.ndarray:
    """Vectorized ``gamma_from_log_alpha``; Newton on log(gamma) from t = 0."""
    L = np.asarray(log_alpha, dtype=float)
    if np.any(L < 0):
        raise DomainError("alpha must be >= 1")
    t = np.zeros_like(L)
    for _ in range(100):
        e = np.exp(t)
        step = (t + L * e) / (1.0 + L * e)
        t = t - step
        if np.all(np.abs(step) <= 1e-16 * np.maximum(1.0, np.abs(t))):
            break
    return np.exp(t)


def log_alpha_array(family: AlphaFamily, n: np.ndarray) -> np.ndarray:
    """``log alpha_n`` for an integer array of positions (float formula path)."""
    n = np.asarray(n, dtype=np.int64)
    if np.any(n < 0):
        raise DomainError("n must be >= 0")
    kind, c, q, off = family.kind, family.c, family.param, family.offset
    if kind == "explicit":
        if n.size and n.max() >= len(family.values):
            raise IndexError(f"explicit family has {len(family.values)} values")
        vals = np.maximum(2, np.asarray(family.values, dtype=float))
        return np.log(vals[n])
    nf = n.astype(float)
    if kind == "polynomial":
        v = c * nf ** q
        r = np.round(v)
        base = np.where(np.abs(v - r) <= 1e-9 * np.maximum(1.0, v), r, np.ceil(v))
        return np.log(np.maximum(2.0, base + off))
    if kind == "geometric":
        lv = math.log(c) + nf * math.log(q)
    else:
        with np.errstate(over="ignore"):
            lv = np.exp(nf * math.log(q)) * math.log(c)
    out = lv.copy()
    small = lv < 700
    v = np.exp(lv[small])
    r = np.round(v)
    base = np.where(np.abs(v - r) <= 1e-9 * np.maximum(1.0, v), r, np.ceil(v))
    out[small] = np.log(np.maximum(2.0, base + off))
    return out


@dataclass(frozen=True)
class LevelArrays:
    """Per-level parameters for positions ``start .. start+len-1``."""

    start: int
    log_alpha: np.ndarray
    gamma: np.ndarray
    epsilon: np.ndarray

    @property
    def exponent(self) -> np.ndarray:
        return 1.0 + self.gamma

    def __len__(self) -> int:
        return len(self.log_alpha)


def level_arrays(family: AlphaFamily, start: int, stop: int) -> LevelArrays:
    n = np.arange(start, stop)
    la = log_alpha_array(family, n)
    prev = log_alpha_array(family, np.maximum(n - 1, 0))
    prev = np.where(n == 0, la, prev)
    return LevelArrays(start, la, gamma_from_log_alpha_array(la), np.exp(-la - prev))
