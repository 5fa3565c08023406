"""Sampling digit sequences from the limit measure nu_0.

Two samplers are provided.

* ``product``: independent digits with P(a) proportional to (a + xi*)^-2delta_n,
  xi* the minimal-tail value at level n+1.  Exact discrete inversion below
  1e9, continuum inversion of the power tail above it.
* ``operator``: conditionals p(a | prefix) read off K steps of the Ruelle
  operator applied to the prefix potential.

Randomness: one ``numpy.random.Philox`` stream per trajectory, keyed by the
64-bit seed; digit k consumes the k-th double of the stream.  Batch and
single-trajectory sampling therefore give the same digits for a seed.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator

import numpy as np

from .operator import (
    CylinderGrid, representative_values, scaled_tail_sum, _slot_digits,
)
from .seqpot import AlphaFamily, DomainError, log_alpha_array, gamma_from_log_alpha_array

BLOCK = 4096
CONTINUUM_START = 1e9
EXACT_LIMIT = 2 ** 62
_LOG_CONT = math.log(CONTINUUM_START)
_TAIL_DEPTH = 60
_CHECK_BELOW = 64.0


def rng_for(seed: int) -> np.random.Generator:
    """The documented stream for one trajectory."""
    return np.random.Generator(np.random.Philox(key=int(seed) & (2 ** 64 - 1)))


# -- per-level tables ---------------------------------------------------------------


@dataclass(frozen=True)
class LevelTable:
    """Product-law constants for levels ``start .. start+len-1``.

    ``log_z`` is the log of ``alpha^(p-1) * sum_{a>=alpha} (a+xi)^-p``.
    """

    start: int
    log_alpha: np.ndarray
    gamma: np.ndarray
    p: np.ndarray
    h: np.ndarray
    xi: np.ndarray
    log_z: np.ndarray

    def __len__(self):
        return len(self.log_alpha)


def _minimal_tail_array(family: AlphaFamily, start: int, stop: int) -> np.ndarray:
    """Minimal-tail value at level k+1 for k in [start, stop), backward recursion."""
    n = np.arange(start + 1, stop + 1)
    t = np.zeros(len(n))
    for k in reversed(range(_TAIL_DEPTH)):
        idx = n + k
        if family.kind == "explicit":
            ok = idx < len(family.values)
            la = np.full(len(n), np.inf)
            la[ok] = log_alpha_array(family, idx[ok])
        else:
            la = log_alpha_array(family, idx)
        with np.errstate(over="ignore"):
            a = np.exp(la)
        t = np.where(np.isinf(a), 0.0, 1.0 / (a + t))
    return t


@lru_cache(maxsize=64)
def level_table(family: AlphaFamily, start: int, stop: int) -> LevelTable:
    n = np.arange(start, stop)
    la = log_alpha_array(family, n)
    fin = np.isfinite(la)  # log alpha overflows doubles far out in fast families
    g = np.full(len(n), np.nan)
    g[fin] = gamma_from_log_alpha_array(la[fin])
    p = 1.0 + g
    h = np.where(la < 700, np.exp(-np.minimum(la, 700)), 0.0)
    xi = _minimal_tail_array(family, start, stop)
    log_z = np.full(len(n), np.nan)
    # h = 0: the sum is the integral 1/gamma (p itself may round to 1)
    big = fin & (h == 0)
    log_z[big] = -np.log(g[big])
    sm = fin & (h > 0)
    log_z[sm] = np.log(scaled_tail_sum(p[sm], 1.0 + xi[sm] * h[sm], h[sm], 0))
    return LevelTable(start, la, g, p, h, xi, log_z)


def _blocks(start: int, stop: int) -> Iterator[tuple[int, int]]:
    b = (start // BLOCK) * BLOCK
    while b < stop:
        yield max(b, start), min(b + BLOCK, stop)
        b += BLOCK


def _table_slice(family, lo, hi) -> LevelTable:
    b = (lo // BLOCK) * BLOCK
    t = level_table(family, b, b + BLOCK if family.kind != "explicit"
                    else min(b + BLOCK, len(family.values)))
    s = slice(lo - b, hi - b)
    if not np.all(np.isfinite(t.log_z[s])):
        raise DomainError("log alpha_n exceeds the double range at a requested level")
    return LevelTable(lo, t.log_alpha[s], t.gamma[s], t.p[s], t.h[s], t.xi[s], t.log_z[s])


# -- product sampler kernel -----------------------------------------------------------


def _survival(p, a, xi, h, log_alpha, log_z):
    """P(digit >= a) under the product law (a real array of integers)."""
    v0 = np.where(h > 0, (a + xi) * h, 1.0)
    s = scaled_tail_sum(p, v0, h, 0)
    return np.exp(np.log(s) - log_z)


def product_kernel(tab: LevelTable, U: np.ndarray):
    """Invert the product law at every (row, level) of ``U`` (values in (0, 1]).

    Returns ``exact`` (int64, -1 when absent), ``log_digit`` and ``log_cond_prob``.
    """
    U = np.asarray(U, dtype=float)
    la = np.broadcast_to(tab.log_alpha, U.shape)
    g = np.broadcast_to(tab.gamma, U.shape)
    p = np.broadcast_to(tab.p, U.shape)
    h = np.broadcast_to(tab.h, U.shape)
    xi = np.broadcast_to(tab.xi, U.shape)
    lz = np.broadcast_to(tab.log_z, U.shape)

    # continuum: S(a) ~ ((a + xi - 1/2)/alpha)^-gamma / (gamma Z)
    log_T = la - (np.log(g) + lz + np.log(U)) / g
    small = log_T < _LOG_CONT
    exact = np.full(U.shape, -1, dtype=np.int64)
    log_digit = np.empty(U.shape)

    if np.any(small):
        T = np.exp(np.where(small, log_T, 0.0))
        x = T - xi + 0.5
        alpha = np.exp(np.where(small, la, 0.0))
        a0 = np.maximum(np.floor(x), alpha)
        frac = x - np.floor(x)
        margin = p / (6.0 * a0) + 1e-12 * a0 / g + 1e-12
        check = small & ((a0 < alpha + _CHECK_BELOW) | (frac < margin) | (frac > 1.0 - margin))
        idx = np.nonzero(check)
        if idx[0].size:
            a = a0[idx]
            args = (p[idx], xi[idx], h[idx], la[idx], lz[idx])
            u = U[idx]
            al = alpha[idx]
            for _ in range(10_000):
                s_a = _survival(args[0], a, *args[1:])
                down = (s_a < u) & (a > al)
                s_next = _survival(args[0], a + 1.0, *args[1:])
                up = (s_next >= u) & ~down
                if not (down.any() or up.any()):
                    break
                a = a - down + up
            else:
                raise RuntimeError("discrete inversion did not settle")
            a0[idx] = a
        exact[small] = a0[small].astype(np.int64)
        log_digit[small] = np.log(a0[small])

    big = ~small
    if np.any(big):
        lt = log_T[big]
        with np.errstate(over="ignore"):
            x = np.exp(lt) - xi[big] + 0.5
        ld = np.maximum(lt, la[big])
        fits = np.isfinite(x) & (x < EXACT_LIMIT)
        ex = np.full(lt.shape, -1, dtype=np.int64)
        ex[fits] = np.floor(x[fits]).astype(np.int64)
        ld = np.where(fits, np.log(np.where(fits, ex, 1).astype(float)), ld)
        exact[big] = ex
        log_digit[big] = ld

    with np.errstate(over="ignore"):
        shift = np.log1p(xi * np.exp(-log_digit))
    log_cond = -la - p * (log_digit + shift - la) - lz
    return exact, log_digit, log_cond


# -- data types --------------------------------------------------------------------


@dataclass(frozen=True)
class DigitSample:
    exact: int | None
    log_digit: float
    log_cond_prob: float


@dataclass
class DigitTrajectory:
    family: AlphaFamily
    seed: int
    mode: str
    exact: np.ndarray
    log_digit: np.ndarray
    log_cond_prob: np.ndarray
    K: int = 0

    @property
    def length(self) -> int:
        return len(self.log_digit)

    def __len__(self):
        return self.length

    @property
    def samples(self) -> list[DigitSample]:
        return [DigitSample(None if e < 0 else int(e), float(l), float(c))
                for e, l, c in zip(self.exact, self.log_digit, self.log_cond_prob)]

    def digits_float(self) -> np.ndarray:
        """Digits as floats (exact when present, else exp(log_digit))."""
        with np.errstate(over="ignore"):
            return np.where(self.exact >= 0, self.exact.astype(float), np.exp(self.log_digit))

    def mode_label(self) -> str:
        return self.mode if self.mode == "product" else f"operator(K={self.K})"

    def to_csv(self) -> str:
        buf = io.StringIO()
        fam = ";".join(f"{k}={v}" for k, v in self.family.to_mapping().items())
        buf.write(f"# family={fam}\n# mode={self.mode_label()}\n# seed={self.seed}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "digit", "log_digit", "log_cond_prob"])
        for k, (e, l, c) in enumerate(zip(self.exact, self.log_digit, self.log_cond_prob)):
            w.writerow([k, "" if e < 0 else int(e), repr(float(l)), repr(float(c))])
        return buf.getvalue()


def uniforms(seed: int, n: int) -> np.ndarray:
    """The n uniforms of a trajectory, mapped to (0, 1]."""
    return 1.0 - rng_for(seed).random(n)


# -- product sampling -----------------------------------------------------------------


def product_digit(family: AlphaFamily, n: int, rng: np.random.Generator) -> DigitSample:
    """One product-law digit at level n."""
    tab = _table_slice(family, n, n + 1)
    u = 1.0 - rng.random()
    e, l, c = product_kernel(tab, np.array([u]))
    return DigitSample(None if e[0] < 0 else int(e[0]), float(l[0]), float(c[0]))


def product_draws(family: AlphaFamily, n: int, size: int, seed: int) -> DigitTrajectory:
    """``size`` independent draws at the single level n (for law checks)."""
    tab = _table_slice(family, n, n + 1)
    U = uniforms(seed, size)[:, None]
    e, l, c = product_kernel(tab, U)
    return DigitTrajectory(family, seed, "product", e[:, 0], l[:, 0], c[:, 0])


def product_block_batch(family: AlphaFamily, lo: int, hi: int,
                        gens: list[np.random.Generator]):
    """Digits of levels [lo, hi) for several streams (advancing each generator)."""
    tab = _table_slice(family, lo, hi)
    U = np.stack([1.0 - g.random(hi - lo) for g in gens])
    return tab, product_kernel(tab, U)


def iter_product_batch(family: AlphaFamily, n: int, seeds) -> Iterator:
    """Yield ``(lo, hi, table, (exact, log_digit, log_cond))`` blocks for a seed batch."""
    gens = [rng_for(s) for s in seeds]
    for lo, hi in _blocks(0, n):
        tab, out = product_block_batch(family, lo, hi, gens)
        yield lo, hi, tab, out


# -- operator sampling -----------------------------------------------------------------


@dataclass(frozen=True)
class _OpLevel:
    weights: np.ndarray     # (m+1, (m+1)^d): scaled W(j, y) at level n+1 slots y
    log_h: float


@lru_cache(maxsize=1024)
def _op_weights(family: AlphaFamily, n: int, depth: int, width: int) -> _OpLevel:
    """Scaled branch weights ``alpha^(p-1) (a + xi_y)^-p`` (tail slot aggregated)."""
    lv = family.level(n)
    p = 2.0 * lv.delta
    la = lv.log_alpha
    h = math.exp(-la) if la < 700 else 0.0
    xi = representative_values(family, n + 1, depth, width).reshape(-1)
    j = np.arange(width, dtype=float)[:, None]
    v = 1.0 + (j + xi[None, :]) * h
    W = np.empty((width + 1, xi.size))
    W[:width] = h * v ** (-p)
    W[width] = scaled_tail_sum(p, 1.0 + (width + xi) * h, h, 0)
    return _OpLevel(W, -la)


@lru_cache(maxsize=1024)
def _probe_functional(family: AlphaFamily, n: int, K: int, depth: int, width: int) -> np.ndarray:
    """lambda = (L_n^K)^T e_z on level-n slots, z the all-minimal slot, max-normalized."""
    shape = (width + 1,) * depth
    lam = np.zeros(shape)
    lam[(0,) * depth] = 1.0
    for lvl in reversed(range(n, n + K)):
        W = _op_weights(family, lvl, depth, width).weights.reshape((width + 1,) + shape)
        # (L^T lam)[x] = sum_{y: y[:-1] = x[1:]} lam[y] W(x0, y)
        t = lam[None, ...] * W
        back = t.sum(axis=-1)                     # over y's last coordinate
        lam = back.reshape((width + 1,) + shape[:-1])
        lam = lam / lam.max()
    return lam


def operator_conditional(family: AlphaFamily, n: int, log_phi: np.ndarray, K: int,
                         depth: int = 2, width: int = 64) -> np.ndarray:
    """Conditional law of the level-n digit over candidate slots 0..m (m = tail bucket).

    ``log_phi`` is log Phi_w on the level-n grid slots, any additive constant.
    """
    shape = (width + 1,) * depth
    lam = _probe_functional(family, n + 1, K, depth, width).reshape(-1)
    W = _op_weights(family, n, depth, width).weights          # (m+1, (m+1)^d)
    phi = np.exp(log_phi - log_phi.max())
    # Phi_w(j + y[:-1]) for every candidate j and level-(n+1) slot y
    sub = phi.reshape((width + 1,) + shape[:-1])[..., None]
    sub = np.broadcast_to(sub, (width + 1,) + shape).reshape(width + 1, -1)
    mass = (W * sub) @ lam
    if not np.all(np.isfinite(mass)) or mass.sum() <= 0:
        raise FloatingPointError("all candidate weights underflowed")
    return mass / mass.sum()


def _tail_digit(family, n, width, u, tab):
    """Digit >= alpha + width from the product law restricted to the tail bucket."""
    # restrict: P(digit >= a | digit >= alpha + m) = S(a) / S(alpha + m)
    alpha = math.exp(tab.log_alpha[0]) if tab.log_alpha[0] < 700 else math.inf
    if math.isinf(alpha):
        s0 = 1.0
    else:
        s0 = float(_survival(tab.p, np.array([alpha + width]), tab.xi, tab.h,
                             tab.log_alpha, tab.log_z)[0])
    e, l, c = product_kernel(tab, np.array([[u * s0]]))
    return int(e[0, 0]), float(l[0, 0]), float(c[0, 0]) - math.log(s0)


def operator_trajectory(family: AlphaFamily, n: int, seed: int, K: int = 3,
                        depth: int = 2, width: int = 64) -> DigitTrajectory:
    """Sequential operator-corrected sampling of ``n`` digits."""
    rng = rng_for(seed)
    shape = (width + 1,) * depth
    log_phi = np.zeros(shape)
    exact = np.full(n, -1, dtype=np.int64)
    log_digit = np.empty(n)
    log_cond = np.empty(n)
    for k in range(n):
        probs = operator_conditional(family, k, log_phi, K, depth, width)
        u = 1.0 - rng.random()
        cdf = np.cumsum(probs)
        j = int(min(np.searchsorted(cdf, (1.0 - u) * cdf[-1], side="right"), width))
        lv = family.level(k)
        p = 2.0 * lv.delta
        xi = representative_values(family, k + 1, depth, width)
        sub = log_phi.reshape((width + 1,) + shape[:-1])[j][..., None]
        if j < width:
            a = _slot_digits(family, k, width)[j]
            exact[k] = int(a) if a < EXACT_LIMIT else -1
            log_digit[k] = math.log(a)
            log_cond[k] = math.log(probs[j])
            w = -p * np.log(a + xi)
        else:
            tab = _table_slice(family, k, k + 1)
            # fresh uniform from the same stream for the position inside the bucket
            e, l, c = _tail_digit(family, k, width, 1.0 - rng.random(), tab)
            exact[k], log_digit[k] = e, l
            log_cond[k] = math.log(probs[j]) + c
            with np.errstate(over="ignore"):
                w = -p * (l + np.log1p(xi * math.exp(-l)))
        log_phi = sub + w
        log_phi = log_phi - log_phi.max()
    return DigitTrajectory(family, seed, "operator", exact, log_digit, log_cond, K)


# -- trajectories --------------------------------------------------------------------


def sample_trajectory(family: AlphaFamily, n: int, mode: str = "product", seed: int = 0,
                      K: int = 3, depth: int = 2, width: int = 64) -> DigitTrajectory:
    """``n`` digits of one trajectory; ``mode`` is ``"product"`` or ``"operator"``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if mode == "operator":
        return operator_trajectory(family, n, seed, K, depth, width)
    if mode != "product":
        raise ValueError(f"unknown sampler mode {mode!r}")
    parts = [out for _, _, _, out in iter_product_batch(family, n, [seed])]
    ex = np.concatenate([o[0][0] for o in parts])
    ld = np.concatenate([o[1][0] for o in parts])
    lc = np.concatenate([o[2][0] for o in parts])
    return DigitTrajectory(family, seed, "product", ex, ld, lc)


def cylinder_log_mass(traj: DigitTrajectory, n: int) -> float:
    """log nu_0 of the cylinder of the first n digits."""
    if n > traj.length:
        raise ValueError("n exceeds trajectory length")
    return float(math.fsum(traj.log_cond_prob[:n]))
