"""
Bessel functions, roots of the Robin eigencondition and the radial verification solution.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence, Tuple

import numpy as np
from scipy import optimize, special

from app.utils.errors import ConfigError, RootBracketError

logger = logging.getLogger(__name__)

ROOT_XTOL = 1e-14
DEFAULT_MODES: Tuple[Tuple[int, float], ...] = ((1, 1.0), (3, 1.5))


def bessel_j0(x):
    """J0, even in ``x``."""
    return special.j0(x)


def bessel_j1(x):
    """J1, odd in ``x``."""
    return special.j1(x)


def robin_function(mu: float, nu):
    """``mu J0(nu) - nu J1(nu)``, i.e. ``nu J0'(nu) + mu J0(nu)``."""
    return mu * bessel_j0(nu) - nu * bessel_j1(nu)


@dataclass(frozen=True)
class RobinRoots:
    mu: float
    roots: Tuple[float, ...]

    def __len__(self) -> int:
        return len(self.roots)

    def __getitem__(self, k: int) -> float:
        """1-based root index, as in ``nu_1 < nu_2 < ...``."""
        if not 1 <= k <= len(self.roots):
            raise IndexError(f"root index {k} outside 1..{len(self.roots)}")
        return self.roots[k - 1]

    def residuals(self) -> np.ndarray:
        return np.abs(robin_function(self.mu, np.array(self.roots)))


def bisect_root(mu: float, lo: float, hi: float) -> float:
    """Root of the Robin function on ``[lo, hi]``; the bracket must change sign."""
    f_lo, f_hi = robin_function(mu, lo), robin_function(mu, hi)
    if not np.sign(f_lo) * np.sign(f_hi) < 0:
        raise RootBracketError(lo, hi, f_lo, f_hi)
    return optimize.bisect(lambda nu: robin_function(mu, nu), lo, hi, xtol=ROOT_XTOL, maxiter=200)


@lru_cache(maxsize=64)
def _cached_roots(mu: float, count: int) -> Tuple[float, ...]:
    j0_zeros = special.jn_zeros(0, count)
    j1_zeros = np.concatenate([[0.0], special.jn_zeros(1, count - 1)]) if count > 1 else np.zeros(1)
    return tuple(float(bisect_root(mu, j1_zeros[k], j0_zeros[k])) for k in range(count))


def robin_roots(mu: float, count: int) -> RobinRoots:
    """First ``count`` positive roots of ``mu J0(nu) - nu J1(nu) = 0``.

    Root ``k`` is the only sign change on ``(j_{1,k-1}, j_{0,k})`` (with
    ``j_{1,0} = 0``), found by bisection.
    """
    if not mu > 0 or not np.isfinite(mu):
        raise ConfigError(f"Robin coefficient must be positive and finite (got {mu})")
    if count < 1:
        raise ConfigError(f"root count must be at least 1 (got {count})")
    roots = _cached_roots(float(mu), int(count))
    logger.debug("Robin roots for mu=%g: %s", mu, ", ".join(f"{nu:.8f}" for nu in roots))
    return RobinRoots(float(mu), roots)


@dataclass(frozen=True)
class RadialModeSolution:
    """``u(r, t) = sum_k a_k exp(-nu_k t) J0(nu_k r)`` over the given (root index, amplitude) pairs.

    Each term is a mode of the square-root operator on the unit disk with the
    Robin condition at ``r = 1``, decaying at rate ``nu_k``.
    """

    mu: float
    modes: Tuple[Tuple[int, float], ...] = DEFAULT_MODES
    roots: RobinRoots = field(init=False, repr=False)

    def __post_init__(self):
        if not self.modes:
            raise ConfigError("radial solution needs at least one mode")
        if any(index < 1 for index, _ in self.modes):
            raise ConfigError("mode indices are 1-based")
        object.__setattr__(self, "modes", tuple((int(k), float(a)) for k, a in self.modes))
        object.__setattr__(self, "roots", robin_roots(self.mu, max(k for k, _ in self.modes)))

    def rates(self) -> np.ndarray:
        return np.array([self.roots[k] for k, _ in self.modes])

    def amplitudes(self, t: float = 0.0) -> np.ndarray:
        return np.array([a for _, a in self.modes]) * np.exp(-self.rates() * t)

    def __call__(self, r, t: float = 0.0):
        r = np.asarray(r, dtype=float)
        total = np.zeros_like(r)
        for nu, amplitude in zip(self.rates(), self.amplitudes(t)):
            total = total + amplitude * bessel_j0(nu * r)
        return total

    def radial_derivative(self, r, t: float = 0.0):
        r = np.asarray(r, dtype=float)
        total = np.zeros_like(r)
        for nu, amplitude in zip(self.rates(), self.amplitudes(t)):
            total = total - amplitude * nu * bessel_j1(nu * r)
        return total


@lru_cache(maxsize=16)
def _default_solution(mu: float) -> RadialModeSolution:
    return RadialModeSolution(mu)


def exact_solution(mu: float, r, t: float):
    """``exp(-nu_1 t) J0(nu_1 r) + 1.5 exp(-nu_3 t) J0(nu_3 r)``."""
    return _default_solution(float(mu))(r, t)


def solution_rates(mu: float) -> np.ndarray:
    """Decay rates ``nu_1, nu_3`` of :func:`exact_solution`."""
    return _default_solution(float(mu)).rates()


def format_roots_table(mus: Sequence[float], count: int) -> str:
    header = "k  " + "".join(f"{f'mu = {mu:g}':>16}" for mu in mus)
    columns = [robin_roots(mu, count) for mu in mus]
    lines = [header]
    for k in range(1, count + 1):
        lines.append(f"{k:<3}" + "".join(f"{col[k]:16.8f}" for col in columns))
    return "\n".join(lines)
