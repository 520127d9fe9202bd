"""
Named built-in fields used in configuration files and on the command line.

Scalar fields are callables ``f(points, t) -> values`` over an ``(n, 2)`` point
array; velocity fields return an ``(n, 2)`` array.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from app.services.analytic import exact_solution
from app.utils.errors import ConfigError

ScalarField = Callable[[np.ndarray, float], np.ndarray]
VelocityField = Callable[[np.ndarray, float], np.ndarray]


def constant(value: float) -> ScalarField:
    def field(points, t=0.0):
        return np.full(len(points), float(value))

    field.__name__ = f"constant:{value:g}"
    return field


def zero() -> ScalarField:
    return constant(0.0)


def radial_exact(mu: float) -> ScalarField:
    """The two-mode verification solution as a field over the quarter disk."""

    def field(points, t=0.0):
        points = np.asarray(points, dtype=float)
        return exact_solution(mu, np.hypot(points[:, 0], points[:, 1]), t)

    field.__name__ = f"exact:{mu:g}"
    return field


def bubble_stream(points) -> np.ndarray:
    x, y = points[:, 0], points[:, 1]
    return (x * y * (1.0 - x * x - y * y)) ** 2


def bubble_rotation(amplitude: float = 1.0) -> VelocityField:
    """Rotated gradient of ``(x y (1 - x^2 - y^2))^2``.

    Divergence free, and it vanishes together with its stream function on the
    whole boundary of the quarter disk.
    """

    def field(points, t=0.0):
        points = np.asarray(points, dtype=float)
        x, y = points[:, 0], points[:, 1]
        q = x * y * (1.0 - x * x - y * y)
        vx = 2.0 * q * x * (1.0 - x * x - 3.0 * y * y)
        vy = -2.0 * q * y * (1.0 - 3.0 * x * x - y * y)
        return amplitude * np.column_stack([vx, vy])

    field.__name__ = f"bubble_rotation:{amplitude:g}"
    return field


def zero_velocity() -> VelocityField:
    def field(points, t=0.0):
        return np.zeros((len(points), 2))

    field.__name__ = "zero"
    return field


def _split(spec: str):
    name, _, arg = str(spec).strip().partition(":")
    return name.strip().lower(), arg.strip()


def _number(spec: str, arg: str) -> float:
    try:
        value = float(arg)
    except ValueError as exc:
        raise ConfigError(f"field '{spec}': '{arg}' is not a number") from exc
    if not np.isfinite(value):
        raise ConfigError(f"field '{spec}': value must be finite")
    return value


def parse_scalar_field(spec) -> ScalarField:
    """``zero``, ``constant:V`` (or a bare number) and ``exact:MU``."""
    if callable(spec):
        return spec
    if isinstance(spec, (int, float)):
        return constant(float(spec))
    name, arg = _split(spec)
    if name == "zero" and not arg:
        return zero()
    if name == "constant" and arg:
        return constant(_number(spec, arg))
    if name == "exact" and arg:
        mu = _number(spec, arg)
        if mu <= 0.0:
            raise ConfigError(f"field '{spec}': Robin coefficient must be positive")
        return radial_exact(mu)
    try:
        return constant(float(spec))
    except ValueError:
        raise ConfigError(f"unknown scalar field '{spec}' (expected zero, constant:V or exact:MU)") from None


def parse_velocity(spec):
    """``None``/``none``/``zero`` or ``bubble_rotation[:A]``; ``None`` means no convection."""
    if spec is None or callable(spec):
        return spec
    name, arg = _split(spec)
    if name in ("", "none"):
        return None
    if name == "zero" and not arg:
        return zero_velocity()
    if name == "bubble_rotation":
        return bubble_rotation(_number(spec, arg) if arg else 1.0)
    raise ConfigError(f"unknown velocity field '{spec}' (expected none, zero or bubble_rotation[:A])")
