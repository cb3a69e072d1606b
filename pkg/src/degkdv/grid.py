"""Uniform periodic grids and spectral primitives.

All fields in the package live on uniform periodic grids. Differentiation is
pseudo-spectral: a field f on n nodes over a box of length L is transformed
with a real FFT, multiplied by (i xi)^order with xi = 2 pi k / L, and
transformed back. Modes at the Nyquist frequency are projected out by every
derivative of order >= 1, which keeps differentiation band-consistent:
composing first derivatives matches a single higher-order call to machine
precision.

Quadrature is the periodic trapezoid rule h * sum(f), which is spectrally
accurate for smooth periodic integrands. The cumulative integral is the
non-periodic composite trapezoid rule anchored at a chosen point, for use
with effectively supported data.

Products formed in physical space alias; the grid carries a standard 2/3-rule
mask and `dealias` applies it. Sharp Littlewood-Paley projection onto
frequencies |xi| <= 2^j is provided by `lp_project`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParameterError

__all__ = [
    "Grid",
    "Field",
    "derivative",
    "integrate",
    "cumulative_integral",
    "lp_project",
    "dealias",
]

MAX_DERIVATIVE_ORDER = 24


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid with n nodes on [origin, origin + length).

    n must be a power of two >= 16 so that FFT sizes and dyadic frequency
    cutoffs behave predictably.
    """

    n: int
    length: float
    origin: float = 0.0

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or not _is_power_of_two(int(self.n)) or self.n < 16:
            raise ParameterError(f"grid size must be a power of two >= 16, got {self.n}")
        if not np.isfinite(self.length) or self.length <= 0:
            raise ParameterError(f"grid length must be positive and finite, got {self.length}")
        if not np.isfinite(self.origin):
            raise ParameterError("grid origin must be finite")

    @property
    def h(self) -> float:
        return self.length / self.n

    @property
    def nodes(self) -> np.ndarray:
        return self.origin + self.h * np.arange(self.n)

    @property
    def wavenumbers(self) -> np.ndarray:
        """Angular frequencies xi_k = 2 pi k / length for the rfft layout."""
        return 2.0 * np.pi * np.fft.rfftfreq(self.n, d=self.h)

    @property
    def nyquist(self) -> float:
        """Angular Nyquist frequency pi / h."""
        return np.pi / self.h

    @property
    def dealias_mask(self) -> np.ndarray:
        """Boolean 2/3-rule mask over rfft modes (True = keep)."""
        k = np.arange(self.n // 2 + 1)
        return k <= self.n // 3

    def same_as(self, other: "Grid") -> bool:
        return (
            self.n == other.n
            and np.isclose(self.length, other.length, rtol=1e-14, atol=0.0)
            and np.isclose(self.origin, other.origin, rtol=0.0, atol=1e-14 * max(1.0, abs(self.origin)))
        )


@dataclass(frozen=True)
class Field:
    """Real values sampled at the nodes of a Grid.

    Values are copied on construction, validated finite, and frozen, so
    fields are safe to share between operations and threads.
    """

    grid: Grid
    values: np.ndarray
    label: str = field(default="", compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.shape[0] != self.grid.n:
            raise DataError(f"field values must be 1-d of length {self.grid.n}, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError(f"field '{self.label}' contains non-finite values")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def with_values(self, values: np.ndarray, label: str | None = None) -> "Field":
        return Field(self.grid, values, self.label if label is None else label)

    def __add__(self, other):
        return self.with_values(self.values + _coerce(other, self))

    def __sub__(self, other):
        return self.with_values(self.values - _coerce(other, self))

    def __mul__(self, other):
        return self.with_values(self.values * _coerce(other, self))

    __radd__ = __add__
    __rmul__ = __mul__


def _coerce(other, ref: Field) -> np.ndarray:
    if isinstance(other, Field):
        if not other.grid.same_as(ref.grid):
            raise DataError("fields live on different grids")
        return other.values
    return np.asarray(other, dtype=np.float64)


def derivative(f: Field, order: int) -> Field:
    """Spectral derivative of the given order (0 <= order <= 24).

    Orders >= 1 zero the Nyquist mode, so derivative(derivative(f, 1), 1)
    equals derivative(f, 2) exactly.
    """
    if not isinstance(order, (int, np.integer)) or order < 0 or order > MAX_DERIVATIVE_ORDER:
        raise ParameterError(f"derivative order must be an integer in [0, {MAX_DERIVATIVE_ORDER}], got {order}")
    if order == 0:
        return f
    xi = f.grid.wavenumbers
    mult = (1j * xi) ** order
    mult[-1] = 0.0
    out = np.fft.irfft(mult * np.fft.rfft(f.values), n=f.grid.n)
    return Field(f.grid, out, f.label)


def integrate(f: Field) -> float:
    """Periodic trapezoid quadrature h * sum(f)."""
    return float(f.grid.h * np.sum(f.values))


def cumulative_integral(f: Field, anchor: float) -> Field:
    """Composite trapezoid antiderivative x -> integral from anchor to x.

    The anchor must lie in the grid's span [first node, last node]. The
    result is exact at the anchor (value 0 there) and accurate to quadrature
    tolerance elsewhere; no periodic wrap term is added.
    """
    nodes = f.grid.nodes
    if not (nodes[0] - 1e-12 * f.grid.length <= anchor <= nodes[-1] + 1e-12 * f.grid.length):
        raise ParameterError(f"anchor {anchor} outside grid span [{nodes[0]}, {nodes[-1]}]")
    v = f.values
    h = f.grid.h
    cum = np.empty(f.grid.n)
    cum[0] = 0.0
    np.cumsum(0.5 * h * (v[1:] + v[:-1]), out=cum[1:])
    at_anchor = float(np.interp(anchor, nodes, cum))
    return Field(f.grid, cum - at_anchor, f.label)


def lp_project(f: Field, j: int) -> Field:
    """Sharp Fourier projection onto frequencies |xi| <= 2^j.

    Requires 2^j below the grid's Nyquist frequency. The projection is
    idempotent and self-adjoint for the discrete inner product h * sum(f g).
    """
    cutoff = 2.0 ** float(j)
    if cutoff >= f.grid.nyquist:
        raise ParameterError(
            f"cutoff 2^{j} = {cutoff} is not below the Nyquist frequency {f.grid.nyquist}"
        )
    xi = f.grid.wavenumbers
    fhat = np.fft.rfft(f.values)
    fhat[xi > cutoff] = 0.0
    return Field(f.grid, np.fft.irfft(fhat, n=f.grid.n), f.label)


def dealias(f: Field) -> Field:
    """Apply the grid's 2/3-rule mask; use after forming pointwise products."""
    fhat = np.fft.rfft(f.values)
    fhat[~f.grid.dealias_mask] = 0.0
    return Field(f.grid, np.fft.irfft(fhat, n=f.grid.n), f.label)
