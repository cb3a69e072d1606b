"""Constant-coefficient semigroups, the model linear equation, and Mizohata.

The semigroup e^{t(d_y^3 - nu d_y^4)} is exact as a Fourier multiplier; its
hyperviscous kernel obeys the (nu t)^{-n/4} L^1 scaling that drives the
mild-solution estimates.  The model equation

    w_t + (1 + g) w_yyy + beta g_y w_yy + a w_y + f = -nu w_yyyy,  w(0) = 0

is advanced with an integrating-factor RK4 scheme: the constant part
d_y^3 + nu d_y^4 rides in the exponential multiplier, the variable
remainder is explicit.  An EnergyLedger accumulates the twisted energy
E(t) = ||(1+g)^{beta/3 - 1/2} w||_L2^2 together with the Gronwall data
needed to fit the envelope constant; the envelope itself is
sigma(t) * sup_{s<=t} ||f(s)||^2 with sigma(t) = e^{C int (1+||g_t||)} - 1,
and the alternative parabolic form e^{C(t + sqrt(nu t))} - 1 is kept as a
second diagnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ParameterError
from .grid import Field, Grid, derivative

__all__ = [
    "apply_semigroup",
    "semigroup_kernel_l1",
    "if_rk4_step",
    "ModelCoefficients",
    "EnergyLedger",
    "solve_model_linear",
    "fit_gronwall_constant",
    "mizohata_functional",
]


def apply_semigroup(f: Field, t: float, nu: float, derivatives: int = 0,
                    include_airy: bool = True) -> Field:
    """d_y^n e^{t(d_y^3 - nu d_y^4)} f as an exact Fourier multiplier.

    With include_airy=False only the hyperviscous factor e^{-nu t d_y^4}
    is applied.
    """
    if t < 0:
        raise ParameterError("semigroup time must be nonnegative")
    if nu < 0:
        raise ParameterError("nu must be nonnegative")
    if derivatives not in (0, 1, 2, 3):
        raise ParameterError("derivatives must be an integer in [0, 3]")
    xi = f.grid.wavenumbers
    expo = -nu * t * xi**4
    if include_airy:
        mult = np.exp(expo + 1j * t * xi**3)
    else:
        mult = np.exp(expo).astype(complex)
    if derivatives:
        mult = mult * (1j * xi) ** derivatives
        mult[-1] = 0.0
    out = np.fft.irfft(mult * np.fft.rfft(f.values), n=f.grid.n)
    return Field(f.grid, out, label=f.label)


def semigroup_kernel_l1(t: float, nu: float, derivatives: int,
                        extent: float = 30.0, npts: int = 8192) -> float:
    """L^1 norm of the kernel of d_y^n e^{-nu t d_y^4} on the line.

    The kernel is synthesized on a grid scaled to the parabolic length
    (nu t)^{1/4} and integrated; the exact self-similar form makes the
    result a_n (nu t)^{-n/4}.
    """
    if nu * t <= 0:
        raise ParameterError("kernel synthesis requires nu * t > 0")
    if derivatives not in (0, 1, 2, 3):
        raise ParameterError("derivatives must be an integer in [0, 3]")
    B = (nu * t) ** 0.25
    L = 2 * extent * B
    xi = 2.0 * np.pi * np.fft.rfftfreq(npts, d=L / npts)
    mult = (1j * xi) ** derivatives * np.exp(-nu * t * xi**4)
    # h * sum |K| with K = irfft(mult) / h
    return float(np.sum(np.abs(np.fft.irfft(mult, n=npts))))


def if_rk4_step(values: np.ndarray, t: float, dt: float,
                half_multiplier: np.ndarray, nonlinear) -> np.ndarray:
    """One integrating-factor RK4 step for u_t = L u + N(t, u).

    half_multiplier = exp(dt/2 * Lhat) on rfft modes; nonlinear(t, u)
    returns N in physical space.  With N = 0 the step is the exact
    constant-coefficient propagator.
    """
    n = len(values)
    E = half_multiplier
    E2 = E * E
    v = np.fft.rfft(values)
    k1 = np.fft.rfft(nonlinear(t, values))
    u1 = np.fft.irfft(E * (v + (0.5 * dt) * k1), n=n)
    k2 = np.fft.rfft(nonlinear(t + 0.5 * dt, u1))
    u2 = np.fft.irfft(E * v + (0.5 * dt) * k2, n=n)
    k3 = np.fft.rfft(nonlinear(t + 0.5 * dt, u2))
    u3 = np.fft.irfft(E2 * v + dt * (E * k3), n=n)
    k4 = np.fft.rfft(nonlinear(t + dt, u3))
    return np.fft.irfft(E2 * v + (dt / 6.0) * (E2 * k1 + 2.0 * E * (k2 + k3) + k4), n=n)


def _as_timedep(obj):
    if isinstance(obj, Field):
        return lambda t, _f=obj: _f
    if callable(obj):
        return obj
    raise ParameterError("coefficient must be a Field or a callable t -> Field")


@dataclass(frozen=True)
class ModelCoefficients:
    """Coefficients g, a, f of the model equation, each a Field or t -> Field.

    The smallness hypothesis max|g| <= 1/2 is enforced every time g is
    loaded; beta is the second-order coefficient weight and nu >= 0 the
    regularization.
    """

    g: object
    a: object
    f: object
    beta: float = 7.0 / 5.0
    nu: float = 0.0

    def __post_init__(self):
        if self.nu < 0:
            raise ParameterError("nu must be nonnegative")
        object.__setattr__(self, "_g_fn", _as_timedep(self.g))
        object.__setattr__(self, "_a_fn", _as_timedep(self.a))
        object.__setattr__(self, "_f_fn", _as_timedep(self.f))

    def load_g(self, t: float) -> Field:
        gt = self._g_fn(t)
        if np.max(np.abs(gt.values)) > 0.5 + 1e-12:
            raise ParameterError(f"max|g| = {np.max(np.abs(gt.values)):.4f} "
                                 "violates the smallness hypothesis 1/2 at t = %g" % t)
        return gt

    def load_a(self, t: float) -> Field:
        return self._a_fn(t)

    def load_f(self, t: float) -> Field:
        return self._f_fn(t)

    def g_time_derivative_sup(self, t: float, delta: float) -> float:
        lo = self._g_fn(max(t - delta, 0.0)).values
        hi = self._g_fn(t + delta).values
        span = (t + delta) - max(t - delta, 0.0)
        return float(np.max(np.abs(hi - lo)) / span)


@dataclass
class EnergyLedger:
    """Per-step record of the twisted energy and its Gronwall envelope data.

    ts, energy: E(t) = ||(1+g)^{beta/3-1/2} w||^2.  fsup2 is the running
    sup of ||f||^2 and gronwall is I(t) = int_0^t (1 + ||g_t||_inf) ds, so
    the envelope for a constant C is (e^{C I(t)} - 1) fsup2(t).
    """

    nu: float
    ts: list = dc_field(default_factory=list)
    energy: list = dc_field(default_factory=list)
    fsup2: list = dc_field(default_factory=list)
    gronwall: list = dc_field(default_factory=list)
    C_fit: float | None = None

    def append(self, t, E, fsup2, I):
        if self.ts and t <= self.ts[-1]:
            raise ParameterError("ledger rows must be monotone in t")
        self.ts.append(float(t))
        self.energy.append(float(E))
        self.fsup2.append(float(fsup2))
        self.gronwall.append(float(I))

    def envelope(self, C: float) -> np.ndarray:
        I = np.asarray(self.gronwall)
        return (np.exp(C * I) - 1.0) * np.asarray(self.fsup2)

    def envelope_parabolic(self, C: float) -> np.ndarray:
        """Alternative form e^{C(t + sqrt(nu t))} - 1 times sup||f||^2."""
        t = np.asarray(self.ts)
        return (np.exp(C * (t + np.sqrt(self.nu * t))) - 1.0) * np.asarray(self.fsup2)

    def fit_c(self) -> float:
        """Smallest C with E(t) <= envelope(C) at every recorded row."""
        E = np.asarray(self.energy)
        F2 = np.asarray(self.fsup2)
        I = np.asarray(self.gronwall)
        ok = (I > 0) & (F2 > 0)
        if not np.any(ok):
            return 0.0
        return float(np.max(np.log1p(E[ok] / F2[ok]) / I[ok]))

    def to_csv(self, path, C: float | None = None) -> None:
        c = self.C_fit if C is None else C
        if c is None:
            c = self.fit_c()
        env = self.envelope(c)
        table = np.column_stack([self.ts, self.energy, env, np.full(len(self.ts), c)])
        np.savetxt(path, table, delimiter=",", header="t,E,envelope,C_fit",
                   comments="", fmt="%.17g")


def fit_gronwall_constant(ledgers) -> float:
    """Single constant C covering every ledger in the collection."""
    cs = [ledger.fit_c() for ledger in ledgers]
    if not cs:
        raise ParameterError("no ledgers to fit")
    return max(cs)


def _l2sq(h: float, vals: np.ndarray) -> float:
    return float(h * np.sum(vals * vals))


def solve_model_linear(coeffs: ModelCoefficients, T: float, dt: float,
                       snapshot_stride: int = 0, grid: Grid | None = None):
    """March the model equation from w(0) = 0; returns (trajectory, ledger).

    The trajectory is a list of (t, Field) snapshots including t = 0 and
    t = T; the ledger gains one row per step.  The grid defaults to the
    grid of f(0).
    """
    if T <= 0 or dt <= 0:
        raise ParameterError("T and dt must be positive")
    if grid is None:
        grid = coeffs.load_f(0.0).grid
    n_steps = max(1, int(math.ceil(T / dt - 1e-12)))
    dt = T / n_steps
    if snapshot_stride <= 0:
        snapshot_stride = max(1, n_steps // 64)

    xi = grid.wavenumbers
    half = np.exp((0.5 * dt) * (1j * xi**3 - coeffs.nu * xi**4))

    def nonlinear(t, w_vals):
        w = Field(grid, w_vals)
        gt = coeffs.load_g(t)
        at = coeffs.load_a(t)
        ft = coeffs.load_f(t)
        gy = derivative(gt, 1).values
        out = (gt.values * derivative(w, 3).values
               + coeffs.beta * gy * derivative(w, 2).values
               + at.values * derivative(w, 1).values
               + ft.values)
        return -out

    w = np.zeros(grid.n)
    t = 0.0
    ledger = EnergyLedger(nu=coeffs.nu)
    traj = [(0.0, Field(grid, w))]
    fsup2 = _l2sq(grid.h, coeffs.load_f(0.0).values)
    I = 0.0
    for j in range(n_steps):
        gmid = coeffs.g_time_derivative_sup(t + 0.5 * dt, 0.5 * dt)
        w = if_rk4_step(w, t, dt, half, nonlinear)
        if not np.all(np.isfinite(w)):
            raise ParameterError(f"model solve lost finiteness at t = {t + dt:.6g}")
        t = (j + 1) * dt
        I += dt * (1.0 + gmid)
        fsup2 = max(fsup2, _l2sq(grid.h, coeffs.load_f(t).values))
        gt = coeffs.load_g(t)
        twist = (1.0 + gt.values) ** (2.0 * coeffs.beta / 3.0 - 1.0)
        ledger.append(t, float(grid.h * np.sum(twist * w * w)), fsup2, I)
        if (j + 1) % snapshot_stride == 0 or j == n_steps - 1:
            traj.append((t, Field(grid, w)))
    return traj, ledger


def mizohata_functional(a: Field) -> float:
    """sup over y1 <= y2 of the integral of a from y1 to y2 (>= 0).

    Computed as the maximum prefix spread of the cumulative trapezoid
    antiderivative on the grid span.
    """
    v = a.values
    h = a.grid.h
    A = np.empty(a.grid.n)
    A[0] = 0.0
    np.cumsum(0.5 * h * (v[1:] + v[:-1]), out=A[1:])
    return float(np.max(A - np.minimum.accumulate(A)))
