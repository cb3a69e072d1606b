"""Time evolution of the flattened, Lagrangian, and Eulerian formulations.

The main solver advances the regularized W-equation

    W_t + (1+g) W_yyy + (7/5) g_y W_yy + N(y, W, W_y) + rho^{5/6} F = -nu W_yyyy

with an integrating-factor RK4 scheme: exp(dt(partial_y^3 + nu partial_y^4))
is applied exactly on Fourier modes and the variable remainder
(g W_yyy, lower-order terms, forcing) is explicit.  The Z-equation solver is
an independent cross-check of the same flow in the unflattened variable; its
dissipation is the conjugated operator rho^{-5/6} d_y^4 (rho^{5/6} Z), so the
two solvers regularize the identical Eulerian dynamics.  The Duhamel
iteration builds the mild solution of the same equation by fixed point, and
solve_hydrodynamic integrates the Eulerian form u_t = -(b u)_x directly for
strictly positive periodic data.

Every coefficient of N and R is carried as an exact rational; the term
lists are unit-tested against symbolic reductions and against each other
through the coordinate maps.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .analysis import NormRequest, drift_report, seam_leak, z_norm
from .coordinates import FrameFields, chain_derivative, reconstruct_eulerian, z_from_w
from .errors import DegeneracyError, NonContractionError, ParameterError
from .grid import Field, Grid
from .linear_models import if_rk4_step

__all__ = [
    "SolverConfig",
    "StepReport",
    "EvolutionState",
    "ZState",
    "rhs_w",
    "rhs_z",
    "rhs_z_xform",
    "step",
    "evolve",
    "step_z",
    "evolve_z",
    "duhamel_fixed_point",
    "solve_hydrodynamic",
    "write_snapshots",
]


@dataclass(frozen=True)
class SolverConfig:
    """Stepper and iteration knobs shared by the evolution front ends.

    dt = None selects the stability rule dt = cfl h^3 / (pi^3 max(1+g)).
    snapshot_stride = 0 picks a stride that yields about 32 snapshots.
    """

    dt: float | None = None
    cfl_constant: float = 0.5
    dealias: bool = True
    duhamel_tol: float = 1e-10
    duhamel_max_iter: int = 25
    snapshot_stride: int = 0

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise ParameterError("dt must be positive when given")
        if not self.cfl_constant > 0:
            raise ParameterError("cfl_constant must be positive")
        if not self.duhamel_tol > 0:
            raise ParameterError("duhamel_tol must be positive")
        if self.duhamel_max_iter < 1:
            raise ParameterError("duhamel_max_iter must be at least 1")
        if self.snapshot_stride < 0:
            raise ParameterError("snapshot_stride must be nonnegative")

    def content_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class StepReport:
    """Monitor emitted every snapshot stride: smallness and leak gauges."""

    t: float
    g_max: float
    deviation: float
    boundary_leak: float
    rejected: bool = False


GUARD_G_MAX = 0.6


def _check_state(grid: Grid, frame: FrameFields, nu: float) -> None:
    if not grid.same_as(frame.rho.grid):
        raise ParameterError("state grid does not match the frame grid")
    if nu < 0:
        raise ParameterError("nu must be nonnegative")


@dataclass(frozen=True)
class EvolutionState:
    """Flattened-variable state: W on the frame's y-grid at time t."""

    t: float
    W: Field
    frame: FrameFields
    nu: float
    mu: int

    def __post_init__(self):
        _check_state(self.W.grid, self.frame, self.nu)
        if int(self.mu) != self.frame.mu:
            raise ParameterError("state mu does not match the frame mu")
        if not np.all(np.isfinite(self.W.values)):
            raise ParameterError("W contains non-finite values")
        base = 1.0 + self.frame.rho_m56.values * self.W.values
        if np.min(base) <= 0.0:
            node = int(np.argmin(base))
            raise DegeneracyError(
                f"1 + rho^(-5/6) W reached {np.min(base):.3e}",
                node=node, t=self.t)

    def z(self) -> Field:
        return z_from_w(self.W, self.frame)

    def g(self) -> Field:
        base = 1.0 + self.frame.rho_m56.values * self.W.values
        return Field(self.W.grid, base**5 - 1.0, label="g")


@dataclass(frozen=True)
class ZState:
    """Lagrangian-variable state: Z on the frame's y-grid at time t."""

    t: float
    Z: Field
    frame: FrameFields
    nu: float
    mu: int

    def __post_init__(self):
        _check_state(self.Z.grid, self.frame, self.nu)
        if int(self.mu) != self.frame.mu:
            raise ParameterError("state mu does not match the frame mu")
        if not np.all(np.isfinite(self.Z.values)):
            raise ParameterError("Z contains non-finite values")
        base = 1.0 + self.Z.values
        if np.min(base) <= 0.0:
            node = int(np.argmin(base))
            raise DegeneracyError(
                f"1 + Z reached {np.min(base):.3e}", node=node, t=self.t)

    def g(self) -> Field:
        return Field(self.Z.grid, (1.0 + self.Z.values) ** 5 - 1.0, label="g")


class _FrameCoeffs:
    """Precomputed frame arrays shared by the W and Z right-hand sides."""

    def __init__(self, frame: FrameFields, mu: int):
        grid = frame.rho.grid
        self.grid = grid
        self.frame = frame
        self.mu = float(mu)
        self.r56 = frame.rho56.values
        self.rm56 = frame.rho_m56.values
        self.rho23 = frame.rho.values ** (2.0 / 3.0)
        self.L1 = frame.L1.values
        self.L2 = frame.L2.values
        self.L3 = frame.L3.values
        self.L4 = frame.log_rho_derivs[3].values
        self.F = frame.F.values
        self.forcing = frame.forcing.values
        self.forcing_hat = np.fft.rfft(self.forcing)

        xi = grid.wavenumbers
        m1 = 1j * xi
        m1[-1] = 0.0
        self.m1 = m1
        self.m2 = m1 * m1
        self.m3 = self.m2 * m1
        self.m4 = self.m2 * self.m2
        self.mask = grid.dealias_mask

        # frame-constant coefficient combinations, assembled once; the
        # per-stage right sides are then short pointwise expressions
        L1, L2, L3, L4 = self.L1, self.L2, self.L3, self.L4
        L1sq = L1 * L1
        self.c56L1 = (5.0 / 6.0) * L1
        self.cWy = (-5.0 / 2.0) * L2 + (5.0 / 12.0) * L1sq
        self.cW = ((-5.0 / 6.0) * L3 - (55.0 / 108.0) * L1sq * L1
                   + (5.0 / 2.0) * L1 * L2)
        self.cXy = (-5.0 / 3.0) * L1
        self.cXw = (-5.0 / 6.0) * L2 + (55.0 / 36.0) * L1sq
        self.cRy = (-19.0 / 9.0) * L1sq + (25.0 / 6.0) * L2
        self.cR2 = (43.0 / 6.0) * L1
        self.rho_xxx = L3 - (4.0 / 3.0) * L1 * L2 + (5.0 / 9.0) * L1sq * L1
        self.half_rxxx = 0.5 * self.rho_xxx
        self.cMu1 = self.mu * self.rho23 * L1
        self.cMu2 = 2.0 * self.mu * self.rho23
        self.cZyy = (5.0 / 2.0) * L1

        # complete Bell polynomials of (5/6) d^k log(rho): conjugation
        # coefficients of rho^{-5/6} d_y^4 (rho^{5/6} Z)
        l1 = L1
        l2 = L2 - L1**2
        l3 = L3 - 3.0 * L1 * L2 + 2.0 * L1**3
        l4 = L4 - 4.0 * L1 * L3 - 3.0 * L2**2 + 12.0 * L1**2 * L2 - 6.0 * L1**4
        s1 = (5.0 / 6.0) * l1
        s2 = (5.0 / 6.0) * l2 + s1**2
        s3 = (5.0 / 6.0) * l3 + 3.0 * s1 * ((5.0 / 6.0) * l2) + s1**3
        s4 = ((5.0 / 6.0) * l4 + 4.0 * s1 * ((5.0 / 6.0) * l3)
              + 3.0 * ((5.0 / 6.0) * l2) ** 2
              + 6.0 * s1**2 * ((5.0 / 6.0) * l2) + s1**4)
        self.bell = (s1, s2, s3, s4)

    def project(self, vals: np.ndarray) -> np.ndarray:
        return np.fft.irfft(self.mask * np.fft.rfft(vals), n=self.grid.n)

    def spectral(self, vals: np.ndarray, mult: np.ndarray) -> np.ndarray:
        return np.fft.irfft(mult * np.fft.rfft(vals), n=self.grid.n)

    # -- W form ----------------------------------------------------------

    def _w_var_raw(self, W: np.ndarray, vh: np.ndarray, t: float) -> np.ndarray:
        """g W_yyy + (7/5) g_y W_yy + N + rho^{5/6} R, before dealiasing."""
        Wy = np.fft.irfft(self.m1 * vh, n=self.grid.n)
        Wyy = np.fft.irfft(self.m2 * vh, n=self.grid.n)
        Wyyy = np.fft.irfft(self.m3 * vh, n=self.grid.n)

        h = self.rm56 * W
        base = 1.0 + h
        mn = np.min(base)
        if mn <= 0.0:
            raise DegeneracyError(
                f"1 + rho^(-5/6) W reached {mn:.3e}",
                node=int(np.argmin(base)), t=t)
        hy = self.rm56 * (Wy - self.c56L1 * W)
        b3 = base * base * base
        b4 = b3 * base
        b5 = b4 * base
        hy2 = hy * hy

        N = (self.cWy * Wy + self.cW * W) * b5 \
            + 7.0 * b4 * hy * (self.cXy * Wy + self.cXw * W)
        R = self.cRy * b5 * hy \
            + self.cR2 * b4 * hy2 + 4.0 * b3 * hy * hy2 \
            + self.half_rxxx * (b5 * base - 1.0) \
            + self.cMu1 * (b4 - 1.0) + self.cMu2 * b3 * hy
        return (b5 - 1.0) * Wyyy + 7.0 * (b4 * hy) * Wyy + N + self.r56 * R

    def w_variable(self, W: np.ndarray, t: float, dealias: bool) -> np.ndarray:
        """g W_yyy + (7/5) g_y W_yy + N + forcing (products dealiased)."""
        var = self._w_var_raw(W, np.fft.rfft(W), t)
        if dealias:
            var = self.project(var)
        return var + self.forcing

    def w_nl_hat(self, W: np.ndarray, t: float, dealias: bool) -> np.ndarray:
        """rfft of w_variable; spectral output for the time stepper."""
        var_hat = np.fft.rfft(self._w_var_raw(W, np.fft.rfft(W), t))
        if dealias:
            var_hat = self.mask * var_hat
        return var_hat + self.forcing_hat

    # -- Z form ----------------------------------------------------------

    def _z_derivs(self, Z: np.ndarray):
        vh = np.fft.rfft(Z)
        return (np.fft.irfft(self.m1 * vh, n=self.grid.n),
                np.fft.irfft(self.m2 * vh, n=self.grid.n),
                np.fft.irfft(self.m3 * vh, n=self.grid.n))

    def _z_bracket_core(self, Z, Zy, Zyy, Zyyy, t: float) -> np.ndarray:
        base = 1.0 + Z
        mn = np.min(base)
        if mn <= 0.0:
            raise DegeneracyError(
                f"1 + Z reached {mn:.3e}", node=int(np.argmin(base)), t=t)
        b3 = base * base * base
        b4 = b3 * base
        b5 = b4 * base
        Zy2 = Zy * Zy
        return (b5 * Zyyy
                + (self.cZyy * Zyy + self.cRy * Zy) * b5
                + (7.0 * Zy * Zyy + self.cR2 * Zy2 + self.cMu1) * b4
                + (4.0 * Zy * Zy2 + self.cMu2 * Zy) * b3
                + self.half_rxxx * (b5 * base))

    def z_bracket(self, Z: np.ndarray, t: float) -> np.ndarray:
        """The full advective bracket of the Z-equation (Z_t = -bracket)."""
        Zy, Zyy, Zyyy = self._z_derivs(Z)
        return self._z_bracket_core(Z, Zy, Zyy, Zyyy, t)

    def z_remainder(self, Z: np.ndarray, t: float, dealias: bool) -> np.ndarray:
        """Advective bracket minus the conjugated third-derivative block.

        rho^{5/6} times this remainder is what the Z stepper advances
        explicitly; the subtracted expansion Z_yyy + 3 s1 Z_yy + 3 s2 Z_y
        + s3 Z is the part absorbed into the integrating factor.  The
        subtraction cancels the (5/2) L1 Z_yy layer pointwise, which is
        essential: that term violates the Mizohata condition on decaying
        frames and amplifies explicitly-stepped content by (sup rho /
        inf rho)^{5/6}.
        """
        Zy, Zyy, Zyyy = self._z_derivs(Z)
        s1, s2, s3, _ = self.bell
        rem = (self._z_bracket_core(Z, Zy, Zyy, Zyyy, t)
               - (Zyyy + 3.0 * s1 * Zyy + 3.0 * s2 * Zy + s3 * Z))
        if dealias:
            rem = self.project(rem - self.F) + self.F
        return rem

    def z_zeta_nl_hat(self, zeta: np.ndarray, t: float,
                      dealias: bool) -> np.ndarray:
        """rfft of rho^{5/6} z_remainder(rho^{-5/6} zeta); spectral output.

        The Z march carries zeta = rho^{5/6} Z, for which the conjugated
        linear block becomes the constant-coefficient multiplier of the
        integrating factor and the marching variable stays band-limited.
        Only the weighted remainder is evaluated here, and the algebra is
        the Z-form bracket, not the W-form right side.
        """
        Zt = self.rm56 * zeta
        vh = np.fft.rfft(Zt)
        n = self.grid.n
        Zy = np.fft.irfft(self.m1 * vh, n=n)
        Zyy = np.fft.irfft(self.m2 * vh, n=n)
        Zyyy = np.fft.irfft(self.m3 * vh, n=n)
        s1, s2, s3, _ = self.bell
        rem = (self._z_bracket_core(Zt, Zy, Zyy, Zyyy, t)
               - (Zyyy + 3.0 * s1 * Zyy + 3.0 * s2 * Zy + s3 * Zt))
        out_hat = np.fft.rfft(self.r56 * rem - self.forcing)
        if dealias:
            out_hat = self.mask * out_hat
        return out_hat + self.forcing_hat


def rhs_w(state: EvolutionState, dealias: bool = True) -> Field:
    """Right side of the regularized W-equation at the given state."""
    c = _FrameCoeffs(state.frame, state.mu)
    W = state.W.values
    var = c.w_variable(W, state.t, dealias)
    vh = np.fft.rfft(W)
    lin = np.fft.irfft((c.m3 + state.nu * c.m4) * vh, n=state.W.grid.n)
    return Field(state.W.grid, -(lin + var), label="rhs_w")


def rhs_z(Z: Field, frame: FrameFields, mu: int, dealias: bool = True) -> Field:
    """Right side of the inviscid Z-equation (literal term transcription)."""
    c = _FrameCoeffs(frame, mu)
    bracket = c.z_bracket(Z.values, 0.0)
    if dealias:
        bracket = c.project(bracket - c.F) + c.F
    return Field(Z.grid, -bracket, label="rhs_z")


def rhs_z_xform(Z: Field, frame: FrameFields, mu: int) -> Field:
    """Right side of the Z-equation assembled in x-coordinate form.

    Uses the chain rules d_x = rho^{-1/3} d_y through chain_derivative and
    the frame's rho-derivative closed forms; agreement with rhs_z is the
    appendix-consistency check between the two printed forms.
    """
    c = _FrameCoeffs(frame, mu)
    rho = frame.rho.values
    L1, L2, L3 = c.L1, c.L2, c.L3
    rho_x = c.rho23 * L1
    rho_xx = rho ** (1.0 / 3.0) * (L2 - (1.0 / 3.0) * L1**2)
    rho_xxx = L3 - (4.0 / 3.0) * L1 * L2 + (5.0 / 9.0) * L1**3
    Zx = chain_derivative(Z, 1, frame).values
    Zxx = chain_derivative(Z, 2, frame).values
    Zxxx = chain_derivative(Z, 3, frame).values
    base = 1.0 + Z.values
    b3 = base * base * base
    b4 = b3 * base
    b5 = b4 * base
    b6 = b5 * base
    bracket = (rho * b5 * Zxxx
               + (7.0 / 2.0) * rho_x * b5 * Zxx
               + 7.0 * rho * b4 * Zx * Zxx
               + (9.0 / 2.0) * rho_xx * b5 * Zx
               + (19.0 / 2.0) * rho_x * b4 * Zx**2
               + 4.0 * rho * b3 * Zx**3
               + 0.5 * rho_xxx * b6
               + float(mu) * (rho_x * b4 + 2.0 * rho * b3 * Zx))
    return Field(Z.grid, -bracket, label="rhs_z_xform")


def _rule_dt(grid: Grid, g_max_plus_one: float, cfl: float) -> float:
    return cfl * grid.h**3 / (math.pi**3 * g_max_plus_one)


def _w_dt(state: EvolutionState, config: SolverConfig) -> float:
    if config.dt is not None:
        return config.dt
    gmax = float(np.max(np.abs(state.g().values)))
    return _rule_dt(state.W.grid, 1.0 + gmax, config.cfl_constant)


def _z_dt(state: ZState, config: SolverConfig) -> float:
    if config.dt is not None:
        return config.dt
    gmax = float(np.max(np.abs(state.g().values)))
    return _rule_dt(state.Z.grid, 1.0 + gmax, config.cfl_constant)


def _half_multiplier(grid: Grid, dt: float, nu: float) -> np.ndarray:
    xi = grid.wavenumbers
    return np.exp((0.5 * dt) * (1j * xi**3 - nu * xi**4))


def _if_rk4_step_hat(values: np.ndarray, t: float, dt: float,
                     half_multiplier: np.ndarray, nl_hat) -> np.ndarray:
    """if_rk4_step with the nonlinearity returned in spectral form.

    Identical stage algebra; skipping the per-stage physical round trip
    of the nonlinear term saves two transforms per evaluation.
    """
    n = len(values)
    E = half_multiplier
    E2 = E * E
    v = np.fft.rfft(values)
    k1 = nl_hat(t, values)
    u1 = np.fft.irfft(E * (v + (0.5 * dt) * k1), n=n)
    k2 = nl_hat(t + 0.5 * dt, u1)
    u2 = np.fft.irfft(E * v + (0.5 * dt) * k2, n=n)
    k3 = nl_hat(t + 0.5 * dt, u2)
    u3 = np.fft.irfft(E2 * v + dt * (E * k3), n=n)
    k4 = nl_hat(t + dt, u3)
    return np.fft.irfft(
        E2 * v + (dt / 6.0) * (E2 * k1 + 2.0 * E * (k2 + k3) + k4), n=n)


def _if_rk3_step_hat(values: np.ndarray, t: float, dt: float,
                     half_multiplier: np.ndarray, nl_hat) -> np.ndarray:
    """Third-order integrating-factor step (Kutta's RK3), spectral nl.

    The Z front end runs one order below the W front end on purpose:
    trajectory agreement between the two formulations is then a
    nontrivial certificate, dominated by the third-order member and
    vanishing under refinement rather than sitting at round-off.
    """
    n = len(values)
    Eh = half_multiplier
    E1 = Eh * Eh
    v = np.fft.rfft(values)
    k1 = nl_hat(t, values)
    u1 = np.fft.irfft(Eh * (v + (0.5 * dt) * k1), n=n)
    k2 = nl_hat(t + 0.5 * dt, u1)
    u2 = np.fft.irfft(E1 * (v - dt * k1) + (2.0 * dt) * (Eh * k2), n=n)
    k3 = nl_hat(t + dt, u2)
    return np.fft.irfft(
        E1 * v + (dt / 6.0) * (E1 * k1 + 4.0 * Eh * k2 + k3), n=n)


def _guard(vals: np.ndarray, rm56: np.ndarray | None, t: float) -> None:
    if not np.all(np.isfinite(vals)):
        raise DegeneracyError("solution lost finiteness", t=t)
    base = 1.0 + (rm56 * vals if rm56 is not None else vals)
    mn = np.min(base)
    if mn <= 0.0:
        raise DegeneracyError(
            f"positivity lost: min = {mn:.3e}", node=int(np.argmin(base)), t=t)
    gmax = float(np.max(np.abs(base**5 - 1.0)))
    if gmax > GUARD_G_MAX:
        raise DegeneracyError(
            f"max|g| = {gmax:.3f} exceeded the guard {GUARD_G_MAX}", t=t)


def step(state: EvolutionState, config: SolverConfig) -> EvolutionState:
    """One integrating-factor RK4 step of the W-equation."""
    dt = _w_dt(state, config)
    c = _FrameCoeffs(state.frame, state.mu)
    half = _half_multiplier(state.W.grid, dt, state.nu)

    def nl(t, w):
        return -c.w_nl_hat(w, t, config.dealias)

    new = _if_rk4_step_hat(state.W.values, state.t, dt, half, nl)
    _guard(new, c.rm56, state.t + dt)
    return EvolutionState(state.t + dt, Field(state.W.grid, new),
                          state.frame, state.nu, state.mu)


def step_z(state: ZState, config: SolverConfig) -> ZState:
    """One integrating-factor RK4 step of the Z-equation.

    The stepper marches the conjugated unknown zeta = rho^{5/6} Z.  The
    naked Z-equation violates the Mizohata integrability condition on
    decaying frames (its (5/2) L1 Z_yy layer amplifies travelling
    content by (sup rho / inf rho)^{5/6}), so no unconjugated scheme is
    stable; in the zeta variable the offending block becomes the
    constant-coefficient integrating factor, with dissipation entering
    as the conjugate rho^{5/6} d_y^4 rho^{-5/6} zeta.  The nonlinearity
    is still assembled from the Z-form bracket, and the time stepper is
    the third-order member (see _if_rk3_step_hat).
    """
    dt = _z_dt(state, config)
    c = _FrameCoeffs(state.frame, state.mu)
    half = _half_multiplier(state.Z.grid, dt, state.nu)

    def nl(t, zeta):
        return -c.z_zeta_nl_hat(zeta, t, config.dealias)

    new = _if_rk3_step_hat(c.r56 * state.Z.values, state.t, dt, half, nl)
    new_z = c.rm56 * new
    _guard(new_z, None, state.t + dt)
    return ZState(state.t + dt, Field(state.Z.grid, new_z),
                  state.frame, state.nu, state.mu)


def _march(values, t0, T_final, dt_first, stepper, half_of_dt, rm56, grid,
           stride, callbacks, snapshot):
    """Shared snapshot/report loop for the W and Z front ends."""
    span = T_final - t0
    n_steps = max(1, int(math.ceil(span / dt_first - 1e-12)))
    dt = span / n_steps
    half = half_of_dt(dt)
    if stride <= 0:
        stride = max(1, n_steps // 32)
    w = values.copy()
    t = t0
    try:
        for j in range(n_steps):
            w = stepper(w, t, dt, half)
            t = t0 + (j + 1) * dt
            _guard(w, rm56, t)
            if (j + 1) % stride == 0 or j == n_steps - 1:
                base = 1.0 + (rm56 * w if rm56 is not None else w)
                report = StepReport(
                    t=t,
                    g_max=float(np.max(np.abs(base**5 - 1.0))),
                    deviation=float(np.max(np.abs(base - 1.0))),
                    boundary_leak=seam_leak(Field(grid, w)),
                )
                for cb in callbacks:
                    cb(report)
                snapshot(t, w)
    except DegeneracyError as err:
        report = StepReport(t=err.t if err.t is not None else t,
                            g_max=math.nan, deviation=math.nan,
                            boundary_leak=math.nan, rejected=True)
        for cb in callbacks:
            cb(report)
        raise
    return w


def evolve(state: EvolutionState, T_final: float, config: SolverConfig,
           callbacks=()):
    """March the W-equation to T_final; returns (trajectory, diagnostics).

    The trajectory is a list of EvolutionState snapshots (including the
    initial state).  When the frame descends from a coordinate map and the
    run starts at t = 0, the trajectory is reconstructed to Eulerian
    snapshots and summarized in a DiagnosticsRecord; otherwise the record
    is None.
    """
    if T_final <= state.t:
        raise ParameterError("T_final must exceed the state time")
    c = _FrameCoeffs(state.frame, state.mu)
    grid = state.W.grid
    traj = [state]

    def snapshot(t, w):
        traj.append(EvolutionState(t, Field(grid, w.copy()), state.frame,
                                   state.nu, state.mu))

    def nl(t, w):
        return -c.w_nl_hat(w, t, config.dealias)

    _march(state.W.values, state.t, T_final, _w_dt(state, config),
           lambda w, t, dt, half: _if_rk4_step_hat(w, t, dt, half, nl),
           lambda dt: _half_multiplier(grid, dt, state.nu),
           c.rm56, grid, config.snapshot_stride, callbacks, snapshot)

    record = None
    if state.frame.cmap is not None and traj[0].t == 0.0:
        z_traj = [(s.t, s.z()) for s in traj]
        u_traj = reconstruct_eulerian(z_traj, state.frame.cmap.spec, state.frame)
        record = drift_report(u_traj, int(state.mu))
    return traj, record


def evolve_z(state: ZState, T_final: float, config: SolverConfig,
             callbacks=()):
    """March the Z-equation to T_final; returns (trajectory, diagnostics)."""
    if T_final <= state.t:
        raise ParameterError("T_final must exceed the state time")
    c = _FrameCoeffs(state.frame, state.mu)
    grid = state.Z.grid
    traj = [state]

    def snapshot(t, zeta):
        traj.append(ZState(t, Field(grid, c.rm56 * zeta), state.frame,
                           state.nu, state.mu))

    def nl(t, zeta):
        return -c.z_zeta_nl_hat(zeta, t, config.dealias)

    _march(c.r56 * state.Z.values, state.t, T_final, _z_dt(state, config),
           lambda z, t, dt, half: _if_rk3_step_hat(z, t, dt, half, nl),
           lambda dt: _half_multiplier(grid, dt, state.nu),
           c.rm56, grid, config.snapshot_stride, callbacks, snapshot)

    record = None
    if state.frame.cmap is not None and traj[0].t == 0.0:
        z_traj = [(s.t, s.Z) for s in traj]
        u_traj = reconstruct_eulerian(z_traj, state.frame.cmap.spec, state.frame)
        record = drift_report(u_traj, int(state.mu))
    return traj, record


def duhamel_fixed_point(frame: FrameFields, nu: float, T: float,
                        config: SolverConfig, mu: int | None = None,
                        norm_request: NormRequest | None = None,
                        on_iteration=None):
    """Mild-solution fixed point of the regularized W-equation from W0 = 0.

    Iterates T[W](t) = -int_0^t e^{-nu(t-s) d^4} (G(s) + rho^{5/6} F) ds
    with G = (1+g) W_yyy + (7/5) g_y W_yy + N, until successive iterates
    differ by less than duhamel_tol in the discrete parabolic trajectory
    norm (L^2-based by default; high weighted requests are round-off
    dominated on a grid and serve as diagnostics only).  Raises
    NonContractionError with the measured ratio if the iteration expands.
    """
    if nu <= 0:
        raise ParameterError("the mild iteration requires nu > 0")
    if T <= 0:
        raise ParameterError("T must be positive")
    mu = frame.mu if mu is None else int(mu)
    c = _FrameCoeffs(frame, mu)
    grid = frame.rho.grid
    if norm_request is None:
        norm_request = NormRequest(0, 0)

    if config.dt is not None:
        m = max(8, int(math.ceil(T / config.dt - 1e-12)))
    else:
        m = 128
    tau = T / m
    times = [j * tau for j in range(m + 1)]
    xi = grid.wavenumbers
    E = np.exp(-nu * tau * xi**4)

    def propagate(vals):
        return np.fft.irfft(E * np.fft.rfft(vals), n=grid.n)

    def apply_map(W_list):
        G = [c.w_variable(W_list[j], times[j], config.dealias)
             + np.fft.irfft(c.m3 * np.fft.rfft(W_list[j]), n=grid.n)
             for j in range(m + 1)]
        out = [np.zeros(grid.n)]
        acc = np.zeros(grid.n)
        for j in range(m):
            acc = propagate(acc + (0.5 * tau) * G[j]) + (0.5 * tau) * G[j + 1]
            out.append(-acc)
        return out

    W = [np.zeros(grid.n) for _ in range(m + 1)]
    prev = None
    last_ratio = float("nan")
    for k in range(config.duhamel_max_iter):
        newW = apply_map(W)
        diff_traj = [(times[j], Field(grid, newW[j] - W[j]))
                     for j in range(m + 1)]
        diff = z_norm(diff_traj, nu, norm_request)
        ratio = None if prev in (None, 0.0) else diff / prev
        if ratio is not None:
            last_ratio = ratio
        if on_iteration is not None:
            on_iteration(k, diff, ratio)
        if ratio is not None and ratio >= 1.0:
            raise NonContractionError(
                f"mild iteration expanded at iteration {k}", ratio=ratio)
        W = newW
        if diff < config.duhamel_tol:
            return [(times[j], Field(grid, W[j])) for j in range(m + 1)]
        prev = diff
    raise NonContractionError(
        f"mild iteration did not reach tol {config.duhamel_tol:g} in "
        f"{config.duhamel_max_iter} iterations",
        ratio=last_ratio)


def _band_cutoff(u0: Field, dealias: bool) -> int:
    """Highest retained rfft mode: the data's resolved band plus margin."""
    amp = np.abs(np.fft.rfft(u0.values))
    amax = float(np.max(amp))
    keep = np.nonzero(amp > 1e-14 * amax)[0]
    m = int(keep[-1]) + 4 if len(keep) else 16
    cap = u0.grid.n // 4 if dealias else u0.grid.n // 2 - 1
    return max(16, min(m, cap))


def solve_hydrodynamic(u0: Field, mu: int, T: float, config: SolverConfig):
    """Eulerian evolution u_t = -(b u)_x, b = (u^2)_xx / 2 + mu u^2.

    For strictly positive periodic data.  The linearization about the mean
    of u^2 rides in the integrating factor; the remainder is explicit and
    spectrally projected onto the band resolved by the data (for analytic
    nondegenerate data the discarded modes carry only round-off), which
    sets the stable step size.  Returns [(t, Field)] snapshots.
    """
    if np.min(u0.values) <= 0.0:
        raise ParameterError("solve_hydrodynamic requires strictly positive data")
    if T <= 0:
        raise ParameterError("T must be positive")
    grid = u0.grid
    n = grid.n
    xi = grid.wavenumbers
    cut = _band_cutoff(u0, config.dealias)
    mask = np.arange(len(xi)) <= cut
    mask[-1] = False

    a0 = float(np.mean(u0.values**2))
    lin = a0 * ((1j * xi) ** 3 + 3.0 * mu * (1j * xi))  # linearized d(b u)/dx
    bmul = (mu - 0.5 * xi**2)  # b-hat = bmul * (u^2)-hat

    def nl(t, u):
        uh = np.fft.rfft(u)
        p = mask * np.fft.rfft(u * u)
        b = np.fft.irfft(bmul * p, n=n)
        q = np.fft.rfft(b * u)
        return np.fft.irfft(mask * (lin * uh - (1j * xi) * q), n=n)

    if config.dt is not None:
        dt0 = config.dt
    else:
        dev = float(np.max(np.abs(u0.values**2 - a0)))
        xim = 2.0 * np.pi * cut / grid.length
        lam = dev * (xim**3 + 3.0 * abs(mu) * xim)
        dt0 = min(config.cfl_constant / lam if lam > 0 else T / 8.0, T / 8.0)
    n_steps = max(1, int(math.ceil(T / dt0 - 1e-12)))
    dt = T / n_steps
    half = np.exp((0.5 * dt) * (-lin))
    stride = config.snapshot_stride or max(1, n_steps // 64)

    u = np.fft.irfft(mask * np.fft.rfft(u0.values), n=n)
    traj = [(0.0, Field(grid, u.copy(), label=u0.label))]
    for j in range(n_steps):
        u = if_rk4_step(u, j * dt, dt, half, nl)
        t = (j + 1) * dt
        if (j + 1) % stride == 0 or j == n_steps - 1:
            if not np.all(np.isfinite(u)):
                raise DegeneracyError("hydrodynamic solve lost finiteness", t=t)
            mn = float(np.min(u))
            if mn <= 0.0:
                raise DegeneracyError(
                    f"positivity lost: min u = {mn:.3e}",
                    node=int(np.argmin(u)), t=t)
            traj.append((t, Field(grid, u.copy(), label=u0.label)))
    return traj


def write_snapshots(trajectory, out_dir, config: SolverConfig) -> Path:
    """One CSV per snapshot (y, W, Z, g) plus a JSON manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    times = []
    for i, s in enumerate(trajectory):
        y = s.W.grid.nodes if isinstance(s, EvolutionState) else s.Z.grid.nodes
        if isinstance(s, EvolutionState):
            W = s.W.values
            Z = s.z().values
        else:
            Z = s.Z.values
            W = s.frame.rho56.values * Z
        g = (1.0 + Z) ** 5 - 1.0
        name = f"snapshot_{i:05d}.csv"
        np.savetxt(out / name, np.column_stack([y, W, Z, g]),
                   delimiter=",", header="y,W,Z,g", comments="", fmt="%.17g")
        names.append(name)
        times.append(float(s.t))
    first = trajectory[0]
    grid = first.W.grid if isinstance(first, EvolutionState) else first.Z.grid
    manifest = {
        "t": times,
        "nu": first.nu,
        "mu": first.mu,
        "grid": {"n": grid.n, "length": grid.length, "origin": grid.origin},
        "config_hash": config.content_hash(),
        "snapshots": names,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path
