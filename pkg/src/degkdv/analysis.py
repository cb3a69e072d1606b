"""Weighted-norm machinery, bicharacteristic rays, and conservation diagnostics.

Norms are the weighted Sobolev sums

    ||f||_{H^{N,K}} = sum_{k=0}^{K} sum_{n=0}^{2(K-k)+N} ||<y>^k d^n f||_{L2},

with the Japanese bracket <y> = sqrt(1 + y^2), spectral derivatives, and
trapezoid quadrature on the periodic grid.  The parabolic counterpart is

    Z(f) = sum_{n=0}^{3} sup_t (nu t)^{n/4} ||f(t)||_{H^{N+n,K}}.

Rays follow the Hamiltonian flow of the principal symbol,

    x' = -3 rho(x) xi^2,   xi' = rho_x(x) xi^3,

which conserves rho(x) xi^3.  The virial module reports d/dt integrals of
x u^2 and x u.  Note the normalization: rate_xu2 is the full derivative
d/dt int x u^2 dx (twice the 1/2 d/dt convention some displays use), so it
can be compared directly against centered differences of the moment.

For trajectories computed in map coordinates, moment_series evaluates the
same moments by exact change of variables and matched_rate_probe compares
their time derivative against the predicted rates through a single Gaussian
window, so that smooth content cancels identically and only genuine rate
defects survive.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson

from .errors import ParameterError, UnreliableDiagnosticWarning
from .grid import Field, derivative, integrate
from .profiles import ProfileBase, conserved_quantities

__all__ = [
    "NormRequest",
    "spectral_budget",
    "weighted_norm",
    "z_norm",
    "interpolation_gap",
    "RayState",
    "RayTrajectory",
    "trace_ray",
    "blowup_time_estimate",
    "seam_leak",
    "virial_rates",
    "MomentSeries",
    "moment_series",
    "matched_rate_probe",
    "DiagnosticsRecord",
    "drift_report",
]


def spectral_budget(K0: int) -> int:
    """Top total order 2K + N affordable with decay weight K0."""
    return 7 + 2 * int(K0)


@dataclass(frozen=True)
class NormRequest:
    """Indices (N, K) of a weighted Sobolev norm.

    When a budget is supplied the request must satisfy 2K + N <= budget;
    requests beyond the available spectral budget are rejected outright
    rather than silently producing round-off-dominated numbers.
    """

    N: int
    K: int = 0
    budget: int | None = None

    def __post_init__(self):
        if not isinstance(self.N, (int, np.integer)) or self.N < 0:
            raise ParameterError(f"N must be a nonnegative integer, got {self.N}")
        if not isinstance(self.K, (int, np.integer)) or self.K < 0:
            raise ParameterError(f"K must be a nonnegative integer, got {self.K}")
        if self.budget is not None and 2 * self.K + self.N > self.budget:
            raise ParameterError(
                f"2K + N = {2 * self.K + self.N} exceeds the spectral budget {self.budget}"
            )

    def shifted(self, dn: int) -> "NormRequest":
        return NormRequest(self.N + dn, self.K, self.budget)


def _l2(grid_h: float, values: np.ndarray) -> float:
    return math.sqrt(grid_h * float(np.sum(values * values)))


def weighted_norm(f: Field, req: NormRequest) -> float:
    """Weighted Sobolev norm of f for the requested (N, K)."""
    y = f.grid.nodes
    bracket = np.sqrt(1.0 + y * y)
    top = 2 * req.K + req.N
    derivs = [derivative(f, n).values for n in range(top + 1)]
    total = 0.0
    weight = np.ones_like(y)
    for k in range(req.K + 1):
        for n in range(2 * (req.K - k) + req.N + 1):
            total += _l2(f.grid.h, weight * derivs[n])
        weight = weight * bracket
    return total


def z_norm(traj, nu: float, req: NormRequest) -> float:
    """Parabolic trajectory norm; traj is a sequence of (t, Field) pairs."""
    pairs = [(float(t), f) for t, f in traj]
    if not pairs:
        raise ParameterError("trajectory is empty")
    if not any(t == 0.0 for t, _ in pairs):
        raise ParameterError("trajectory timestamps must include t = 0")
    if nu < 0:
        raise ParameterError("nu must be nonnegative")
    total = 0.0
    for n in range(4):
        sub = req.shifted(n)
        best = 0.0
        for t, f in pairs:
            factor = (nu * t) ** (n / 4.0) if n > 0 else 1.0
            if factor == 0.0 and n > 0:
                continue
            best = max(best, factor * weighted_norm(f, sub))
        total += best
    return total


def interpolation_gap(f: Field, K: int = 0) -> float:
    """||f||^2_{H^{4,K}} / (||f||_{H^{1,K}} ||f||_{H^{7,K}}); 0 for f = 0."""
    lo = weighted_norm(f, NormRequest(1, K))
    hi = weighted_norm(f, NormRequest(7, K))
    if lo == 0.0 or hi == 0.0:
        return 0.0
    mid = weighted_norm(f, NormRequest(4, K))
    return mid * mid / (lo * hi)


@dataclass(frozen=True)
class RayState:
    x: float
    xi: float
    t: float


@dataclass(frozen=True)
class RayTrajectory:
    times: np.ndarray
    xs: np.ndarray
    xis: np.ndarray
    blowup: bool
    blowup_time: float | None

    @property
    def final(self) -> RayState:
        return RayState(float(self.xs[-1]), float(self.xis[-1]), float(self.times[-1]))

    def symbol(self, spec: ProfileBase) -> np.ndarray:
        """rho(x(t)) xi(t)^3 along the ray; constant for the exact flow."""
        rho = np.asarray(spec.rho_deriv(self.xs, 0), dtype=float)
        return rho * self.xis**3


def trace_ray(
    spec: ProfileBase,
    x0: float,
    xi0: float,
    T: float,
    dt: float | None = None,
    cap: float = 0.005,
    xi_max: float = 1e12,
) -> RayTrajectory:
    """Integrate the bicharacteristic ODE with RK4.

    Steps adapt to the local logarithmic rates of xi and rho so that no
    step changes either by more than the cap fraction; an explicit dt acts
    as an additional upper bound.  Integration stops early with the blowup
    flag once |xi| exceeds xi_max.
    """
    lo, hi = spec.support()
    if not (lo < x0 < hi) or float(spec.rho_deriv(x0, 0)) <= 0.0:
        raise ParameterError(f"x0 = {x0} is not in the interior of the support")
    if T <= 0:
        raise ParameterError("T must be positive")
    if dt is not None and dt <= 0:
        raise ParameterError("dt must be positive when given")

    def rhs(x: float, xi: float):
        rho = float(spec.rho_deriv(x, 0))
        rho_x = float(spec.rho_deriv(x, 1))
        return -3.0 * rho * xi * xi, rho_x * xi**3, rho, rho_x

    t, x, xi = 0.0, float(x0), float(xi0)
    times, xs, xis = [t], [x], [xi]
    blowup = False
    blowup_time = None
    tiny = 1e-300
    while t < T:
        fx, fxi, rho, rho_x = rhs(x, xi)
        rate = abs(fxi) / max(abs(xi), tiny) + abs(fx) * abs(rho_x) / max(rho, tiny)
        h = T - t
        if rate > 0:
            h = min(h, cap / rate)
        if dt is not None:
            h = min(h, dt)
        k1x, k1xi = fx, fxi
        a, b, *_ = rhs(x + 0.5 * h * k1x, xi + 0.5 * h * k1xi)
        k2x, k2xi = a, b
        a, b, *_ = rhs(x + 0.5 * h * k2x, xi + 0.5 * h * k2xi)
        k3x, k3xi = a, b
        a, b, *_ = rhs(x + h * k3x, xi + h * k3xi)
        k4x, k4xi = a, b
        x += (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
        xi += (h / 6.0) * (k1xi + 2 * k2xi + 2 * k3xi + k4xi)
        t += h
        times.append(t)
        xs.append(x)
        xis.append(xi)
        if not (math.isfinite(x) and math.isfinite(xi)) or abs(xi) >= xi_max:
            blowup = True
            blowup_time = t
            break
    return RayTrajectory(
        np.asarray(times), np.asarray(xs), np.asarray(xis), blowup, blowup_time
    )


def blowup_time_estimate(k: float, x0: float, xi0: float) -> float:
    """Closed-form blowup time 1 / ((3-k) x0^(k-1) xi0^2) for rho = x^k, k < 3."""
    if k >= 3:
        raise ParameterError("finite-time blowup requires k < 3")
    return 1.0 / ((3.0 - k) * x0 ** (k - 1.0) * xi0**2)


def seam_leak(u: Field, margin: float = 0.05) -> float:
    """Fraction of the L2 mass in the outer margin of the periodic box."""
    n = u.grid.n
    edge = max(1, int(round(margin * n)))
    mass = float(np.sum(u.values**2))
    if mass == 0.0:
        return 0.0
    outer = float(np.sum(u.values[:edge] ** 2) + np.sum(u.values[-edge:] ** 2))
    return math.sqrt(outer / mass)


def virial_rates(u: Field, mu: int, leak_tol: float = 1e-8) -> tuple[float, float]:
    """Predicted (d/dt int x u^2, d/dt int x u) for the hydrodynamic flow.

    rate_xu2 = -5 int (u u_x)^2 + (3 mu / 2) int u^4
    rate_xu  = -  int u u_x^2   +      mu    int u^3

    Both follow by pairing the equation with x u and x and integrating by
    parts; each right-hand side is checked to be an exact divergence.  The
    moments are meaningful only while u stays away from the periodic seam,
    so a leak above leak_tol triggers an unreliable-diagnostic warning.
    """
    leak = seam_leak(u)
    if leak > leak_tol:
        warnings.warn(
            f"seam leak {leak:.3e} exceeds {leak_tol:.1e}; virial rates unreliable",
            UnreliableDiagnosticWarning,
            stacklevel=2,
        )
    ux = derivative(u, 1)
    uux = u.values * ux.values
    h = u.grid.h
    rate_xu2 = -5.0 * h * float(np.sum(uux * uux)) + 1.5 * mu * h * float(
        np.sum(u.values**4)
    )
    rate_xu = -h * float(np.sum(u.values * ux.values**2)) + mu * h * float(
        np.sum(u.values**3)
    )
    return rate_xu2, rate_xu


def _moments(u: Field) -> tuple[float, float]:
    x = u.grid.nodes
    h = u.grid.h
    return h * float(np.sum(x * u.values**2)), h * float(np.sum(x * u.values))


@dataclass(frozen=True)
class MomentSeries:
    """Moment and rate series of a Lagrangian trajectory.

    corr_xu2 and corr_xu are the rate contributions of the fourth-order
    regularizer; rate + corr is the prediction matching the regularized
    dynamics, rate alone the ideal flow.
    """

    times: np.ndarray
    xu2: np.ndarray
    xu: np.ndarray
    rate_xu2: np.ndarray
    rate_xu: np.ndarray
    corr_xu2: np.ndarray
    corr_xu: np.ndarray


def moment_series(states) -> MomentSeries:
    """Moments int x u dx, int x u^2 dx and their predicted rates, in map
    coordinates.

    states is a sequence of Lagrangian snapshots sharing one frame, each
    carrying t, Z, frame, nu, and mu.  The moments of the reconstructed
    solution are evaluated by pulling the integrals back to the flattened
    coordinate, where the solution is spectrally resolved and the
    quadrature is alias-free: with q = (1 + Z) u0 and da = rho^{1/3} dy,

        int x u   dx = int X u0 da,
        int x u^2 dx = int X (1 + Z) u0^2 da,

    with the trajectory map X assembled from the center ODE and the
    stretch integral exactly as in the Eulerian reconstruction.  The rate
    predictions are the virial integrands under the same pullback.  The
    corr arrays integrate the regularizer's footprint on the map, so that
    rate + corr predicts the regularized dynamics.
    """
    states = list(states)
    if not states:
        raise ParameterError("state sequence is empty")
    frame = states[0].frame
    if frame.cmap is None:
        raise ParameterError("frame carries no coordinate map")
    nu = float(states[0].nu)
    mu = int(states[0].mu)
    for s in states:
        if s.frame is not frame:
            raise ParameterError("states must share a single frame")
        if float(s.nu) != nu or int(s.mu) != mu:
            raise ParameterError("states must share nu and mu")
    times = np.asarray([float(s.t) for s in states])
    if len(times) > 1 and np.any(np.diff(times) <= 0.0):
        raise ParameterError("state times must be strictly increasing")

    grid = frame.y_grid
    y = grid.nodes
    h = grid.h
    n = grid.n
    rho = frame.rho.values
    r13 = rho ** (1.0 / 3.0)
    rm13 = rho ** (-1.0 / 3.0)
    r56 = frame.rho56.values
    rm56 = frame.rho_m56.values
    k = grid.wavenumbers
    k4 = k**4
    x_at = np.asarray(frame.cmap.x_of_y(y), dtype=float)
    u0y = np.asarray(frame.cmap.spec.u0(x_at), dtype=float)
    j0 = int(np.argmin(np.abs(x_at)))
    a_rel = x_at - x_at[j0]
    mass1 = h * float(np.sum(u0y * r13))

    def d_y(v):
        return np.fft.irfft(1j * k * np.fft.rfft(v), n=n)

    N = len(states)
    b0 = np.empty(N)
    xu_rel = np.empty(N)
    xu2_rel = np.empty(N)
    mass2 = np.empty(N)
    rate2 = np.empty(N)
    rate1 = np.empty(N)
    corr1 = np.zeros(N)
    corr2a = np.zeros(N)
    corr2b = np.zeros(N)
    for i, s in enumerate(states):
        Z = s.Z.values
        one = 1.0 + Z
        q = one * u0y
        qy = d_y(q)
        bp = 0.5 * one * rm13 * d_y(one * rm13 * d_y(q * q)) + mu * q * q
        b0[i] = bp[j0]
        cumdev = cumulative_simpson((1.0 / one - 1.0) * r13, x=y, initial=0.0)
        cumdev -= cumdev[j0]
        X_rel = a_rel + cumdev
        xu_rel[i] = h * float(np.sum(X_rel * u0y * r13))
        xu2_rel[i] = h * float(np.sum(X_rel * one * u0y**2 * r13))
        mass2[i] = h * float(np.sum(one * u0y**2 * r13))
        rate1[i] = -h * float(np.sum(q * qy**2 * one * rm13)) + mu * h * float(
            np.sum(q**3 * r13 / one)
        )
        rate2[i] = -5.0 * h * float(np.sum(q**2 * qy**2 * one * rm13)) + (
            1.5 * mu * h * float(np.sum(q**4 * r13 / one))
        )
        if nu != 0.0:
            S = -nu * rm56 * np.fft.irfft(k4 * np.fft.rfft(r56 * Z), n=n)
            cum = cumulative_simpson(S / one**2 * r13, x=y, initial=0.0)
            cum -= cum[j0]
            corr1[i] = -h * float(np.sum(u0y * r13 * cum))
            corr2a[i] = -h * float(np.sum(one * u0y**2 * cum * r13)) + h * float(
                np.sum(X_rel * S * u0y**2 * r13)
            )
            corr2b[i] = h * float(np.sum(S * u0y**2 * r13))
    if N > 1:
        xi = cumulative_simpson(b0, x=times, initial=0.0)
    else:
        xi = np.zeros(1)
    return MomentSeries(
        times=times,
        xu2=xu2_rel + mass2 * xi,
        xu=xu_rel + mass1 * xi,
        rate_xu2=rate2,
        rate_xu=rate1,
        corr_xu2=corr2a + corr2b * xi,
        corr_xu=corr1,
    )


def matched_rate_probe(
    times: np.ndarray,
    moments: np.ndarray,
    rates: np.ndarray,
    sigma: float,
) -> tuple[np.ndarray, np.ndarray, slice]:
    """Matched-window comparison of d/dt moments against predicted rates.

    Both series pass through one Gaussian window of width sigma: the
    moment is convolved with the window's exact derivative and the rate
    with the window itself.  Differentiation and smoothing then commute,
    so the two outputs agree identically for any series satisfying
    moment' = rate, and their difference measures the rate defect at
    frequencies the window keeps.  Returns (deriv, smoothed, interior)
    with interior the slice unaffected by the window ends; entries
    outside it mix in zero padding and are not meaningful.
    """
    times = np.asarray(times, dtype=float)
    m = np.asarray(moments, dtype=float)
    p = np.asarray(rates, dtype=float)
    if times.shape != m.shape or times.shape != p.shape:
        raise ParameterError("times, moments, and rates must share a shape")
    if len(times) < 3:
        raise ParameterError("need at least three samples")
    steps = np.diff(times)
    delta = float(steps[0])
    if delta <= 0 or np.max(np.abs(steps - delta)) > 1e-9 * delta:
        raise ParameterError("matched probe requires uniform time samples")
    if sigma < 2.0 * delta:
        raise ParameterError(f"sigma = {sigma} is under two samples wide")
    half = int(math.ceil(6.0 * sigma / delta))
    if len(times) <= 2 * half:
        raise ParameterError(
            f"series of length {len(times)} too short for the "
            f"{2 * half + 1}-point window"
        )
    tj = np.arange(-half, half + 1) * delta
    g = np.exp(-0.5 * (tj / sigma) ** 2)
    w = g / g.sum()
    dw = -(tj / sigma**2) * w
    deriv = np.convolve(m, dw, mode="same")
    smoothed = np.convolve(p, w, mode="same")
    return deriv, smoothed, slice(half, len(times) - half)


@dataclass(frozen=True)
class DiagnosticsRecord:
    """Per-snapshot conservation and virial diagnostics."""

    t: np.ndarray
    M: np.ndarray
    J: np.ndarray
    Jplus: np.ndarray
    H: np.ndarray
    dM: np.ndarray
    dJ: np.ndarray
    dH: np.ndarray
    xu2_num: np.ndarray
    xu2_pred: np.ndarray
    xu_num: np.ndarray
    xu_pred: np.ndarray
    leak: np.ndarray

    COLUMNS = (
        "t", "M", "J", "Jplus", "H", "dM", "dJ", "dH",
        "xu2_num", "xu2_pred", "xu_num", "xu_pred", "leak",
    )

    def to_csv(self, path) -> None:
        table = np.column_stack([getattr(self, c) for c in self.COLUMNS])
        np.savetxt(path, table, delimiter=",", header=",".join(self.COLUMNS),
                   comments="", fmt="%.17g")


def _numeric_derivative(ts: np.ndarray, vals: np.ndarray) -> np.ndarray:
    out = np.empty_like(vals)
    if len(ts) == 1:
        out[0] = 0.0
        return out
    out[1:-1] = (vals[2:] - vals[:-2]) / (ts[2:] - ts[:-2])
    out[0] = (vals[1] - vals[0]) / (ts[1] - ts[0])
    out[-1] = (vals[-1] - vals[-2]) / (ts[-1] - ts[-2])
    return out


def drift_report(traj, mu: int, leak_tol: float = 1e-8) -> DiagnosticsRecord:
    """Conservation drifts and virial comparison along a u-trajectory.

    traj is a sequence of (t, Field) snapshots (grids may differ between
    snapshots, as happens for reconstructed solutions).  Numeric moment
    derivatives are centered differences, one-sided at the ends.
    """
    pairs = [(float(t), f) for t, f in traj]
    if not pairs:
        raise ParameterError("trajectory is empty")
    ts = np.asarray([t for t, _ in pairs])
    cons = [conserved_quantities(f, mu) for _, f in pairs]
    M = np.asarray([c.M for c in cons])
    J = np.asarray([c.J for c in cons])
    Jp = np.asarray([c.Jplus for c in cons])
    H = np.asarray([c.H for c in cons])
    xu2 = np.empty(len(pairs))
    xu = np.empty(len(pairs))
    pred2 = np.empty(len(pairs))
    pred1 = np.empty(len(pairs))
    leak = np.empty(len(pairs))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnreliableDiagnosticWarning)
        for i, (_, f) in enumerate(pairs):
            xu2[i], xu[i] = _moments(f)
            pred2[i], pred1[i] = virial_rates(f, mu, leak_tol)
            leak[i] = seam_leak(f)
    if np.any(leak > leak_tol):
        warnings.warn(
            f"seam leak up to {leak.max():.3e} exceeds {leak_tol:.1e}; "
            "moment diagnostics unreliable",
            UnreliableDiagnosticWarning,
            stacklevel=2,
        )

    def rel(v):
        scale = max(abs(v[0]), 1e-300)
        return (v - v[0]) / scale

    return DiagnosticsRecord(
        t=ts, M=M, J=J, Jplus=Jp, H=H,
        dM=rel(M), dJ=rel(J), dH=rel(H),
        xu2_num=_numeric_derivative(ts, xu2),
        xu2_pred=pred2,
        xu_num=_numeric_derivative(ts, xu),
        xu_pred=pred1,
        leak=leak,
    )
