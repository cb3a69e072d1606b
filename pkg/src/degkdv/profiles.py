"""Initial-data families and their exact structure.

The equation u_t + (u (u u_x)_x + mu u^3)_x = 0 carries a two-parameter
family of traveling waves

    Phi_{B,c}(x) = sqrt(c + sqrt(4B + c^2) cos(sqrt2 x)),

defined where the radicand is positive. For B = 0, c > 0 the wave is a
compacton supported on (-x_{B,c}, x_{B,c}) with half-width
x_{B,c} = arccos(-c / sqrt(4B + c^2)) / sqrt2 (principal branch). For
-c^2/4 <= B < 0, c > 0 the radicand never vanishes and the profile is a
strictly positive periodic wave of period sqrt2 pi; these nondegenerate
waves are the exact-solution workhorse for the Eulerian solver.

Model data classes for the well-posedness theory are power-law endpoints
rho ~ dist^alpha on a finite interval (alpha > 3, "Case 1") and algebraic
tails rho ~ |x|^{-beta} on the line (beta >= 0, "Case 2"). Every analytic
variant carries closed-form derivatives of rho = u0^2 to high order, which
downstream coordinate frames rely on.

Conserved functionals: M = int u^2, J = int u, J+ = int max(u,0), and
H = 1/2 int |u u_x|^2 - mu/4 int u^4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial
from scipy import optimize

from .errors import (
    ParameterError,
    StructuralError,
    UnsupportedVariantError,
)
from .grid import Field, Grid, derivative, integrate

__all__ = [
    "Compacton",
    "PowerLeftRight",
    "AlgebraicTail",
    "SmoothBump",
    "Tabulated",
    "MonomialRamp",
    "ConservedSet",
    "DecayClass",
    "compacton_halfwidth",
    "profile_eval",
    "rho_eval",
    "conserved_quantities",
    "traveling_wave_residual",
    "classify_endpoints",
    "admissible_K0",
    "profile_to_dict",
    "profile_from_dict",
]

SQRT2 = math.sqrt(2.0)

SUBCRITICAL = "subcritical"
CRITICAL = "critical"
SUPERCRITICAL = "supercritical"
INFINITE = "infinite-support"


def _check_mu(mu) -> int:
    if mu not in (-1, 0, 1):
        raise ParameterError(f"mu must be one of -1, 0, +1, got {mu}")
    return int(mu)


@dataclass(frozen=True)
class ProfileBase:
    """Common surface of all initial-data variants.

    rho(x) = u0(x)^2 is nonnegative with a single interval of positivity;
    rho_deriv gives exact closed-form derivatives inside the support for the
    analytic variants and returns 0 outside the support for every order.
    """

    def support(self) -> tuple[float, float]:
        raise NotImplementedError

    def rho_deriv(self, x, n: int):
        raise NotImplementedError

    def rho(self, x):
        return self.rho_deriv(x, 0)

    def u0(self, x):
        return np.sqrt(np.maximum(self.rho(x), 0.0))

    def _endpoint_exponents(self):
        """(left, right) decay exponents of rho at the support endpoints;
        None marks an infinite endpoint, math.inf flat (smooth) vanishing."""
        raise NotImplementedError


@dataclass(frozen=True)
class Compacton(ProfileBase):
    B: float = 0.0
    c: float = 1.0
    mu: int = 1

    def __post_init__(self):
        _check_mu(self.mu)
        if 4 * self.B + self.c**2 <= 0:
            raise ParameterError("compacton requires 4B + c^2 > 0")
        if self.B == 0 and self.c <= 0:
            raise ParameterError("B = 0 compacton requires c > 0")
        if self.B < 0 and self.c <= 0:
            raise ParameterError("periodic nondegenerate wave requires c > 0")

    @property
    def D(self) -> float:
        return math.sqrt(4 * self.B + self.c**2)

    @property
    def periodic(self) -> bool:
        """B < 0 waves never vanish: strictly positive, period sqrt2 pi."""
        return self.B < 0

    def support(self):
        if self.periodic:
            return (-math.inf, math.inf)
        half = compacton_halfwidth(self.B, self.c)
        return (-half, half)

    def rho_deriv(self, x, n: int):
        x = np.asarray(x, dtype=np.float64)
        if n == 0:
            out = self.c + self.D * np.cos(SQRT2 * x)
        else:
            out = self.D * SQRT2**n * np.cos(SQRT2 * x + n * np.pi / 2)
        if not self.periodic:
            lo, hi = self.support()
            out = np.where((x > lo) & (x < hi), out, 0.0)
        return out

    def _endpoint_exponents(self):
        if self.periodic:
            return (None, None)
        # rho' = -sqrt2 D sin(sqrt2 x); at the root cos = -c/D, so the slope
        # vanishes only when c = D, i.e. B = 0, where rho ~ dist^2
        e = 2.0 if self.B == 0 else 1.0
        return (e, e)


@dataclass(frozen=True)
class PowerLeftRight(ProfileBase):
    """rho(x) = amplitude * ((x - x_minus)/w)^{alpha_minus} ((x_plus - x)/w)^{alpha_plus},
    w = (x_plus - x_minus)/2, on the open interval (x_minus, x_plus).

    An exponent of zero switches the corresponding factor off, giving
    one-sided models such as rho = (1 - x)^6 on a box.
    """

    alpha_minus: float = 6.0
    alpha_plus: float = 6.0
    x_minus: float = -1.0
    x_plus: float = 1.0
    amplitude: float = 1.0
    mu: int = 1

    def __post_init__(self):
        _check_mu(self.mu)
        if self.x_plus <= self.x_minus:
            raise ParameterError("support interval is empty")
        if self.alpha_minus < 0 or self.alpha_plus < 0:
            raise ParameterError("power-law endpoints require alpha >= 0")
        if self.amplitude <= 0:
            raise ParameterError("amplitude must be positive")

    def support(self):
        return (self.x_minus, self.x_plus)

    def rho_deriv(self, x, n: int):
        x = np.asarray(x, dtype=np.float64)
        w = 0.5 * (self.x_plus - self.x_minus)
        a = self.amplitude / w ** (self.alpha_minus + self.alpha_plus)
        inside = (x > self.x_minus) & (x < self.x_plus)
        xs = np.where(inside, x, 0.5 * (self.x_minus + self.x_plus))
        out = np.zeros_like(xs)
        # Leibniz rule over the two power factors; zero falling factorials
        # are skipped so switched-off endpoints never touch negative powers
        for k in range(n + 1):
            cl = _falling(self.alpha_minus, k)
            cr = _falling(self.alpha_plus, n - k)
            if cl == 0.0 or cr == 0.0:
                continue
            fl = cl * (xs - self.x_minus) ** (self.alpha_minus - k)
            fr = (-1.0) ** (n - k) * cr * (self.x_plus - xs) ** (self.alpha_plus - (n - k))
            out += math.comb(n, k) * fl * fr
        return np.where(inside, a * out, 0.0)

    def _endpoint_exponents(self):
        return (self.alpha_minus, self.alpha_plus)


@dataclass(frozen=True)
class AlgebraicTail(ProfileBase):
    """rho(x) = amplitude * (1 + x^2)^{-beta/2}, full line, beta >= 0."""

    beta: float = 3.0
    amplitude: float = 1.0
    mu: int = 1

    def __post_init__(self):
        _check_mu(self.mu)
        if self.beta < 0:
            raise ParameterError("beta must be >= 0")
        if self.amplitude <= 0:
            raise ParameterError("amplitude must be positive")

    def support(self):
        return (-math.inf, math.inf)

    def rho_deriv(self, x, n: int):
        x = np.asarray(x, dtype=np.float64)
        # rho^{(n)} = P_n(x) (1+x^2)^{-beta/2-n} with
        # P_{n+1} = P_n' (1+x^2) - (beta + 2n) x P_n, P_0 = 1
        P = Polynomial([1.0])
        base = Polynomial([1.0, 0.0, 1.0])
        for m in range(n):
            P = P.deriv() * base - (self.beta + 2 * m) * Polynomial([0.0, 1.0]) * P
        return self.amplitude * P(x) * (1.0 + x**2) ** (-self.beta / 2 - n)

    def _endpoint_exponents(self):
        return (None, None)


@dataclass(frozen=True)
class SmoothBump(ProfileBase):
    """rho(x) = amplitude * exp(1 - 1/(1 - s^2)), s = (x - center)/width, |s| < 1."""

    center: float = 0.0
    width: float = 1.0
    amplitude: float = 1.0
    mu: int = 1

    def __post_init__(self):
        _check_mu(self.mu)
        if self.width <= 0 or self.amplitude <= 0:
            raise ParameterError("width and amplitude must be positive")

    def support(self):
        return (self.center - self.width, self.center + self.width)

    def rho_deriv(self, x, n: int):
        x = np.asarray(x, dtype=np.float64)
        s = (x - self.center) / self.width
        inside = np.abs(s) < 1.0
        ss = np.where(inside, s, 0.0)
        # rho^{(n)} = A w^{-n} N_n(s) (1-s^2)^{-2n} exp(1 - 1/(1-s^2)),
        # N_{n+1} = N_n'(1-s^2)^2 + (4 n s (1-s^2) - 2 s) N_n, N_0 = 1
        N = Polynomial([1.0])
        one_m_s2 = Polynomial([1.0, 0.0, -1.0])
        sp = Polynomial([0.0, 1.0])
        for m in range(n):
            N = N.deriv() * one_m_s2**2 + (4 * m * sp * one_m_s2 - 2 * sp) * N
        val = (
            self.amplitude
            * self.width ** (-n)
            * N(ss)
            * (1.0 - ss**2) ** (-2 * n)
            * np.exp(1.0 - 1.0 / (1.0 - ss**2))
        )
        return np.where(inside, val, 0.0)

    def _endpoint_exponents(self):
        return (math.inf, math.inf)


@dataclass(frozen=True)
class Tabulated(ProfileBase):
    """Sampled rho on a grid; derivatives fall back to spectral differentiation."""

    field: Field
    mu: int = 1

    def __post_init__(self):
        _check_mu(self.mu)
        v = self.field.values
        if np.any(v < 0):
            raise StructuralError("tabulated rho must be nonnegative")
        pos = v > 0
        if not np.any(pos):
            raise StructuralError("tabulated rho is identically zero")
        idx = np.flatnonzero(pos)
        if not np.all(np.diff(idx) == 1):
            raise StructuralError("positivity set of tabulated rho is not a single interval")

    def support(self):
        nodes = self.field.grid.nodes
        idx = np.flatnonzero(self.field.values > 0)
        return (float(nodes[idx[0]]), float(nodes[idx[-1]]))

    def rho_deriv(self, x, n: int):
        x = np.asarray(x, dtype=np.float64)
        f = self.field if n == 0 else derivative(self.field, n)
        return np.interp(x, self.field.grid.nodes, f.values)

    def _endpoint_exponents(self):
        # fitted log-log slope of rho against distance to the support edge.
        # The true zero of rho lies somewhere in the cell between the last
        # positive node and its zero neighbour; locating it at the node
        # biases the slope low, so the edge position is refined within that
        # cell by minimizing the power-law fit residual.
        lo, hi = self.support()
        h = self.field.grid.h
        nodes = self.field.grid.nodes
        v = self.field.values
        width = hi - lo
        out = []
        for endpoint, sign in ((lo, +1), (hi, -1)):
            sel = (sign * (nodes - endpoint) >= 0) & (v > 0)
            xs, r = nodes[sel], v[sel]
            logr = np.log(r)

            def fit(shift):
                # log rho = C + p log d + b d ; the linear-in-d column
                # absorbs the leading smooth-cofactor correction
                d = sign * (xs - (endpoint - sign * shift))
                near = d <= 0.1 * width
                if near.sum() < 4:
                    near = np.ones_like(d, dtype=bool)
                A = np.column_stack([np.ones(near.sum()), np.log(d[near]), d[near]])
                coef, *_ = np.linalg.lstsq(A, logr[near], rcond=None)
                resid = logr[near] - A @ coef
                return float(coef[1]), float(resid @ resid)

            best = optimize.minimize_scalar(lambda s: fit(s)[1], bounds=(1e-6 * h, h), method="bounded")
            out.append(fit(best.x)[0])
        return tuple(out)


@dataclass(frozen=True)
class MonomialRamp(ProfileBase):
    """rho(x) = x^k for x > 0, else 0. Ray-tracing and classification studies."""

    k: float = 1.0
    mu: int = 1

    def __post_init__(self):
        _check_mu(self.mu)
        if self.k < 0:
            raise ParameterError("k must be >= 0")

    def support(self):
        return (0.0, math.inf)

    def rho_deriv(self, x, n: int):
        x = np.asarray(x, dtype=np.float64)
        inside = x > 0
        xs = np.where(inside, x, 1.0)
        coeff = _falling(self.k, n)
        val = coeff * xs ** (self.k - n) if coeff != 0 else np.zeros_like(xs)
        if self.k == 0 and n == 0:
            val = np.ones_like(xs)
        return np.where(inside, val, 0.0)

    def _endpoint_exponents(self):
        return (self.k, None)


def _falling(a: float, k: int) -> float:
    out = 1.0
    for i in range(k):
        out *= a - i
    return out


@dataclass(frozen=True)
class ConservedSet:
    M: float
    J: float
    Jplus: float
    H: float


@dataclass(frozen=True)
class DecayClass:
    left: str
    right: str

    @staticmethod
    def _subcritical(tag: str) -> bool:
        # an infinite endpoint counts as subcritical by definition
        return tag in (SUBCRITICAL, INFINITE)

    @property
    def subcritical_left(self) -> bool:
        return self._subcritical(self.left)

    @property
    def subcritical_right(self) -> bool:
        return self._subcritical(self.right)


def compacton_halfwidth(B: float, c: float) -> float:
    """Half-width x_{B,c}: smallest positive root of c + sqrt(4B+c^2) cos(sqrt2 x)."""
    if 4 * B + c**2 <= 0:
        raise ParameterError("requires 4B + c^2 > 0")
    if B < 0:
        raise ParameterError("B < 0 profile has no zero (periodic nondegenerate wave)")
    return math.acos(-c / math.sqrt(4 * B + c**2)) / SQRT2


def profile_eval(spec: ProfileBase, x):
    """u0(x) = sqrt(rho(x)); exactly 0 outside the support."""
    return spec.u0(x)


def rho_eval(spec: ProfileBase, x, deriv_order: int = 0):
    """d^n rho / dx^n by exact closed forms (spectral fallback for Tabulated)."""
    if deriv_order < 0:
        raise ParameterError("derivative order must be >= 0")
    return spec.rho_deriv(x, deriv_order)


def conserved_quantities(u: Field, mu: int) -> ConservedSet:
    """Quadrature of M, J, J+, and H = 1/2 int |u u_x|^2 - mu/4 int u^4."""
    _check_mu(mu)
    ux = derivative(u, 1)
    M = integrate(u * u)
    J = integrate(u)
    Jplus = integrate(u.with_values(np.maximum(u.values, 0.0)))
    H = 0.5 * integrate((u * ux) * (u * ux)) - (mu / 4.0) * integrate((u * u) * (u * u))
    return ConservedSet(M=M, J=J, Jplus=Jplus, H=H)


def traveling_wave_residual(B: float, c: float, mu: int, n: int = 2048) -> Field:
    """-c phi' + (phi (phi phi')' + mu phi^3)' for phi = Phi_{B,c}, evaluated
    pointwise with closed forms on a node set interior to the support (one
    period for the positive B < 0 waves).

    With rho = phi^2 the residual equals
        phi' (rho''/2 + mu rho - c) + phi (rho'''/2 + mu rho'),
    which collapses identically when mu = 1.
    """
    _check_mu(mu)
    spec = Compacton(B=B, c=c, mu=mu)
    if spec.periodic:
        length = SQRT2 * np.pi
        grid = Grid(n, length, origin=-length / 2)
    else:
        half = compacton_halfwidth(B, c)
        grid = Grid(n, 2 * half, origin=-half + half / n)
    x = grid.nodes
    rho = spec.rho_deriv(x, 0)
    r1 = spec.rho_deriv(x, 1)
    r2 = spec.rho_deriv(x, 2)
    r3 = spec.rho_deriv(x, 3)
    phi = np.sqrt(rho)
    dphi = r1 / (2.0 * phi)
    res = dphi * (0.5 * r2 + mu * rho - c) + phi * (0.5 * r3 + mu * r1)
    return Field(grid, res, label="tw-residual")


def _classify_exponent(e, band: float) -> str:
    if e is None:
        return INFINITE
    if e > 3.0 + band:
        return SUBCRITICAL
    if e < 3.0 - band:
        return SUPERCRITICAL
    return CRITICAL


def classify_endpoints(spec: ProfileBase) -> DecayClass:
    """Endpoint decay class of rho.

    Supercritical: int rho^{-1/3} converges at the endpoint (decay exponent
    below 3). Subcritical: rho = o(dist^3) (exponent above 3; smooth flat
    vanishing included). Critical: the boundary case. Infinite endpoints are
    subcritical by definition and tagged 'infinite-support'. Analytic
    variants compare their exact exponent against 3; Tabulated data uses a
    fitted log-log slope with a 3 +- 0.05 decision band.
    """
    band = 0.05 if isinstance(spec, Tabulated) else 0.0
    el, er = spec._endpoint_exponents()
    return DecayClass(left=_classify_exponent(el, band), right=_classify_exponent(er, band))


def admissible_K0(spec: ProfileBase) -> list[int]:
    """Integers K0 strictly inside the admissibility window.

    Case 1 (power-law endpoints, alpha > 3):
        5/2 * alpha/(alpha-3) < K0 < 5/2 * (2 alpha - 3)/(alpha - 3),
    intersected over the two endpoints. Case 2 (algebraic tails, beta >= 0):
        5/2 * beta/(beta+3) < K0 < (10 beta + 3)/(2 beta + 6).

    The strict inequalities can return an empty list (notably beta = 0) even
    when the slow-decay lower bound itself holds with K0 = 0; frame
    construction performs that direct check independently.
    """
    if isinstance(spec, PowerLeftRight):
        if spec.alpha_minus <= 3 or spec.alpha_plus <= 3:
            raise ParameterError("Case 1 window requires alpha > 3 at both endpoints")
        lo = hi = None
        for a in (spec.alpha_minus, spec.alpha_plus):
            l = 2.5 * a / (a - 3.0)
            h = 2.5 * (2 * a - 3.0) / (a - 3.0)
            lo = l if lo is None else max(lo, l)
            hi = h if hi is None else min(hi, h)
    elif isinstance(spec, AlgebraicTail):
        b = spec.beta
        lo = 2.5 * b / (b + 3.0)
        hi = (10.0 * b + 3.0) / (2.0 * b + 6.0)
    else:
        raise UnsupportedVariantError(
            f"admissibility window defined only for Case 1/Case 2 data, not {type(spec).__name__}"
        )
    kmin = math.floor(lo) + 1
    kmax = math.ceil(hi) - 1
    return [k for k in range(kmin, kmax + 1) if lo < k < hi]


_VARIANT_TAGS = {
    "compacton": Compacton,
    "power_left_right": PowerLeftRight,
    "algebraic_tail": AlgebraicTail,
    "smooth_bump": SmoothBump,
    "monomial_ramp": MonomialRamp,
}


def profile_to_dict(spec: ProfileBase) -> dict:
    for tag, cls in _VARIANT_TAGS.items():
        if type(spec) is cls:
            out = {"variant": tag}
            for name in cls.__dataclass_fields__:
                out[name] = getattr(spec, name)
            return out
    if isinstance(spec, Tabulated):
        g = spec.field.grid
        return {
            "variant": "tabulated",
            "n": g.n,
            "length": g.length,
            "origin": g.origin,
            "values": [float(v) for v in spec.field.values],
            "mu": spec.mu,
        }
    raise UnsupportedVariantError(f"cannot serialize {type(spec).__name__}")


def profile_from_dict(data: dict) -> ProfileBase:
    data = dict(data)
    tag = data.pop("variant", None)
    if tag == "tabulated":
        grid = Grid(int(data["n"]), float(data["length"]), float(data.get("origin", 0.0)))
        return Tabulated(Field(grid, np.asarray(data["values"], dtype=float)), mu=int(data.get("mu", 1)))
    cls = _VARIANT_TAGS.get(tag)
    if cls is None:
        raise ParameterError(f"unknown profile variant {tag!r}")
    return cls(**data)
