"""Coordinate changes between the x and y frames, and the frame fields.

The change of variables is y(x) = int_0^x rho^{-1/3}.  It is computed by
adaptive composite Gauss-Legendre quadrature on a refined partition, which
doubles as the node set for monotone interpolation in both directions;
exact values at arbitrary points come from a Newton iteration backed by
panel quadrature, so the map is limited only by round-off.

Frame fields carry rho composed with x(y) together with its y-derivatives.
For profile-backed frames the derivatives are obtained by rewriting
d_y^n rho as a combination of x-derivatives: d_y = rho^{1/3} d_x gives the
closed rewrite rule

    d_y [c rho^p prod rho^(k_i)] =
        c p rho^{p-2/3} rho' prod rho^(k_i)
      + sum_j c rho^{p+1/3} rho^(k_j+1) prod_{i != j} rho^(k_i),

evaluated with the exact x-derivatives of the profile, since spectral
differentiation of a truncated, non-periodic rho(y) loses all accuracy at
the orders needed here.  All y-frame fields are compositions with x(y);
the inhomogeneous term is

    F = 1/2 (rho_yyy/rho - 4/3 rho_yy rho_y/rho^2 + 5/9 rho_y^3/rho^3)
        + mu rho_y / rho^{1/3}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

import numpy as np
from numpy.polynomial import Polynomial
from scipy.integrate import cumulative_simpson
from scipy.interpolate import PchipInterpolator

from .analysis import NormRequest, spectral_budget, weighted_norm
from .errors import (
    AdmissibilityError,
    ConsistencyError,
    DegeneracyError,
    DomainError,
    ParameterError,
)
from .grid import Field, Grid, cumulative_integral, derivative
from .profiles import ProfileBase

__all__ = [
    "CoordinateMap",
    "build_y_map",
    "FrameFields",
    "frame_fields",
    "frame_fields_from_model",
    "frame_fields_from_periodic",
    "InversePowerModel",
    "GaussianModel",
    "chain_derivative",
    "w_from_z",
    "z_from_w",
    "g_field",
    "reconstruct_eulerian",
]

_GL16 = np.polynomial.legendre.leggauss(16)
_GL24 = np.polynomial.legendre.leggauss(24)


def _gl_panel(fn, a, b, rule):
    """Gauss-Legendre integrals of fn over the paired intervals [a, b]."""
    nodes, weights = rule
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    pts = mid[:, None] + half[:, None] * nodes[None, :]
    vals = fn(pts.ravel()).reshape(pts.shape)
    return half * (vals @ weights)


def _adaptive_cells(fn, a, b, rtol=1e-13, max_rounds=48):
    """Refine [a, b] panels until 16- and 24-point rules agree per cell.

    Returns (cell_edges, cell_integrals) with edges strictly increasing and
    one integral per cell, accurate to the requested relative tolerance.
    """
    lo = np.asarray(a, dtype=float)
    hi = np.asarray(b, dtype=float)
    done_lo, done_hi, done_int = [], [], []
    for _ in range(max_rounds):
        coarse = _gl_panel(fn, lo, hi, _GL16)
        fine = _gl_panel(fn, lo, hi, _GL24)
        bad = np.abs(fine - coarse) > rtol * (np.abs(fine) + 1e-300)
        good = ~bad
        done_lo.append(lo[good])
        done_hi.append(hi[good])
        done_int.append(fine[good])
        if not np.any(bad):
            break
        mid = 0.5 * (lo[bad] + hi[bad])
        lo = np.concatenate([lo[bad], mid])
        hi = np.concatenate([mid, hi[bad]])
    else:
        raise ConsistencyError("quadrature refinement failed to converge")
    lo = np.concatenate(done_lo)
    hi = np.concatenate(done_hi)
    integ = np.concatenate(done_int)
    order = np.argsort(lo)
    lo, hi, integ = lo[order], hi[order], integ[order]
    edges = np.append(lo, hi[-1])
    return edges, integ


@dataclass(frozen=True)
class CoordinateMap:
    """Monotone pairing between x in the support and y = int_0^x rho^{-1/3}.

    x_nodes and y_values are the refined quadrature partition; forward and
    inverse interpolate monotonically between them, and x_of_y sharpens the
    inverse to round-off with Newton steps against panel quadrature.
    """

    spec: ProfileBase
    x_nodes: np.ndarray
    y_values: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.x_nodes) <= 0) or np.any(np.diff(self.y_values) <= 0):
            raise ConsistencyError("coordinate map nodes are not strictly increasing")

    @property
    def x_range(self) -> tuple[float, float]:
        return float(self.x_nodes[0]), float(self.x_nodes[-1])

    @property
    def y_range(self) -> tuple[float, float]:
        return float(self.y_values[0]), float(self.y_values[-1])

    @cached_property
    def _inverse(self):
        return PchipInterpolator(self.y_values, self.x_nodes, extrapolate=False)

    def _integrand(self, x):
        rho = np.asarray(self.spec.rho_deriv(x, 0), dtype=float)
        if np.any(rho <= 0):
            raise DomainError("rho is not positive inside the requested range")
        return rho ** (-1.0 / 3.0)

    def forward(self, x):
        """y(x), limited only by quadrature round-off."""
        x = np.asarray(x, dtype=float)
        lo, hi = self.x_range
        if np.any(x < lo) or np.any(x > hi):
            raise ParameterError("x outside the mapped range")
        return self.forward_exact(x)

    def inverse(self, y):
        """x(y) by monotone interpolation on the refined partition."""
        y = np.asarray(y, dtype=float)
        lo, hi = self.y_range
        if np.any(y < lo) or np.any(y > hi):
            raise ParameterError("y outside the mapped range")
        return self._inverse(y)

    def forward_exact(self, x):
        """y(x) by panel quadrature from the nearest exact node."""
        arr = np.atleast_1d(np.asarray(x, dtype=float))
        j = np.clip(np.searchsorted(self.x_nodes, arr) - 1, 0, len(self.x_nodes) - 2)
        base = self.x_nodes[j]
        part = _gl_panel(self._integrand, base, arr, _GL24)
        out = self.y_values[j] + part
        return out if np.ndim(x) else float(out[0])

    def x_of_y(self, y):
        """x(y) refined to round-off with quadrature-backed Newton steps."""
        arr = np.atleast_1d(np.asarray(y, dtype=float))
        x = np.atleast_1d(np.asarray(self.inverse(arr), dtype=float))
        lo, hi = self.x_range
        scale = 1.0 + np.abs(arr)
        for _ in range(8):
            err = np.atleast_1d(self.forward_exact(x)) - arr
            if np.all(np.abs(err) <= 1e-13 * scale):
                break
            rho = np.asarray(self.spec.rho_deriv(x, 0), dtype=float)
            x = np.clip(x - err * rho ** (1.0 / 3.0), lo, hi)
        return x if np.ndim(y) else float(x[0])

    def to_csv(self, path) -> None:
        table = np.column_stack([self.x_nodes, self.y_values])
        np.savetxt(path, table, delimiter=",", header="x,y", comments="", fmt="%.17g")


def build_y_map(spec: ProfileBase, x_range, resolution: int = 512) -> CoordinateMap:
    """Coordinate map for the profile over x_range strictly inside the support."""
    x_lo, x_hi = float(x_range[0]), float(x_range[1])
    if not x_lo < x_hi:
        raise ParameterError("x_range must be increasing")
    supp_lo, supp_hi = spec.support()
    if not (supp_lo < x_lo and x_hi < supp_hi):
        raise DomainError("x_range must lie strictly inside the support")
    if resolution < 2:
        raise ParameterError("resolution must be at least 2")

    def integrand(x):
        rho = np.asarray(spec.rho_deriv(x, 0), dtype=float)
        if np.any(rho <= 0):
            raise DomainError("rho is not positive inside the requested range")
        return rho ** (-1.0 / 3.0)

    panels = np.linspace(x_lo, x_hi, resolution + 1)
    edges, cells = _adaptive_cells(integrand, panels[:-1], panels[1:])

    # split cells until no single cell spans too much of the y-range,
    # so the inverse interpolant is as well-resolved as the forward one
    total = float(np.sum(cells))
    cap = total / resolution
    for _ in range(64):
        wide = cells > cap
        if not np.any(wide):
            break
        idx = np.flatnonzero(wide)
        mid = 0.5 * (edges[idx] + edges[idx + 1])
        left = _gl_panel(integrand, edges[idx], mid, _GL24)
        right = _gl_panel(integrand, mid, edges[idx + 1], _GL24)
        new_edges = np.sort(np.concatenate([edges, mid]))
        new_cells = np.empty(len(cells) + len(idx))
        mask = np.zeros(len(cells), dtype=bool)
        mask[idx] = True
        pos = 0
        li = 0
        for i in range(len(cells)):
            if mask[i]:
                new_cells[pos] = left[li]
                new_cells[pos + 1] = right[li]
                pos += 2
                li += 1
            else:
                new_cells[pos] = cells[i]
                pos += 1
        edges, cells = new_edges, new_cells

    y = np.concatenate([[0.0], np.cumsum(cells)])
    # the cumsum gives int_{x_lo}^x; shift so that y(x) = int_0^x throughout
    if x_lo <= 0.0 <= x_hi:
        j = int(np.clip(np.searchsorted(edges, 0.0) - 1, 0, len(edges) - 2))
        part = float(_gl_panel(integrand, edges[j : j + 1], np.array([0.0]), _GL24)[0])
        y = y - (y[j] + part)
    else:
        a, b = (0.0, x_lo) if x_lo > 0 else (x_lo, 0.0)
        _, tail = _adaptive_cells(integrand, np.array([a]), np.array([b]))
        y = y + math.copysign(float(np.sum(tail)), x_lo)
    return CoordinateMap(spec=spec, x_nodes=edges, y_values=y)


def _rewrite_terms(max_order: int):
    """Terms of d_y^n rho as {(rho power, x-derivative multiset): coeff}."""
    orders = [{(Fraction(1), ()): Fraction(1)}]
    for _ in range(max_order):
        new: dict = {}
        for (p, ks), c in orders[-1].items():
            if p != 0:
                key = (p - Fraction(2, 3), tuple(sorted(ks + (1,))))
                new[key] = new.get(key, Fraction(0)) + c * p
            for j in range(len(ks)):
                bumped = list(ks)
                bumped[j] += 1
                key = (p + Fraction(1, 3), tuple(sorted(bumped)))
                new[key] = new.get(key, Fraction(0)) + c
        orders.append({k: v for k, v in new.items() if v != 0})
    return orders


@dataclass(frozen=True)
class FrameFields:
    """rho and its log-derivatives on the y-grid, with the forcing data.

    log_rho_derivs[n-1] holds d_y^n rho / rho for n = 1 .. 2 K0 + 7.
    delta is the infimum of rho^{5/6} <y>^{K0} over the grid and Mcal the
    H^{4,K0} norm of the forcing rho^{5/6} F.
    """

    y_grid: Grid
    rho: Field
    log_rho_derivs: tuple
    rho56: Field
    rho_m56: Field
    F: Field
    forcing: Field
    K0: int
    mu: int
    delta: float
    Mcal: float
    cmap: CoordinateMap | None = None

    @property
    def L1(self) -> Field:
        return self.log_rho_derivs[0]

    @property
    def L2(self) -> Field:
        return self.log_rho_derivs[1]

    @property
    def L3(self) -> Field:
        return self.log_rho_derivs[2]

    def boundary_decay_ratio(self) -> float:
        """Boundary value of rho^{5/6} <y>^{K0} relative to its infimum."""
        y = self.y_grid.nodes
        w = self.rho56.values * (1.0 + y * y) ** (self.K0 / 2.0)
        return float(min(w[0], w[-1]) / self.delta)

    def to_csv(self, path) -> None:
        y = self.y_grid.nodes
        if self.cmap is not None:
            x = self.cmap.x_of_y(y)
        else:
            x = np.full_like(y, np.nan)
        cols = [x, y, self.rho.values]
        names = ["x", "y", "rho"]
        for n, L in enumerate(self.log_rho_derivs, start=1):
            cols.append(L.values)
            names.append("rho_y_over_rho" if n == 1 else f"rho_y{n}_over_rho")
        cols.append(self.F.values)
        names.append("F")
        np.savetxt(path, np.column_stack(cols), delimiter=",",
                   header=",".join(names), comments="", fmt="%.17g")


def _assemble_frame(y_grid, rho_vals, log_derivs, K0, mu, floor, cmap=None):
    if np.any(rho_vals <= 0):
        raise DomainError("rho must be positive on the truncated grid")
    rho = Field(y_grid, rho_vals, label="rho")
    rho56 = Field(y_grid, rho_vals ** (5.0 / 6.0), label="rho^{5/6}")
    rho_m56 = Field(y_grid, rho_vals ** (-5.0 / 6.0), label="rho^{-5/6}")
    L1, L2, L3 = log_derivs[0], log_derivs[1], log_derivs[2]
    f_vals = 0.5 * (L3 - (4.0 / 3.0) * L1 * L2 + (5.0 / 9.0) * L1**3)
    f_vals = f_vals + mu * L1 * rho_vals ** (2.0 / 3.0)
    F = Field(y_grid, f_vals, label="F")
    forcing = Field(y_grid, rho56.values * f_vals, label="rho^{5/6} F")
    y = y_grid.nodes
    decay = rho56.values * (1.0 + y * y) ** (K0 / 2.0)
    idx = int(np.argmin(decay))
    delta = float(decay[idx])
    if delta < floor:
        raise AdmissibilityError(
            f"rho^{{5/6}}<y>^{K0} = {delta:.3e} below floor {floor:.1e}",
            y=float(y[idx]),
        )
    mcal = weighted_norm(forcing, NormRequest(4, K0, budget=spectral_budget(K0)))
    fields = tuple(
        Field(y_grid, v, label=f"d^{n}rho/rho") for n, v in enumerate(log_derivs, start=1)
    )
    return FrameFields(
        y_grid=y_grid, rho=rho, log_rho_derivs=fields, rho56=rho56,
        rho_m56=rho_m56, F=F, forcing=forcing, K0=int(K0), mu=int(mu),
        delta=delta, Mcal=mcal, cmap=cmap,
    )


def frame_fields(
    spec: ProfileBase,
    cmap: CoordinateMap,
    y_grid: Grid,
    K0: int,
    floor: float = 1e-12,
) -> FrameFields:
    """Frame fields for a profile through its coordinate map.

    d_y^n rho comes from the rewrite rule evaluated with the profile's
    closed-form x-derivatives at x(y).
    """
    if K0 < 0:
        raise ParameterError("K0 must be nonnegative")
    y_lo, y_hi = cmap.y_range
    nodes = y_grid.nodes
    if nodes[0] < y_lo or nodes[-1] > y_hi:
        raise ParameterError("y_grid extends beyond the coordinate map range")
    top = 2 * K0 + 7
    x_at = cmap.x_of_y(nodes)
    xderivs = [np.asarray(spec.rho_deriv(x_at, k), dtype=float) for k in range(top + 2)]
    rho_vals = xderivs[0]
    if np.any(rho_vals <= 0):
        raise DomainError("rho vanishes on the y-grid image")
    terms = _rewrite_terms(top)
    log_derivs = []
    for n in range(1, top + 1):
        acc = np.zeros_like(rho_vals)
        for (p, ks), c in terms[n].items():
            prod = rho_vals ** float(p - 1)
            for k in ks:
                prod = prod * xderivs[k]
            acc += float(c) * prod
        log_derivs.append(acc)
    return _assemble_frame(y_grid, rho_vals, log_derivs, K0, spec.mu, floor, cmap=cmap)


class InversePowerModel:
    """rho(y) = (1 + y)^{-p} on y > -1; closed-form derivatives."""

    def __init__(self, p: float = 6.0):
        if p <= 0:
            raise ParameterError("p must be positive")
        self.p = float(p)

    def dnrho(self, y, n: int):
        y = np.asarray(y, dtype=float)
        if np.any(y <= -1.0):
            raise DomainError("model requires y > -1")
        coef = 1.0
        for j in range(n):
            coef *= -(self.p + j)
        return coef * (1.0 + y) ** (-self.p - n)


class GaussianModel:
    """rho(y) = exp(-y^2); derivatives via the Hermite-type recurrence."""

    def dnrho(self, y, n: int):
        y = np.asarray(y, dtype=float)
        poly = Polynomial([1.0])
        yvar = Polynomial([0.0, 1.0])
        for _ in range(n):
            poly = poly.deriv() - 2.0 * yvar * poly
        return poly(y) * np.exp(-y * y)


def frame_fields_from_model(model, y_grid: Grid, K0: int, mu: int,
                            floor: float = 1e-12) -> FrameFields:
    """Frame fields for a closed-form rho(y) model branch."""
    if K0 < 0:
        raise ParameterError("K0 must be nonnegative")
    top = 2 * K0 + 7
    nodes = y_grid.nodes
    rho_vals = np.asarray(model.dnrho(nodes, 0), dtype=float)
    log_derivs = [np.asarray(model.dnrho(nodes, n), dtype=float) / rho_vals
                  for n in range(1, top + 1)]
    return _assemble_frame(y_grid, rho_vals, log_derivs, K0, mu, floor)


def frame_fields_from_periodic(rho: Field, K0: int, mu: int,
                               floor: float = 1e-12) -> FrameFields:
    """Frame fields for a smooth periodic rho given on its own grid.

    Derivatives are spectral, so this path is only as good as the spectral
    budget allows; it exists for closed-loop equivalence testing against
    synthetic band-limited profiles.
    """
    if K0 < 0:
        raise ParameterError("K0 must be nonnegative")
    top = 2 * K0 + 7
    rho_vals = rho.values
    log_derivs = [derivative(rho, n).values / rho_vals for n in range(1, top + 1)]
    return _assemble_frame(rho.grid, rho_vals, log_derivs, K0, mu, floor)


def chain_derivative(f: Field, n: int, frame: FrameFields) -> Field:
    """d_x^n f expressed on the y-grid through the chain-rule operators:

    d_x   = rho^{-1/3} d_y
    d_x^2 = rho^{-2/3} (d_y^2 - 1/3 (rho_y/rho) d_y)
    d_x^3 = rho^{-1}   (d_y^3 - (rho_y/rho) d_y^2
                        + (5/9 (rho_y/rho)^2 - 1/3 (rho_yy/rho)) d_y)
    """
    if n not in (1, 2, 3):
        raise ParameterError("chain derivative order must be 1, 2, or 3")
    if not f.grid.same_as(frame.y_grid):
        raise ParameterError("field grid does not match the frame grid")
    rho = frame.rho.values
    L1 = frame.L1.values
    fy = derivative(f, 1).values
    if n == 1:
        vals = rho ** (-1.0 / 3.0) * fy
    elif n == 2:
        fyy = derivative(f, 2).values
        vals = rho ** (-2.0 / 3.0) * (fyy - (1.0 / 3.0) * L1 * fy)
    else:
        L2 = frame.L2.values
        fyy = derivative(f, 2).values
        fyyy = derivative(f, 3).values
        vals = (fyyy - L1 * fyy + ((5.0 / 9.0) * L1**2 - (1.0 / 3.0) * L2) * fy) / rho
    return Field(f.grid, vals, label=f.label)


def w_from_z(Z: Field, frame: FrameFields) -> Field:
    """W = rho^{5/6} Z."""
    if not Z.grid.same_as(frame.y_grid):
        raise ParameterError("field grid does not match the frame grid")
    return Field(Z.grid, frame.rho56.values * Z.values, label=Z.label)


def z_from_w(W: Field, frame: FrameFields) -> Field:
    """Z = rho^{-5/6} W."""
    if not W.grid.same_as(frame.y_grid):
        raise ParameterError("field grid does not match the frame grid")
    return Field(W.grid, frame.rho_m56.values * W.values, label=W.label)


def g_field(W: Field, frame: FrameFields) -> Field:
    """g = (1 + rho^{-5/6} W)^5 - 1; degenerate when the base is nonpositive."""
    if not W.grid.same_as(frame.y_grid):
        raise ParameterError("field grid does not match the frame grid")
    base = 1.0 + frame.rho_m56.values * W.values
    if np.any(base <= 0):
        idx = int(np.argmin(base))
        raise DegeneracyError(
            f"1 + rho^{{-5/6}} W = {base[idx]:.3e} at y = {W.grid.nodes[idx]:.6g}",
            node=idx,
        )
    return Field(W.grid, base**5 - 1.0, label="g")


def _spectral_refine(f: Field, factor: int = 8):
    """Band-limited resample of a periodic field onto a finer grid.

    Piecewise interpolation of the coarse nodes caps moment diagnostics
    near h^4; zero-padded resampling is exact for band-limited snapshot
    fields, so the interpolation error drops below round-off relevance.
    """
    g = f.grid
    nf = factor * g.n
    vals = np.fft.irfft(np.fft.rfft(f.values), n=nf) * (nf / g.n)
    nodes = g.origin + g.length * np.arange(nf) / nf
    return nodes, vals


def _default_x_grid(cmap: CoordinateMap, n: int = 2048, pad_frac: float = 0.15) -> Grid:
    x_lo, x_hi = cmap.x_range
    pad = pad_frac * (x_hi - x_lo)
    length = (x_hi - x_lo) + 2 * pad
    origin = x_lo - pad
    h = length / n
    # put a node exactly at x = 0 when 0 lies inside the box
    if origin < 0.0 < origin + length:
        origin = -h * round(-origin / h)
    return Grid(n, length, origin=origin)


def reconstruct_eulerian(z_traj, spec: ProfileBase, frame: FrameFields,
                         x_grid: Grid | None = None):
    """Eulerian u(t) on an x-grid from a Lagrangian Z trajectory.

    The characteristic through the label a = 0 solves xi'(t) = B(t, 0) with
    B = 1/2 (1+Z)((1+Z)(U^2)')' + mu U^2 and U = (1+Z) u0 in label
    coordinates; then X(t, a) = xi(t) + int_0^a (1+Z)^{-1}, Y = X^{-1}, and
    u = Y_x u0(Y).  Z snapshots live on the frame's y-grid and are composed
    with y(label) through the frame's coordinate map; labels outside the
    map (deep in the truncation tail or the vacuum) use Z = 0.
    """
    if frame.cmap is None:
        raise ParameterError("reconstruction requires a frame built from a coordinate map")
    cmap = frame.cmap
    pairs = [(float(t), f) for t, f in z_traj]
    if not pairs:
        raise ParameterError("trajectory is empty")
    if any(pairs[i][0] >= pairs[i + 1][0] for i in range(len(pairs) - 1)):
        raise ParameterError("timestamps must be strictly increasing")
    if pairs[0][0] != 0.0:
        raise ParameterError("trajectory must start at t = 0")
    if x_grid is None:
        x_grid = _default_x_grid(cmap)

    labels = x_grid.nodes
    x_lo, x_hi = cmap.x_range
    inside = (labels > x_lo) & (labels < x_hi)
    y_lab = np.zeros_like(labels)
    y_lab[inside] = cmap.forward(labels[inside])
    y_lo, y_hi = frame.y_grid.nodes[0], frame.y_grid.nodes[-1]
    covered = inside & (y_lab >= y_lo) & (y_lab <= y_hi)
    u0_lab = spec.u0(labels)
    j0 = int(np.argmin(np.abs(labels)))
    if abs(labels[j0]) > 1e-9 * x_grid.length:
        raise ParameterError("x_grid must contain the label 0 as a node")

    def compose(Zf: Field) -> np.ndarray:
        fine_nodes, fine_vals = _spectral_refine(Zf)
        interp = PchipInterpolator(fine_nodes, fine_vals, extrapolate=False)
        z = np.zeros_like(labels)
        z[covered] = interp(y_lab[covered])
        return z

    z_lab = [compose(Zf) for _, Zf in pairs]
    times = np.asarray([t for t, _ in pairs])

    b0 = np.empty(len(pairs))
    for i, z in enumerate(z_lab):
        one = 1.0 + z
        if np.any(one <= 0):
            idx = int(np.argmin(one))
            raise DegeneracyError(
                f"1 + Z = {one[idx]:.3e} at label {labels[idx]:.6g}",
                node=idx, t=times[i],
            )
        U = one * u0_lab
        inner = one * derivative(Field(x_grid, U * U), 1).values
        b = 0.5 * one * derivative(Field(x_grid, inner), 1).values + frame.mu * U * U
        b0[i] = b[j0]
    xi = cumulative_simpson(b0, x=times, initial=0.0) if len(pairs) > 1 else np.zeros(1)

    out = []
    for i, ((t, _), z) in enumerate(zip(pairs, z_lab)):
        dev = 1.0 / (1.0 + z) - 1.0
        cum = cumulative_integral(Field(x_grid, dev), anchor=0.0)
        X = xi[i] + labels + cum.values
        if np.any(np.diff(X) <= 0):
            raise DegeneracyError("Lagrangian map lost monotonicity", t=t)
        back = PchipInterpolator(X, labels, extrapolate=False)
        valid = (labels >= X[0]) & (labels <= X[-1])
        Y = np.where(valid, back(np.where(valid, labels, X[0])), 0.0)
        z_at = np.zeros_like(labels)
        yq = np.zeros_like(labels)
        good = valid & (Y > x_lo) & (Y < x_hi)
        yq[good] = cmap.forward(Y[good])
        inband = good & (yq >= y_lo) & (yq <= y_hi)
        fine_nodes, fine_vals = _spectral_refine(pairs[i][1])
        interp = PchipInterpolator(fine_nodes, fine_vals, extrapolate=False)
        z_at[inband] = interp(yq[inband])
        u = np.where(valid, (1.0 + z_at) * spec.u0(np.where(valid, Y, 0.0)), 0.0)
        u = np.where(valid, u, 0.0)
        out.append((t, Field(x_grid, u, label="u")))
    return out
