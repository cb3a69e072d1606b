"""Coordinate map, frame fields, chain operators, and reconstruction."""

import math
from dataclasses import dataclass

import numpy as np
import pytest
import sympy as sp

from degkdv.coordinates import (
    CoordinateMap,
    GaussianModel,
    InversePowerModel,
    build_y_map,
    chain_derivative,
    frame_fields,
    frame_fields_from_model,
    frame_fields_from_periodic,
    g_field,
    reconstruct_eulerian,
    w_from_z,
    z_from_w,
)
from degkdv.errors import (
    AdmissibilityError,
    ConsistencyError,
    DegeneracyError,
    DomainError,
    ParameterError,
)
from degkdv.grid import Field, Grid, derivative, integrate
from degkdv.profiles import AlgebraicTail, Compacton, PowerLeftRight, compacton_halfwidth


@dataclass(frozen=True)
class _DipProfile:
    """rho = 0.2 - exp(-x^2): positive far out, negative near the origin."""

    mu: int = 1

    def support(self):
        return (-math.inf, math.inf)

    def rho_deriv(self, x, n: int):
        x = np.asarray(x, dtype=float)
        if n == 0:
            return 0.2 - np.exp(-x * x)
        raise NotImplementedError

    def rho(self, x):
        return self.rho_deriv(x, 0)


def _one_sided():
    return PowerLeftRight(alpha_minus=0.0, alpha_plus=6.0, x_minus=-1.0, x_plus=1.0)


class TestBuildYMap:
    def test_identity_map(self):
        cmap = build_y_map(AlgebraicTail(beta=0.0), (-2.0, 3.0))
        assert np.max(np.abs(cmap.y_values - cmap.x_nodes)) < 1e-13
        xs = np.linspace(-2.0, 3.0, 57)
        assert np.max(np.abs(cmap.forward(xs) - xs)) < 1e-13
        assert isinstance(cmap.forward(1.25), float)

    def test_one_sided_power_map(self):
        # rho = (1 - x)^6 gives y = x / (1 - x)
        cmap = build_y_map(_one_sided(), (-0.7, 0.9))
        xs = np.linspace(-0.65, 0.85, 101)
        assert np.max(np.abs(cmap.forward(xs) - xs / (1 - xs))) < 1e-12
        assert np.max(np.abs(cmap.y_values - cmap.x_nodes / (1 - cmap.x_nodes))) < 1e-12

    def test_symmetric_power_map(self):
        # rho = (1 - x^2)^6 gives y = x / (2 (1 - x^2)) + atanh(x) / 2
        spec = PowerLeftRight(alpha_minus=6.0, alpha_plus=6.0, x_minus=-1.0, x_plus=1.0)
        cmap = build_y_map(spec, (-0.9, 0.9))
        xs = np.linspace(-0.88, 0.88, 101)
        exact = xs / (2 * (1 - xs**2)) + np.arctanh(xs) / 2
        assert np.max(np.abs(cmap.forward(xs) - exact)) < 1e-11

    def test_even_rho_gives_odd_map(self):
        spec = Compacton(B=-0.2, c=1.0, mu=1)
        cmap = build_y_map(spec, (-4.0, 4.0))
        xs = np.linspace(0.1, 3.9, 40)
        assert np.max(np.abs(cmap.forward(xs) + cmap.forward(-xs))) < 1e-12

    def test_anchor_when_range_excludes_zero(self):
        # y(x) = int_0^x even when the mapped window sits away from 0
        cmap = build_y_map(AlgebraicTail(beta=0.0), (1.0, 3.0))
        assert abs(cmap.forward(2.0) - 2.0) < 1e-13
        cmap = build_y_map(AlgebraicTail(beta=0.0), (-3.0, -1.0))
        assert abs(cmap.forward(-2.0) + 2.0) < 1e-13

    def test_round_trip_random_points(self):
        cmap = build_y_map(_one_sided(), (-0.7, 0.9))
        rng = np.random.default_rng(7)
        y_lo, y_hi = cmap.y_range
        ys = rng.uniform(y_lo, y_hi, size=1000)
        back = cmap.forward(cmap.x_of_y(ys))
        assert np.max(np.abs(back - ys) / (1.0 + np.abs(ys))) < 1e-10
        xs = rng.uniform(-0.7, 0.9, size=1000)
        assert np.max(np.abs(cmap.x_of_y(cmap.forward(xs)) - xs)) < 1e-10

    def test_range_validation(self):
        with pytest.raises(ParameterError):
            build_y_map(_one_sided(), (0.5, 0.5))
        with pytest.raises(DomainError):
            build_y_map(_one_sided(), (-1.0, 0.5))
        with pytest.raises(DomainError):
            build_y_map(_one_sided(), (0.0, 1.5))
        with pytest.raises(ParameterError):
            build_y_map(_one_sided(), (-0.5, 0.5), resolution=1)

    def test_rejects_nonpositive_rho_inside(self):
        with pytest.raises(DomainError):
            build_y_map(_DipProfile(), (-3.0, 3.0))

    def test_constructor_rejects_nonmonotone(self):
        with pytest.raises(ConsistencyError):
            CoordinateMap(
                spec=AlgebraicTail(beta=0.0),
                x_nodes=np.array([0.0, 1.0, 0.5]),
                y_values=np.array([0.0, 1.0, 2.0]),
            )

    def test_forward_inverse_range_checks(self):
        cmap = build_y_map(_one_sided(), (-0.5, 0.5))
        with pytest.raises(ParameterError):
            cmap.forward(0.6)
        with pytest.raises(ParameterError):
            cmap.inverse(cmap.y_range[1] + 1.0)

    def test_csv_round_trip(self, tmp_path):
        cmap = build_y_map(_one_sided(), (-0.5, 0.5))
        path = tmp_path / "map.csv"
        cmap.to_csv(path)
        table = np.loadtxt(path, delimiter=",", skiprows=1)
        assert np.allclose(table[:, 0], cmap.x_nodes, rtol=0, atol=0)
        assert np.allclose(table[:, 1], cmap.y_values, rtol=0, atol=0)
        assert path.read_text().splitlines()[0] == "x,y"


class TestFrameFields:
    def setup_method(self):
        self.y_grid = Grid(64, 4.0, origin=-0.4)
        self.cmap = build_y_map(_one_sided(), (-0.7, 0.9))

    def test_profile_path_matches_model_path(self):
        # rho = (1 - x)^6 through y = x/(1-x) is exactly (1 + y)^{-6}
        fr_p = frame_fields(_one_sided(), self.cmap, self.y_grid, K0=1)
        fr_m = frame_fields_from_model(InversePowerModel(6.0), self.y_grid, K0=1, mu=1)
        assert len(fr_p.log_rho_derivs) == 9
        np.testing.assert_allclose(fr_p.rho.values, fr_m.rho.values, rtol=1e-12)
        for a, b in zip(fr_p.log_rho_derivs, fr_m.log_rho_derivs):
            np.testing.assert_allclose(a.values, b.values, rtol=1e-11)
        np.testing.assert_allclose(fr_p.F.values, fr_m.F.values, rtol=1e-12)
        np.testing.assert_allclose(fr_p.forcing.values, fr_m.forcing.values, rtol=1e-12)

    def test_inverse_power_forcing_closed_form(self):
        fr = frame_fields_from_model(InversePowerModel(6.0), self.y_grid, K0=0, mu=1)
        y = self.y_grid.nodes
        np.testing.assert_allclose(
            fr.F.values, -60.0 / (1 + y) ** 3 - 6.0 / (1 + y) ** 5, rtol=1e-13
        )
        np.testing.assert_allclose(
            fr.forcing.values, -60.0 / (1 + y) ** 8 - 6.0 / (1 + y) ** 10, rtol=1e-13
        )

    @pytest.mark.parametrize("mu", [-1, 0, 1])
    def test_gaussian_forcing_closed_form(self, mu):
        grid = Grid(64, 6.0, origin=-3.0)
        fr = frame_fields_from_model(GaussianModel(), grid, K0=0, mu=mu)
        y = grid.nodes
        exact = -(8.0 / 9.0) * y**3 + (10.0 / 3.0) * y - 2.0 * mu * y * np.exp(-2 * y**2 / 3)
        np.testing.assert_allclose(fr.F.values, exact, rtol=0, atol=1e-12 * np.max(np.abs(exact)))

    def test_periodic_branch_matches_symbolic(self):
        # modest grid: high-order spectral derivatives amplify top-mode
        # round-off by nyquist^n, so fewer modes give a cleaner comparison
        grid = Grid(64, 8.0, origin=-4.0)
        k = 2 * np.pi / grid.length
        ysym = sp.symbols("y")
        rho_sym = sp.exp(sp.Rational(3, 10) * sp.cos(k * ysym))
        rho = Field(grid, sp.lambdify(ysym, rho_sym)(grid.nodes))
        fr = frame_fields_from_periodic(rho, K0=0, mu=1)
        for n in range(1, 8):
            exact = sp.lambdify(ysym, sp.diff(rho_sym, ysym, n) / rho_sym)(grid.nodes)
            # noise floor: top-mode round-off amplified by nyquist^n
            floor = 1e-16 * grid.nyquist**n + 1e-10 * np.max(np.abs(exact))
            err = np.max(np.abs(fr.log_rho_derivs[n - 1].values - exact))
            assert err < floor, f"order {n}: {err:.3e} vs {floor:.3e}"

    def test_constant_rho_has_zero_forcing(self):
        grid = Grid(32, 5.0, origin=-2.5)
        rho = Field(grid, np.full(32, 2.0))
        fr = frame_fields_from_periodic(rho, K0=0, mu=1)
        assert np.max(np.abs(fr.F.values)) < 1e-12
        assert abs(fr.delta - 2.0 ** (5.0 / 6.0)) < 1e-12
        np.testing.assert_allclose(fr.rho56.values * fr.rho_m56.values, 1.0, rtol=1e-13)

    def test_delta_and_admissibility_floor(self):
        grid = Grid(64, 30.0, origin=0.5)
        fr = frame_fields_from_model(InversePowerModel(6.0), grid, K0=2, mu=1)
        y = grid.nodes
        expected = np.min((1 + y) ** (-5.0) * (1 + y * y))
        assert abs(fr.delta - expected) < 1e-12
        with pytest.raises(AdmissibilityError) as err:
            frame_fields_from_model(InversePowerModel(6.0), grid, K0=2, mu=1, floor=1.0)
        assert err.value.y is not None
        assert grid.nodes[0] <= err.value.y <= grid.nodes[-1]

    def test_y_grid_must_sit_inside_map(self):
        wide = Grid(64, 400.0, origin=-10.0)
        with pytest.raises(ParameterError):
            frame_fields(_one_sided(), self.cmap, wide, K0=0)

    def test_invariants_and_csv(self, tmp_path):
        fr = frame_fields(_one_sided(), self.cmap, self.y_grid, K0=1)
        assert np.all(fr.rho.values > 0)
        np.testing.assert_allclose(fr.rho56.values * fr.rho_m56.values, 1.0, rtol=1e-12)
        assert fr.delta > 0
        assert np.isfinite(fr.Mcal) and fr.Mcal > 0
        assert fr.boundary_decay_ratio() >= 1.0
        path = tmp_path / "frame.csv"
        fr.to_csv(path)
        table = np.loadtxt(path, delimiter=",", skiprows=1)
        assert table.shape == (64, 3 + 9 + 1)
        header = path.read_text().splitlines()[0].split(",")
        assert header[:4] == ["x", "y", "rho", "rho_y_over_rho"]
        assert header[-1] == "F"
        # x column reproduces the inverse map
        np.testing.assert_allclose(table[:, 0], self.cmap.x_of_y(self.y_grid.nodes), rtol=1e-12)


class TestChainDerivative:
    def _periodic_frame(self, n=256, length=8.0):
        grid = Grid(n, length, origin=-length / 2)
        k = 2 * np.pi / length
        rho = Field(grid, np.exp(0.3 * np.cos(k * grid.nodes)))
        return frame_fields_from_periodic(rho, K0=0, mu=1), grid, k

    def test_first_order_formula(self):
        frame, grid, k = self._periodic_frame()
        f = Field(grid, np.sin(k * grid.nodes))
        got = chain_derivative(f, 1, frame)
        exact = frame.rho.values ** (-1.0 / 3.0) * k * np.cos(k * grid.nodes)
        np.testing.assert_allclose(got.values, exact, rtol=0, atol=1e-12)

    def test_composition_identities(self):
        frame, grid, k = self._periodic_frame()
        f = Field(grid, np.sin(k * grid.nodes) + 0.4 * np.cos(2 * k * grid.nodes))
        d1 = chain_derivative(f, 1, frame)
        d2 = chain_derivative(f, 2, frame)
        d3 = chain_derivative(f, 3, frame)
        scale = np.max(np.abs(d2.values))
        np.testing.assert_allclose(
            chain_derivative(d1, 1, frame).values, d2.values, rtol=0, atol=1e-10 * scale
        )
        scale = np.max(np.abs(d3.values))
        np.testing.assert_allclose(
            chain_derivative(d2, 1, frame).values, d3.values, rtol=0, atol=1e-9 * scale
        )
        np.testing.assert_allclose(
            chain_derivative(d1, 2, frame).values, d3.values, rtol=0, atol=1e-9 * scale
        )

    def test_log_derivative_product_rule(self):
        # d_y (rho_y / rho) = rho_yy / rho - (rho_y / rho)^2
        frame, grid, _ = self._periodic_frame()
        lhs = derivative(frame.L1, 1).values
        rhs = frame.L2.values - frame.L1.values**2
        np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-10)

    def test_parameter_checks(self):
        frame, grid, k = self._periodic_frame()
        f = Field(grid, np.sin(k * grid.nodes))
        with pytest.raises(ParameterError):
            chain_derivative(f, 4, frame)
        with pytest.raises(ParameterError):
            chain_derivative(f, 0, frame)
        other = Field(Grid(256, 9.0, origin=-4.5), np.zeros(256))
        with pytest.raises(ParameterError):
            chain_derivative(other, 1, frame)


class TestWZAndG:
    def setup_method(self):
        self.grid = Grid(64, 4.0, origin=-0.4)
        self.frame = frame_fields_from_model(InversePowerModel(6.0), self.grid, K0=0, mu=1)

    def test_unit_z_gives_power_w(self):
        W = w_from_z(Field(self.grid, np.ones(64)), self.frame)
        np.testing.assert_allclose(W.values, (1 + self.grid.nodes) ** (-5.0), rtol=1e-13)

    def test_round_trip_and_grid_checks(self):
        Z = Field(self.grid, 0.3 * np.sin(2 * np.pi * self.grid.nodes / 4.0))
        back = z_from_w(w_from_z(Z, self.frame), self.frame)
        np.testing.assert_allclose(back.values, Z.values, rtol=0, atol=1e-15)
        other = Field(Grid(64, 5.0), np.zeros(64))
        for fn in (w_from_z, z_from_w, lambda f, fr: g_field(f, fr)):
            with pytest.raises(ParameterError):
                fn(other, self.frame)

    def test_g_invariant_through_z(self):
        Z = Field(self.grid, 0.3 * np.sin(2 * np.pi * self.grid.nodes / 4.0))
        g = g_field(w_from_z(Z, self.frame), self.frame)
        np.testing.assert_allclose(g.values, (1 + Z.values) ** 5 - 1, rtol=0, atol=1e-12)

    def test_constant_shift_gives_31(self):
        W = Field(self.grid, self.frame.rho56.values)
        np.testing.assert_allclose(g_field(W, self.frame).values, 31.0, rtol=1e-13)

    def test_small_amplitude_linearization(self):
        eps = 1e-5
        W = Field(self.grid, eps * self.frame.rho56.values * np.cos(self.grid.nodes))
        b = self.frame.rho_m56.values * W.values
        g = g_field(W, self.frame)
        assert np.max(np.abs(g.values - 5 * b)) < 11 * np.max(b * b)

    def test_degenerate_base_raises(self):
        W = Field(self.grid, -2.0 * self.frame.rho56.values)
        with pytest.raises(DegeneracyError) as err:
            g_field(W, self.frame)
        assert err.value.node is not None


def _bump(y, center, width):
    s = (np.asarray(y) - center) / width
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


class TestReconstruction:
    def _wave_setup(self):
        spec = Compacton(B=-0.2, c=1.0, mu=1)
        period = 2 * np.pi / math.sqrt(2.0)
        cmap = build_y_map(spec, (-1.5 * period, 1.5 * period))
        y_lo, y_hi = cmap.y_range
        span = 0.9 * (y_hi - y_lo)
        y_grid = Grid(256, span, origin=-span / 2)
        frame = frame_fields(spec, cmap, y_grid, K0=0)
        x_grid = Grid(1024, 2 * period, origin=-period)
        return spec, frame, x_grid, y_grid

    def test_initial_identity(self):
        spec, frame, x_grid, y_grid = self._wave_setup()
        traj = [(0.0, Field(y_grid, np.zeros(y_grid.n)))]
        out = reconstruct_eulerian(traj, spec, frame, x_grid=x_grid)
        assert len(out) == 1
        t, u = out[0]
        assert t == 0.0
        np.testing.assert_allclose(u.values, spec.u0(x_grid.nodes), rtol=0, atol=1e-14)

    def test_traveling_wave_translation(self):
        # Z = 0 for the mu = +1 wave means u(t, x) = u0(x - c t)
        spec, frame, x_grid, y_grid = self._wave_setup()
        zero = Field(y_grid, np.zeros(y_grid.n))
        times = np.linspace(0.0, 0.3, 7)
        out = reconstruct_eulerian([(t, zero) for t in times], spec, frame, x_grid=x_grid)
        for t, u in out:
            exact = spec.u0(x_grid.nodes - t)
            mask = x_grid.nodes > x_grid.nodes[0] + t + 0.2
            assert np.max(np.abs(u.values[mask] - exact[mask])) < 1e-10

    def test_mass_preservation_under_z(self):
        spec = Compacton(B=0.0, c=1.0, mu=1)
        xw = compacton_halfwidth(0.0, 1.0)
        cmap = build_y_map(spec, (-0.97 * xw, 0.97 * xw))
        y_lo, y_hi = cmap.y_range
        span = 0.98 * (y_hi - y_lo)
        y_grid = Grid(512, span, origin=-span / 2)
        frame = frame_fields(spec, cmap, y_grid, K0=0)
        Z = Field(y_grid, 0.1 * _bump(y_grid.nodes, 0.3, 1.5))
        x_grid = Grid(2048, 6.4, origin=-3.2)
        out = reconstruct_eulerian([(0.0, Z)], spec, frame, x_grid=x_grid)
        _, u = out[0]
        labels = x_grid.nodes
        y_lab = np.zeros_like(labels)
        inside = (labels > cmap.x_range[0]) & (labels < cmap.x_range[1])
        y_lab[inside] = cmap.forward(labels[inside])
        z_lab = np.zeros_like(labels)
        band = inside & (y_lab >= y_grid.nodes[0]) & (y_lab <= y_grid.nodes[-1])
        z_lab[band] = np.interp(y_lab[band], y_grid.nodes, Z.values)
        mass_label = integrate(Field(x_grid, (1 + z_lab) * spec.u0(labels) ** 2))
        mass_euler = integrate(u * u)
        assert abs(mass_euler - mass_label) / mass_label < 1e-4
        # the rearrangement is genuinely nontrivial
        assert np.max(np.abs(u.values - spec.u0(labels))) > 1e-3

    def test_trajectory_validation(self):
        spec, frame, x_grid, y_grid = self._wave_setup()
        zero = Field(y_grid, np.zeros(y_grid.n))
        with pytest.raises(ParameterError):
            reconstruct_eulerian([], spec, frame, x_grid=x_grid)
        with pytest.raises(ParameterError):
            reconstruct_eulerian([(0.1, zero)], spec, frame, x_grid=x_grid)
        with pytest.raises(ParameterError):
            reconstruct_eulerian([(0.0, zero), (0.0, zero)], spec, frame, x_grid=x_grid)
        model_frame = frame_fields_from_model(
            InversePowerModel(6.0), Grid(64, 4.0, origin=-0.4), K0=0, mu=1
        )
        with pytest.raises(ParameterError):
            reconstruct_eulerian([(0.0, zero)], spec, model_frame, x_grid=x_grid)
        off_grid = Grid(64, 1.0, origin=0.3)
        with pytest.raises(ParameterError):
            reconstruct_eulerian([(0.0, zero)], spec, frame, x_grid=off_grid)

    def test_degenerate_z_raises(self):
        spec, frame, x_grid, y_grid = self._wave_setup()
        Z = Field(y_grid, -1.5 * _bump(y_grid.nodes, 0.0, 1.0))
        with pytest.raises(DegeneracyError) as err:
            reconstruct_eulerian([(0.0, Z)], spec, frame, x_grid=x_grid)
        assert err.value.t == 0.0

    def test_default_x_grid(self):
        spec, frame, _, y_grid = self._wave_setup()
        traj = [(0.0, Field(y_grid, np.zeros(y_grid.n)))]
        out = reconstruct_eulerian(traj, spec, frame)
        _, u = out[0]
        grid = u.grid
        assert grid.n == 2048
        j = int(np.argmin(np.abs(grid.nodes)))
        assert abs(grid.nodes[j]) < 1e-9 * grid.length
        x_lo, x_hi = frame.cmap.x_range
        assert grid.nodes[0] < x_lo and grid.nodes[-1] > x_hi
        np.testing.assert_allclose(u.values, spec.u0(grid.nodes), rtol=0, atol=1e-14)
