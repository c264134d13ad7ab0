import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcflab import shapes
from mcflab.grid import (
    GridSpec,
    Immersion,
    InvalidAxisError,
    ShapeError,
    SymmetryAction,
    apply_symmetry,
    identity_symmetry,
    partial,
    read_immersion,
    reflection_permutation,
    second_partial,
    shift_permutation,
    write_immersion,
)

from conftest import stencil_symbols


class TestGridSpec:
    def test_spacing_times_resolution_is_two_pi(self):
        g = GridSpec(1, 64)
        assert g.spacing * g.resolution == pytest.approx(2 * np.pi, abs=1e-15)

    @pytest.mark.parametrize("m", [0, 3])
    def test_rejects_bad_dimension(self, m):
        with pytest.raises(ValueError):
            GridSpec(m, 16)

    def test_rejects_small_resolution(self):
        with pytest.raises(ValueError):
            GridSpec(1, 4)

    def test_rejects_bad_order(self):
        with pytest.raises(ValueError):
            GridSpec(1, 16, derivative_order=3)


class TestPartial:
    def test_constant_field_has_zero_derivative(self):
        g = GridSpec(1, 8)
        assert np.abs(partial(g, np.ones(8), 0)).max() == 0.0

    def test_cos_mode_matches_stencil_symbol(self):
        g = GridSpec(1, 8)
        (theta,) = g.coordinates()
        s1, _ = stencil_symbols(g)
        got = partial(g, np.cos(theta), 0)
        assert np.allclose(got, -np.sin(theta) * s1, atol=1e-14)

    @given(a=st.floats(-10, 10), b=st.floats(-10, 10))
    @settings(max_examples=25, deadline=None)
    def test_linearity(self, a, b):
        g = GridSpec(1, 16)
        rng = np.random.default_rng(7)
        f1 = rng.standard_normal(16)
        f2 = rng.standard_normal(16)
        lhs = partial(g, a * f1 + b * f2, 0)
        rhs = a * partial(g, f1, 0) + b * partial(g, f2, 0)
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_fourier_symbol_low_modes(self):
        g = GridSpec(1, 64)
        (theta,) = g.coordinates()
        h = g.spacing
        for k in range(1, g.resolution // 4 + 1):
            got = partial(g, np.sin(k * theta), 0)
            want = k * (np.sin(k * h) / (k * h)) * np.cos(k * theta)
            assert np.allclose(got, want, atol=1e-11), f"mode {k}"

    def test_derivative_has_zero_mean(self):
        g = GridSpec(2, 16)
        rng = np.random.default_rng(3)
        f = rng.standard_normal(g.shape)
        for axis in range(2):
            assert abs(partial(g, f, axis).mean()) < 1e-12

    def test_invalid_axis(self):
        g = GridSpec(1, 8)
        with pytest.raises(InvalidAxisError):
            partial(g, np.ones(8), 1)


class TestSecondPartial:
    def test_cos_mode_symbol_at_n8(self):
        g = GridSpec(1, 8)
        (theta,) = g.coordinates()
        _, s2 = stencil_symbols(g)
        assert s2 == pytest.approx(0.9496403, abs=1e-6)
        got = second_partial(g, np.cos(theta), 0, 0)
        assert np.allclose(got, -np.cos(theta) * s2, atol=1e-14)

    def test_constant_field(self):
        g = GridSpec(2, 8)
        assert np.abs(second_partial(g, np.ones(g.shape), 0, 1)).max() == 0.0

    def test_mixed_derivatives_commute_exactly(self):
        g = GridSpec(2, 16)
        rng = np.random.default_rng(11)
        f = rng.standard_normal(g.shape)
        d01 = second_partial(g, f, 0, 1)
        d10 = second_partial(g, f, 1, 0)
        assert np.abs(d01 - d10).max() < 1e-13

    def test_order4_is_more_accurate(self):
        (theta,) = GridSpec(1, 16).coordinates()
        f = np.cos(theta)
        err2 = np.abs(second_partial(GridSpec(1, 16, 2), f, 0, 0) + f).max()
        err4 = np.abs(second_partial(GridSpec(1, 16, 4), f, 0, 0) + f).max()
        assert err4 < err2 / 40


class TestImmersion:
    def test_rejects_non_finite(self, circle_grid):
        pos = np.ones(circle_grid.shape + (2,))
        pos[3, 0] = np.nan
        with pytest.raises(ValueError):
            Immersion(circle_grid, pos)

    def test_rejects_wrong_shape(self, circle_grid):
        with pytest.raises(ShapeError):
            Immersion(circle_grid, np.ones((5, 2)))

    def test_roundtrip_serialization(self, unit_circle):
        buf = io.StringIO()
        write_immersion(unit_circle, buf)
        buf.seek(0)
        back = read_immersion(buf)
        assert back.grid == unit_circle.grid
        assert back.time == unit_circle.time
        assert np.array_equal(back.positions, unit_circle.positions)

    def test_header_format(self, unit_circle):
        buf = io.StringIO()
        write_immersion(unit_circle, buf)
        header = buf.getvalue().splitlines()[0].split()
        assert header[:3] == ["1", "1", "64"]


class TestSymmetry:
    def test_identity_action(self, unit_circle):
        s = identity_symmetry(unit_circle.grid, 2)
        out = apply_symmetry(unit_circle, s)
        assert np.array_equal(out.positions, unit_circle.positions)

    def test_rotation_equivariance_of_circle(self, circle_grid, unit_circle):
        alpha = circle_grid.spacing
        Q = np.array(
            [[np.cos(alpha), -np.sin(alpha)], [np.sin(alpha), np.cos(alpha)]]
        )
        s = SymmetryAction(Q, np.zeros(2), shift_permutation(circle_grid, [1]))
        out = apply_symmetry(unit_circle, s)
        assert np.abs(out.positions - unit_circle.positions).max() < 1e-14

    def test_reflection_symmetry_of_ellipse(self, circle_grid):
        ell = shapes.ellipse(circle_grid, 1.5, 1.0)
        s = SymmetryAction(
            np.diag([1.0, -1.0]),
            np.zeros(2),
            reflection_permutation(circle_grid, [0]),
        )
        out = apply_symmetry(ell, s)
        assert np.abs(out.positions - ell.positions).max() < 1e-14

    def test_partial_commutes_with_shift(self, circle_grid):
        rng = np.random.default_rng(5)
        f = rng.standard_normal(circle_grid.shape)
        perm = shift_permutation(circle_grid, [3])
        shifted = f.ravel()[perm.ravel()].reshape(f.shape)
        assert np.array_equal(
            partial(circle_grid, shifted, 0),
            partial(circle_grid, f, 0).ravel()[perm.ravel()].reshape(f.shape),
        )

    def test_dimension_mismatch(self, unit_circle):
        s = identity_symmetry(unit_circle.grid, 3)
        with pytest.raises(ShapeError):
            apply_symmetry(unit_circle, s)

    def test_non_orthogonal_matrix_rejected(self, circle_grid):
        with pytest.raises(ValueError):
            SymmetryAction(
                np.array([[1.0, 1.0], [0.0, 1.0]]),
                np.zeros(2),
                shift_permutation(circle_grid, [0]),
            )
