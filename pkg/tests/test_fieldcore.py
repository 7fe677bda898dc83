import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from flowlab.fieldcore import (
    FieldError,
    Grid2D,
    RealField,
    SpectralField,
    dealias,
    dealias_mask,
    enforce_hermitian,
    field_io_roundtrip,
    hermitian_residual,
    load_field,
    mirror_hermitian,
    parseval_energy,
    save_field,
    spectral_derivative,
    transform_forward,
    transform_inverse,
)

from conftest import band_limited_field


def fd8_x(data: np.ndarray, dx: float) -> np.ndarray:
    """Eighth-order centered difference along axis 1."""
    c = [4 / 5, -1 / 5, 4 / 105, -1 / 280]
    out = np.zeros_like(data)
    for j, cj in enumerate(c, start=1):
        out += cj * (np.roll(data, -j, axis=1) - np.roll(data, j, axis=1))
    return out / dx


class TestGrid:
    def test_dx(self):
        g = Grid2D(64, 2.0)
        assert g.dx == pytest.approx(2.0 / 64)

    @pytest.mark.parametrize("n", [4, 7.5, 0])
    def test_rejects_bad_n(self, n):
        with pytest.raises(FieldError):
            Grid2D(n)

    def test_rejects_bad_length(self):
        with pytest.raises(FieldError):
            Grid2D(16, 0.0)

    def test_wavenumber_range(self):
        g = Grid2D(16, 4 * np.pi)
        wn = g.wavenumbers
        scale = 2 * np.pi / g.length
        assert wn.kx.min() >= -8 * scale and wn.kx.max() < 8 * scale
        assert wn.ky.min() >= -8 * scale and wn.ky.max() < 8 * scale
        np.testing.assert_array_equal(wn.k4, wn.k2**2)

    def test_field_shape_checked(self):
        with pytest.raises(FieldError):
            RealField(Grid2D(8), np.zeros((8, 9)))

    def test_non_finite_rejected(self):
        data = np.zeros((8, 8))
        data[2, 3] = np.nan
        with pytest.raises(FieldError):
            RealField(Grid2D(8), data)


class TestTransforms:
    def test_constant_is_dc_only(self):
        g = Grid2D(16)
        F = transform_forward(RealField(g, np.full((16, 16), 2.5)))
        assert F.coeffs[0, 0] == pytest.approx(2.5 * 16**2)
        rest = F.coeffs.copy()
        rest[0, 0] = 0
        assert np.max(np.abs(rest)) < 1e-9

    def test_sine_two_modes(self):
        g = Grid2D(64)
        x, _ = g.coords()
        F = transform_forward(RealField(g, np.sin(x)))
        big = np.argwhere(np.abs(F.coeffs) > 1e-9)
        # the half plane stores the (+1, 0) mode; (-1, 0) is its conjugate
        assert big.tolist() == [[0, 1]]
        assert F.coeffs[0, 1] == pytest.approx(-0.5j * 64**2)

    def test_zero_and_dc_inverse(self):
        g = Grid2D(16)
        zero = transform_inverse(SpectralField(g, np.zeros(g.spectral_shape)))
        assert np.all(zero.data == 0)
        c = np.zeros(g.spectral_shape, dtype=complex)
        c[0, 0] = 3.0 * 16**2
        np.testing.assert_allclose(transform_inverse(SpectralField(g, c)).data, 3.0, rtol=1e-14)

    def test_round_trip_and_parseval(self, rng):
        g = Grid2D(64)
        f = RealField(g, rng.standard_normal((64, 64)))
        F = transform_forward(f)
        back = transform_inverse(F)
        assert np.max(np.abs(back.data - f.data)) <= 1e-12 * np.max(np.abs(f.data))
        # direct summation oracle
        direct = float(np.sum(f.data**2))
        assert abs(parseval_energy(F) - direct) <= 1e-12 * direct

    def test_forward_of_inverse(self, rng):
        g = Grid2D(32)
        F = transform_forward(RealField(g, rng.standard_normal((32, 32))))
        again = transform_forward(transform_inverse(F))
        assert np.max(np.abs(again.coeffs - F.coeffs)) <= 1e-12 * np.max(np.abs(F.coeffs))

    def test_hermitian_violation_rejected(self):
        g = Grid2D(16)
        c = np.zeros(g.spectral_shape, dtype=complex)
        c[1, 0] = 1.0
        with pytest.raises(FieldError):
            transform_inverse(SpectralField(g, c))

    def test_non_finite_forward_rejected(self):
        g = Grid2D(8)
        f = RealField(g, np.zeros((8, 8)))
        f.data[0, 0] = np.inf
        with pytest.raises(FieldError):
            transform_forward(f)

    def test_enforce_hermitian_makes_consistent(self, rng):
        g = Grid2D(16)
        c = rng.standard_normal(g.spectral_shape) + 1j * rng.standard_normal(g.spectral_shape)
        assert hermitian_residual(c) > 1e-3
        assert hermitian_residual(enforce_hermitian(c)) < 1e-15
        assert hermitian_residual(mirror_hermitian(c)) < 1e-15

    @settings(max_examples=25, deadline=None)
    @given(arrays(np.float64, (16, 16), elements=st.floats(-1e3, 1e3)))
    def test_round_trip_property(self, data):
        g = Grid2D(16)
        back = transform_inverse(transform_forward(RealField(g, data)))
        scale = max(np.max(np.abs(data)), 1e-300)
        assert np.max(np.abs(back.data - data)) <= 1e-12 * scale

    @settings(max_examples=25, deadline=None)
    @given(arrays(np.float64, (16, 16), elements=st.floats(-1e3, 1e3)))
    def test_parseval_property(self, data):
        F = transform_forward(RealField(Grid2D(16), data))
        direct = float(np.sum(data**2))
        assert abs(parseval_energy(F) - direct) <= 1e-12 * max(direct, 1e-300)


class TestDerivatives:
    def test_dx_sin_is_cos(self):
        g = Grid2D(64)
        x, _ = g.coords()
        d = transform_inverse(spectral_derivative(transform_forward(RealField(g, np.sin(x))), "x", 1))
        assert np.max(np.abs(d.data - np.cos(x))) < 1e-10

    def test_biharmonic_single_mode(self):
        g = Grid2D(32)
        x, y = g.coords()
        f = np.sin(x) * np.sin(y)
        out = transform_inverse(spectral_derivative(transform_forward(RealField(g, f)), None, 4))
        assert np.max(np.abs(out.data - 4 * f)) < 1e-10
        lap = transform_inverse(spectral_derivative(transform_forward(RealField(g, f)), None, 2))
        assert np.max(np.abs(lap.data + 2 * f)) < 1e-10

    def test_matches_eighth_order_fd(self):
        # oracle: independent centered stencil on a smooth band-limited field
        f = band_limited_field(128, 6, seed=3)
        spec = transform_inverse(spectral_derivative(transform_forward(f), "x", 1)).data
        fd = fd8_x(f.data, f.grid.dx)
        assert np.max(np.abs(spec - fd)) / np.max(np.abs(spec)) < 1e-6

    def test_y_axis_on_rows(self):
        g = Grid2D(32)
        _, y = g.coords()
        d = transform_inverse(spectral_derivative(transform_forward(RealField(g, np.sin(2 * y))), "y", 1))
        assert np.max(np.abs(d.data - 2 * np.cos(2 * y))) < 1e-10

    def test_physical_length_scaling(self):
        g = Grid2D(32, 1.0)
        x, _ = g.coords()
        f = np.sin(2 * np.pi * x)
        d = transform_inverse(spectral_derivative(transform_forward(RealField(g, f)), "x", 2))
        assert np.max(np.abs(d.data + (2 * np.pi) ** 2 * f)) < 1e-8

    @pytest.mark.parametrize("axis,order", [(None, 1), (None, 3), ("x", 3), ("z", 1)])
    def test_unsupported(self, axis, order):
        F = SpectralField(Grid2D(8), np.zeros((8, 5)))
        with pytest.raises(FieldError):
            spectral_derivative(F, axis, order)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**31))
    def test_linearity(self, a, b, seed):
        rng = np.random.default_rng(seed)
        g = Grid2D(16)
        F = transform_forward(RealField(g, rng.standard_normal((16, 16))))
        G = transform_forward(RealField(g, rng.standard_normal((16, 16))))
        combo = SpectralField(g, a * F.coeffs + b * G.coeffs)
        lhs = spectral_derivative(combo, "x", 1).coeffs
        rhs = a * spectral_derivative(F, "x", 1).coeffs + b * spectral_derivative(G, "x", 1).coeffs
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(np.max(np.abs(rhs)), 1.0)


class TestDealias:
    def test_high_mode_removed_low_kept(self):
        g = Grid2D(64)
        c = np.zeros(g.spectral_shape, dtype=complex)
        c[0, int(0.9 * 32)] = 1.0
        c[5, 0] = 1.0
        out = dealias(SpectralField(g, c)).coeffs
        assert out[0, 28] == 0
        assert out[5, 0] == 1.0

    def test_cutoff(self):
        g = Grid2D(48)
        m = dealias_mask(g)
        wn = g.wavenumbers
        assert np.all(m == (np.maximum(np.abs(wn.mx), np.abs(wn.my)) <= 16))

    @settings(max_examples=20, deadline=None)
    @given(arrays(np.float64, (16, 16), elements=st.floats(-1e3, 1e3)))
    def test_projection(self, data):
        F = transform_forward(RealField(Grid2D(16), data))
        once = dealias(F)
        twice = dealias(once)
        assert np.array_equal(once.coeffs, twice.coeffs)
        assert parseval_energy(once) <= parseval_energy(F) * (1 + 1e-12) + 1e-300


class TestFieldFiles:
    def test_bit_exact_round_trip(self, tmp_path, rng):
        g = Grid2D(64, 3.0)
        f = RealField(g, rng.standard_normal((64, 64)), {"t": 3.5, "k_forcing": 15, "regime": "turbulent"})
        back = field_io_roundtrip(f, tmp_path / "a.flow")
        assert back.data.tobytes() == f.data.tobytes()
        assert back.grid == g
        assert back.metadata == {"t": 3.5, "k_forcing": 15, "regime": "turbulent"}

    def test_header_is_ascii_magic_then_json(self, tmp_path):
        save_field(RealField(Grid2D(8), np.ones((8, 8))), tmp_path / "b.flow")
        raw = (tmp_path / "b.flow").read_bytes()
        assert raw.startswith(b"FLOW1\n")
        assert len(raw.split(b"\n", 2)[2]) == 8 * 64

    def test_truncated_rejected(self, tmp_path):
        p = tmp_path / "c.flow"
        save_field(RealField(Grid2D(8), np.ones((8, 8))), p)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(FieldError, match="payload"):
            load_field(p)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "d.flow"
        p.write_bytes(b"FLOW2\n{}\n")
        with pytest.raises(FieldError, match="magic"):
            load_field(p)
