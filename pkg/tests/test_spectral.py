"""Transform, derivative, and product tests for the spectral core."""

import math

import numpy as np
import pytest

from lowmach.lattice import (
    GridField,
    LatticeSpec,
    SpectralField,
    convolution_product,
    dealiased_product,
    forward_transform,
    inverse_transform,
    spectral_derivative,
    zero_mean_split,
)


def random_field(lattice, rng, components=1, reality=True):
    """Reality-symmetric random band-limited field."""
    shape = (components,) + lattice.resolution
    values = rng.standard_normal(shape)
    field = forward_transform(GridField(lattice, values))
    if not reality:
        field = field.copy_with_reality(False)
    return field


@pytest.fixture
def lat16():
    return LatticeSpec.square(2, 16)


def test_constant_field_transform():
    lat = LatticeSpec.square(2, 8)
    c = 2.5
    grid = GridField(lat, np.full(lat.resolution, c))
    spec = forward_transform(grid)
    assert spec.mean_coefficient()[0] == pytest.approx(c * math.sqrt(lat.volume))
    other = spec.coeffs.copy()
    other[(0,) + (0,) * lat.d] = 0.0
    assert np.max(np.abs(other)) < 1e-13


def test_cosine_coefficients():
    lat = LatticeSpec.square(2, 16)
    x = lat.grid_points()[0]
    spec = forward_transform(GridField(lat, np.cos(x)))
    expected = 0.5 * math.sqrt(lat.volume)
    assert spec.mode((1, 0))[0] == pytest.approx(expected, rel=1e-13)
    assert spec.mode((-1, 0))[0] == pytest.approx(expected, rel=1e-13)


def test_round_trip_and_parseval(lat16):
    rng = np.random.default_rng(7)
    for _ in range(20):
        field = random_field(lat16, rng)
        grid = inverse_transform(field)
        back = forward_transform(grid)
        scale = np.max(np.abs(field.coeffs))
        assert np.max(np.abs(back.coeffs - field.coeffs)) <= 1e-12 * scale
        integral = np.sum(np.abs(grid.values) ** 2) * (
            lat16.volume / np.prod(lat16.resolution)
        )
        coeff_sum = float(np.sum(field.mode_power()))
        assert integral == pytest.approx(coeff_sum, rel=1e-12)


def test_single_mode_inverse():
    lat = LatticeSpec.square(2, 8)
    amp = math.sqrt(lat.volume)
    field = SpectralField.from_modes(lat, {(1, 0): amp})
    grid = inverse_transform(field)
    x = lat.grid_points()[0]
    assert np.allclose(grid.values[0], np.exp(1j * x), atol=1e-12)


def test_zero_coefficients_inverse(lat16):
    grid = inverse_transform(SpectralField.zeros(lat16))
    assert np.all(grid.values == 0)


def test_reality_symmetric_inverse_is_real(lat16):
    rng = np.random.default_rng(3)
    field = random_field(lat16, rng)
    complex_view = inverse_transform(field.copy_with_reality(False))
    assert np.max(np.abs(complex_view.values.imag)) <= 1e-12


def test_laplacian_single_mode():
    lat = LatticeSpec.square(2, 8)
    field = SpectralField.from_modes(lat, {(1, 0): 1.0})
    lap = spectral_derivative(field, "laplacian")
    assert lap.mode((1, 0))[0] == pytest.approx(-1.0)


def test_div_grad_is_laplacian(lat16):
    rng = np.random.default_rng(11)
    field = random_field(lat16, rng)
    lap1 = spectral_derivative(spectral_derivative(field, "grad"), "div")
    lap2 = spectral_derivative(field, "laplacian")
    scale = max(1.0, np.max(np.abs(lap2.coeffs)))
    assert np.max(np.abs(lap1.coeffs - lap2.coeffs)) <= 1e-12 * scale


def test_grad_of_constant_is_zero():
    lat = LatticeSpec.square(2, 8)
    field = SpectralField.from_modes(lat, {(0, 0): 3.0})
    grad = spectral_derivative(field, "grad")
    assert np.max(np.abs(grad.coeffs)) == 0.0


def test_derivative_kind_errors(lat16):
    scalar = SpectralField.zeros(lat16, components=1)
    vector = SpectralField.zeros(lat16, components=2)
    with pytest.raises(ValueError):
        spectral_derivative(vector, "grad")
    with pytest.raises(ValueError):
        spectral_derivative(scalar, "div")


def test_product_single_modes():
    lat = LatticeSpec.square(2, 8)
    f = SpectralField.from_modes(lat, {(1, 0): 1.0})
    prod = dealiased_product(f, f)
    oracle = convolution_product(f, f)
    assert prod.mode((2, 0))[0] == pytest.approx(oracle.mode((2, 0))[0], rel=1e-12)
    # only the (2, 0) mode survives
    masked = prod.coeffs.copy()
    masked[0, 2, 0] = 0.0
    assert np.max(np.abs(masked)) < 1e-13


def test_product_with_constant(lat16):
    rng = np.random.default_rng(5)
    g = random_field(lat16, rng)
    c = SpectralField.from_modes(lat16, {(0, 0): 2.0 * math.sqrt(lat16.volume)})
    prod = dealiased_product(c, g)
    assert np.max(np.abs(prod.coeffs - 2.0 * g.coeffs)) <= 1e-12 * np.max(
        np.abs(g.coeffs)
    )


def test_product_matches_convolution_oracle(lat16):
    rng = np.random.default_rng(17)
    for _ in range(3):
        f = random_field(lat16, rng)
        g = random_field(lat16, rng)
        fast = dealiased_product(f, g)
        slow = convolution_product(f, g)
        scale = max(1.0, np.max(np.abs(slow.coeffs)))
        assert np.max(np.abs(fast.coeffs - slow.coeffs)) <= 1e-12 * scale


def test_product_lattice_mismatch():
    a = SpectralField.zeros(LatticeSpec.square(2, 8))
    b = SpectralField.zeros(LatticeSpec.square(2, 16))
    with pytest.raises(ValueError):
        dealiased_product(a, b)


def test_reality_preserved_by_products_and_derivatives(lat16):
    rng = np.random.default_rng(23)
    f = random_field(lat16, rng)
    g = random_field(lat16, rng)
    prod = dealiased_product(f, g)
    grad = spectral_derivative(f, "grad")
    assert prod.is_reality_symmetric(1e-12)
    assert grad.is_reality_symmetric(1e-12)


def test_zero_mean_split():
    lat = LatticeSpec.square(2, 8)
    x = lat.grid_points()[0]
    g = forward_transform(GridField(lat, 1.0 + np.cos(x)))
    mean, rest = zero_mean_split(g)
    assert rest.mean_coefficient()[0] == 0.0
    total = mean + rest
    assert np.max(np.abs(total.coeffs - g.coeffs)) == 0.0
    # mean part is the constant 1
    back = inverse_transform(mean)
    assert np.allclose(back.values, 1.0, atol=1e-13)


def test_zero_mean_split_trivial_cases(lat16):
    const = SpectralField.from_modes(lat16, {(0, 0): 4.0})
    mean, rest = zero_mean_split(const)
    assert np.max(np.abs(rest.coeffs)) == 0.0
    assert np.max(np.abs(mean.coeffs - const.coeffs)) == 0.0

    wave = SpectralField.from_modes(lat16, {(1, 1): 1.0})
    mean2, rest2 = zero_mean_split(wave)
    assert np.max(np.abs(mean2.coeffs)) == 0.0
    assert np.max(np.abs(rest2.coeffs - wave.coeffs)) == 0.0


def test_lattice_validation():
    with pytest.raises(ValueError):
        LatticeSpec.square(2, 7)  # odd resolution
    with pytest.raises(ValueError):
        LatticeSpec(periods=(1,), resolution=(8, 8))
    with pytest.raises(ValueError):
        LatticeSpec.square(2, 8, dealias_fraction="3/4")


def test_cutoff_respects_fraction_bound():
    for n in (4, 8, 12, 16, 48, 64):
        lat = LatticeSpec.square(1, n)
        (cut,) = lat.cutoffs
        assert cut <= (2 / 3) * n / 2
        assert 3 * cut < n  # alias-free quadratic products


def test_anisotropic_wavevectors():
    lat = LatticeSpec(periods=(2, 1), resolution=(16, 8))
    kx = lat.wavevectors()[0]
    assert kx[1, 0] == pytest.approx(0.5)
    assert lat.norm_scale() == 4
    # D*|k|^2 for mode (1, 1): 4*(1/4 + 1) = 5
    assert lat.scaled_norms()[1, 1] == 5


def test_sign_grid():
    lat = LatticeSpec.square(2, 8)
    sg = lat.sign_grid()
    assert sg[0, 3] == 1  # k = (0, 3)
    assert sg[-1, 5] == -1  # k = (-1, 5) -> wrapped index
    n1, n2 = lat.index_grids()
    nonzero = ((n1 != 0) | (n2 != 0)) & lat.dealias_mask()
    # sg(-k) = -sg(k) on retained modes (Nyquist rows are their own negation)
    flipped = np.roll(np.flip(np.flip(sg, 0), 1), (1, 1), axis=(0, 1))
    assert np.all(sg[nonzero] == -flipped[nonzero])
    assert sg[0, 0] == 0
