import warnings

import numpy as np
import pytest
from scipy.special import iv

from blochdecay import (
    BlochField,
    CellField,
    FlatBandReport,
    PlaneWaveBasis,
    WeightedNormSpec,
    bloch_forward,
    bloch_inverse,
    decay_curve,
    evolve,
    make_grid,
    split_components,
    weighted_norm,
)
from blochdecay.dynamics import (
    _samples_to_modes,
    energy,
    horizon,
    monotone_deviation,
    to_gauge,
    to_samples,
    window,
)
from blochdecay.errors import AliasingGuard, BoxTooSmall, GaugeMismatch, HorizonExceeded
from blochdecay.spectral import eig_k


def _random_cell(rng, R, basis, support=1, real=False):
    c = CellField.zeros(R, basis)
    s = 2 * support + 1
    shape = (s, s, s, basis.D)
    v = rng.normal(size=shape)
    if not real:
        v = v + 1j * rng.normal(size=shape)
    lo, hi = R - support, R + support + 1
    c.values[lo:hi, lo:hi, lo:hi] = v
    return c


def _random_field(rng, grid, basis, gauge="Z"):
    P, D = len(grid), basis.D
    return BlochField(grid, basis, rng.normal(size=(P, D)) + 1j * rng.normal(size=(P, D)),
                      gauge)


# -- transform ---------------------------------------------------------------------

def test_delta_cell_is_flat_in_theta(basis1, rng):
    g = make_grid(4)
    V = rng.normal(size=basis1.D) + 1j * rng.normal(size=basis1.D)
    c = CellField.from_cells(1, basis1, {(0, 0, 0): V})
    f = bloch_forward(c, g)
    for j in range(len(g)):
        assert np.allclose(to_samples(g.points[j], basis1, f.values[j]), V, atol=1e-13)
        assert np.linalg.norm(f.values[j]) == pytest.approx(np.linalg.norm(V), rel=1e-13)


def test_roundtrip_and_parseval(basis1, rng):
    g = make_grid(8)
    c = _random_cell(rng, 2, basis1)
    f = bloch_forward(c, g)
    back = bloch_inverse(f, 2)
    assert np.max(np.abs(back.values - c.values)) < 1e-10
    # sum_n ||Y(n)||^2 = |Pi*|^-1 sum_j w_j ||Y~_j||^2
    lhs = np.sum(np.abs(c.values) ** 2)
    rhs = np.sum(g.weights * np.sum(np.abs(f.values) ** 2, axis=1)) / (2 * np.pi) ** 3
    assert lhs == pytest.approx(rhs, rel=1e-12)
    assert f.norm() == pytest.approx(c.norm(), rel=1e-12)


def test_translation_covariance(basis1, rng):
    g = make_grid(8)
    c = _random_cell(rng, 2, basis1)
    shifted = CellField.zeros(2, basis1)
    shifted.values[1:] = c.values[:-1]          # n -> n + e1
    assert not np.any(c.values[-1])
    f, fs = bloch_forward(c, g), bloch_forward(shifted, g, check_support=False)
    ph = np.exp(1j * g.points[:, 0])
    assert np.allclose(fs.values, ph[:, None] * f.values, atol=1e-12)


def test_box_and_aliasing_guards(basis1, rng):
    c = CellField.from_cells(1, basis1, {(1, 0, 0): np.ones(basis1.D)})
    with pytest.raises(BoxTooSmall):
        bloch_forward(c, make_grid(8))
    with pytest.raises(AliasingGuard):
        bloch_inverse(BlochField.zeros(make_grid(8), basis1), 3)


def test_constant_field_inverts_to_delta(basis1, rng):
    g = make_grid(8)
    V = rng.normal(size=basis1.D)
    vals = _samples_to_modes(g, basis1, np.tile(V, (len(g), 1)))
    c = bloch_inverse(BlochField(g, basis1, vals), 2)
    assert np.allclose(c[(0, 0, 0)], V, atol=1e-13)
    norms = c.cell_norms()
    norms[2, 2, 2] = 0
    assert np.max(norms) < 1e-13


def test_smooth_window_decays_super_polynomially(basis1, rng):
    # analytic window prod exp(cos(theta - pi) - 1): Fourier coefficients are Bessel I_k(1)
    g = make_grid(16)
    V = rng.normal(size=basis1.D)
    w = np.prod(np.exp(np.cos(g.points - np.pi) - 1), axis=1)
    c = bloch_inverse(BlochField(g, basis1, _samples_to_modes(g, basis1, w[:, None] * V)), 4)
    axis = np.array([np.linalg.norm(c[(k, 0, 0)]) for k in range(5)])
    assert np.allclose(axis / axis[0], iv(np.arange(5), 1.0) / iv(0, 1.0), rtol=1e-9)
    shells = np.max(np.abs(c.offsets), axis=-1)
    env = np.array([c.cell_norms()[shells >= k].max() for k in range(1, 5)])
    local_power = -np.log(env[1:] / env[:-1]) / np.log(np.arange(3, 6) / np.arange(2, 5))
    assert np.all(np.diff(local_power) > 0)


def test_weighted_norm_examples(basis1, rng):
    V = rng.normal(size=basis1.D)
    c = CellField.from_cells(3, basis1, {(0, 0, 0): V})
    for a in (-2.0, -4.0, 0.0):
        assert weighted_norm(c, WeightedNormSpec(a)) == pytest.approx(np.linalg.norm(V))
    c = _random_cell(rng, 3, basis1, support=2)
    assert weighted_norm(c, 0.0) == pytest.approx(c.norm())
    c = CellField.from_cells(3, basis1, {(3, 0, 0): V})
    assert weighted_norm(c, -2.0) == pytest.approx(np.linalg.norm(V) / 16)


# -- evolution ---------------------------------------------------------------------

def test_evolve_identity_and_unitarity(grid4, basis1, spectra_l4_n1, rng):
    f = _random_field(rng, grid4, basis1)
    assert np.allclose(evolve(f, spectra_l4_n1, 0.0).values, f.values, atol=1e-13)
    for t in (1.0, 10.0, 100.0):
        ft = evolve(f, spectra_l4_n1, t)
        per_point = np.linalg.norm(ft.values, axis=1) / np.linalg.norm(f.values, axis=1)
        assert np.allclose(per_point, 1.0, atol=1e-10)
        assert ft.norm2() == pytest.approx(f.norm2(), rel=1e-10)


def test_group_property(grid4, basis1, spectra_l4_n1, rng):
    f = _random_field(rng, grid4, basis1)
    t1, t2 = rng.uniform(0, 20, size=2)
    a = evolve(evolve(f, spectra_l4_n1, t1), spectra_l4_n1, t2)
    b = evolve(f, spectra_l4_n1, t1 + t2)
    assert np.max(np.abs(a.values - b.values)) < 1e-9
    y = to_gauge(f, spectra_l4_n1, "Y")
    a = evolve(evolve(y, spectra_l4_n1, t1, "Y"), spectra_l4_n1, t2, "Y")
    b = evolve(y, spectra_l4_n1, t1 + t2, "Y")
    assert np.max(np.abs(a.values - b.values)) <= 1e-9 * np.max(np.abs(b.values))


def test_gauges(grid4, basis1, spectra_l4_n1, rng):
    f = _random_field(rng, grid4, basis1)
    with pytest.raises(GaugeMismatch):
        evolve(f, spectra_l4_n1, 1.0, gauge="Y")
    with pytest.raises(GaugeMismatch):
        energy(f, spectra_l4_n1)
    y = _random_field(rng, grid4, basis1, "Y")
    # Y-gauge evolution is Lambda^-1 exp(-iKt) Lambda; compare on one point
    z = to_gauge(y, spectra_l4_n1, "Z")
    zt = evolve(z, spectra_l4_n1, 2.0)
    yt = evolve(y, spectra_l4_n1, 2.0, "Y")
    back = to_gauge(yt, spectra_l4_n1, "Z")
    assert np.max(np.abs(back.values - zt.values)) <= 1e-9 * np.max(np.abs(zt.values))


def test_energy_conserved_in_y_gauge(grid4, basis1, spectra_l4_n1, rng):
    y = _random_field(rng, grid4, basis1, "Y")
    E0 = energy(y, spectra_l4_n1)
    for t in (1.0, 10.0, 100.0):
        assert energy(evolve(y, spectra_l4_n1, t, "Y"), spectra_l4_n1) == pytest.approx(
            E0, rel=1e-9)


def test_real_initial_data_stays_real(grid4, basis1, spectra_l4_n1, rng):
    c = _random_cell(rng, 1, basis1, support=0, real=True)
    f = bloch_forward(c, grid4, check_support=False)
    for t in (0.0, 1.0, 10.0, 100.0):
        back = bloch_inverse(evolve(f, spectra_l4_n1, t), 1)
        # psi parts as physical samples, q and p as is
        assert np.max(np.abs(back.values.imag)) < 1e-8


def test_missing_spectra_rejected(grid4, basis1, spectra_l4_n1, rng):
    f = _random_field(rng, grid4, basis1)
    partial = {k: v for k, v in spectra_l4_n1.items() if k != 5}
    with pytest.raises(ValueError):
        evolve(f, partial, 1.0)


# -- flat-band split (synthetic spectra with a flat level at 5) ----------------------

@pytest.fixture(scope="module")
def flat_toy():
    rng = np.random.default_rng(7)
    g = make_grid(2)
    b = PlaneWaveBasis(1)
    spectra = {}
    for j in range(len(g)):
        Q, _ = np.linalg.qr(rng.normal(size=(b.D, b.D)) + 1j * rng.normal(size=(b.D, b.D)))
        w = rng.uniform(-20, 20, size=b.D)
        w[3] = 5.0
        sd = eig_k((Q * w) @ Q.conj().T)
        sd.theta = g.points[j]
        spectra[j] = sd
    flat = FlatBandReport(np.array([5.0]), np.array([0]), np.array([0.0]), 1e-6)
    return g, b, spectra, flat


def test_split_without_flat_bands(grid4, basis1, spectra_l4_n1, rng):
    f = _random_field(rng, grid4, basis1)
    disc, cont = split_components(f, spectra_l4_n1, FlatBandReport.empty())
    assert not np.any(disc.values) and np.array_equal(cont.values, f.values)


def test_split_idempotent_and_exact(flat_toy, rng):
    g, b, spectra, flat = flat_toy
    f = _random_field(rng, g, b)
    disc, cont = split_components(f, spectra, flat)
    assert np.allclose((disc + cont).values, f.values, atol=1e-13)
    d2, c2 = split_components(disc, spectra, flat)
    assert np.allclose(d2.values, disc.values, atol=1e-12) and np.allclose(c2.values, 0,
                                                                           atol=1e-12)
    d3, c3 = split_components(cont, spectra, flat)
    assert np.allclose(d3.values, 0, atol=1e-12) and np.allclose(c3.values, cont.values,
                                                                 atol=1e-12)


def test_discrete_part_is_pure_phase(flat_toy, rng):
    g, b, spectra, flat = flat_toy
    f = _random_field(rng, g, b)
    disc, _ = split_components(f, spectra, flat)
    for t in (0.5, 3.0, 40.0):
        dt = evolve(disc, spectra, t)
        assert np.allclose(dt.values, np.exp(-5j * t) * disc.values, atol=1e-10)
        assert dt.norm() == pytest.approx(disc.norm(), rel=1e-10)


def test_decay_curve_flat_only(flat_toy, rng):
    g, b, spectra, flat = flat_toy
    disc, _ = split_components(_random_field(rng, g, b), spectra, flat)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        tab = decay_curve(disc, spectra, flat, [0.0, 1.0, 5.0], R=0)
    assert np.allclose(tab.column("continuous_weighted_norm"), 0, atol=1e-12)
    dn = tab.column("discrete_norm")
    assert np.allclose(dn, dn[0], rtol=1e-10)


# -- decay curve ---------------------------------------------------------------------

def test_decay_curve_linearity(grid4, basis1, spectra_l4_n1, rng):
    f = _random_field(rng, grid4, basis1)
    h = _random_field(rng, grid4, basis1)
    times = [0.0, 0.5, 2.0]
    a = decay_curve(f * (2 - 1j), spectra_l4_n1, None, times, R=1, speed=0.1)
    b = decay_curve(f, spectra_l4_n1, None, times, R=1, speed=0.1)
    for col in ("continuous_weighted_norm", "continuous_norm"):
        assert np.allclose(a.column(col), abs(2 - 1j) * b.column(col), rtol=1e-10)
    # additivity at the level of the reconstructed continuous cells
    for t in times:
        lhs = bloch_inverse(evolve(f + h, spectra_l4_n1, t), 1).values
        rhs = (bloch_inverse(evolve(f, spectra_l4_n1, t), 1).values
               + bloch_inverse(evolve(h, spectra_l4_n1, t), 1).values)
        assert np.max(np.abs(lhs - rhs)) <= 1e-10 * np.max(np.abs(lhs))


def test_decay_curve_columns_and_horizon(grid4, basis1, spectra_l4_n1, rng):
    f = _random_field(rng, grid4, basis1)
    with pytest.warns(HorizonExceeded):
        tab = decay_curve(f, spectra_l4_n1, None, [0.0, 1.0, 50.0], R=1, speed=2.0)
    assert tab.T_max == pytest.approx(horizon(4, 2.0)) == pytest.approx(0.5)
    assert list(tab.column("horizon_flag")) == [0, 1, 1]
    cn = tab.column("continuous_norm")
    assert np.allclose(cn, cn[0], rtol=1e-10)
    assert np.all(tab.column("discrete_norm") == 0)


def test_decay_curve_empty_times_and_bad_alpha(grid4, basis1, spectra_l4_n1, rng):
    f = _random_field(rng, grid4, basis1)
    tab = decay_curve(f, spectra_l4_n1, None, [], R=1, speed=1.0)
    assert tab.rows == []
    with pytest.raises(ValueError):
        decay_curve(f, spectra_l4_n1, None, [0.0], alpha=0.0, R=1)


def test_monotone_deviation():
    assert monotone_deviation([4.0, 3.0, 2.0, 1.0]) == 0.0
    assert monotone_deviation([4.0, 2.0, 3.0]) == pytest.approx(0.5 / 4)


def test_window_is_periodic_bump():
    g = make_grid(8)
    c = g.flat_index((0, 0, 0))
    w = window(g, c, 2.0)
    assert w[c] == 1.0 and np.all(w >= 0) and np.all(w <= 1)
    # wraps across the zone boundary
    assert w[g.flat_index((7, 0, 0))] == pytest.approx(w[g.flat_index((1, 0, 0))])
