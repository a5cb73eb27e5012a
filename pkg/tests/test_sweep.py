import numpy as np
import pytest

from blochdecay import (
    BandSurface,
    PlaneWaveBasis,
    FlatBandReport,
    band_derivatives,
    detect_flat_bands,
    example_density,
    make_grid,
    sweep_bands,
)
from blochdecay.assembly import assemble_t
from blochdecay.density import TWO_PI, shifted_lattice_factor
from blochdecay.graded import gram_eigh
from blochdecay.errors import CrossingContamination
from blochdecay.spectral import spectrum_at
from blochdecay.sweep import finite_differences, flat_band_stability, match_bands


def _synthetic(L, values):
    g = make_grid(L)
    P = len(g)
    vals = np.asarray(values, dtype=float).reshape(P, -1)
    D = vals.shape[1]
    return BandSurface(grid=g, N=0, bands=vals, match_quality=np.ones((P, D)),
                       order=np.tile(np.arange(D), (P, 1)), lambda_min_B=np.ones(P),
                       kappa=np.ones(P))


def test_grid_l2():
    g = make_grid(2)
    assert len(g) == 8
    assert set(np.round(g.points.ravel(), 12)) == {round(np.pi / 2, 12), round(3 * np.pi / 2, 12)}


@pytest.mark.parametrize("L", [2, 4, 8])
def test_grid_facts(L):
    g = make_grid(L)
    assert g.weights.sum() == pytest.approx((2 * np.pi) ** 3)
    assert (2 * np.pi) ** 3 == pytest.approx(248.05, abs=0.01)
    assert g.min_dist_to_dual_lattice() == pytest.approx(np.sqrt(3) * np.pi / L, rel=1e-12)
    refl = g.points[g.reflection]
    assert np.allclose(refl, TWO_PI - g.points, atol=1e-12)
    assert sorted(g.reflection) == list(range(len(g)))


def test_match_bands_is_permutation(rng):
    Q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    perm = rng.permutation(6)
    p, q = match_bands(Q, Q[:, perm])
    assert np.array_equal(perm[p], np.arange(6))
    assert np.allclose(q, 1.0)


@pytest.fixture(scope="module")
def surface_l4_n2():
    d = example_density()
    surf, spectra = sweep_bands(d, make_grid(4), 2, keep_spectra=True)
    return d, surf, spectra


def test_sweep_l4_completes(surface_l4_n2):
    _, surf, spectra = surface_l4_n2
    assert not surf.failures and surf.coverage == 1.0
    assert np.all(np.min(np.abs(surf.bands), axis=1) > 0)
    for j, sd in spectra.items():
        # matching only permutes the eigenvalues
        assert np.array_equal(np.sort(surf.bands[j]), np.sort(sd.omegas))
        assert np.array_equal(surf.bands[j], sd.omegas[surf.order[j]])


def test_sweep_refinement_consistency(surface_l4_n2):
    d, surf, _ = surface_l4_n2
    b = PlaneWaveBasis(2)
    for j in (0, 21, 63):
        sd = spectrum_at(d, surf.grid.points[j], b, with_kappa=False)
        a, c = np.sort(surf.bands[j]), np.sort(sd.omegas)
        assert np.max(np.abs(a - c)) <= 1e-8 * max(1.0, np.max(np.abs(c)))


def test_sweep_rows_shape(surface_l4_n2):
    _, surf, _ = surface_l4_n2
    rows = list(surf.rows())
    assert len(rows) == len(surf.grid) * surf.D
    assert rows[0][3] == 0 and len(rows[0]) == 6


def test_decoupled_sweep_matches_phonons():
    d = example_density()
    g = make_grid(4)
    surf = sweep_bands(d, g, 1, coupling=0.0)
    for j in range(len(g)):
        T1 = assemble_t(d, g.points[j])
        # T1 eigenvalues span many decades; take them from the lattice-sum factor
        ev = gram_eigh(shifted_lattice_factor(d, g.points[j], sign=-1))[0]
        want = np.sqrt(ev / d.M_ion)
        w = np.sort(np.abs(surf.bands[j]))[:6]
        assert np.allclose(w[0::2], want, rtol=1e-8, atol=0)
        assert np.allclose(w[1::2], want, rtol=1e-8, atol=0)
        assert np.allclose(ev.sum(), np.trace(T1).real, rtol=1e-12)


def test_flat_synthetic_exact_and_jittered(rng):
    L = 4
    P = L ** 3
    vals = rng.normal(size=(P, 5)) * 3
    vals[:, 3] = 5.0
    rep = detect_flat_bands(_synthetic(L, vals))
    assert list(rep.band_indices) == [3] and rep.max_deviation[0] == 0
    assert rep.flat_values[0] == 5.0
    vals[:, 3] += 1e-9 * rng.normal(size=P)
    rep = detect_flat_bands(_synthetic(L, vals), flat_tol=1e-6)
    assert list(rep.band_indices) == [3]
    assert rep.max_deviation[0] < 1e-6 * 5.0


def test_flat_report_sorted_by_magnitude():
    L = 2
    vals = np.tile([7.0, -2.0, 1.0], (8, 1))
    vals[:, 2] += np.arange(8)  # dispersive
    rep = detect_flat_bands(_synthetic(L, vals))
    assert list(rep.flat_values) == [-2.0, 7.0]
    assert list(rep.band_indices) == [1, 0]


def test_flat_requires_coverage():
    vals = np.ones((8, 2))
    vals[:2] = np.nan
    with pytest.raises(ValueError):
        detect_flat_bands(_synthetic(2, vals))


def test_no_flat_band_decoupled():
    d = example_density()
    surf = sweep_bands(d, make_grid(4), 1, coupling=0.0)
    assert len(detect_flat_bands(surf, 1e-6)) == 0


def test_flat_band_stability():
    a = FlatBandReport(np.array([5.0, 9.0]), np.array([1, 2]), np.zeros(2), 1e-6)
    b = FlatBandReport(np.array([5.0 + 2e-5]), np.array([1]), np.zeros(1), 1e-6)
    assert list(flat_band_stability(a, b)) == [True, False]


def test_derivatives_flat_band():
    vals = np.full((64, 1), 2.0)
    der = band_derivatives(_synthetic(4, vals), 0)
    assert np.all(der.gradient == 0)
    assert der.degenerate_fraction == 1.0


def test_derivatives_cos_band():
    L = 16
    g = make_grid(L)
    vals = np.cos(g.points[:, 0])[:, None]
    der = band_derivatives(_synthetic(L, vals), 0, grad_tol=0.25, hess_tol=1e-4)
    h = g.h
    # central differences of cos on the grid: -sin(theta) sin(h) / h
    want = -np.sin(g.points[:, 0]) * np.sin(h) / h
    assert np.allclose(der.gradient.reshape(-1, 3)[:, 0], want, atol=1e-12)
    assert np.allclose(der.gradient.reshape(-1, 3)[:, 1:], 0)
    assert np.allclose(np.linalg.det(der.hessian), 0)
    # stationary sheets: theta1 closest to 0 and pi, i.e. 4 of the 16 planes
    expected = np.mean(np.abs(want) < 0.25)
    assert der.degenerate_fraction == pytest.approx(expected)
    assert expected == pytest.approx(4 / 16)


def test_finite_differences_quadratic():
    L = 8
    g = make_grid(L)
    x = g.points.reshape(L, L, L, 3)
    f = np.sin(x[..., 0]) * np.sin(x[..., 1])
    grad, H = finite_differences(f, g.h)
    s = np.sin(g.h) / g.h
    assert np.allclose(grad[..., 0], np.cos(x[..., 0]) * np.sin(x[..., 1]) * s, atol=1e-12)
    assert np.allclose(H[..., 0, 1], np.cos(x[..., 0]) * np.cos(x[..., 1]) * s * s, atol=1e-12)


def test_crossing_contamination():
    vals = np.cos(make_grid(4).points[:, :1])
    surf = _synthetic(4, vals)
    surf.match_quality[5, 0] = 0.1
    der = band_derivatives(surf, 0)
    assert der.contaminated.reshape(-1)[5]
    assert not der.contaminated.all()
    with pytest.raises(CrossingContamination):
        band_derivatives(surf, 0, strict=True)
