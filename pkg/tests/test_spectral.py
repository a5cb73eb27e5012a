import mpmath as mp
import numpy as np
import pytest
import scipy.linalg as sla

from blochdecay import PlaneWaveBasis, assemble, example_density, make_grid
from blochdecay.assembly import assemble_t, symplectic_j
from blochdecay.density import TWO_PI, centered, lattice_vectors
from blochdecay.errors import EnergyNotPositive, PSDClamped, RangeTooSmall
from blochdecay.spectral import (
    SpectralData,
    build_k,
    eig_k,
    growth_fit,
    kappa,
    solve_spectrum,
    spectrum_at,
    sqrt_b,
)

PI3 = np.array([np.pi] * 3)


def _random_spd(rng, n, cond=1e3):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    return (Q * np.geomspace(1.0, cond, n)) @ Q.conj().T


def test_sqrt_toy():
    lam, lmin = sqrt_b(np.diag([4.0, 9.0]).astype(complex))
    assert np.allclose(lam, np.diag([2.0, 3.0]), atol=1e-15)
    assert lmin == pytest.approx(4.0)


def test_sqrt_of_b_at_pi(dens, basis2):
    ops = assemble(dens, PI3, basis2)
    lam, lmin = sqrt_b(ops.Bmat, ops.head, head_factor=ops.head_factor)
    Bm = ops.Bmat
    assert np.max(np.abs(lam @ lam - Bm)) <= 1e-9 * np.max(np.abs(Bm))
    assert lmin > 0


def test_sqrt_rejects_and_clamps():
    with pytest.raises(EnergyNotPositive):
        sqrt_b(np.diag([1.0, -0.5]).astype(complex))
    with pytest.warns(PSDClamped):
        lam, lmin = sqrt_b(np.diag([1.0, -1e-12]).astype(complex))
    assert lmin == pytest.approx(-1e-12) and lam[1, 1] == 0


def test_kappa_gram_and_scaling(basis1, rng):
    W = basis1.sobolev_weights(1.0)
    assert kappa(np.diag(W).astype(complex), weights=W) == pytest.approx(1.0, rel=1e-12)
    Bm = _random_spd(rng, basis1.D)
    k1 = kappa(Bm, weights=W)
    assert kappa(3.5 * Bm, weights=W) == pytest.approx(3.5 * k1, rel=1e-10)


def test_inverse_sqrt_bounded_by_kappa(basis1, rng):
    # ||Lambda^-1 u||_{X^1} <= kappa^(-1/2) for unit u, with a well-conditioned toy B
    W = basis1.sobolev_weights(1.0)
    Bm = _random_spd(rng, basis1.D, cond=50.0) + np.diag(W)
    k = kappa(Bm, weights=W)
    lam, _ = sqrt_b(Bm)
    inv = np.linalg.inv(lam)
    for i in range(basis1.D):
        x = inv[:, i]
        assert np.sqrt(np.sum(W * np.abs(x) ** 2)) <= k ** -0.5 * (1 + 1e-10)


def test_kappa_positive_at_pi(dens, basis2):
    sd = spectrum_at(dens, PI3, basis2)
    assert sd.lambda_min_B > 0 and sd.kappa > 0


def test_build_k_hermitian(dens, basis2):
    ops = assemble(dens, np.array([1.0, 2.0, 0.5]), basis2)
    lam, _ = sqrt_b(ops.Bmat, ops.head, head_factor=ops.head_factor)
    K = build_k(lam, ops.J)
    assert np.max(np.abs(K - K.conj().T)) <= 1e-12 * np.max(np.abs(K))
    assert np.allclose(K, build_k(lam, basis2), rtol=0, atol=1e-12 * np.max(np.abs(K)))


def test_eig_toy():
    sd = eig_k(np.array([[0, 2.5], [2.5, 0]], dtype=complex))
    assert np.allclose(sd.omegas, [-2.5, 2.5])


def test_ordering_by_magnitude_then_sign(dens, basis1):
    sd = spectrum_at(dens, np.array([1.0, 2.0, 0.5]), basis1)
    w = sd.omegas
    assert np.all(np.diff(np.abs(w)) >= 0)
    ties = np.abs(w[1:]) == np.abs(w[:-1])
    assert np.all(w[1:][ties] >= w[:-1][ties])


def _phonon_oracle(th, M_ion=1.0, dps=40):
    """sqrt(eig T1(theta) / M) in high precision (T1 eigenvalues span ~20 decades)."""
    mp.mp.dps = dps

    def prof(x):
        return mp.sin(x / 2) / x * mp.exp(-x * x) if x != 0 else mp.mpf(1) / 2

    T = mp.matrix(3, 3)
    thc = [mp.mpf(float(x)) for x in centered(th)]
    for m in lattice_vectors(8):
        xi = [2 * mp.pi * int(m[j]) - thc[j] for j in range(3)]
        n2 = sum(x * x for x in xi)
        w = (prof(xi[0]) * prof(xi[1]) * prof(xi[2])) ** 2 / n2
        for a in range(3):
            for c in range(3):
                T[a, c] += w * xi[a] * xi[c]
    return np.sort([float(mp.sqrt(x / M_ion)) for x in mp.eigsy(T)[0]])


@pytest.mark.parametrize("M_ion", [1.0, 2.0])
def test_decoupled_phonons_closed_form(basis1, M_ion):
    d = example_density(M_ion=M_ion)
    th = np.array([np.pi / 4, 3 * np.pi / 4, 5 * np.pi / 4])
    sd = spectrum_at(d, th, basis1, coupling=0.0)
    b = basis1
    qp = np.sum(np.abs(sd.vectors[b.q]) ** 2 + np.abs(sd.vectors[b.p]) ** 2, axis=0) > 0.5
    om = sd.omegas[qp]
    orc = _phonon_oracle(th, M_ion)
    assert np.allclose(np.sort(om[om > 0]), orc, rtol=1e-8, atol=0)
    assert np.allclose(np.sort(-om[om < 0]), orc, rtol=1e-8, atol=0)
    # psi sector: +-|theta - 2 pi m|^2 / 2
    ops = assemble(d, th, b, coupling=0.0)
    psi = np.sort(np.abs(sd.omegas[~qp]))
    assert np.allclose(psi, np.sort(np.repeat(ops.h0, 2)), rtol=1e-12)


def test_heavy_ions_freeze_phonons(basis1):
    th = np.array([1.0, 2.0, 0.5])
    light = spectrum_at(example_density(M_ion=1.0), th, basis1, coupling=0.0)
    heavy = spectrum_at(example_density(M_ion=1e8), th, basis1, coupling=0.0)
    assert np.allclose(np.abs(heavy.omegas[:6]), np.abs(light.omegas[:6]) * 1e-4, rtol=1e-8)


def test_similarity_with_a(dens, basis2, rng):
    g = make_grid(8)
    for j in rng.choice(len(g), 3, replace=False):
        ops = assemble(dens, g.points[j], basis2)
        sd = solve_spectrum(ops, with_kappa=False)
        ev = sla.eigvals(ops.Amat)
        target = -1j * sd.omegas
        d1 = np.max(np.min(np.abs(ev[:, None] - target[None]), axis=1))
        d2 = np.max(np.min(np.abs(target[:, None] - ev[None]), axis=1))
        assert max(d1, d2) < 1e-7 * np.max(np.abs(sd.omegas))


def test_small_frequencies_match_high_precision(dens, basis1):
    """The smallest |omega| lie ~1e-12 below the largest; check them relative to themselves."""
    th = np.array([np.pi / 4, 3 * np.pi / 4, 3 * np.pi / 4])
    mp.mp.dps = 40

    def prof(x):
        return mp.sin(x / 2) / x * mp.exp(-x * x) if x != 0 else mp.mpf(1) / 2

    def sig(xi):
        return prof(xi[0]) * prof(xi[1]) * prof(xi[2])

    thm = [mp.mpf(float(x)) for x in th]
    B, D = basis1.B, basis1.D
    e, Z = mp.mpf(1), mp.mpf(dens.Z)
    Bm = mp.matrix(D, D)
    for m in lattice_vectors(8):
        xi = [2 * mp.pi * int(m[j]) - thm[j] for j in range(3)]
        w = sig(xi) ** 2 / sum(x * x for x in xi)
        for a in range(3):
            for c in range(3):
                Bm[2 * B + a, 2 * B + c] += w * xi[a] * xi[c]
    for i, m in enumerate(basis1.modes):
        k = [thm[j] - 2 * mp.pi * int(m[j]) for j in range(3)]
        k2 = sum(x * x for x in k)
        Bm[i, i] = k2 + 4 * e ** 2 * Z / k2
        Bm[B + i, B + i] = k2
        for j in range(3):
            s = 2 * e * mp.sqrt(Z) * (-1j * k[j]) * sig(k) / k2
            Bm[i, 2 * B + j] = s
            Bm[2 * B + j, i] = mp.conj(s)
    for a in range(3):
        Bm[2 * B + 3 + a, 2 * B + 3 + a] = 1
    J = mp.matrix(symplectic_j(basis1).tolist())
    ev = mp.eig(J * Bm, left=False, right=False)
    orc = np.sort([float(abs(mp.im(x))) for x in ev])
    sd = spectrum_at(dens, th, basis1)
    got = np.sort(np.abs(sd.omegas))
    assert orc[0] < 1e-10   # genuinely graded
    assert np.allclose(got, orc, rtol=1e-9, atol=0)


def test_eigenpairs_on_grid(spectra_l4_n1):
    for sd in spectra_l4_n1.values():
        V = sd.vectors
        assert np.max(np.abs(V.conj().T @ V - np.eye(sd.D))) < 1e-10
        assert np.min(np.abs(sd.omegas)) > 0
        assert sd.residual <= 1e-9


def test_reflection_flips_spectrum(dens, basis1):
    g = make_grid(4)
    for j in (1, 22, 45):
        a = spectrum_at(dens, g.points[j], basis1, with_kappa=False)
        c = spectrum_at(dens, g.points[g.reflection[j]], basis1, with_kappa=False)
        x, y = np.sort(a.omegas), np.sort(-c.omegas)
        assert np.allclose(x, y, rtol=1e-10, atol=0)


def test_growth_law_n3(dens):
    sd = spectrum_at(dens, np.array([1.0, 2.0, 0.5]), PlaneWaveBasis(3), with_kappa=False)
    fit = growth_fit(sd, (20, 150))
    assert 0.55 <= fit.slope <= 0.80
    assert fit.eps_Q > 0 and not fit.flagged


def test_growth_matches_weyl_counting_oracle(dens):
    b = PlaneWaveBasis(3)
    th = np.array([1.0, 2.0, 0.5])
    sd = spectrum_at(dens, th, b, coupling=0.0, with_kappa=False)
    k = th - TWO_PI * b.modes
    h0 = 0.5 * np.sum(k * k, axis=1)
    mags = np.sort(np.repeat(h0, 2))[:150 - 6]
    # the six phonon levels come first, then the psi levels
    kk = np.arange(20, 151)
    want = np.polyfit(np.log(kk), np.log(mags[kk - 7]), 1)[0]
    fit = growth_fit(sd, (20, 150))
    assert fit.slope == pytest.approx(want, rel=1e-10)
    assert 0.55 <= fit.slope <= 0.80


def test_growth_constant_flagged_and_range_checks():
    sd = SpectralData(np.zeros(3), np.full(400, 3.0), np.eye(400))
    fit = growth_fit(sd, (20, 150))
    assert fit.flagged and fit.slope == 0.0
    with pytest.raises(RangeTooSmall):
        growth_fit(sd, (20, 25))
    with pytest.raises(ValueError):
        growth_fit(sd, (20, 250))


def test_propagator_unitary(dens, basis2, rng):
    sd = spectrum_at(dens, np.array([1.0, 2.0, 0.5]), basis2)
    z = rng.normal(size=sd.D) + 1j * rng.normal(size=sd.D)
    for t in (1.0, 10.0, 100.0):
        assert np.linalg.norm(sd.propagator(t) @ z) == pytest.approx(np.linalg.norm(z),
                                                                      rel=1e-10)


def test_energy_identity(dens, basis2, rng):
    ops = assemble(dens, np.array([1.0, 2.0, 0.5]), basis2)
    sd = solve_spectrum(ops, with_kappa=False)
    Bm = ops.Bmat
    for _ in range(100):
        y = rng.normal(size=sd.D) + 1j * rng.normal(size=sd.D)
        lhs = np.linalg.norm(sd.apply_sqrt_b(y)) ** 2
        rhs = np.vdot(y, Bm @ y).real
        assert lhs == pytest.approx(rhs, rel=1e-10)
        assert sd.energy(y) == pytest.approx(rhs, rel=1e-10)


def test_evolve_y_matches_conjugated_propagator(dens, basis1, rng):
    sd = spectrum_at(dens, np.array([1.0, 2.0, 0.5]), basis1)
    y = rng.normal(size=sd.D) + 1j * rng.normal(size=sd.D)
    for t in (0.0, 0.3, 7.0):
        direct = sla.expm(symplectic_j(basis1) @ assemble(dens, sd.theta, basis1).Bmat * t) @ y
        got = sd.evolve_y(y, t)
        assert np.allclose(got, direct, rtol=0, atol=1e-9 * np.linalg.norm(y))
