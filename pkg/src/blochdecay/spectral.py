"""Square root of the energy operator, the selfadjoint generator
``K(theta) = Lambda iJ Lambda`` and its spectral resolution.

The energy operator ``B(theta)`` is an arrowhead matrix: outside the 3x3
ion-displacement block it is diagonal.  For smooth ion densities the ion
block is many orders of magnitude smaller than the electron diagonal (about
1e-23 against 1e3 for the standard example), far below what a plain dense
eigensolver resolves.  :func:`arrowhead_eigh` therefore splits off the ion
invariant subspace exactly by solving the associated Riccati equation, which
keeps the small eigenvalues accurate to working precision *relative to
themselves* (see :mod:`blochdecay.graded`).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .assembly import BlochOperatorSet, PlaneWaveBasis, assemble
from .density import DEFAULT_RADIUS, IonDensity
from .errors import EigFailed, EnergyNotPositive, PSDClamped, RangeTooSmall
from .graded import arrowhead_eigh, gram_eigh  # noqa: F401

TOL_PSD_REL = 1e-8


def _psd_eigh(bmat, head=None, tol_psd_rel=TOL_PSD_REL, head_factor=None):
    w, V = arrowhead_eigh(bmat, head, head_factor)
    scale = np.max(np.abs(w))
    lam_min = float(w[0])
    if lam_min < 0:
        if lam_min < -tol_psd_rel * scale:
            raise EnergyNotPositive(lam_min)
        warnings.warn(f"clamping lambda_min(B) = {lam_min:.2e} to 0", PSDClamped,
                      stacklevel=3)
        w = np.maximum(w, 0.0)
    return w, V, lam_min


def sqrt_b(bmat, head=None, tol_psd_rel=TOL_PSD_REL, head_factor=None):
    """``Lambda = B^(1/2)`` and ``lambda_min(B)``.

    Pass ``head`` (the ion block, e.g. ``basis.q``) and optionally the factor of
    its Schur complement to use the graded solver.
    """
    w, V, lam_min = _psd_eigh(bmat, head, tol_psd_rel, head_factor)
    return (V * np.sqrt(w)) @ V.conj().T, lam_min


def sqrt_b_pair(bmat, head=None, tol_psd_rel=TOL_PSD_REL, head_factor=None):
    """``(Lambda, Lambda^-1, lambda_min)`` from one eigen-decomposition."""
    w, V, lam_min = _psd_eigh(bmat, head, tol_psd_rel, head_factor)
    if w[0] <= 0:
        raise EnergyNotPositive(lam_min, "B(theta) is singular; Lambda has no inverse")
    r = np.sqrt(w)
    return (V * r) @ V.conj().T, (V / r) @ V.conj().T, lam_min


def kappa(bmat, basis: PlaneWaveBasis | None = None, weights=None,
          head_factor=None) -> float:
    """Largest ``c`` with ``<B Y, Y> >= c ||Y||^2_{X^1}`` on the truncated space.

    The ion block has weight 1, so the Schur-complement factor of ``B`` is
    also one of the rescaled matrix.
    """
    if weights is None:
        weights = basis.sobolev_weights(1.0)
    r = 1.0 / np.sqrt(np.asarray(weights, dtype=float))
    scaled = bmat * np.outer(r, r)
    head = basis.q if basis is not None else None
    w, _ = arrowhead_eigh(scaled, head, head_factor)
    return float(w[0])


def apply_j(J_or_basis, M):
    """``J @ M`` without a dense product when a basis is given."""
    if isinstance(J_or_basis, PlaneWaveBasis):
        b = J_or_basis
        out = np.empty_like(M)
        out[b.psi1] = 0.5 * M[b.psi2]
        out[b.psi2] = -0.5 * M[b.psi1]
        out[b.q] = M[b.p]
        out[b.p] = -M[b.q]
        return out
    return J_or_basis @ M


def build_k(lam, J) -> np.ndarray:
    """``K = Lambda (iJ) Lambda``, symmetrized.  ``J`` may be a basis."""
    K = 1j * (lam @ apply_j(J, lam))
    return 0.5 * (K + K.conj().T)


@dataclass
class SpectralData:
    """Eigenpairs of K(theta) ordered by ``|omega|`` (ties: signed ascending).

    When built by :func:`solve_spectrum` with ``keep_sqrt=True`` the
    eigen-decomposition of B(theta) is kept as well (``b_evals``, ``b_vecs``),
    from which ``Lambda`` and ``Lambda^-1`` are applied without forming them.
    """

    theta: np.ndarray
    omegas: np.ndarray
    vectors: np.ndarray
    lambda_min_B: float = np.nan
    kappa: float = np.nan
    residual: float = np.nan
    b_evals: np.ndarray | None = None
    b_vecs: np.ndarray | None = None

    @property
    def D(self):
        return len(self.omegas)

    def _need_b(self):
        if self.b_vecs is None:
            raise ValueError("B(theta) eigenpairs were not kept (use keep_sqrt=True)")

    def _b_power(self, x, r):
        self._need_b()
        c = self.b_vecs.conj().T @ x
        return self.b_vecs @ (r[:, None] * c if np.ndim(x) == 2 else r * c)

    def apply_sqrt_b(self, x):
        """``Lambda x``."""
        return self._b_power(x, np.sqrt(self.b_evals))

    def apply_inv_sqrt_b(self, x):
        """``Lambda^-1 x``."""
        return self._b_power(x, 1.0 / np.sqrt(self.b_evals))

    def energy(self, y) -> float:
        """``<B y, y>`` evaluated in the eigenbasis of B (no cancellation)."""
        self._need_b()
        c = self.b_vecs.conj().T @ y
        return float(np.sum(self.b_evals * np.abs(c) ** 2))

    @property
    def sqrt_b(self):
        self._need_b()
        return (self.b_vecs * np.sqrt(self.b_evals)) @ self.b_vecs.conj().T

    @property
    def inv_sqrt_b(self):
        self._need_b()
        return (self.b_vecs / np.sqrt(self.b_evals)) @ self.b_vecs.conj().T

    def _apply_ij(self, x):
        """``(iJ) x`` for the standard block layout."""
        B = (self.D - 6) // 2
        out = np.empty_like(x, dtype=complex)
        out[:B] = 0.5j * x[B:2 * B]
        out[B:2 * B] = -0.5j * x[:B]
        out[2 * B:2 * B + 3] = 1j * x[2 * B + 3:]
        out[2 * B + 3:] = -1j * x[2 * B:2 * B + 3]
        return out

    def evolve_y(self, y, t):
        """``exp(J B t) y`` without applying ``Lambda^-1``.

        Uses ``Lambda^-1 v_k = (iJ) Lambda v_k / omega_k``, so
        ``y(t) = y + (iJ) Lambda V diag(phi) V^H Lambda y`` with the bounded
        multiplier ``phi = (exp(-i omega t) - 1) / omega``.
        """
        w = self.omegas * t
        phi = -1j * t * np.exp(-0.5j * w) * np.sinc(w / (2 * np.pi))
        V = self.vectors
        z = V @ (phi * (V.conj().T @ self.apply_sqrt_b(y)))
        return y + self._apply_ij(self.apply_sqrt_b(z))

    def propagator(self, t) -> np.ndarray:
        """``exp(-i K t)`` as a dense matrix."""
        V = self.vectors
        return (V * np.exp(-1j * self.omegas * t)) @ V.conj().T


def _fix_phases(V):
    idx = np.argmax(np.abs(V), axis=0)
    piv = V[idx, np.arange(V.shape[1])]
    return V * (np.conj(piv) / np.abs(piv))


def eig_k(K, theta=None, refine_ratio=1e-6, finalize=True) -> SpectralData:
    """Full eigen-decomposition of Hermitian ``K``.

    Eigenvalues below ``refine_ratio * max|omega|`` are re-solved by
    Rayleigh-Ritz on their computed invariant subspace.
    """
    try:
        w, V = np.linalg.eigh(K)
    except np.linalg.LinAlgError as exc:
        raise EigFailed(str(exc)) from exc
    if not np.all(np.isfinite(w)):
        raise EigFailed("non-finite eigenvalues")
    small = np.abs(w) <= refine_ratio * np.max(np.abs(w))
    if 0 < small.sum() <= len(w) // 2:
        U = V[:, small]
        Ks = U.conj().T @ (K @ U)
        ws, Us = np.linalg.eigh(0.5 * (Ks + Ks.conj().T))
        w = w.copy()
        V = V.copy()
        w[small] = ws
        V[:, small] = U @ Us
    sd = SpectralData(theta=None if theta is None else np.asarray(theta, float),
                      omegas=w, vectors=V)
    if finalize:
        _finalize(sd, K)
    return sd


def _finalize(sd: SpectralData, K):
    order = np.lexsort((sd.omegas, np.abs(sd.omegas)))
    sd.omegas = sd.omegas[order]
    sd.vectors = _fix_phases(sd.vectors[:, order])
    sd.residual = float(np.linalg.norm(K @ sd.vectors - sd.vectors * sd.omegas, axis=0).max())


def _refine_phonons(sd: SpectralData, K, w, VB, basis: PlaneWaveBasis, tol=1e-8):
    """Recompute the ion-sector eigenpairs of K with relative accuracy.

    In the eigenbasis of B, ``K`` becomes ``R C R`` with ``R = diag(sqrt(w))`` and
    ``C = V^H iJ V``.  The three B-eigenvectors dominated by the displacement
    block and the three momentum coordinates span a subspace on which this
    matrix has the form ``[[0, A], [A^H, 0]]`` with ``A`` graded by rows; its
    eigenvalues ``+-sigma(A)`` are obtained from :func:`gram_eigh`.  A pair
    replaces the dense result only if its estimated second-order coupling to
    the remaining coordinates is below ``tol`` relative to ``sigma``; its
    vectors get a first-order correction from the other modes.  Pairs that
    fail the test are re-solved by Rayleigh-Ritz on what is left of the
    cluster.
    """
    qw = np.sum(np.abs(VB[basis.q]) ** 2, axis=0)
    pw = np.sum(np.abs(VB[basis.p]) ** 2, axis=0)
    si, pi_ = np.flatnonzero(qw > 0.5), np.flatnonzero(pw > 0.5)
    if len(si) != 3 or len(pi_) != 3:
        return
    oi = np.setdiff1d(np.arange(len(w)), np.concatenate([si, pi_]))
    r = np.sqrt(np.maximum(w, 0.0))
    iJs = 1j * apply_j(basis, VB[:, si])
    iJp = 1j * apply_j(basis, VB[:, pi_])
    A = r[si, None] * (iJs.conj().T @ VB[:, pi_]) * r[None, pi_]
    Kso = r[si, None] * (iJs.conj().T @ VB[:, oi]) * r[None, oi]
    Kpo = r[pi_, None] * (iJp.conj().T @ VB[:, oi]) * r[None, oi]
    sig2, W = gram_eigh(A)
    sig = np.sqrt(sig2)
    if np.any(sig <= 0):
        return
    U = (A @ W) / sig
    ion = np.hstack([VB[:, si], VB[:, pi_]])
    weight = np.sum(np.abs(ion.conj().T @ sd.vectors) ** 2, axis=0)
    cl = np.sort(np.argsort(-weight, kind="stable")[:6])
    out = np.setdiff1d(np.arange(len(sd.omegas)), cl)
    if weight[cl].min() < 0.5 or len(out) == 0:
        return
    gap = np.min(np.abs(sd.omegas[out]))
    Vo, wo = sd.vectors[:, out], sd.omegas[out]
    acc_v, acc_w = [], []
    for i in range(3):
        y = (Kso.conj().T @ U[:, i] + Kpo.conj().T @ W[:, i]) / np.sqrt(2.0)
        if np.vdot(y, y).real / (gap * sig[i]) > tol:
            continue
        for sgn in (1.0, -1.0):
            v = (VB[:, si] @ U[:, i] + sgn * (VB[:, pi_] @ W[:, i])) / np.sqrt(2.0)
            # first-order admixture of the remaining modes
            res = K @ v - sgn * sig[i] * v
            v = v - Vo @ ((Vo.conj().T @ res) / (wo - sgn * sig[i]))
            acc_v.append(v / np.linalg.norm(v))
            acc_w.append(sgn * sig[i])
    if not acc_v:
        return
    S = np.column_stack(acc_v)
    S, _ = np.linalg.qr(S)  # already orthonormal up to rounding
    S = S * np.sign(np.real(np.diag(np.column_stack(acc_v).conj().T @ S)))
    new_v, new_w = [S], [np.array(acc_w)]
    rest = 6 - S.shape[1]
    if rest:
        Uc = sd.vectors[:, cl]
        Uc = Uc - S @ (S.conj().T @ Uc)
        q, sv, _ = np.linalg.svd(Uc, full_matrices=False)
        q = q[:, :rest]
        Ks = q.conj().T @ (K @ q)
        ws, Us = np.linalg.eigh(0.5 * (Ks + Ks.conj().T))
        new_v.append(q @ Us)
        new_w.append(ws)
    sd.vectors[:, cl] = np.hstack(new_v)
    sd.omegas[cl] = np.concatenate(new_w)


def phonon_frequencies(ops: BlochOperatorSet, maxiter=50):
    """The three non-negative ion-sector frequencies, accurate relative to themselves.

    Eliminating the electron coordinates from ``K v = omega v`` leaves the 3x3
    problem ``F^H F z = omega^2 (M I + E(omega^2)) z`` with ``F`` the factor of
    the Schur complement of B and
    ``E = sum_m s_m^H s_m * 4 / (D2_m D1_m (D1_m - 4 omega^2 / D2_m))``, where
    ``s`` is the field-ion block of B and ``D1``, ``D2`` its two electron
    diagonals.  Each ``omega^2`` is found by fixed-point iteration.  Returns
    None when no factor is available or an iteration fails.
    """
    F = ops.head_factor
    if F is None:
        return None
    b = ops.basis
    s = 2.0 * ops.S
    d1 = 2.0 * ops.h0 + 4.0 * ops.e ** 2 * ops.Z * ops.g
    d2 = 2.0 * ops.h0
    M = ops.M_ion
    lam0 = gram_eigh(F)[0] / M
    out = np.empty(3)
    for i in range(3):
        lam = float(lam0[i])
        for _ in range(maxiter):
            den = d1 - 4.0 * lam / d2
            if np.any(den <= 0):
                return None
            Mmat = M * np.eye(3) + (s.conj().T * (4.0 / (d2 * d1 * den))) @ s
            Ci = np.linalg.inv(np.linalg.cholesky(0.5 * (Mmat + Mmat.conj().T)).conj().T)
            new = float(gram_eigh(F @ Ci)[0][i])
            done = abs(new - lam) <= 4 * np.finfo(float).eps * abs(new)
            lam = new
            if done:
                break
        else:
            return None
        out[i] = np.sqrt(lam)
    return out


def _assign_phonons(sd: SpectralData, omega3, VB, basis, rtol=1e-3):
    """Overwrite the six ion-sector eigenvalues by ``+-omega3`` when consistent."""
    ion = np.hstack([VB[:, np.sum(np.abs(VB[basis.q]) ** 2, axis=0) > 0.5],
                     VB[:, np.sum(np.abs(VB[basis.p]) ** 2, axis=0) > 0.5]])
    if ion.shape[1] != 6:
        return False
    weight = np.sum(np.abs(ion.conj().T @ sd.vectors) ** 2, axis=0)
    cl = np.argsort(-weight, kind="stable")[:6]
    cl = cl[np.argsort(sd.omegas[cl], kind="stable")]
    target = np.concatenate([-omega3[::-1], omega3])
    slack = rtol * np.abs(target) + 1e-14 * np.max(np.abs(sd.omegas))
    if np.any(np.abs(sd.omegas[cl] - target) > slack):
        return False
    sd.omegas[cl] = target
    return True


def solve_spectrum(ops: BlochOperatorSet, with_kappa=True, keep_sqrt=True,
                   tol_psd_rel=TOL_PSD_REL) -> SpectralData:
    """Lambda, K and the spectral resolution at one quasimomentum."""
    bmat = ops.Bmat
    w, VB, lam_min = _psd_eigh(bmat, ops.head, tol_psd_rel, ops.head_factor)
    if w[0] <= 0:
        raise EnergyNotPositive(lam_min, "B(theta) is singular; Lambda has no inverse")
    lam = (VB * np.sqrt(w)) @ VB.conj().T
    K = build_k(lam, ops.basis)
    sd = eig_k(K, ops.theta, finalize=False)
    _refine_phonons(sd, K, w, VB, ops.basis)
    omega3 = phonon_frequencies(ops)
    if omega3 is not None:
        _assign_phonons(sd, omega3, VB, ops.basis)
    _finalize(sd, K)
    sd.lambda_min_B = lam_min
    if with_kappa:
        sd.kappa = kappa(bmat, ops.basis, head_factor=ops.head_factor)
    if keep_sqrt:
        sd.b_evals, sd.b_vecs = w, VB
    return sd


def spectrum_at(d: IonDensity, theta, basis: PlaneWaveBasis, radius=DEFAULT_RADIUS,
                jellium=True, coupling=None, **kw) -> SpectralData:
    """Assemble and solve at one quasimomentum."""
    return solve_spectrum(assemble(d, theta, basis, radius, jellium, coupling), **kw)


@dataclass(frozen=True)
class GrowthFit:
    slope: float
    prefactor: float
    eps_Q: float
    k_range: tuple
    flagged: bool


def growth_fit(spectral: SpectralData, k_range=(20, 150)) -> GrowthFit:
    """Least-squares slope of ``log|omega_k|`` against ``log k`` (k is 1-based).

    ``eps_Q`` is ``min_k |omega_k| / k^(2/3)`` over all k.  A (numerically)
    constant spectrum over the range is flagged.
    """
    lo, hi = int(k_range[0]), int(k_range[1])
    if hi - lo + 1 < 10:
        raise RangeTooSmall(f"k range {k_range} has fewer than 10 points")
    D = len(spectral.omegas)
    if lo < 1 or hi > 0.5 * D:
        raise ValueError(f"k range {k_range} outside 1..{D // 2}")
    mags = np.abs(spectral.omegas)
    k = np.arange(lo, hi + 1)
    slope, icpt = np.polyfit(np.log(k), np.log(mags[k - 1]), 1)
    flagged = bool(np.ptp(mags[k - 1]) <= 1e-12 * max(mags[k - 1].max(), 1e-300))
    if flagged:
        slope = 0.0
    allk = np.arange(1, D + 1)
    return GrowthFit(slope=float(slope), prefactor=float(np.exp(icpt)),
                     eps_Q=float(np.min(mags / allk ** (2.0 / 3.0))),
                     k_range=(lo, hi), flagged=flagged)
