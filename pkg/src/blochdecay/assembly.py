"""Plane-wave discretization of the periodic cell and the Bloch operator blocks.

A torus function is stored by its coefficients ``c_m`` of ``exp(2 pi i m.y)``
for ``|m|_inf <= N``.  A Bloch state is the concatenation
``(psi1, psi2, q, p)`` of dimension ``D = 2B + 6`` with ``B = (2N+1)^3``.

Only the Jellium ground state (constant ``psi0 = sqrt(Z)``, zero potential,
zero frequency) is supported, so the electron blocks are diagonal in ``m``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .density import (
    DEFAULT_RADIUS,
    DELTA_MIN,
    TWO_PI,
    IonDensity,
    centered,
    lattice_vectors,
    projector_factor,
    projector_sum,
    require_off_lattice,
    shifted_lattice_sum,
)
from .errors import JelliumViolation

T_MODEL = "T1+T2, O(e^4) dropped"


class PlaneWaveBasis:
    """Modes ``m`` with ``|m|_inf <= N`` in lexicographic order."""

    def __init__(self, N: int):
        if not 1 <= int(N) <= 6:
            raise ValueError("basis cutoff N must lie in 1..6")
        self.N = int(N)
        self.modes = lattice_vectors(self.N)
        self.B = len(self.modes)
        self.D = 2 * self.B + 6
        self._index = {tuple(m): i for i, m in enumerate(self.modes)}

    def __repr__(self):
        return f"PlaneWaveBasis(N={self.N})"

    def __eq__(self, other):
        return isinstance(other, PlaneWaveBasis) and other.N == self.N

    def __hash__(self):
        return hash(("PlaneWaveBasis", self.N))

    def index_of(self, m) -> int:
        return self._index[tuple(int(x) for x in m)]

    # block slices of a Bloch state
    @property
    def psi1(self):
        return slice(0, self.B)

    @property
    def psi2(self):
        return slice(self.B, 2 * self.B)

    @property
    def q(self):
        return slice(2 * self.B, 2 * self.B + 3)

    @property
    def p(self):
        return slice(2 * self.B + 3, 2 * self.B + 6)

    def wavevectors(self, theta, center=True) -> np.ndarray:
        """Rows ``theta - 2 pi m``, by default with ``theta`` taken in ``[-pi, pi]^3``.

        The centered representative keeps the mode set symmetric under
        ``theta -> -theta`` (needed for real dynamics) and retains the
        smallest wavevectors.
        """
        theta = centered(theta) if center else np.asarray(theta, dtype=float)
        return theta - TWO_PI * self.modes

    def sobolev_weights(self, s=1.0) -> np.ndarray:
        """Diagonal of the X^s Gram matrix: ``(1+|2 pi m|^2)^s`` on psi, 1 on q, p."""
        w = (1.0 + np.sum((TWO_PI * self.modes) ** 2, axis=1)) ** s
        return np.concatenate([w, w, np.ones(6)])

    @cached_property
    def sample_points(self) -> np.ndarray:
        """The B cell points ``y_r = r / (2N+1)`` (lexicographic in r)."""
        n = 2 * self.N + 1
        r = lattice_vectors(self.N) + self.N
        return r / n

    @cached_property
    def dft(self) -> np.ndarray:
        """Unitary map from cell samples to mode coefficients."""
        n = 2 * self.N + 1
        m = np.arange(-self.N, self.N + 1)
        r = np.arange(n)
        f1 = np.exp(-2j * np.pi * np.outer(m, r) / n) / np.sqrt(n)
        return np.kron(np.kron(f1, f1), f1)


def symplectic_j(basis: PlaneWaveBasis) -> np.ndarray:
    """J with blocks ``[[0, I/2], [-I/2, 0]]`` on psi and ``[[0, I], [-I, 0]]`` on (q, p)."""
    D, B = basis.D, basis.B
    J = np.zeros((D, D))
    i = np.arange(B)
    J[i, B + i] = 0.5
    J[B + i, i] = -0.5
    k = np.arange(3)
    J[2 * B + k, 2 * B + 3 + k] = 1.0
    J[2 * B + 3 + k, 2 * B + k] = -1.0
    return J


def zak_coefficients(d: IonDensity, theta, basis: PlaneWaveBasis, center=True) -> np.ndarray:
    """Torus coefficients of the Bloch-transformed density: ``sigma_hat(theta - 2 pi m)``.

    With ``center=False`` the given ``theta`` is used as is.
    """
    return d(basis.wavevectors(theta, center))


def assemble_h0(theta, basis: PlaneWaveBasis) -> np.ndarray:
    """Diagonal of H0(theta): ``|theta - 2 pi m|^2 / 2``."""
    k = basis.wavevectors(theta)
    return 0.5 * np.einsum("ij,ij->i", k, k)


def assemble_g(theta, basis: PlaneWaveBasis, delta_min=DELTA_MIN) -> np.ndarray:
    """Diagonal of the Coulomb multiplier G(theta): ``1 / |theta - 2 pi m|^2``."""
    require_off_lattice(theta, delta_min)
    k = basis.wavevectors(theta)
    return 1.0 / np.einsum("ij,ij->i", k, k)


def assemble_s(d: IonDensity, theta, basis: PlaneWaveBasis, coupling=None,
               delta_min=DELTA_MIN) -> np.ndarray:
    """The B x 3 field-ion block.

    Row m, column j is ``e sqrt(Z) (-i k_j) sigma_hat(k) / |k|^2`` with
    ``k = theta - 2 pi m``.  ``coupling`` overrides ``e`` (use 0 to decouple).
    """
    e = d.e if coupling is None else coupling
    g = assemble_g(theta, basis, delta_min)
    k = basis.wavevectors(theta)
    sig = zak_coefficients(d, theta, basis)
    return (e * np.sqrt(d.Z)) * (-1j * k) * (sig * g)[:, None]


def assemble_t(d: IonDensity, theta, radius=DEFAULT_RADIUS, jellium=True,
               return_parts=False, delta_min=DELTA_MIN):
    """The 3x3 ion-ion block ``T1(theta) + T2``.

    ``T1`` sums over ``xi = 2 pi m - theta`` and ``T2 = -sum_{m != 0}`` over
    ``xi = 2 pi m``.  With ``jellium=True`` T2 must vanish (Frobenius norm
    below 1e-10) and is dropped.
    """
    require_off_lattice(theta, delta_min)
    t1 = shifted_lattice_sum(d, theta, radius, sign=-1)
    m = lattice_vectors(radius)
    m = m[np.any(m != 0, axis=1)]
    t2 = -projector_sum(d, TWO_PI * m)
    t2_norm = float(np.linalg.norm(t2))
    if jellium:
        if t2_norm > 1e-10:
            raise JelliumViolation(f"||T2||_F = {t2_norm:.3e} under jellium=True")
        t = t1
    else:
        t = t1 + t2
    if return_parts:
        return t, t1, t2
    return t


@dataclass
class BlochOperatorSet:
    """All Bloch blocks at one quasimomentum.

    ``h0`` and ``g`` hold the diagonals of H0(theta) and G(theta).
    """

    theta: np.ndarray
    basis: PlaneWaveBasis
    h0: np.ndarray
    g: np.ndarray
    S: np.ndarray
    T: np.ndarray
    e: float
    Z: float
    M_ion: float
    t2_norm: float = 0.0
    meta: dict = field(default_factory=dict)
    head_factor: np.ndarray | None = None

    @property
    def Ginv_diag(self) -> np.ndarray:
        return 1.0 / self.g

    @cached_property
    def J(self) -> np.ndarray:
        return symplectic_j(self.basis)

    @cached_property
    def Bmat(self) -> np.ndarray:
        return assemble_b_from_blocks(self)

    @cached_property
    def Amat(self) -> np.ndarray:
        return assemble_a(self)

    @property
    def head(self) -> slice:
        """Indices of the ion-displacement block (the only off-diagonal coupling)."""
        return self.basis.q


def schur_factor(d: IonDensity, theta, basis: PlaneWaveBasis, e, radius=DEFAULT_RADIUS):
    """Row factor ``F`` of the ion-block Schur complement of B(theta).

    ``T1 - 4 S^H diag(2 H0 + 4 e^2 Z G)^-1 S`` is a sum of rank-one projectors
    with positive weights: a lattice term keeps its weight ``|sigma_hat|^2``
    outside the basis and is damped by ``|k|^4 / (|k|^4 + 4 e^2 Z)`` inside.
    Assumes a real density, so ``|sigma_hat(-k)| = |sigma_hat(k)|``.
    """
    if radius < basis.N:
        raise ValueError("lattice radius must be at least the basis cutoff")
    m = lattice_vectors(radius)
    xi = TWO_PI * m - centered(theta)
    n2 = np.einsum("ij,ij->i", xi, xi)
    rowscale = np.ones(len(m))
    inside = np.max(np.abs(m), axis=1) <= basis.N
    rowscale[inside] = n2[inside] / np.sqrt(n2[inside] ** 2 + 4.0 * e * e * d.Z)
    return rowscale[:, None] * projector_factor(d, xi)


def assemble(d: IonDensity, theta, basis: PlaneWaveBasis, radius=DEFAULT_RADIUS,
             jellium=True, coupling=None, delta_min=DELTA_MIN) -> BlochOperatorSet:
    theta = np.asarray(theta, dtype=float)
    require_off_lattice(theta, delta_min)
    e = d.e if coupling is None else float(coupling)
    t, _, t2 = assemble_t(d, theta, radius, jellium, return_parts=True,
                          delta_min=delta_min)
    return BlochOperatorSet(
        theta=theta, basis=basis,
        h0=assemble_h0(theta, basis),
        g=assemble_g(theta, basis, delta_min),
        S=assemble_s(d, theta, basis, coupling=e, delta_min=delta_min),
        T=t, e=e, Z=d.Z, M_ion=d.M_ion, t2_norm=float(np.linalg.norm(t2)),
        meta={"T_model": T_MODEL, "jellium": jellium, "radius": radius},
        head_factor=schur_factor(d, theta, basis, e, radius) if jellium else None,
    )


def assemble_b_from_blocks(ops: BlochOperatorSet) -> np.ndarray:
    b = ops.basis
    Bm = np.zeros((b.D, b.D), dtype=complex)
    i = np.arange(b.B)
    Bm[i, i] = 2.0 * ops.h0 + 4.0 * ops.e ** 2 * ops.Z * ops.g
    Bm[b.B + i, b.B + i] = 2.0 * ops.h0
    Bm[b.psi1, b.q] = 2.0 * ops.S
    Bm[b.q, b.psi1] = 2.0 * ops.S.conj().T
    Bm[b.q, b.q] = ops.T
    Bm[b.p, b.p] = np.eye(3) / ops.M_ion
    return Bm


def assemble_b(d: IonDensity, theta, basis: PlaneWaveBasis, radius=DEFAULT_RADIUS,
               jellium=True, coupling=None) -> np.ndarray:
    """The Hermitian energy operator B(theta) as a dense D x D matrix."""
    return assemble(d, theta, basis, radius, jellium, coupling).Bmat


def assemble_a(ops: BlochOperatorSet) -> np.ndarray:
    """The Hamilton generator ``A(theta) = J B(theta)``."""
    return ops.J @ ops.Bmat


def transcribed_a(ops: BlochOperatorSet) -> np.ndarray:
    """A(theta) written out block by block, independently of J and B."""
    b = ops.basis
    A = np.zeros((b.D, b.D), dtype=complex)
    i = np.arange(b.B)
    A[i, b.B + i] = ops.h0
    A[b.B + i, i] = -ops.h0 - 2.0 * ops.e ** 2 * ops.Z * ops.g
    A[b.psi2, b.q] = -ops.S
    A[b.q, b.p] = np.eye(3) / ops.M_ion
    A[b.p, b.psi1] = -2.0 * ops.S.conj().T
    A[b.p, b.q] = -ops.T
    return A


# -- binary dump -------------------------------------------------------------

_HEADER = struct.Struct("<4sHH3d")  # 32 bytes


def dump_bmat(path, ops: BlochOperatorSet) -> None:
    """Write B(theta) row-major complex128 after a 32-byte header."""
    b = ops.basis
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(b"BLB1", b.N, b.D, *map(float, ops.theta)))
        fh.write(np.ascontiguousarray(ops.Bmat, dtype="<c16").tobytes())


def load_bmat(path):
    """Read a dump written by :func:`dump_bmat`; returns ``(N, theta, Bmat)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, N, D, t1, t2, t3 = _HEADER.unpack_from(raw)
    if magic != b"BLB1":
        raise ValueError(f"bad magic {magic!r}")
    mat = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size).reshape(D, D)
    return N, np.array([t1, t2, t3]), mat.copy()
