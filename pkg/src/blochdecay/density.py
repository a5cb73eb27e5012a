"""Ion charge densities given by their Fourier transforms, and the structural
conditions (charge normalization, Jellium zeros, Wiener positivity) on them.

The Fourier convention is ``sigma_hat(xi) = int exp(i xi.x) sigma(x) dx``.
All densities live in Fourier space only.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .graded import gram_eigh
from .errors import (
    ChargeMismatch,
    NonPositiveCharge,
    ThetaOnDualLattice,
    TruncationNotConverged,
)

TWO_PI = 2.0 * np.pi
DELTA_MIN = 1e-6
DEFAULT_RADIUS = 8
SHELL_TOL = 1e-10


def _sinc_gauss(xi, beta=1.0):
    # sin(xi/2)/xi * exp(-beta xi^2); np.sinc handles xi = 0
    return 0.5 * np.sinc(xi / TWO_PI) * np.exp(-beta * xi * xi)


def _box(xi):
    # uniform charge on the unit cell
    return np.sinc(xi / TWO_PI)


PROFILES: dict[str, Callable] = {
    "sinc_gauss": _sinc_gauss,
    "box": _box,
}


@dataclass(frozen=True)
class IonDensity:
    """Ion charge density of one ion, represented by ``sigma_hat``.

    ``sigma_hat`` must be vectorized: it maps a real array of shape ``(..., 3)``
    to a complex (or real) array of shape ``(...)``.
    """

    sigma_hat: Callable[[np.ndarray], np.ndarray]
    e: float
    Z: float
    M_ion: float
    decay_rate: float = 1.0
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.e > 0 and self.Z > 0 and self.M_ion > 0):
            raise ValueError("e, Z and M_ion must be positive")
        s0 = complex(self(np.zeros(3)))
        if s0.real <= 0:
            raise NonPositiveCharge(f"sigma_hat(0) = {s0} is not positive")
        ez = self.e * self.Z
        if abs(s0 - ez) > 1e-12 * ez:
            raise ChargeMismatch(f"sigma_hat(0) = {s0.real!r} but e*Z = {ez!r}")

    def __call__(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        return np.asarray(self.sigma_hat(xi), dtype=complex)

    # -- constructors --------------------------------------------------------

    @classmethod
    def separable(cls, profile="sinc_gauss", e=1.0, Z=None, M_ion=1.0,
                  amplitude=1.0, decay_rate=1.0, **profile_params):
        """Product density ``s(xi1) s(xi2) s(xi3)`` with a named 1-D profile.

        ``Z`` defaults to ``sigma_hat(0) / e``.
        """
        if profile not in PROFILES:
            raise ValueError(f"unknown profile {profile!r}; known: {sorted(PROFILES)}")
        prof = PROFILES[profile]

        def sigma_hat(xi):
            return amplitude * (prof(xi[..., 0], **profile_params)
                                * prof(xi[..., 1], **profile_params)
                                * prof(xi[..., 2], **profile_params))

        s0 = amplitude * float(prof(np.float64(0.0), **profile_params)) ** 3
        return cls(sigma_hat, e=e, Z=s0 / e if Z is None else Z, M_ion=M_ion,
                   decay_rate=decay_rate, kind="separable",
                   params={"profile": profile, "amplitude": amplitude, **profile_params})

    @classmethod
    def gaussian(cls, width=1.0, c=1.0, e=1.0, Z=None, M_ion=1.0, decay_rate=1.0):
        """Isotropic Gaussian ``c exp(-width^2 |xi|^2 / 4)``; violates Jellium."""

        def sigma_hat(xi):
            return c * np.exp(-0.25 * width * width * np.sum(xi * xi, axis=-1))

        return cls(sigma_hat, e=e, Z=c / e if Z is None else Z, M_ion=M_ion,
                   decay_rate=decay_rate, kind="gaussian",
                   params={"width": width, "c": c})

    @classmethod
    def tabulated(cls, axis, samples, e=1.0, Z=None, M_ion=1.0, decay_rate=1.0):
        """Trilinear interpolation of samples on the grid ``axis^3``, zero outside.

        ``axis`` must be symmetric about 0 and contain 0, and the samples must
        satisfy ``s(-xi) = conj(s(xi))``.
        """
        axis = np.asarray(axis, dtype=float)
        samples = np.asarray(samples, dtype=complex)
        if not np.allclose(axis, -axis[::-1]):
            raise ValueError("tabulation axis must be symmetric about 0")
        if not np.allclose(samples[::-1, ::-1, ::-1], np.conj(samples)):
            raise ValueError("samples violate sigma_hat(-xi) = conj(sigma_hat(xi))")
        interp = RegularGridInterpolator((axis, axis, axis), samples,
                                         bounds_error=False, fill_value=0.0)

        def sigma_hat(xi):
            shape = xi.shape[:-1]
            return interp(xi.reshape(-1, 3)).reshape(shape)

        s0 = complex(interp(np.zeros((1, 3)))[0]).real
        return cls(sigma_hat, e=e, Z=s0 / e if Z is None else Z, M_ion=M_ion,
                   decay_rate=decay_rate, kind="tabulated",
                   params={"axis": axis, "samples": samples})

    def scaled(self, factor: float) -> "IonDensity":
        """Density multiplied by ``factor`` (charge number scales along)."""
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        base = self.sigma_hat
        return IonDensity(lambda xi: factor * base(xi), e=self.e, Z=self.Z * factor,
                          M_ion=self.M_ion, decay_rate=self.decay_rate, kind=self.kind,
                          params={**self.params, "scale": factor * self.params.get("scale", 1.0)})

    def describe(self) -> dict:
        """Plain-data description for metadata headers."""
        out = {"kind": self.kind, "e": self.e, "Z": self.Z, "M_ion": self.M_ion,
               "decay_rate": self.decay_rate}
        for k, v in self.params.items():
            if isinstance(v, np.ndarray):
                continue
            out[k] = v
        return out


def example_density(e=1.0, M_ion=1.0) -> IonDensity:
    """The product density with profile ``sin(xi/2)/xi * exp(-xi^2)``.

    It satisfies the Jellium and Wiener conditions and decays exponentially.
    """
    return IonDensity.separable("sinc_gauss", e=e, M_ion=M_ion, beta=1.0)


# -- lattice helpers ---------------------------------------------------------

def lattice_vectors(radius: int) -> np.ndarray:
    """All m in Z^3 with |m|_inf <= radius, lexicographic order."""
    r = range(-radius, radius + 1)
    return np.array(list(itertools.product(r, r, r)), dtype=int)


def centered(theta) -> np.ndarray:
    """Representative of ``theta`` modulo ``2 pi Z^3`` in ``[-pi, pi]^3``."""
    theta = np.asarray(theta, dtype=float)
    return theta - TWO_PI * np.round(theta / TWO_PI)


def dist_to_dual_lattice(theta) -> float:
    theta = np.asarray(theta, dtype=float)
    return float(np.linalg.norm(theta - TWO_PI * np.round(theta / TWO_PI)))


def require_off_lattice(theta, delta_min=DELTA_MIN):
    d = dist_to_dual_lattice(theta)
    if d < delta_min:
        raise ThetaOnDualLattice(f"dist(theta, 2 pi Z^3) = {d:.3e} < {delta_min:.1e}")


def projector_sum(d: IonDensity, xi: np.ndarray) -> np.ndarray:
    """``sum_i xi_i xi_i^T / |xi_i|^2 |sigma_hat(xi_i)|^2`` over rows of ``xi``.

    Rows with ``xi = 0`` are skipped.
    """
    xi = np.asarray(xi, dtype=float)
    n2 = np.einsum("ij,ij->i", xi, xi)
    keep = n2 > 0
    xi, n2 = xi[keep], n2[keep]
    w = np.abs(d(xi)) ** 2 / n2
    return np.einsum("i,ij,ik->jk", w, xi, xi)


def projector_factor(d: IonDensity, xi: np.ndarray) -> np.ndarray:
    """Rows ``|sigma_hat(xi_i)| xi_i / |xi_i|``, so that ``F^T F`` is :func:`projector_sum`."""
    xi = np.asarray(xi, dtype=float)
    n = np.sqrt(np.einsum("ij,ij->i", xi, xi))
    keep = n > 0
    xi, n = xi[keep], n[keep]
    return (np.abs(d(xi)) / n)[:, None] * xi


def _shell_check(d, m, xi, radius):
    shell = np.max(np.abs(m), axis=1) == radius
    last = np.linalg.norm(projector_sum(d, xi[shell]))
    if last >= SHELL_TOL:
        raise TruncationNotConverged(
            f"last shell at radius {radius} contributes {last:.3e} >= {SHELL_TOL:.0e}")


def shifted_lattice_factor(d: IonDensity, shift, radius=DEFAULT_RADIUS, sign=1,
                           check=True) -> np.ndarray:
    """Row factor of :func:`shifted_lattice_sum` (one row per lattice point)."""
    m = lattice_vectors(radius)
    xi = TWO_PI * m + sign * np.asarray(shift, dtype=float)
    if check:
        _shell_check(d, m, xi, radius)
    return projector_factor(d, xi)


def shifted_lattice_sum(d: IonDensity, shift, radius=DEFAULT_RADIUS, sign=1,
                        check=True) -> np.ndarray:
    """``sum_{|m|_inf <= radius}`` of the projector term at ``xi = 2 pi m + sign*shift``.

    Raises TruncationNotConverged if the outermost shell contributes a
    Frobenius norm above 1e-10.
    """
    m = lattice_vectors(radius)
    xi = TWO_PI * m + sign * np.asarray(shift, dtype=float)
    if check:
        _shell_check(d, m, xi, radius)
    return projector_sum(d, xi)


# -- conditions ----------------------------------------------------------------

def total_charge(d: IonDensity) -> float:
    """``sigma_hat(0)``, which equals ``e * Z``."""
    s0 = complex(d(np.zeros(3)))
    if s0.real <= 0:
        raise NonPositiveCharge(f"sigma_hat(0) = {s0}")
    return s0.real


@dataclass(frozen=True)
class JelliumReport:
    passed: bool
    offender: tuple | None
    offender_value: float
    radius: int
    tol: float


def check_jellium(d: IonDensity, radius=5, tol=1e-12) -> JelliumReport:
    """Scan ``|sigma_hat(2 pi m)|`` over ``0 < |m|_inf <= radius``.

    Ties for the worst offender go to the lexicographically largest ``m``.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    m = lattice_vectors(radius)
    m = m[np.any(m != 0, axis=1)]
    vals = np.abs(d(TWO_PI * m))
    worst = vals.max()
    # lexicographically largest among the maximisers
    idx = np.flatnonzero(vals == worst)[-1]
    passed = bool(worst <= tol)
    return JelliumReport(passed=passed,
                         offender=None if passed else tuple(int(x) for x in m[idx]),
                         offender_value=float(worst), radius=radius, tol=tol)


def wiener_matrix(d: IonDensity, theta, radius=DEFAULT_RADIUS,
                  delta_min=DELTA_MIN) -> np.ndarray:
    """The 3x3 matrix Sigma(theta) summed over ``xi = 2 pi m + theta``."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    require_off_lattice(theta, delta_min)
    return shifted_lattice_sum(d, theta, radius, sign=1)


def wiener_min_eig(d: IonDensity, theta, radius=DEFAULT_RADIUS,
                   delta_min=DELTA_MIN) -> float:
    """``lambda_min(Sigma(theta))`` computed from the row factor of the lattice sum.

    Sigma is a sum of rank-one terms whose weights span many orders of
    magnitude, so its smallest eigenvalue can sit far below
    ``eps * ||Sigma||``; the factor keeps it accurate relative to itself.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    require_off_lattice(theta, delta_min)
    F = shifted_lattice_factor(d, theta, radius, sign=1)
    return float(gram_eigh(F)[0][0])


@dataclass
class WienerReport:
    grid: np.ndarray
    min_eig: np.ndarray
    passed: bool
    truncation_radius: int
    tol: float
    empty: bool = False

    def rows(self):
        for th, lam in zip(self.grid, self.min_eig):
            yield (*th, lam)


def check_wiener(d: IonDensity, grid, radius=DEFAULT_RADIUS, tol=0.0,
                 delta_min=DELTA_MIN) -> WienerReport:
    """Smallest eigenvalue of Sigma(theta) at every grid point.

    ``grid`` is a ThetaGrid or an ``(P, 3)`` array of quasimomenta.
    """
    pts = np.asarray(getattr(grid, "points", grid), dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        warnings.warn("empty grid: Wiener check passes vacuously", stacklevel=2)
        return WienerReport(pts, np.zeros(0), True, radius, tol, empty=True)
    lam = np.array([wiener_min_eig(d, th, radius, delta_min) for th in pts])
    return WienerReport(pts, lam, bool(np.all(lam > tol)), radius, tol)
