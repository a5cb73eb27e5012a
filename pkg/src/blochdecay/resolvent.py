"""Fiberwise resolvent of K, spectral density and limiting-absorption scans.

On a finite theta grid the spectrum of K is the finite set of levels
``omega_k(theta_j)``, so ``epsilon -> 0`` cannot be taken.  Instead each
``epsilon`` is compared with the local mean gap between the levels the probe
occupies.  Rows with ``epsilon`` below twice that gap are flagged as untrusted.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .assembly import PlaneWaveBasis, assemble
from .density import DEFAULT_RADIUS, IonDensity
from .dynamics import (
    BlochField,
    WeightedNormSpec,
    _spectra_for,
    bloch_inverse,
    weighted_norm,
)
from .errors import EpsilonBelowResolution
from .spectral import build_k, sqrt_b

ALPHA_LAP = -4.0
TRUST_FACTOR = 2.0


@dataclass
class ResolventProbe:
    """Test vector with an ``omega`` window and a descending list of ``epsilon``."""

    Z: BlochField
    omega_window: tuple
    epsilons: list

    def __post_init__(self):
        eps = np.asarray(self.epsilons, dtype=float)
        if np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
            raise ValueError("epsilons must be positive and strictly descending")
        a, b = self.omega_window
        if not a < b:
            raise ValueError("omega window must satisfy a < b")
        self.epsilons = [float(x) for x in eps]

    def omega_mesh(self, n=200) -> np.ndarray:
        a, b = self.omega_window
        return np.linspace(a, b, n)


def multipliers(omegas, omega, eps) -> np.ndarray:
    """``1 / (omega_k - omega - i eps)``."""
    if eps == 0:
        raise ValueError("epsilon must be nonzero")
    return 1.0 / (np.asarray(omegas) - omega - 1j * eps)


def apply_resolvent(field: BlochField, spectra, omega: float, eps: float) -> BlochField:
    """``R(omega + i eps) Z`` point by point through the eigen-expansion of K."""
    out = np.zeros_like(field.values)
    for j in _spectra_for(field, spectra):
        sd = spectra[j]
        c = sd.vectors.conj().T @ field.values[j]
        out[j] = sd.vectors @ (multipliers(sd.omegas, omega, eps) * c)
    return BlochField(field.grid, field.basis, out, field.gauge)


def k_matrices(d: IonDensity, grid, basis: PlaneWaveBasis, indices, radius=DEFAULT_RADIUS,
               coupling=None) -> dict:
    """K(theta_j) rebuilt from the operator blocks (no eigenvectors of K involved)."""
    out = {}
    for j in indices:
        ops = assemble(d, grid.points[j], basis, radius, coupling=coupling)
        lam, _ = sqrt_b(ops.Bmat, ops.head, head_factor=ops.head_factor)
        out[int(j)] = build_k(lam, basis)
    return out


def resolvent_residual(Z: BlochField, RZ: BlochField, kmats: dict, omega, eps) -> float:
    """``max_j ||(K - omega - i eps) RZ_j - Z_j|| / ||Z_j||``."""
    worst = 0.0
    for j in Z.support:
        K = kmats[int(j)]
        r = K @ RZ.values[j] - (omega + 1j * eps) * RZ.values[j] - Z.values[j]
        worst = max(worst, float(np.linalg.norm(r) / np.linalg.norm(Z.values[j])))
    return worst


def spectral_density(probe: BlochField, spectra, omega, eps) -> float:
    """``Im <Z, R(omega + i eps) Z>`` on the grid: a sum of Lorentzians."""
    if eps <= 0:
        raise ValueError("spectral density needs eps > 0")
    tot = 0.0
    for j in _spectra_for(probe, spectra):
        sd = spectra[j]
        c2 = np.abs(sd.vectors.conj().T @ probe.values[j]) ** 2
        tot += float(np.sum(eps / ((omega - sd.omegas) ** 2 + eps * eps) * c2))
    return tot / len(probe.grid)


def spectral_density_curve(probe: BlochField, spectra, omegas, eps) -> np.ndarray:
    """Vectorized :func:`spectral_density` over an array of ``omega``."""
    omegas = np.asarray(omegas, dtype=float)
    tot = np.zeros(len(omegas))
    for j in _spectra_for(probe, spectra):
        sd = spectra[j]
        c2 = np.abs(sd.vectors.conj().T @ probe.values[j]) ** 2
        tot += (eps / ((omegas[:, None] - sd.omegas[None]) ** 2 + eps * eps)) @ c2
    return tot / len(probe.grid)


def probe_levels(probe: BlochField, spectra, rel=1e-10) -> np.ndarray:
    """Sorted eigenvalues ``omega_k(theta_j)`` of the columns the probe occupies."""
    lev = []
    for j in _spectra_for(probe, spectra):
        sd = spectra[j]
        c2 = np.abs(sd.vectors.conj().T @ probe.values[j]) ** 2
        lev.append(sd.omegas[c2 > rel * c2.sum()])
    return np.sort(np.concatenate(lev)) if lev else np.zeros(0)


def level_spacing(levels, omega, n=20) -> float:
    """Local mean gap ``2 r / n`` of the discrete levels, ``r`` the distance to the n-th nearest."""
    levels = np.asarray(levels, dtype=float)
    if len(levels) < 2:
        return np.inf
    n = min(n, len(levels))
    r = np.partition(np.abs(levels - omega), n - 1)[n - 1]
    return float(2.0 * r / n)


@dataclass
class LapTable:
    """Rows ``(omega, epsilon, density, weighted_norm, trusted_flag)``."""

    rows: list
    alpha: float
    R: int
    spacing: dict
    ratios: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    columns = ("omega", "epsilon", "density", "weighted_norm", "trusted_flag")

    def trusted_ratios(self) -> np.ndarray:
        """Consecutive-epsilon weighted-norm ratios, trusted rows only."""
        vals = [r for rs in self.ratios.values() for r in rs]
        return np.array(vals, dtype=float)

    def density_spread(self) -> dict:
        """Per omega: ``max/min`` of ``|density|`` over trusted epsilons."""
        out = {}
        for w in sorted({r[0] for r in self.rows}):
            d = [abs(r[2]) for r in self.rows if r[0] == w and r[4]]
            if d and min(d) > 0:
                out[w] = max(d) / min(d)
        return out


def lap_scan(probe: ResolventProbe, spectra, omegas=None, alpha=ALPHA_LAP, R=4,
             spacing=None, trust_factor=TRUST_FACTOR) -> LapTable:
    """Spectral density and ``|||R(omega + i eps) Z|||_alpha`` over ``epsilon``.

    ``spacing`` overrides the local level spacing estimate at every ``omega``.
    Untrusted rows (``epsilon < trust_factor * spacing``) are kept, flagged and
    reported through an :class:`EpsilonBelowResolution` warning.  For every
    ``omega`` the ratio of weighted norms between consecutive trusted
    ``epsilon`` values is recorded as the stabilization statistic.
    """
    Z = probe.Z
    if omegas is None:
        omegas = probe.omega_mesh()
    levels = probe_levels(Z, spectra)
    spec = WeightedNormSpec(alpha)
    zero = not np.any(Z.values)
    rows = []
    ratios = {}
    spacings = {}
    for w in omegas:
        w = float(w)
        gap = level_spacing(levels, w) if spacing is None else float(spacing)
        spacings[w] = gap
        prev = None
        for eps in probe.epsilons:
            trusted = eps >= trust_factor * gap
            if zero:
                dens = wn = 0.0
            else:
                dens = spectral_density(Z, spectra, w, eps)
                wn = weighted_norm(bloch_inverse(apply_resolvent(Z, spectra, w, eps), R), spec)
            rows.append((w, eps, dens, wn, int(trusted)))
            if trusted:
                if prev is not None and prev > 0:
                    ratios.setdefault(w, []).append(wn / prev)
                prev = wn
    if any(not r[4] for r in rows):
        warnings.warn(f"epsilon below {trust_factor} x the local level spacing; rows flagged",
                      EpsilonBelowResolution, stacklevel=2)
    return LapTable(rows, alpha, R, spacings, ratios,
                    meta={"trust_factor": trust_factor})
