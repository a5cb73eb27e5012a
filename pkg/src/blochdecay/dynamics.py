"""Bloch transform of cell fields, exact spectral time evolution, the split
into flat-band (discrete) and continuous components, and weighted-norm decay.

Cell representation.  The electron components of a cell ``Y(n)`` are stored as
``B`` point samples ``psi(n, y_r) / sqrt(B)`` on the uniform cell grid
``y_r = r / (2N+1)``; the ion components ``q(n), p(n)`` are stored as is.  With
this scaling the Euclidean norm of a cell vector is its X^0 norm.  The Bloch
transform is ``Y~(theta) = M(theta) sum_n exp(i n.theta) Y(n)``, where
``M(theta)`` multiplies the samples by ``exp(i theta.y_r)`` and applies the
unitary DFT to plane-wave coefficients.  On the shifted grid
``theta_j = 2 pi (j + 1/2) / L`` the transform is evaluated by FFT.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import isotonic_regression

from .assembly import PlaneWaveBasis
from .density import DEFAULT_RADIUS, DELTA_MIN, IonDensity, centered
from .errors import AliasingGuard, BoxTooSmall, GaugeMismatch, HorizonExceeded
from .spectral import TOL_PSD_REL
from .sweep import FlatBandReport, ThetaGrid, _map, _solve_point

C_HORIZON = 0.25
GAUGES = ("Z", "Y")


@dataclass
class BlochField:
    """Values ``(P, D)`` on the points of ``grid`` (lexicographic order).

    ``gauge`` is ``"Z"`` for ``Z~ = Lambda~ Y~`` and ``"Y"`` for ``Y~`` itself.
    """

    grid: ThetaGrid
    basis: PlaneWaveBasis
    values: np.ndarray
    gauge: str = "Z"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (len(self.grid), self.basis.D):
            raise ValueError(f"values must have shape {(len(self.grid), self.basis.D)}")
        if self.gauge not in GAUGES:
            raise GaugeMismatch(f"unknown gauge {self.gauge!r}")

    @classmethod
    def zeros(cls, grid, basis, gauge="Z"):
        return cls(grid, basis, np.zeros((len(grid), basis.D), dtype=complex), gauge)

    def _like(self, values):
        return BlochField(self.grid, self.basis, values, self.gauge)

    def copy(self):
        return self._like(self.values.copy())

    def __add__(self, other):
        if other.gauge != self.gauge:
            raise GaugeMismatch("cannot add fields in different gauges")
        return self._like(self.values + other.values)

    def __sub__(self, other):
        return self + other * (-1.0)

    def __mul__(self, c):
        return self._like(self.values * c)

    __rmul__ = __mul__

    @property
    def support(self) -> np.ndarray:
        """Flat indices of grid points carrying a nonzero value."""
        return np.flatnonzero(np.any(self.values != 0, axis=1))

    def norm2(self) -> float:
        """``|Pi*|^-1 sum_j w_j ||values_j||^2``: the X^0 grid norm squared."""
        return float(np.sum(np.abs(self.values) ** 2) / len(self.grid))

    def norm(self) -> float:
        return math.sqrt(self.norm2())

    def inner(self, other) -> complex:
        """Grid inner product ``<self, other>``, conjugate-linear in ``self``."""
        return complex(np.vdot(self.values, other.values) / len(self.grid))


@dataclass
class CellField:
    """Cells ``n`` with ``|n|_inf <= R``; ``values[n1+R, n2+R, n3+R]`` is ``Y(n)``."""

    R: int
    basis: PlaneWaveBasis
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        s = 2 * self.R + 1
        if self.values.shape != (s, s, s, self.basis.D):
            raise ValueError(f"values must have shape {(s, s, s, self.basis.D)}")

    @classmethod
    def zeros(cls, R, basis):
        s = 2 * R + 1
        return cls(R, basis, np.zeros((s, s, s, basis.D), dtype=complex))

    @classmethod
    def from_cells(cls, R, basis, cells: dict):
        """Build from ``{(n1, n2, n3): vector}``."""
        out = cls.zeros(R, basis)
        for n, v in cells.items():
            out[n] = v
        return out

    def _slot(self, n):
        n = tuple(int(x) for x in n)
        if max(abs(x) for x in n) > self.R:
            raise IndexError(f"cell {n} outside the box of radius {self.R}")
        return tuple(x + self.R for x in n)

    def __getitem__(self, n):
        return self.values[self._slot(n)]

    def __setitem__(self, n, v):
        self.values[self._slot(n)] = v

    @property
    def offsets(self) -> np.ndarray:
        """``(2R+1,)*3 + (3,)`` array of cell indices ``n``."""
        r = np.arange(-self.R, self.R + 1)
        return np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1)

    def cell_norms(self) -> np.ndarray:
        return np.linalg.norm(self.values, axis=-1)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def split_psi(self, n):
        """``(psi1, psi2, q, p)`` of cell ``n``, psi parts as function samples."""
        b = self.basis
        v = self[n]
        s = np.sqrt(b.B)
        return v[b.psi1] * s, v[b.psi2] * s, v[b.q], v[b.p]


@dataclass(frozen=True)
class WeightedNormSpec:
    """Weight ``(1 + |n|)^(2 alpha)`` per cell, Euclidean ``|n|``."""

    alpha: float = -2.0


# -- Bloch transform ------------------------------------------------------------

def _phase(grid: ThetaGrid, basis: PlaneWaveBasis, sign=1.0) -> np.ndarray:
    """``exp(sign * i theta_j . y_r)`` as a ``(P, B)`` array."""
    return np.exp(sign * 1j * centered(grid.points) @ basis.sample_points.T)


def _samples_to_modes(grid, basis, vals):
    b = basis
    out = np.array(vals, dtype=complex)
    ph = _phase(grid, b)
    F = b.dft
    out[:, b.psi1] = (ph * vals[:, b.psi1]) @ F.T
    out[:, b.psi2] = (ph * vals[:, b.psi2]) @ F.T
    return out


def _modes_to_samples(grid, basis, vals):
    b = basis
    out = np.array(vals, dtype=complex)
    ph = _phase(grid, b, -1.0)
    Fh = b.dft.conj()
    out[:, b.psi1] = ph * (vals[:, b.psi1] @ Fh)
    out[:, b.psi2] = ph * (vals[:, b.psi2] @ Fh)
    return out


def to_samples(theta, basis: PlaneWaveBasis, V) -> np.ndarray:
    """``M(theta)^-1 V`` for the columns of ``V``: psi parts as cell samples.

    Unlike mode coefficients, samples do not depend on the representative of
    ``theta`` modulo ``2 pi``, so overlaps between neighbouring points are
    meaningful across the zone boundary.
    """
    b = basis
    V = np.asarray(V, dtype=complex)
    out = V.copy()
    ph = np.exp(-1j * basis.sample_points @ centered(theta))
    Fh = b.dft.conj().T
    ph = ph[:, None] if V.ndim == 2 else ph
    out[b.psi1] = ph * (Fh @ V[b.psi1])
    out[b.psi2] = ph * (Fh @ V[b.psi2])
    return out


def bloch_forward(cell: CellField, grid: ThetaGrid, check_support=True) -> BlochField:
    """``Y~(theta_j) = M(theta_j) sum_n exp(i n.theta_j) Y(n)``.

    Raises BoxTooSmall if the data reaches the outermost shell of the box.
    """
    R, L, D = cell.R, grid.L, cell.basis.D
    if check_support and R > 0:
        norms = cell.cell_norms()
        shell = np.max(np.abs(cell.offsets), axis=-1) == R
        if np.any(norms[shell] > 0):
            raise BoxTooSmall(f"cell data touches the boundary of the box R={R}")
    acc = np.zeros((L, L, L, D), dtype=complex)
    n = cell.offsets.reshape(-1, 3)
    vals = cell.values.reshape(-1, D)
    # exp(i n.theta_j) = exp(i pi sum(n) / L) * exp(2 pi i n.j / L)
    shift = np.exp(1j * np.pi * n.sum(axis=1) / L)
    np.add.at(acc, tuple(np.mod(n, L).T), vals * shift[:, None])
    hat = np.fft.ifftn(acc, axes=(0, 1, 2)) * L ** 3
    return BlochField(grid, cell.basis, _samples_to_modes(grid, cell.basis,
                                                           hat.reshape(-1, D)), "Z")


def bloch_inverse(field: BlochField, R: int) -> CellField:
    """Quadrature of the inversion formula on the grid, for cells ``|n|_inf <= R``."""
    L, D = field.grid.L, field.basis.D
    if R > L / 4:
        raise AliasingGuard(f"box radius R={R} exceeds L/4 = {L / 4}")
    w = _modes_to_samples(field.grid, field.basis, field.values).reshape(L, L, L, D)
    full = np.fft.fftn(w, axes=(0, 1, 2)) / L ** 3
    out = CellField.zeros(R, field.basis)
    n = out.offsets.reshape(-1, 3)
    shift = np.exp(-1j * np.pi * n.sum(axis=1) / L)
    vals = full[tuple(np.mod(n, L).T)] * shift[:, None]
    out.values[...] = vals.reshape(out.values.shape)
    return out


def weighted_norm(cell: CellField, spec=WeightedNormSpec()) -> float:
    """``sqrt(sum_n (1 + |n|)^(2 alpha) ||Y(n)||^2)``."""
    alpha = spec.alpha if isinstance(spec, WeightedNormSpec) else float(spec)
    r = np.linalg.norm(cell.offsets, axis=-1)
    w = (1.0 + r) ** (2.0 * alpha)
    return float(np.sqrt(np.sum(w * cell.cell_norms() ** 2)))


# -- spectra on a grid ------------------------------------------------------------

def compute_spectra(d: IonDensity, grid: ThetaGrid, basis: PlaneWaveBasis, indices=None,
                    radius=DEFAULT_RADIUS, jellium=True, coupling=None, workers=None,
                    keep_sqrt=True, tol_psd=TOL_PSD_REL, delta_min=DELTA_MIN) -> dict:
    """``{flat index: SpectralData}`` for the requested grid points (default: all)."""
    idx = range(len(grid)) if indices is None else [int(i) for i in indices]

    def one(j):
        return j, _solve_point(d, grid.points[j], basis, radius, jellium, coupling, False,
                               keep_sqrt, tol_psd, delta_min)

    return dict(_map(one, idx, workers))


def _spectra_for(field: BlochField, spectra):
    missing = [int(j) for j in field.support if j not in spectra]
    if missing:
        raise ValueError(f"no spectral data at {len(missing)} supported grid points "
                         f"(first: {missing[0]})")
    return field.support


def to_gauge(field: BlochField, spectra, gauge) -> BlochField:
    """Convert between ``Y~`` and ``Z~ = Lambda~ Y~``."""
    if gauge not in GAUGES:
        raise GaugeMismatch(f"unknown gauge {gauge!r}")
    if gauge == field.gauge:
        return field.copy()
    out = np.zeros_like(field.values)
    for j in _spectra_for(field, spectra):
        sd = spectra[j]
        v = field.values[j]
        out[j] = sd.apply_sqrt_b(v) if gauge == "Z" else sd.apply_inv_sqrt_b(v)
    return BlochField(field.grid, field.basis, out, gauge)


def evolve(field: BlochField, spectra, t: float, gauge="Z") -> BlochField:
    """Exact propagation: ``Z~(t) = exp(-i K~ t) Z~(0)`` per point.

    In gauge ``"Y"`` this is ``Lambda~^-1 exp(-i K~ t) Lambda~``, evaluated
    without forming ``Lambda~^-1`` (see :meth:`SpectralData.evolve_y`).  The
    requested gauge must match the field's.
    """
    if gauge != field.gauge:
        raise GaugeMismatch(f"field is in gauge {field.gauge!r}, requested {gauge!r}")
    out = np.zeros_like(field.values)
    for j in _spectra_for(field, spectra):
        sd = spectra[j]
        v = field.values[j]
        if gauge == "Y":
            out[j] = sd.evolve_y(v, t)
        else:
            out[j] = sd.vectors @ (np.exp(-1j * sd.omegas * t) * (sd.vectors.conj().T @ v))
    return BlochField(field.grid, field.basis, out, gauge)


def energy(field: BlochField, spectra) -> float:
    """Grid energy ``|Pi*|^-1 sum_j w_j <B~ Y~_j, Y~_j>`` of a Y-gauge field."""
    if field.gauge != "Y":
        raise GaugeMismatch("energy is defined for Y-gauge fields")
    tot = sum(spectra[j].energy(field.values[j]) for j in _spectra_for(field, spectra))
    return float(tot / len(field.grid))


def project_columns(field: BlochField, spectra, select) -> BlochField:
    """Per-point projection onto eigencolumns chosen by ``select(omegas) -> mask``."""
    if field.gauge != "Z":
        raise GaugeMismatch("spectral projections act on Z-gauge fields")
    out = np.zeros_like(field.values)
    for j in _spectra_for(field, spectra):
        sd = spectra[j]
        m = select(sd.omegas)
        if m.any():
            V = sd.vectors[:, m]
            out[j] = V @ (V.conj().T @ field.values[j])
    return BlochField(field.grid, field.basis, out, "Z")


def split_components(field: BlochField, spectra, flat: FlatBandReport | None):
    """``(discrete, continuous)``: projection onto flat-band eigencolumns and the rest.

    Flat columns are recognized per point by value (see
    :meth:`FlatBandReport.column_mask`); ``discrete + continuous == field``.
    """
    if flat is None or len(flat) == 0:
        return BlochField.zeros(field.grid, field.basis), field.copy()
    discrete = project_columns(field, spectra, flat.column_mask)
    return discrete, field - discrete


def energy_filter(field: BlochField, spectra, nu=np.inf) -> BlochField:
    """Keep only eigencolumns with ``|omega| <= nu``."""
    if not np.isfinite(nu):
        return field.copy()
    return project_columns(field, spectra, lambda w: np.abs(w) <= nu)


# -- band-localized initial data ----------------------------------------------------

def bump(x):
    """C-infinity bump ``exp(1 - 1 / (1 - x^2))`` on ``|x| < 1``, zero elsewhere."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - x[inside] ** 2))
    return out


def snap_to_grid(grid: ThetaGrid, theta) -> int:
    j = np.round(np.asarray(theta, dtype=float) / grid.h - 0.5).astype(int)
    return grid.flat_index(j)


def window(grid: ThetaGrid, center: int, width: float) -> np.ndarray:
    """Product bump of half-width ``width`` (radians) around grid point ``center``."""
    dj = grid.indices - grid.indices[center]
    dj = (dj + grid.L // 2) % grid.L - grid.L // 2
    return np.prod(bump(dj * grid.h / width), axis=1)


def band_packet(d: IonDensity, grid: ThetaGrid, basis: PlaneWaveBasis, band: int,
                center, width: float, amplitude=1.0, spectra=None, radius=DEFAULT_RADIUS,
                coupling=None, workers=None, **solve_kw):
    """Z-gauge initial data on one band with a smooth window in theta.

    ``band`` indexes the |omega|-sorted eigenpairs at the (grid-snapped) centre.
    At every point of the window the eigencolumn with the largest overlap with
    the centre eigenvector is used, its phase aligned to that overlap.
    Overlaps are taken between cell samples (:func:`to_samples`), which keeps
    the cell data concentrated near ``n = 0``.  Extra keywords go to
    :func:`compute_spectra`.  Returns
    ``(field, spectra)``; spectra are computed on the window support only.
    """
    c = snap_to_grid(grid, center)
    win = window(grid, c, width)
    supp = np.flatnonzero(win > 0)
    spectra = dict(spectra or {})
    todo = [j for j in supp if j not in spectra]
    if todo:
        spectra.update(compute_spectra(d, grid, basis, todo, radius, coupling=coupling,
                                       workers=workers, **solve_kw))
    s0 = to_samples(grid.points[c], basis, spectra[c].vectors[:, band])
    vals = np.zeros((len(grid), basis.D), dtype=complex)
    for j in supp:
        ov = to_samples(grid.points[j], basis, spectra[j].vectors).conj().T @ s0
        k = int(np.argmax(np.abs(ov)))
        vals[j] = amplitude * win[j] * spectra[j].vectors[:, k] * (ov[k] / abs(ov[k]))
    return BlochField(grid, basis, vals, "Z"), spectra


def band_gradients(field: BlochField, spectra, rel=1e-10) -> list:
    """Finite-difference ``grad omega`` of every occupied eigencolumn.

    Returns ``(j, k, weight, gradient)`` tuples where ``weight`` is
    ``|<v_k, Z_j>|^2``; columns carrying less than ``rel`` of the point's
    weight are skipped.  Bands are followed to the axis neighbours (where
    spectra exist) by maximal overlap of the eigenvectors' cell samples;
    central differences where both neighbours exist, one-sided otherwise.
    """
    grid = field.grid
    h = grid.h
    eye = np.eye(3, dtype=int)
    samples = {}

    def cell_vectors(j):
        if j not in samples:
            samples[j] = to_samples(grid.points[j], field.basis, spectra[j].vectors)
        return samples[j]

    out = []
    for j in _spectra_for(field, spectra):
        sd = spectra[j]
        c = np.abs(sd.vectors.conj().T @ field.values[j]) ** 2
        for k in np.flatnonzero(c > rel * c.sum()):
            g = np.zeros(3)
            for a in range(3):
                vals = {}
                for s in (1, -1):
                    nb = grid.neighbour(j, s * eye[a])
                    if nb in spectra:
                        o = np.abs(cell_vectors(nb).conj().T @ cell_vectors(j)[:, k])
                        vals[s] = spectra[nb].omegas[int(np.argmax(o))]
                if 1 in vals and -1 in vals:
                    g[a] = (vals[1] - vals[-1]) / (2 * h)
                elif vals:
                    s, w = next(iter(vals.items()))
                    g[a] = s * (w - sd.omegas[k]) / h
            out.append((int(j), int(k), float(c[k]), g))
    return out


def group_speed(field: BlochField, spectra, rel=1e-10) -> float:
    """Largest finite-difference group speed ``|grad omega|`` of the occupied bands."""
    grads = band_gradients(field, spectra, rel)
    return max((float(np.linalg.norm(g)) for *_, g in grads), default=0.0)


def horizon(L: int, speed: float, c_horizon=C_HORIZON) -> float:
    """Aliasing-trust horizon ``c_horizon * L / speed``."""
    return math.inf if speed == 0 else c_horizon * L / speed


@dataclass
class DecayTable:
    """Rows ``(t, discrete_norm, continuous_weighted_norm, continuous_norm, horizon_flag)``."""

    rows: list
    alpha: float
    R: int
    T_max: float
    group_speed: float
    monotone_deviation: float
    meta: dict = field(default_factory=dict)

    columns = ("t", "discrete_norm", "continuous_weighted_norm", "continuous_norm",
               "horizon_flag")

    def column(self, name) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)


def monotone_deviation(values) -> float:
    """Max deviation from the best non-increasing fit, relative to the first value."""
    y = np.asarray(values, dtype=float)
    if len(y) < 2 or y[0] == 0:
        return 0.0
    fit = isotonic_regression(y, increasing=False).x
    return float(np.max(np.abs(y - fit)) / abs(y[0]))


def decay_curve(initial: BlochField, spectra, flat: FlatBandReport | None, times,
                alpha=-2.0, R=4, nu=np.inf, c_horizon=C_HORIZON, speed=None) -> DecayTable:
    """Weighted-norm decay of the continuous component.

    Each time is evolved from ``t = 0`` (no accumulation).  Rows beyond the
    horizon are flagged and trigger a :class:`HorizonExceeded` warning.
    """
    if alpha >= 0:
        raise ValueError("decay runs need alpha < 0")
    if initial.gauge != "Z":
        raise GaugeMismatch("decay_curve expects Z-gauge initial data")
    if R > initial.grid.L / 4:
        raise AliasingGuard(f"box radius R={R} exceeds L/4 = {initial.grid.L / 4}")
    spec = WeightedNormSpec(alpha)
    if speed is None:
        speed = group_speed(initial, spectra)
    T_max = horizon(initial.grid.L, speed, c_horizon)
    rows = []
    for t in times:
        zt = evolve(initial, spectra, float(t))
        disc, cont = split_components(zt, spectra, flat)
        cont = energy_filter(cont, spectra, nu)
        cell = bloch_inverse(cont, R)
        rows.append((float(t), disc.norm(), weighted_norm(cell, spec), cont.norm(),
                     int(float(t) > T_max)))
    if any(r[4] for r in rows):
        warnings.warn(f"times beyond the horizon T_max = {T_max:.4g} are flagged",
                      HorizonExceeded, stacklevel=2)
    trusted = [r[2] for r in rows if not r[4]]
    return DecayTable(rows, alpha, R, T_max, speed, monotone_deviation(trusted),
                      meta={"c_horizon": c_horizon, "nu": nu})
