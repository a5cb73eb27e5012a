"""Quasimomentum grids, band sweeps with continuity matching, flat-band
detection and finite-difference band derivatives."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import linear_sum_assignment

from .assembly import PlaneWaveBasis, assemble
from .density import DEFAULT_RADIUS, DELTA_MIN, TWO_PI, IonDensity
from .errors import CrossingContamination, EigFailed, EnergyNotPositive
from .spectral import TOL_PSD_REL, SpectralData, solve_spectrum

FLAT_TOL = 1e-6
GRAD_TOL = 1e-4
HESS_TOL = 1e-4
QUALITY_MIN = 0.5


class ThetaGrid:
    """Shifted uniform grid ``theta_j = 2 pi (j + 1/2) / L`` on the Brillouin zone.

    Points are stored in lexicographic order of ``j = (j1, j2, j3)``; flat index
    ``(j1 * L + j2) * L + j3``.
    """

    def __init__(self, L: int):
        if int(L) < 2:
            raise ValueError("grid size L must be >= 2")
        self.L = int(L)

    def __repr__(self):
        return f"ThetaGrid(L={self.L})"

    def __eq__(self, other):
        return isinstance(other, ThetaGrid) and other.L == self.L

    def __hash__(self):
        return hash(("ThetaGrid", self.L))

    def __len__(self):
        return self.L ** 3

    @property
    def h(self) -> float:
        return TWO_PI / self.L

    @property
    def shape(self):
        return (self.L, self.L, self.L)

    @cached_property
    def indices(self) -> np.ndarray:
        """``(P, 3)`` integer multi-indices."""
        return np.stack(np.unravel_index(np.arange(len(self)), self.shape), axis=1)

    @cached_property
    def axis(self) -> np.ndarray:
        return TWO_PI * (np.arange(self.L) + 0.5) / self.L

    @cached_property
    def points(self) -> np.ndarray:
        return self.axis[self.indices]

    @property
    def weights(self) -> np.ndarray:
        return np.full(len(self), self.h ** 3)

    def flat_index(self, j) -> int:
        j = np.mod(np.asarray(j, dtype=int), self.L)
        return int(np.ravel_multi_index(tuple(j.T), self.shape))

    def neighbour(self, idx, offset) -> int:
        """Flat index of the periodic neighbour ``j + offset``."""
        return self.flat_index(self.indices[idx] + np.asarray(offset))

    @cached_property
    def reflection(self) -> np.ndarray:
        """Permutation mapping point ``theta`` to ``2 pi - theta`` (componentwise)."""
        return np.array([self.flat_index(self.L - 1 - j) for j in self.indices])

    def min_dist_to_dual_lattice(self) -> float:
        p = self.points
        return float(np.min(np.linalg.norm(p - TWO_PI * np.round(p / TWO_PI), axis=1)))

    def parent(self, idx) -> int | None:
        """Spanning-tree parent used for band matching (None for the root)."""
        a, b, c = self.indices[idx]
        if c > 0:
            return self.flat_index((a, b, c - 1))
        if b > 0:
            return self.flat_index((a, b - 1, 0))
        if a > 0:
            return self.flat_index((a - 1, 0, 0))
        return None


def make_grid(L: int) -> ThetaGrid:
    return ThetaGrid(L)


@dataclass
class BandSurface:
    """Band values on a grid after continuity matching.

    ``bands[j, l]`` is band ``l`` at point ``j``; ``order[j, l]`` the column of
    the |omega|-sorted eigen-decomposition at ``j`` that carries it.  Failed
    points hold NaN and are listed in ``failures``.
    """

    grid: ThetaGrid
    N: int
    bands: np.ndarray
    match_quality: np.ndarray
    order: np.ndarray
    lambda_min_B: np.ndarray
    kappa: np.ndarray
    failures: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def valid(self) -> np.ndarray:
        return np.all(np.isfinite(self.bands), axis=1)

    @property
    def coverage(self) -> float:
        return float(self.valid.mean())

    @property
    def D(self) -> int:
        return self.bands.shape[1]

    def crossings(self, threshold=QUALITY_MIN) -> np.ndarray:
        """Boolean ``(P, D)`` mask of band values flagged as crossings."""
        q = self.match_quality
        return ~(q >= threshold)

    def band(self, k) -> np.ndarray:
        """Band ``k`` as an ``(L, L, L)`` array."""
        return self.bands[:, k].reshape(self.grid.shape)

    def rows(self):
        """``(theta1, theta2, theta3, band_index, omega, match_quality)`` tuples."""
        pts = self.grid.points
        for j in range(len(self.grid)):
            for l in range(self.D):
                yield (*pts[j], l, self.bands[j, l], self.match_quality[j, l])


def match_bands(parent_vecs, child_vecs):
    """Assignment of child eigencolumns to parent bands by maximal overlap.

    Returns ``(perm, quality)`` with ``perm[l]`` the child column of band ``l``
    and ``quality[l] = |<v_parent_l, v_child_perm[l]>|``.
    """
    O = np.abs(parent_vecs.conj().T @ child_vecs)
    rows, cols = linear_sum_assignment(O, maximize=True)
    perm = np.empty(len(rows), dtype=int)
    perm[rows] = cols
    return perm, O[rows, cols][np.argsort(rows)]


def _solve_point(d, theta, basis, radius, jellium, coupling, with_kappa, keep_sqrt=False,
                 tol_psd=TOL_PSD_REL, delta_min=DELTA_MIN):
    ops = assemble(d, theta, basis, radius, jellium, coupling, delta_min=delta_min)
    return solve_spectrum(ops, with_kappa=with_kappa, keep_sqrt=keep_sqrt,
                          tol_psd_rel=tol_psd)


def _map(fn, items, workers):
    if workers is None or workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def sweep_bands(d: IonDensity, grid: ThetaGrid, N, radius=DEFAULT_RADIUS, jellium=True,
                coupling=None, with_kappa=False, workers=None, keep_spectra=False,
                tol_psd=TOL_PSD_REL, delta_min=DELTA_MIN):
    """Solve at every grid point and match band labels along a spanning tree.

    The tree links ``(a, b, c)`` to ``(a, b, c-1)``, ``(a, b-1, 0)`` or
    ``(a-1, 0, 0)``.  Eigenvectors are kept only until every child of a point
    has been matched.  Per-point positivity or eigensolver failures are
    recorded in ``failures`` instead of aborting the sweep.

    With ``keep_spectra=True`` returns ``(surface, spectra)`` where ``spectra``
    maps flat index to :class:`SpectralData`.
    """
    basis = N if isinstance(N, PlaneWaveBasis) else PlaneWaveBasis(N)
    P, D = len(grid), basis.D
    bands = np.full((P, D), np.nan)
    quality = np.full((P, D), np.nan)
    order = np.tile(np.arange(D), (P, 1))
    lam_min = np.full(P, np.nan)
    kap = np.full(P, np.nan)
    failures = {}
    parents = [grid.parent(j) for j in range(P)]
    pending = np.zeros(P, dtype=int)
    for p in parents:
        if p is not None:
            pending[p] += 1
    live = {}
    kept = {} if keep_spectra else None

    def solve(j):
        try:
            return _solve_point(d, grid.points[j], basis, radius, jellium, coupling,
                                with_kappa, keep_spectra, tol_psd, delta_min)
        except (EnergyNotPositive, EigFailed) as exc:
            return exc

    plane = grid.L * grid.L
    for start in range(0, P, plane):
        idx = list(range(start, min(P, start + plane)))
        results = _map(solve, idx, workers)
        for j, res in zip(idx, results):
            p = parents[j]
            if isinstance(res, Exception):
                failures[j] = f"{type(res).__name__}: {res}"
                if p is not None:
                    _release(p, pending, live)
                continue
            lam_min[j], kap[j] = res.lambda_min_B, res.kappa
            if p is None:
                perm, qual = np.arange(D), np.ones(D)
            elif p in live:
                perm, qual = match_bands(live[p], res.vectors)
            else:
                perm, qual = np.arange(D), np.zeros(D)
            if p is not None:
                _release(p, pending, live)
            order[j] = perm
            bands[j] = res.omegas[perm]
            quality[j] = qual
            if pending[j] > 0:
                live[j] = res.vectors[:, perm]
            if kept is not None:
                kept[j] = res
    surf = BandSurface(grid=grid, N=basis.N, bands=bands, match_quality=quality,
                       order=order, lambda_min_B=lam_min, kappa=kap, failures=failures,
                       meta={"radius": radius, "jellium": jellium,
                             "coupling": d.e if coupling is None else coupling})
    return (surf, kept) if keep_spectra else surf


def _release(p, pending, live):
    pending[p] -= 1
    if pending[p] == 0:
        live.pop(p, None)


@dataclass
class FlatBandReport:
    """Bands constant over the grid to within ``flat_tol * max(1, median|omega|)``.

    ``flat_values`` is the mid-range of each flat band, so ``max_deviation`` is
    half its range.  Entries are sorted by ``|flat_value|``.
    """

    flat_values: np.ndarray
    band_indices: np.ndarray
    max_deviation: np.ndarray
    flat_tol: float

    def __len__(self):
        return len(self.flat_values)

    @classmethod
    def empty(cls, flat_tol=FLAT_TOL):
        return cls(np.zeros(0), np.zeros(0, dtype=int), np.zeros(0), flat_tol)

    def to_dict(self) -> dict:
        return {
            "flat_tol": self.flat_tol,
            "flat_bands": [
                {"band_index": int(k), "omega": float(w), "max_deviation": float(dv)}
                for k, w, dv in zip(self.band_indices, self.flat_values, self.max_deviation)
            ],
        }

    def column_mask(self, omegas, slack=2.0) -> np.ndarray:
        """Eigencolumns of one point whose value lies on a flat band.

        A column matches a flat value ``w`` if it is within
        ``slack * (max_deviation + flat_tol * max(1, |w|))`` of it.
        """
        omegas = np.asarray(omegas)
        mask = np.zeros(len(omegas), dtype=bool)
        for w, dv in zip(self.flat_values, self.max_deviation):
            mask |= np.abs(omegas - w) <= slack * (dv + self.flat_tol * max(1.0, abs(w)))
        return mask


def detect_flat_bands(surface: BandSurface, flat_tol=FLAT_TOL, min_coverage=0.9):
    if surface.coverage < min_coverage:
        raise ValueError(f"surface covers {surface.coverage:.0%} of the grid; "
                         f"need {min_coverage:.0%}")
    vals = surface.bands[surface.valid]
    hi, lo = vals.max(axis=0), vals.min(axis=0)
    scale = np.maximum(1.0, np.median(np.abs(vals), axis=0))
    flat = np.flatnonzero(hi - lo < flat_tol * scale)
    mid = 0.5 * (hi + lo)[flat]
    dev = 0.5 * (hi - lo)[flat]
    o = np.argsort(np.abs(mid), kind="stable")
    return FlatBandReport(mid[o], flat[o], dev[o], flat_tol)


def flat_band_stability(report, refined, flat_tol=FLAT_TOL):
    """Compare flat values between truncations N and N+1.

    Returns a boolean per entry of ``report``: True if some flat value of
    ``refined`` lies within ``10 * flat_tol * max(1, |w|)``; False marks a
    likely truncation artifact.
    """
    out = []
    for w in report.flat_values:
        tol = 10 * flat_tol * max(1.0, abs(w))
        out.append(bool(len(refined) and np.min(np.abs(refined.flat_values - w)) <= tol))
    return np.array(out, dtype=bool)


@dataclass
class BandDerivatives:
    band: int
    gradient: np.ndarray      # (L, L, L, 3)
    hessian: np.ndarray       # (L, L, L, 3, 3)
    contaminated: np.ndarray  # (L, L, L) bool
    degenerate: np.ndarray    # (L, L, L) bool
    degenerate_fraction: float
    grad_tol: float
    hess_tol: float


def _stencil_offsets():
    offs = []
    for a in range(3):
        e = np.eye(3, dtype=int)[a]
        offs += [e, -e]
        for b in range(a + 1, 3):
            f = np.eye(3, dtype=int)[b]
            offs += [e + f, e - f, -e + f, -e - f]
    return offs


def finite_differences(values, h):
    """Periodic central-difference gradient and Hessian of an ``(L, L, L)`` array."""
    w = np.asarray(values, dtype=float)
    g = np.empty(w.shape + (3,))
    H = np.empty(w.shape + (3, 3))
    for a in range(3):
        wp, wm = np.roll(w, -1, axis=a), np.roll(w, 1, axis=a)
        g[..., a] = (wp - wm) / (2 * h)
        H[..., a, a] = (wp - 2 * w + wm) / h ** 2
        for b in range(a + 1, 3):
            pp = np.roll(np.roll(w, -1, axis=a), -1, axis=b)
            pm = np.roll(np.roll(w, -1, axis=a), 1, axis=b)
            mp_ = np.roll(np.roll(w, 1, axis=a), -1, axis=b)
            mm = np.roll(np.roll(w, 1, axis=a), 1, axis=b)
            H[..., a, b] = H[..., b, a] = (pp - pm - mp_ + mm) / (4 * h * h)
    return g, H


def band_derivatives(surface: BandSurface, k: int, grad_tol=GRAD_TOL, hess_tol=HESS_TOL,
                     strict=False, quality_min=QUALITY_MIN) -> BandDerivatives:
    """Gradient, Hessian and the degenerate-point fraction of band ``k``.

    A point is degenerate if ``|grad| < grad_tol`` and ``|det Hess| < hess_tol``.
    Points whose stencil touches a failed point or a flagged crossing are
    contaminated: they are excluded from the fraction, or raise
    :class:`CrossingContamination` when ``strict``.
    """
    grid = surface.grid
    w = surface.band(k)
    bad = (~np.isfinite(w)) | surface.crossings(quality_min)[:, k].reshape(grid.shape)
    contaminated = bad.copy()
    for off in _stencil_offsets():
        contaminated |= np.roll(bad, tuple(-off), axis=(0, 1, 2))
    if strict and contaminated.any():
        raise CrossingContamination(
            f"band {k}: {int(contaminated.sum())} stencils touch a flagged crossing")
    g, H = finite_differences(np.where(np.isfinite(w), w, 0.0), grid.h)
    degenerate = (np.linalg.norm(g, axis=-1) < grad_tol) & \
        (np.abs(np.linalg.det(H)) < hess_tol) & ~contaminated
    clean = ~contaminated
    frac = float(degenerate[clean].mean()) if clean.any() else float("nan")
    return BandDerivatives(k, g, H, contaminated, degenerate, frac, grad_tol, hess_tol)
