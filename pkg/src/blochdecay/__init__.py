"""Bloch-spectral analysis of the linearized electron-ion lattice dynamics.

Modules
-------
density     ion charge densities, Jellium and Wiener checks
assembly    plane-wave basis and Bloch operator blocks
spectral    Lambda = sqrt(B), K = Lambda iJ Lambda and its eigenpairs
sweep       quasimomentum grids, band matching, flat bands, derivatives
dynamics    Bloch transform, exact evolution, dispersion decay
resolvent   fiberwise resolvent, spectral density, absorption scans
cli         command-line entry point
"""
from .assembly import (
    T_MODEL,
    BlochOperatorSet,
    PlaneWaveBasis,
    assemble,
    assemble_b,
    dump_bmat,
    load_bmat,
)
from .density import (
    IonDensity,
    JelliumReport,
    WienerReport,
    check_jellium,
    check_wiener,
    example_density,
    wiener_min_eig,
)
from .dynamics import (
    BlochField,
    CellField,
    DecayTable,
    WeightedNormSpec,
    band_packet,
    bloch_forward,
    bloch_inverse,
    compute_spectra,
    decay_curve,
    evolve,
    split_components,
    weighted_norm,
)
from .errors import *  # noqa: F401,F403
from .resolvent import (
    LapTable,
    ResolventProbe,
    apply_resolvent,
    lap_scan,
    spectral_density,
)
from .spectral import GrowthFit, SpectralData, growth_fit, solve_spectrum, spectrum_at
from .sweep import (
    BandSurface,
    FlatBandReport,
    ThetaGrid,
    band_derivatives,
    detect_flat_bands,
    make_grid,
    sweep_bands,
)

__version__ = "0.1.0"
