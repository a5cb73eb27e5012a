"""Command-line interface: ``check``, ``bands``, ``evolve`` and ``resolvent``.

Exit codes: 0 success, 1 a checked condition failed, 2 usage or configuration
error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from .assembly import PlaneWaveBasis
from .config import RunConfig, format_value, load_config
from .density import check_jellium, check_wiener
from .dynamics import (
    BlochField,
    band_packet,
    compute_spectra,
    decay_curve,
    group_speed,
    horizon,
    snap_to_grid,
    split_components,
    window,
)
from .errors import BlochDecayError, ConfigError
from .reporting import format_table, write_csv, write_json
from .resolvent import ResolventProbe, lap_scan, probe_levels
from .spectral import growth_fit, spectrum_at
from .sweep import FlatBandReport, detect_flat_bands, make_grid, sweep_bands

log = logging.getLogger("blochdecay")

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


def _solve_kw(cfg: RunConfig) -> dict:
    return {"tol_psd": cfg.tol.psd, "delta_min": cfg.tol.delta_min}


# -- commands -----------------------------------------------------------------

def cmd_check(cfg: RunConfig, out: Path, workers=None) -> int:
    d = cfg.density.build(cfg.base_dir)
    jr = check_jellium(d, cfg.jellium_radius, cfg.tol.jellium)
    wr = check_wiener(d, make_grid(cfg.L), cfg.radius, 0.0, cfg.tol.delta_min)
    meta = cfg.metadata()
    write_csv(out / "wiener.csv", meta, ("theta1", "theta2", "theta3", "min_eig"),
              wr.rows())
    i = int(np.argmin(wr.min_eig)) if len(wr.min_eig) else None
    payload = {
        "jellium": {"passed": jr.passed, "offender": jr.offender,
                    "offender_value": jr.offender_value, "radius": jr.radius, "tol": jr.tol},
        "wiener": {"passed": wr.passed, "points": len(wr.min_eig),
                   "min_eig": None if i is None else float(wr.min_eig[i]),
                   "argmin_theta": None if i is None else wr.grid[i],
                   "truncation_radius": wr.truncation_radius},
    }
    write_json(out / "check.json", meta, payload)
    print(format_table(
        ("condition", "passed", "detail"),
        [("jellium", jr.passed, f"max |sigma_hat(2 pi m)| = {jr.offender_value:.3e}"
          + ("" if jr.passed else f" at m = {jr.offender}")),
         ("wiener", wr.passed, "min lambda_min = "
          + ("n/a" if i is None else f"{wr.min_eig[i]:.3e}"))]))
    return EXIT_OK if jr.passed and wr.passed else EXIT_FAILED


def cmd_bands(cfg: RunConfig, out: Path, workers=None) -> int:
    d = cfg.density.build(cfg.base_dir)
    grid = make_grid(cfg.L)
    surf = sweep_bands(d, grid, cfg.N, cfg.radius, cfg.jellium, cfg.coupling,
                       with_kappa=True, workers=workers, **_solve_kw(cfg))
    meta = cfg.metadata()
    write_csv(out / "bands.csv", meta,
              ("theta1", "theta2", "theta3", "band_index", "omega", "match_quality"), surf.rows())
    write_csv(out / "points.csv", meta,
              ("theta1", "theta2", "theta3", "lambda_min_B", "kappa", "failed"),
              ((*grid.points[j], surf.lambda_min_B[j], surf.kappa[j], int(j in surf.failures))
               for j in range(len(grid))))
    try:
        flat = detect_flat_bands(surf, cfg.tol.flat).to_dict()
    except ValueError as exc:
        flat = {"error": str(exc)}
    write_json(out / "flat_bands.json", meta,
               {"flat": flat, "growth": _growth(cfg, d, grid),
                "failures": {str(k): v for k, v in sorted(surf.failures.items())}})
    print(f"{len(grid)} points, {surf.D} bands, {len(surf.failures)} failures, "
          f"{len(flat.get('flat_bands', []))} flat bands")
    return EXIT_NUMERIC if surf.failures else EXIT_OK


def _growth(cfg, d, grid) -> dict:
    theta = np.array(cfg.growth_theta) if cfg.growth_theta else grid.points[0]
    basis = PlaneWaveBasis(cfg.N)
    lo, hi = cfg.growth_k
    if hi > basis.D // 2:
        return {"status": f"skipped: k range up to {hi:g} needs D/2 >= {hi:g} "
                          f"(D = {basis.D})", "theta": theta}
    sd = spectrum_at(d, theta, basis, cfg.radius, cfg.jellium, cfg.coupling,
                     with_kappa=False, keep_sqrt=False, tol_psd_rel=cfg.tol.psd)
    g = growth_fit(sd, (int(lo), int(hi)))
    return {"status": "ok", "theta": theta, "slope": g.slope, "prefactor": g.prefactor,
            "eps_Q": g.eps_Q, "k_range": g.k_range, "flagged": g.flagged}


def _flat_report(cfg, d, workers) -> FlatBandReport:
    if cfg.dynamics.flat_L <= 0:
        return FlatBandReport.empty(cfg.tol.flat)
    surf = sweep_bands(d, make_grid(cfg.dynamics.flat_L), cfg.N, cfg.radius, cfg.jellium,
                       cfg.coupling, workers=workers, **_solve_kw(cfg))
    return detect_flat_bands(surf, cfg.tol.flat)


def _flat_initial(cfg, d, grid, basis, flat, workers):
    """Window times the flat-band eigencolumn nearest the first flat value."""
    dyn = cfg.dynamics
    c = snap_to_grid(grid, dyn.center)
    win = window(grid, c, dyn.width)
    supp = np.flatnonzero(win > 0)
    spectra = compute_spectra(d, grid, basis, supp, cfg.radius, cfg.jellium, cfg.coupling,
                              workers, **_solve_kw(cfg))
    vals = np.zeros((len(grid), basis.D), dtype=complex)
    for j in supp:
        sd = spectra[j]
        k = int(np.argmin(np.abs(sd.omegas - flat.flat_values[0])))
        vals[j] = dyn.amplitude * win[j] * sd.vectors[:, k]
    return BlochField(grid, basis, vals), spectra


def cmd_evolve(cfg: RunConfig, out: Path, workers=None) -> int:
    cfg.validate("evolve")
    d = cfg.density.build(cfg.base_dir)
    grid, basis = make_grid(cfg.L), PlaneWaveBasis(cfg.N)
    dyn = cfg.dynamics
    flat = _flat_report(cfg, d, workers)
    if dyn.initial == "flat":
        if len(flat) == 0:
            log.error("dynamics.initial = flat but no flat bands were detected")
            return EXIT_FAILED
        init, spectra = _flat_initial(cfg, d, grid, basis, flat, workers)
    else:
        init, spectra = band_packet(d, grid, basis, dyn.band, dyn.center, dyn.width,
                                    dyn.amplitude, radius=cfg.radius, coupling=cfg.coupling,
                                    workers=workers, jellium=cfg.jellium, **_solve_kw(cfg))
    speed = group_speed(init, spectra)
    T_max = horizon(cfg.L, speed, dyn.c_horizon)
    times = cfg.time_list(T_max)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        table = decay_curve(init, spectra, flat, times, dyn.alpha, dyn.R, dyn.nu,
                            dyn.c_horizon, speed)
    for w in caught:
        log.warning("%s", w.message)
    meta = {**cfg.metadata(), "T_max": table.T_max, "group_speed": table.group_speed,
            "monotone_deviation": table.monotone_deviation,
            "flat_values": list(flat.flat_values)}
    meta = {k: _meta_str(v) for k, v in meta.items()}
    write_csv(out / "decay.csv", meta, table.columns, table.rows)
    if table.rows:
        print(format_table(table.columns, table.rows))
    return EXIT_OK


def _meta_str(v):
    return v if isinstance(v, str) else format_value(v)


def cmd_resolvent(cfg: RunConfig, out: Path, workers=None) -> int:
    d = cfg.density.build(cfg.base_dir)
    grid, basis = make_grid(cfg.L), PlaneWaveBasis(cfg.N)
    rs = cfg.resolvent
    spectra = {}
    if rs.probe == "zero":
        Z = BlochField.zeros(grid, basis)
    elif rs.probe == "band":
        Z, spectra = band_packet(d, grid, basis, rs.band, rs.center, rs.width,
                                 radius=cfg.radius, coupling=cfg.coupling, workers=workers,
                                 jellium=cfg.jellium, **_solve_kw(cfg))
    else:
        c = snap_to_grid(grid, rs.center)
        win = window(grid, c, rs.width)
        supp = np.flatnonzero(win > 0)
        rng = np.random.default_rng(cfg.seed)
        vals = np.zeros((len(grid), basis.D), dtype=complex)
        vals[supp] = win[supp, None] * (rng.standard_normal((len(supp), basis.D))
                                        + 1j * rng.standard_normal((len(supp), basis.D)))
        Z = BlochField(grid, basis, vals)
        spectra = compute_spectra(d, grid, basis, supp, cfg.radius, cfg.jellium,
                                  cfg.coupling, workers, **_solve_kw(cfg))
    if np.any(Z.values):
        flat = _flat_report(cfg, d, workers)
        _, Z = split_components(Z, spectra, flat)
    if rs.omega_window:
        a, b = rs.omega_window
    else:
        lev = probe_levels(Z, spectra)
        a, b = (float(lev.min()), float(lev.max())) if len(lev) else (-1.0, 1.0)
    probe = ResolventProbe(Z, (a, b), cfg.epsilon_list())
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        table = lap_scan(probe, spectra, probe.omega_mesh(rs.omega_samples), rs.alpha, rs.R)
    for w in caught:
        log.warning("%s", w.message)
    ratios = table.trusted_ratios()
    meta = {**cfg.metadata(), "omega_window": (a, b),
            "ratio_min": float(ratios.min()) if len(ratios) else float("nan"),
            "ratio_max": float(ratios.max()) if len(ratios) else float("nan")}
    meta = {k: _meta_str(v) for k, v in meta.items()}
    write_csv(out / "lap.csv", meta, table.columns, table.rows)
    print(f"{len(table.rows)} rows, {sum(1 for r in table.rows if not r[4])} untrusted")
    return EXIT_OK


COMMANDS = {"check": cmd_check, "bands": cmd_bands, "evolve": cmd_evolve,
            "resolvent": cmd_resolvent}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="blochdecay",
                                 description="Bloch-spectral analysis of the linearized "
                                             "electron-ion lattice dynamics")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="key = value configuration file")
    ap.add_argument("--out", help="output directory (overrides 'out' in the config)")
    ap.add_argument("--workers", type=int, default=None,
                    help="worker threads (default: available cores)")
    ap.add_argument("--seed", type=int, default=None,
                    help="seed for random probes (overrides 'seed' in the config)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.out is not None:
            cfg.out = args.out
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        cfg.validate(args.command)
        d = cfg.density.build(cfg.base_dir)  # fail early on a bad density
        del d
    except (ConfigError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
    try:
        return COMMANDS[args.command](cfg, Path(cfg.out), workers)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (BlochDecayError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s: %s", type(exc).__name__, exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
