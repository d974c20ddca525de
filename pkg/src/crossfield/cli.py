"""Command-line pipeline: synth -> extract -> fit -> report.

Each stage reads the manifest and CSV files left by the previous one in an
input directory and writes its own outputs to ``--out-dir``. Exit codes are
0 on success, 1 for domain errors (no path found, degenerate grid) and 2 for
I/O or configuration problems.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import shutil
import sys
from pathlib import Path

import numpy as np

from . import formats
from .fitting import DegenerateGrid, FitConfig, fit
from .geometry import CASES, DEFAULT_D0, DEFAULT_SPACING, ScenarioGeometry, build_upa
from .models import SPEED_OF_LIGHT, CrossFieldParams, classify_region, cross_field_pl
from .propagation import AperturePattern, SweepPlan, SynthPath, apply_position_jitter, synth_ctf
from .spectral import NoPathFound, PathObservations, ctf_to_cir, extract_dominant_path, unwrap_phase_grid

log = logging.getLogger("crossfield")

CTF_NAME = "ctf.csv"
OBS_NAME = "observations.csv"
SUMMARY_NAME = "summary.json"
FIT_NAME = "fit_report.json"
RESIDUAL_NAME = "residuals.csv"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- helpers


def _scenario_from_args(args) -> ScenarioGeometry:
    if args.case is not None:
        rows, cols, spacing = CASES[args.case]
    else:
        rows, cols, spacing = args.rows, args.cols, DEFAULT_SPACING
    rows = args.rows if args.rows is not None else rows
    cols = args.cols if args.cols is not None else cols
    spacing = args.spacing if args.spacing is not None else spacing
    if rows is None or cols is None:
        raise ConfigError("give --case or both --rows and --cols")
    try:
        return ScenarioGeometry(build_upa(rows, cols, spacing), args.d0, args.theta)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _input_dir(args) -> Path:
    return Path(args.input) if args.input else Path(args.out_dir)


def _center_index(obs: PathObservations) -> int:
    off = obs.geometry.upa.offsets
    return int(np.argmin(np.hypot(off[:, 0], off[:, 1])))


def _wavelength(sweep: SweepPlan) -> float:
    return SPEED_OF_LIGHT / sweep.center


def _load_observations(directory: Path) -> tuple[dict, PathObservations, SweepPlan]:
    manifest, scenario, sweep = formats.load_manifest(directory)
    obs = formats.read_observations_csv(directory / OBS_NAME, scenario)
    return manifest, obs, sweep


def _table(rows: list[tuple[str, str]]) -> str:
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"  {k:<{width}}  {v}" for k, v in rows)


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    scenario = _scenario_from_args(args)
    try:
        sweep = SweepPlan(args.f_start, args.f_stop, args.n_points)
        pattern = AperturePattern(args.qx, args.qz)
        paths = [SynthPath()]
        for x, y, z, loss in args.reflector or []:
            paths.append(SynthPath("specular", loss, (x, y, z)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    extra: dict = {}
    if args.jitter:
        upa = apply_position_jitter(scenario.upa, args.jitter, args.seed)
        scenario = ScenarioGeometry(upa, scenario.d0, scenario.theta)
        extra["element_offsets_m"] = upa.offsets.tolist()
    ctf = synth_ctf(scenario, sweep, paths, pattern, args.snr_db, args.seed, workers=args.workers)
    assessment = classify_region(scenario, _wavelength(sweep))
    name = CTF_NAME + (".gz" if args.gzip else "")
    manifest = formats.make_manifest(
        scenario,
        sweep,
        "synth",
        args.seed,
        synthesis={
            "pattern": {"qx": pattern.qx, "qz": pattern.qz},
            "paths": [p.to_json() for p in paths],
            "noise_snr_db": args.snr_db,
            "position_jitter_m": args.jitter,
        },
        rayleigh=assessment.to_json(),
        files={"ctf": name},
        **extra,
    )
    out = Path(args.out_dir)
    formats.write_ctf_csv(out / name, ctf)
    formats.write_json(out / formats.MANIFEST_NAME, manifest)
    print(f"wrote {out / name} ({scenario.upa.n_elements} elements x {sweep.n_points} points)")
    print(f"region: {assessment.region}  (Rayleigh distance {assessment.rayleigh_distance:.4f} m, d0 {scenario.d0} m)")
    return 0


def cmd_extract(args) -> int:
    src = _input_dir(args)
    manifest, scenario, sweep = formats.load_manifest(src)
    name = manifest.get("files", {}).get("ctf", CTF_NAME)
    ctf = formats.read_ctf_csv(src / name, scenario, sweep)
    cir = ctf_to_cir(ctf, args.window)
    obs = extract_dominant_path(cir, ctf, floor_db=args.floor_db)
    center = _center_index(obs)
    summary = {
        "n_elements": len(obs),
        "window": args.window,
        "gain_db_min": float(obs.gain_db.min()),
        "gain_db_max": float(obs.gain_db.max()),
        "gain_db_span": float(np.ptp(obs.gain_db)),
        "center_element": center,
        "center_delay_s": float(obs.delay[center]),
        "center_distance_m": float(obs.distance[center]),
        "center_gain_db": float(obs.gain_db[center]),
    }
    out = Path(args.out_dir)
    manifest = dict(manifest)
    manifest.setdefault("history", []).append(manifest["provenance"])
    manifest["provenance"] = {"command": "extract", "seed": args.seed, "timestamp": formats.timestamp()}
    manifest["files"] = {**manifest.get("files", {}), "observations": OBS_NAME, "summary": SUMMARY_NAME}
    manifest["extract"] = {"window": args.window, "floor_db": args.floor_db}
    if out.resolve() != src.resolve() and name in manifest["files"].values():
        # keep the CTF reference valid when writing elsewhere
        manifest["files"]["ctf"] = str((src / name).resolve())
    formats.write_observations_csv(out / OBS_NAME, obs)
    formats.write_json(out / SUMMARY_NAME, summary)
    formats.write_json(out / formats.MANIFEST_NAME, manifest)
    print(
        _table(
            [
                ("elements", str(len(obs))),
                ("gain min / max", f"{summary['gain_db_min']:.4f} / {summary['gain_db_max']:.4f} dB"),
                ("gain span", f"{summary['gain_db_span']:.4f} dB"),
                ("center delay", f"{summary['center_delay_s'] * 1e9:.4f} ns"),
                ("center distance", f"{summary['center_distance_m']:.6f} m"),
            ]
        )
    )
    return 0


def cmd_fit(args) -> int:
    src = _input_dir(args)
    manifest, obs, sweep = _load_observations(src)
    wavelength = args.wavelength or _wavelength(sweep)
    d0 = obs.geometry.d0
    config = FitConfig(
        max_iterations=args.max_iterations, tolerance=args.tolerance, restarts=args.restarts, seed=args.seed or 0
    )
    report = fit(obs, wavelength, d0, config)
    out = Path(args.out_dir)
    data = report.to_json(d0)
    data.update({"wavelength_m": wavelength, "d0_m": d0})
    formats.write_frame(out / RESIDUAL_NAME, formats.observations_frame(obs, "residual_db", report.residual_grid))
    formats.write_json(out / FIT_NAME, data)
    if out.resolve() != src.resolve():
        shutil.copyfile(src / formats.MANIFEST_NAME, out / formats.MANIFEST_NAME)
        shutil.copyfile(src / OBS_NAME, out / OBS_NAME)
    p = report.params
    print(
        _table(
            [
                ("d_ref", f"{p.d_ref:.6g} m"),
                ("c1", f"{p.c1:.6g}"),
                ("c2", f"{p.c2:.6g} 1/m"),
                ("c3", f"{p.c3:.6g}"),
                ("c4", f"{p.c4:.6g}"),
                ("MSE", f"{report.mse:.6g} dB^2"),
                ("converged", str(report.converged)),
            ]
        )
    )
    return 0


def _surface_frame(obs: PathObservations, values, name: str):
    import pandas as pd

    upa = obs.geometry.upa
    rows, cols = np.divmod(np.arange(upa.n_elements), upa.cols)
    return pd.DataFrame({"element_row": rows, "element_col": cols, "x_m": upa.dx, "z_m": upa.dz, name: values})


def phase_profiles(obs: PathObservations) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unwrapped phase grid plus per-row and per-column phase change.

    Row profiles are each row's x-unwrapped phase minus its first element;
    column profiles likewise along z. These are the curves of the phase-change
    table: one line per vertical (resp. horizontal) position.
    """
    grid = unwrap_phase_grid(obs)
    rows = grid - grid[:, :1]
    raw = obs.geometry.upa.as_grid(obs.phase)
    cols = np.unwrap(raw, axis=0)
    cols = cols - cols[:1, :]
    return grid, rows, cols


def _detrended_span(profiles: np.ndarray, coord: np.ndarray) -> float:
    """Max over profiles of (max - min) after removing the best-fit line."""
    if profiles.shape[1] < 3:
        return 0.0
    A = np.column_stack([np.ones_like(coord), coord])
    coef, *_ = np.linalg.lstsq(A, profiles.T, rcond=None)
    resid = profiles.T - A @ coef
    return float(np.max(np.ptp(resid, axis=0)))


def cmd_report(args) -> int:
    import pandas as pd

    src = _input_dir(args)
    manifest, obs, sweep = _load_observations(src)
    upa = obs.geometry.upa
    out = Path(args.out_dir)
    wavelength = _wavelength(sweep)

    fit_path = Path(args.fit) if args.fit else (src / FIT_NAME if (src / FIT_NAME).exists() else None)
    model_gain = None
    if fit_path is not None:
        fit_data = formats.read_json(fit_path)
        params = CrossFieldParams.from_json(fit_data["params"])
        wl = float(fit_data.get("wavelength_m", wavelength))
        d0 = float(fit_data.get("d0_m", obs.geometry.d0))
        model_gain = -cross_field_pl(upa.dx, upa.dz, wl, d0, params)

    grid, rows, cols = phase_profiles(obs)
    x = upa.dx.reshape(upa.rows, upa.cols)[0]
    z = upa.dz.reshape(upa.rows, upa.cols)[:, 0]
    nominal = ScenarioGeometry(build_upa(upa.rows, upa.cols, upa.spacing), obs.geometry.d0, obs.geometry.theta)
    assessment = classify_region(nominal, wavelength, args.boundary_band)
    rayleigh = assessment.to_json()
    rayleigh.update(
        {
            "wavelength_m": wavelength,
            "aperture_m": upa.aperture,
            "d0_m": obs.geometry.d0,
            "observed_max_row_phase_span_rad": _detrended_span(rows, x),
            "observed_max_col_phase_span_rad": _detrended_span(cols.T, z),
        }
    )

    unwrapped = _surface_frame(obs, grid.ravel(), "unwrapped_rad")
    unwrapped.insert(4, "phase_rad", obs.phase)
    unwrapped["row_change_rad"] = rows.ravel()
    unwrapped["col_change_rad"] = cols.ravel()

    outputs = {
        "measured_surface.csv": _surface_frame(obs, obs.gain_db, "gain_db"),
        "phase_unwrapped.csv": unwrapped,
    }
    if model_gain is not None:
        outputs["model_surface.csv"] = _surface_frame(obs, model_gain, "gain_db")
        rayleigh["model_mse_db2"] = float(np.mean((model_gain - obs.gain_db) ** 2))
    for name, frame in outputs.items():
        assert isinstance(frame, pd.DataFrame)
        formats.write_frame(out / name, frame)
    formats.write_json(out / "rayleigh.json", rayleigh)
    print(
        _table(
            [
                ("region", assessment.region),
                ("Rayleigh distance", f"{assessment.rayleigh_distance:.4f} m"),
                ("max phase error", f"{assessment.max_phase_error:.4f} rad (pi/8 = {math.pi / 8:.4f})"),
                ("below pi/8", str(assessment.linear_phase)),
            ]
        )
    )
    return 0


def cmd_rayleigh(args) -> int:
    scenario = _scenario_from_args(args)
    wavelength = args.wavelength or SPEED_OF_LIGHT / args.frequency
    a = classify_region(scenario, wavelength, args.boundary_band)
    data = a.to_json()
    data.update({"aperture_m": scenario.upa.aperture, "d0_m": scenario.d0, "wavelength_m": wavelength})
    print(json.dumps(data, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------- parser


def _add_geometry(p: argparse.ArgumentParser) -> None:
    p.add_argument("--case", type=int, choices=sorted(CASES), help="measurement preset (16x16, 32x32, 64x64)")
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--spacing", type=float, help="element spacing in meters (default 0.5 mm)")
    p.add_argument("--d0", type=float, default=DEFAULT_D0, help="array-center to receiver distance in meters")
    p.add_argument("--theta", type=float, default=0.0, help="receive angle off broadside in radians")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossfield", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out-dir", default=".", help="directory for outputs (default: current)")
    parser.add_argument("--config", help="JSON file of option defaults, keyed by option name")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize per-element CTFs")
    _add_geometry(p)
    p.add_argument("--f-start", type=float, default=260e9)
    p.add_argument("--f-stop", type=float, default=320e9)
    p.add_argument("--n-points", type=int, default=1001)
    p.add_argument("--qx", type=float, default=AperturePattern.qx, help="x-axis pattern exponent")
    p.add_argument("--qz", type=float, default=AperturePattern.qz, help="z-axis pattern exponent")
    p.add_argument("--snr-db", type=float, default=None, help="add noise at this SNR")
    p.add_argument("--jitter", type=float, default=0.0, help="positioning error std in meters")
    p.add_argument(
        "--reflector",
        type=float,
        nargs=4,
        action="append",
        metavar=("X", "Y", "Z", "LOSS_DB"),
        help="add a specular path via this point (repeatable)",
    )
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--gzip", action="store_true", help="gzip the CTF CSV")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="CTF -> CIR and per-element dominant path")
    p.add_argument("input", nargs="?", help="directory holding manifest.json and the CTF (default: --out-dir)")
    p.add_argument("--window", choices=["rectangular", "hann"], default="rectangular")
    p.add_argument("--floor-db", type=float, default=30.0)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("fit", help="fit the cross-field path loss model")
    p.add_argument("input", nargs="?", help="directory holding manifest.json and observations.csv")
    p.add_argument("--max-iterations", type=int, default=2000)
    p.add_argument("--tolerance", type=float, default=1e-10)
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--wavelength", type=float, default=None, help="model wavelength (default: sweep center)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("report", help="write plot-ready surfaces and the Rayleigh assessment")
    p.add_argument("input", nargs="?", help="directory holding manifest.json and observations.csv")
    p.add_argument("--fit", help="fit_report.json (default: the one in the input directory, if any)")
    p.add_argument("--boundary-band", type=float, default=0.15)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("rayleigh", help="classify a geometry as FF / Boundary / NF")
    _add_geometry(p)
    p.add_argument("--frequency", type=float, default=290e9)
    p.add_argument("--wavelength", type=float, default=None)
    p.add_argument("--boundary-band", type=float, default=0.15)
    p.set_defaults(func=cmd_rayleigh)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    """Parse ``argv``; values from ``--config`` act as defaults that flags override."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        cfg = formats.read_json(args.config)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[args.command]
    known = {a.dest for a in parser._actions} | {a.dest for a in sub._actions}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("config", "help", "command"):
            raise ConfigError(f"unknown config key {key!r} for {args.command}")
        target = sub if any(a.dest == dest for a in sub._actions) else parser
        target.set_defaults(**{dest: value})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"crossfield: config error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    log.debug("arguments: %s", vars(args))
    try:
        return args.func(args)
    except (DegenerateGrid, NoPathFound) as exc:
        print(f"crossfield: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, formats.FormatError, OSError, KeyError) as exc:
        print(f"crossfield: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"crossfield: invalid input: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
