"""On-disk formats: JSON manifest plus CSV bodies.

Every CSV float is written with ``repr`` so values round-trip exactly.
Files are written to a temporary sibling and renamed into place, so a failed
command never leaves a truncated output behind.
"""

from __future__ import annotations

import gzip
import io
import json
import os
import tempfile
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pandas as pd

from .geometry import ScenarioGeometry, build_upa
from .propagation import CtfGrid, SweepPlan
from .spectral import PathObservations

SCHEMA_VERSION = "1"
MANIFEST_NAME = "manifest.json"
CTF_COLUMNS = ["element_index", "freq_hz", "re", "im"]
OBS_COLUMNS = ["element_row", "element_col", "dx_m", "dz_m", "delay_s", "distance_m", "gain_db", "phase_rad"]


# mkstemp creates 0600 files; finished outputs get the usual umask mode
_UMASK = os.umask(0)
os.umask(_UMASK)


class FormatError(ValueError):
    """A manifest or CSV file is malformed or inconsistent with its manifest."""


@contextmanager
def atomic_write(path: Path | str):
    """Open a text handle whose contents replace ``path`` only on success.

    A ``.gz`` suffix selects gzip compression with a zeroed header timestamp,
    so compressed outputs stay byte-reproducible.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with open(fd, "wb") as raw:
            if path.suffix == ".gz":
                with gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as gz:
                    with io.TextIOWrapper(gz, encoding="utf-8", newline="") as fh:
                        yield fh
            else:
                with io.TextIOWrapper(raw, encoding="utf-8", newline="") as fh:
                    yield fh
        os.chmod(tmp, 0o666 & ~_UMASK)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path | str, data: dict) -> None:
    with atomic_write(path) as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path: Path | str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None


def timestamp() -> str:
    """UTC timestamp, pinned by ``SOURCE_DATE_EPOCH`` when set."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = float(epoch) if epoch else time.time()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def make_manifest(scenario: ScenarioGeometry, sweep: SweepPlan, command: str, seed: int | None, **extra) -> dict:
    upa = scenario.upa
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "geometry": {
            "rows": upa.rows,
            "cols": upa.cols,
            "spacing_m": upa.spacing,
            "d0_m": scenario.d0,
            "theta_rad": scenario.theta,
        },
        "sweep": {"f_start_hz": sweep.f_start, "f_stop_hz": sweep.f_stop, "n_points": sweep.n_points},
        "provenance": {"command": command, "seed": seed, "timestamp": timestamp()},
    }
    manifest.update(extra)
    return manifest


def parse_manifest(manifest: dict) -> tuple[ScenarioGeometry, SweepPlan]:
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"unsupported manifest schema_version {manifest.get('schema_version')!r}")
    try:
        g = manifest["geometry"]
        s = manifest["sweep"]
        upa = build_upa(int(g["rows"]), int(g["cols"]), float(g["spacing_m"]))
        scenario = ScenarioGeometry(upa, float(g["d0_m"]), float(g.get("theta_rad", 0.0)))
        sweep = SweepPlan(float(s["f_start_hz"]), float(s["f_stop_hz"]), int(s["n_points"]))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"manifest missing or malformed field: {exc}") from None
    return scenario, sweep


def _jitter_offsets(scenario: ScenarioGeometry, manifest: dict) -> ScenarioGeometry:
    offsets = manifest.get("element_offsets_m")
    if offsets is None:
        return scenario
    upa = scenario.upa.with_offsets(np.asarray(offsets, dtype=float))
    return ScenarioGeometry(upa, scenario.d0, scenario.theta)


def load_manifest(directory: Path | str) -> tuple[dict, ScenarioGeometry, SweepPlan]:
    path = Path(directory) / MANIFEST_NAME
    manifest = read_json(path)
    scenario, sweep = parse_manifest(manifest)
    return manifest, _jitter_offsets(scenario, manifest), sweep


def write_ctf_csv(path: Path | str, ctf: CtfGrid) -> None:
    n_el, n = ctf.samples.shape
    idx = np.repeat(np.arange(n_el), n).tolist()
    freqs = np.tile(ctf.sweep.frequencies(), n_el).tolist()
    re = ctf.samples.real.ravel().tolist()
    im = ctf.samples.imag.ravel().tolist()
    with atomic_write(path) as fh:
        fh.write(",".join(CTF_COLUMNS) + "\n")
        step = 1 << 16
        for i in range(0, len(idx), step):
            sl = slice(i, i + step)
            fh.write("".join([f"{a},{b!r},{c!r},{d!r}\n" for a, b, c, d in zip(idx[sl], freqs[sl], re[sl], im[sl])]))


def read_ctf_csv(path: Path | str, scenario: ScenarioGeometry, sweep: SweepPlan) -> CtfGrid:
    df = _read_csv(path, CTF_COLUMNS)
    n_el, n = scenario.upa.n_elements, sweep.n_points
    if len(df) != n_el * n:
        raise FormatError(f"{path}: {len(df)} rows, manifest implies {n_el} x {n} = {n_el * n}")
    df = df.sort_values(["element_index", "freq_hz"], kind="stable")
    idx = df["element_index"].to_numpy().reshape(n_el, n)
    if not np.array_equal(idx, np.repeat(np.arange(n_el), n).reshape(n_el, n)):
        raise FormatError(f"{path}: element indices do not cover 0..{n_el - 1} with {n} samples each")
    freqs = df["freq_hz"].to_numpy(float).reshape(n_el, n)
    if not np.allclose(freqs, sweep.frequencies()[None, :], rtol=1e-9, atol=0):
        raise FormatError(f"{path}: frequencies do not match the manifest sweep")
    samples = df["re"].to_numpy(float) + 1j * df["im"].to_numpy(float)
    try:
        return CtfGrid(scenario, sweep, samples.reshape(n_el, n))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def observations_frame(obs: PathObservations, value_column: str = "gain_db", values=None) -> pd.DataFrame:
    upa = obs.geometry.upa
    rows, cols = np.divmod(np.arange(upa.n_elements), upa.cols)
    cols_out = list(OBS_COLUMNS)
    cols_out[cols_out.index("gain_db")] = value_column
    return pd.DataFrame(
        {
            "element_row": rows,
            "element_col": cols,
            "dx_m": upa.dx,
            "dz_m": upa.dz,
            "delay_s": obs.delay,
            "distance_m": obs.distance,
            value_column: obs.gain_db if values is None else np.asarray(values),
            "phase_rad": obs.phase,
        },
        columns=cols_out,
    )


def write_frame(path: Path | str, df: pd.DataFrame) -> None:
    columns = [df[c].tolist() for c in df.columns]
    with atomic_write(path) as fh:
        fh.write(",".join(df.columns) + "\n")
        for row in zip(*columns):
            fh.write(",".join(repr(v) for v in row) + "\n")


def write_observations_csv(path: Path | str, obs: PathObservations) -> None:
    write_frame(path, observations_frame(obs))


def _read_csv(path: Path | str, columns: list[str]) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except pd.errors.ParserError as exc:
        raise FormatError(f"{path}: {exc}") from None
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise FormatError(f"{path}: missing columns {missing}")
    return df


def read_observations_csv(path: Path | str, scenario: ScenarioGeometry | None = None) -> PathObservations:
    """Read a per-element observation CSV.

    With ``scenario`` given, the file must cover exactly its lattice; the
    per-element offsets in the file replace the nominal ones so that measured
    (possibly jittered) positions are kept. Without it, the lattice size is
    inferred from the row/col indices and ``d0`` defaults to the smallest
    distance in the file.
    """
    df = _read_csv(path, OBS_COLUMNS)
    if df[OBS_COLUMNS].isna().any().any():
        raise FormatError(f"{path}: empty cells")
    rows = int(df["element_row"].max()) + 1
    cols = int(df["element_col"].max()) + 1
    if scenario is None:
        spacing = _infer_spacing(df)
        upa = build_upa(rows, cols, spacing)
        scenario = ScenarioGeometry(upa, float(np.min(df["distance_m"])))
    upa = scenario.upa
    if (rows, cols) != (upa.rows, upa.cols) or len(df) != upa.n_elements:
        raise FormatError(f"{path}: lattice {rows}x{cols} ({len(df)} rows) does not match manifest {upa.rows}x{upa.cols}")
    order = df["element_row"].to_numpy() * cols + df["element_col"].to_numpy()
    if len(np.unique(order)) != len(order):
        raise FormatError(f"{path}: duplicate elements")
    df = df.iloc[np.argsort(order, kind="stable")]
    offsets = df[["dx_m", "dz_m"]].to_numpy(float)
    scenario = ScenarioGeometry(upa.with_offsets(offsets), scenario.d0, scenario.theta)
    return PathObservations(
        scenario,
        df["delay_s"].to_numpy(float),
        df["gain_db"].to_numpy(float),
        df["phase_rad"].to_numpy(float),
    )


def _infer_spacing(df: pd.DataFrame) -> float:
    for col in ("dx_m", "dz_m"):
        u = np.unique(df[col].to_numpy(float))
        if u.size > 1:
            return float(np.median(np.diff(u)))
    return 1.0
