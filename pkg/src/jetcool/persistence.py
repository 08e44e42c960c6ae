"""State save/load and the two run-log files.

The state file is versioned plain text (key = value per line) capturing
everything needed to reproduce an experiment setup: region bounds and MFC
bindings, per-region gains and setpoints, mode, decoupler flag, and the
channel arrangement.  Run data goes to two CSV files: one row per control
cycle of flows/means/borders (plus setpoints and gains in temperature mode),
and a pixel log with the full 768-pixel frame per cycle.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import TextIO

import numpy as np

from .control import PidGains, Region
from .hardware import CAMERA_NX, CAMERA_NY, ChannelRole

STATE_VERSION = 1


class StateFormatError(ValueError):
    """State document rejected; message names the offending key."""


@dataclass
class ControlState:
    """The reproducible part of a setup, as stored in state files."""

    roles: tuple[ChannelRole, ...]
    regions: tuple[Region, ...]
    gains: tuple[PidGains, ...]
    setpoints: tuple[float, ...]
    mode: str = "mfc"  # "mfc" | "temperature"
    decoupler_enabled: bool = False

    def __post_init__(self):
        n = len(self.regions)
        if not (len(self.gains) == len(self.setpoints) == n):
            raise ValueError("regions, gains, and setpoints must align")
        if self.mode not in ("mfc", "temperature"):
            raise ValueError(f"unknown mode {self.mode!r}")


def save_state(state: ControlState) -> str:
    """Serialize to the versioned key = value document."""
    lines = [
        f"version = {STATE_VERSION}",
        f"mode = {state.mode}",
        f"decoupler = {'on' if state.decoupler_enabled else 'off'}",
        f"roles = {','.join(r.value for r in state.roles)}",
        f"regions = {len(state.regions)}",
    ]
    for region, gains, sp in zip(state.regions, state.gains, state.setpoints):
        p = f"region.{region.id}"
        lines += [
            f"{p}.bounds = {region.x_min},{region.x_max},"
            f"{region.y_min},{region.y_max}",
            f"{p}.bound_mfc = {region.bound_mfc}",
            f"{p}.kp = {gains.kp!r}",
            f"{p}.ki = {gains.ki!r}",
            f"{p}.kd = {gains.kd!r}",
            f"{p}.setpoint = {sp!r}",
        ]
    return "\n".join(lines) + "\n"


def _parse_keyvalues(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise StateFormatError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        pairs[key.strip()] = value.strip()
    return pairs


def _require(pairs: dict[str, str], key: str) -> str:
    if key not in pairs:
        raise StateFormatError(f"missing required key {key!r}")
    return pairs[key]


def load_state(text: str) -> ControlState:
    """Parse a state document; exact inverse of save_state."""
    pairs = _parse_keyvalues(text)
    version = _require(pairs, "version")
    if version != str(STATE_VERSION):
        raise StateFormatError(f"unknown state file version {version!r}")
    mode = _require(pairs, "mode")
    decoupler = _require(pairs, "decoupler")
    if decoupler not in ("on", "off"):
        raise StateFormatError(f"decoupler must be on/off, got {decoupler!r}")
    try:
        roles = tuple(ChannelRole(r)
                      for r in _require(pairs, "roles").split(","))
    except ValueError as exc:
        raise StateFormatError(f"bad roles value: {exc}") from None

    try:
        n_regions = int(_require(pairs, "regions"))
    except ValueError:
        raise StateFormatError("regions count is not an integer") from None

    regions, gains, setpoints = [], [], []
    for i in range(n_regions):
        p = f"region.{i}"
        bounds_raw = _require(pairs, f"{p}.bounds")
        try:
            x_min, x_max, y_min, y_max = (int(v) for v in bounds_raw.split(","))
        except ValueError:
            raise StateFormatError(f"{p}.bounds must be four integers") from None
        try:
            regions.append(Region(id=i, x_min=x_min, x_max=x_max,
                                  y_min=y_min, y_max=y_max,
                                  bound_mfc=int(_require(pairs, f"{p}.bound_mfc"))))
            gains.append(PidGains(kp=float(_require(pairs, f"{p}.kp")),
                                  ki=float(_require(pairs, f"{p}.ki")),
                                  kd=float(_require(pairs, f"{p}.kd"))))
            setpoints.append(float(_require(pairs, f"{p}.setpoint")))
        except StateFormatError:
            raise
        except ValueError as exc:
            raise StateFormatError(f"{p}: {exc}") from None
    return ControlState(roles=roles, regions=tuple(regions),
                        gains=tuple(gains), setpoints=tuple(setpoints),
                        mode=mode, decoupler_enabled=decoupler == "on")


@dataclass
class RunLogRecord:
    """One control-cycle row of the main run log."""

    elapsed: float
    commanded: tuple[float, ...]
    actual: tuple[float, ...]
    region_means: tuple[float, ...]
    region_bounds: tuple[tuple[int, int, int, int], ...]
    setpoints: tuple[float, ...] | None = None
    gains: tuple[tuple[float, float, float], ...] | None = None


def run_log_header(n_mfc: int, n_regions: int,
                   temperature_mode: bool) -> list[str]:
    cols = ["elapsed_s"]
    for i in range(n_mfc):
        cols += [f"mfc{i}_commanded_Lpm", f"mfc{i}_actual_Lpm"]
    for i in range(n_regions):
        cols += [f"region{i}_mean_C", f"region{i}_x_min_px",
                 f"region{i}_x_max_px", f"region{i}_y_min_px",
                 f"region{i}_y_max_px"]
        if temperature_mode:
            cols += [f"region{i}_setpoint_C", f"region{i}_kp_Lpm_per_C",
                     f"region{i}_ki_Lpm_per_Cs", f"region{i}_kd_Lpms_per_C"]
    return cols


class RunLogWriter:
    """Appends run-log rows as CSV; header written on first append.

    The column layout is fixed by the first record: appending records of a
    different shape afterwards is an error.
    """

    def __init__(self, target: str | Path | TextIO):
        self._file = open(target, "w", newline="") \
            if isinstance(target, (str, Path)) else target
        self._writer = csv.writer(self._file)
        self._layout: tuple[int, int, bool] | None = None
        self._last_elapsed: float | None = None

    def append(self, record: RunLogRecord) -> None:
        temperature_mode = record.setpoints is not None
        layout = (len(record.commanded), len(record.region_means),
                  temperature_mode)
        if self._layout is None:
            self._layout = layout
            self._writer.writerow(run_log_header(*layout))
        elif layout != self._layout:
            raise ValueError(f"record shape {layout} does not match "
                             f"this run's {self._layout}")
        if self._last_elapsed is not None \
                and record.elapsed < self._last_elapsed:
            raise ValueError("elapsed time must be non-decreasing")
        self._last_elapsed = record.elapsed

        row: list[str] = [repr(float(record.elapsed))]
        for cmd, act in zip(record.commanded, record.actual):
            row += [repr(float(cmd)), repr(float(act))]
        for i, mean in enumerate(record.region_means):
            row.append(repr(float(mean)))
            row += [str(v) for v in record.region_bounds[i]]
            if temperature_mode:
                row.append(repr(float(record.setpoints[i])))
                row += [repr(float(g)) for g in record.gains[i]]
        self._writer.writerow(row)

    def close(self) -> None:
        self._file.close()


def read_run_log(source: str | Path | TextIO) -> list[RunLogRecord]:
    """Parse a run-log CSV back into records (inverse of RunLogWriter)."""
    fh = open(source, newline="") if isinstance(source, (str, Path)) else source
    try:
        rows = list(csv.reader(fh))
    finally:
        if isinstance(source, (str, Path)):
            fh.close()
    if not rows:
        return []
    header = rows[0]
    n_mfc = sum(1 for c in header if c.endswith("_commanded_Lpm"))
    n_regions = sum(1 for c in header if c.endswith("_mean_C"))
    temperature_mode = any(c.endswith("_setpoint_C") for c in header)
    expected = run_log_header(n_mfc, n_regions, temperature_mode)
    if header != expected:
        raise ValueError("unrecognized run log header")

    records = []
    for row in rows[1:]:
        it = iter(row)
        elapsed = float(next(it))
        commanded, actual = [], []
        for _ in range(n_mfc):
            commanded.append(float(next(it)))
            actual.append(float(next(it)))
        means, bounds, setpoints, gains = [], [], [], []
        for _ in range(n_regions):
            means.append(float(next(it)))
            bounds.append(tuple(int(next(it)) for _ in range(4)))
            if temperature_mode:
                setpoints.append(float(next(it)))
                gains.append(tuple(float(next(it)) for _ in range(3)))
        records.append(RunLogRecord(
            elapsed=elapsed, commanded=tuple(commanded), actual=tuple(actual),
            region_means=tuple(means), region_bounds=tuple(bounds),
            setpoints=tuple(setpoints) if temperature_mode else None,
            gains=tuple(gains) if temperature_mode else None))
    return records


PIXEL_COUNT = CAMERA_NX * CAMERA_NY


def pixel_log_header() -> list[str]:
    # pixel index is row-major: p = y * 32 + x
    return ["elapsed_s"] + [f"p{i:03d}_C" for i in range(PIXEL_COUNT)]


class PixelLogWriter:
    """Appends one 769-field row (elapsed + 768 pixels) per frame."""

    def __init__(self, target: str | Path | TextIO):
        self._file = open(target, "w", newline="") \
            if isinstance(target, (str, Path)) else target
        self._writer = csv.writer(self._file)
        self._wrote_header = False

    def append(self, elapsed: float, pixels: np.ndarray) -> None:
        if pixels.shape != (CAMERA_NY, CAMERA_NX):
            raise ValueError(f"expected {CAMERA_NY}x{CAMERA_NX} frame, "
                             f"got {pixels.shape}")
        if not self._wrote_header:
            self._writer.writerow(pixel_log_header())
            self._wrote_header = True
        row = [repr(float(elapsed))] + [repr(float(v)) for v in pixels.ravel()]
        self._writer.writerow(row)

    def close(self) -> None:
        self._file.close()


def read_pixel_log(source: str | Path | TextIO) -> list[tuple[float, np.ndarray]]:
    """Parse a pixel log back into (elapsed, 24x32 frame) tuples."""
    fh = open(source, newline="") if isinstance(source, (str, Path)) else source
    try:
        rows = list(csv.reader(fh))
    finally:
        if isinstance(source, (str, Path)):
            fh.close()
    if not rows:
        return []
    if rows[0] != pixel_log_header():
        raise ValueError("unrecognized pixel log header")
    out = []
    for row in rows[1:]:
        if len(row) != PIXEL_COUNT + 1:
            raise ValueError(f"pixel row has {len(row)} fields, "
                             f"expected {PIXEL_COUNT + 1}")
        values = np.array([float(v) for v in row[1:]])
        out.append((float(row[0]), values.reshape(CAMERA_NY, CAMERA_NX)))
    return out
