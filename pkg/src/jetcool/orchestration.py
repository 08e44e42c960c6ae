"""The control loop: fixed-period cycles binding plant, hardware, and
controllers, plus the CSV scheduler.

One World object owns all mutable state and is advanced by exactly one
caller; telemetry frames it emits are immutable snapshots, safe to fan out.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from . import persistence
from .control import PidLoop, Region, decouple, region_mean
from .hardware import ChannelRole, IrFrame, WyeChannel, capture_ir_frame, \
    command_mfc, make_channels, step_mfc
from .plant import HeatGun, JetGeometry, PlateConfig, ThermalGrid, \
    row_positions, step_plant


class Mode(Enum):
    MFC_DIRECT = "mfc"
    TEMPERATURE = "temperature"


class SchedulerFormatError(ValueError):
    """Scheduler CSV rejected; message carries row/column diagnostics."""


@dataclass(frozen=True)
class SchedulerTable:
    """Time-indexed program of per-MFC flows or per-region setpoints.

    Zero-order hold: a row's values apply from its time (inclusive) until
    the next row's time.  Before the first row the first row's values apply.
    """

    times: tuple[float, ...]
    rows: tuple[tuple[float, ...], ...]
    mode: Mode = Mode.MFC_DIRECT

    def __post_init__(self):
        if not self.times:
            raise SchedulerFormatError("scheduler table is empty")
        if len(self.times) != len(self.rows):
            raise SchedulerFormatError("times and rows differ in length")

    @property
    def n_values(self) -> int:
        return len(self.rows[0])


def load_scheduler(text: str, mode: Mode = Mode.MFC_DIRECT) -> SchedulerTable:
    """Parse scheduler CSV: first column time (s), then one value per MFC
    (flow mode) or per region (setpoint mode)."""
    times: list[float] = []
    rows: list[tuple[float, ...]] = []
    width = None
    for lineno, line in enumerate(io.StringIO(text), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        cells = [c.strip() for c in line.split(",")]
        values = []
        for col, cell in enumerate(cells):
            try:
                values.append(float(cell))
            except ValueError:
                raise SchedulerFormatError(
                    f"row {lineno}, column {col + 1}: "
                    f"{cell!r} is not numeric") from None
        if len(values) < 2:
            raise SchedulerFormatError(
                f"row {lineno}: need a time and at least one value")
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise SchedulerFormatError(
                f"row {lineno}: {len(values)} columns, expected {width}")
        if times and values[0] <= times[-1]:
            raise SchedulerFormatError(
                f"row {lineno}: time {values[0]} does not increase "
                f"past {times[-1]}")
        times.append(values[0])
        rows.append(tuple(values[1:]))
    if not times:
        raise SchedulerFormatError("scheduler table is empty")
    return SchedulerTable(times=tuple(times), rows=tuple(rows), mode=mode)


def scheduler_lookup(table: SchedulerTable, t: float) -> tuple[float, ...]:
    """Values in force at time ``t`` (zero-order hold)."""
    idx = int(np.searchsorted(table.times, t, side="right")) - 1
    return table.rows[max(idx, 0)]


@dataclass
class LoopConfig:
    """Per-cycle behavior switches."""

    control_period: float = 1.0
    mode: Mode = Mode.MFC_DIRECT
    decoupler_enabled: bool = False
    scheduler: SchedulerTable | None = None

    def __post_init__(self):
        if self.control_period <= 0:
            raise ValueError("control_period must be > 0")


@dataclass(frozen=True, eq=False)
class TelemetryFrame:
    """One control-cycle snapshot, emitted at the start of the cycle."""

    time: float
    frame: IrFrame
    commanded: tuple[float, ...]
    actual: tuple[float, ...]
    region_means: tuple[float, ...]
    setpoints: tuple[float, ...]
    mode: Mode
    roles: tuple[ChannelRole, ...]


@dataclass
class World:
    """Everything the loop owns: plant, hardware, controllers, settings."""

    cfg: PlateConfig
    geom: JetGeometry
    grid: ThermalGrid
    channels: list[WyeChannel]
    regions: list[Region]
    loops: list[PidLoop]
    gun: HeatGun = HeatGun()
    config: LoopConfig = field(default_factory=LoopConfig)
    gain_matrix: np.ndarray | None = None
    noise_sigma: float = 0.5
    seed: int = 0
    rng: np.random.Generator = field(init=False)
    plot: dict = field(default_factory=lambda: {
        "min_temp": 20.0, "max_temp": 120.0, "points": 300})
    run_writer: persistence.RunLogWriter | None = None
    pixel_writer: persistence.PixelLogWriter | None = None
    save_start_time: float = 0.0

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)
        if len(self.regions) != len(self.loops):
            raise ValueError("one PID loop per region required")
        self.geom.validate_positions(self.cfg)

    @property
    def sim_time(self) -> float:
        return self.grid.sim_time

    def set_mode(self, mode: Mode) -> None:
        """Switch control mode; entry into temperature control is bumpless:
        each loop's bias becomes its MFC's current command."""
        if mode is self.config.mode:
            return
        if mode is Mode.TEMPERATURE:
            by_id = {ch.id: ch for ch in self.channels}
            for region, loop in zip(self.regions, self.loops):
                ch = by_id.get(region.bound_mfc)
                loop.arm(bias=ch.mfc.commanded_flow if ch else 0.0)
        self.config.mode = mode

    def start_save(self, run_writer, pixel_writer) -> None:
        self.run_writer = run_writer
        self.pixel_writer = pixel_writer
        self.save_start_time = self.sim_time

    def stop_save(self) -> None:
        for w in (self.run_writer, self.pixel_writer):
            if w is not None:
                w.close()
        self.run_writer = None
        self.pixel_writer = None


def make_world(n_channels: int = 5, cfg: PlateConfig | None = None,
               geom: JetGeometry | None = None, gun: HeatGun | None = None,
               seed: int = 0, noise_sigma: float = 0.5,
               control_period: float = 1.0) -> World:
    """Default world: n closed channels in a row, full-frame regions, one
    idle PID loop per region (region i bound to channel i)."""
    cfg = cfg or PlateConfig()
    geom = geom or JetGeometry(channel_positions=row_positions(cfg, n_channels))
    if len(geom.channel_positions) != n_channels:
        raise ValueError("geometry does not match channel count")
    return World(
        cfg=cfg,
        geom=geom,
        grid=ThermalGrid.uniform(cfg),
        channels=make_channels(n_channels),
        regions=[Region(id=i, bound_mfc=i) for i in range(n_channels)],
        loops=[PidLoop() for _ in range(n_channels)],
        gun=gun or HeatGun(center=(cfg.length_x / 2, cfg.length_y / 2)),
        config=LoopConfig(control_period=control_period),
        seed=seed,
        noise_sigma=noise_sigma,
    )


def _apply_scheduler(world: World) -> None:
    table = world.config.scheduler
    if table is None or table.mode is not world.config.mode:
        return
    values = scheduler_lookup(table, world.sim_time)
    if world.config.mode is Mode.MFC_DIRECT:
        if len(values) != len(world.channels):
            raise SchedulerFormatError(
                f"scheduler has {len(values)} flow columns for "
                f"{len(world.channels)} MFCs")
        for ch, flow in zip(world.channels, values):
            if ch.role is ChannelRole.INLET:
                command_mfc(ch, flow)
    else:
        if len(values) != len(world.regions):
            raise SchedulerFormatError(
                f"scheduler has {len(values)} setpoint columns for "
                f"{len(world.regions)} regions")
        for loop, sp in zip(world.loops, values):
            loop.setpoint = sp


MFC_INTERLEAVE_DT = 0.25  # s between flow/convection refreshes within a cycle


def _advance_hardware_and_plant(world: World, duration: float) -> None:
    """Step MFC lags and the plate together over one control period.

    Flows (and with them the convection field) refresh every quarter second;
    step_plant subdivides further on its own whenever stability needs it.
    """
    n_sub = max(1, int(np.ceil(duration / MFC_INTERLEAVE_DT)))
    sub_dt = duration / n_sub
    grid = world.grid
    for _ in range(n_sub):
        for ch in world.channels:
            step_mfc(ch, sub_dt)
        grid = step_plant(grid, world.channels, world.gun, world.cfg,
                          world.geom, sub_dt)
    world.grid = grid


def control_cycle(world: World) -> TelemetryFrame:
    """Run one fixed-period cycle and return its telemetry snapshot.

    Capture frame -> region means -> controller or scheduler/manual flow
    commands -> step MFCs and plant through the control period -> log.
    """
    cfg = world.config
    t = world.sim_time
    frame = capture_ir_frame(world.grid, world.noise_sigma, world.rng)
    means = [region_mean(frame, r) for r in world.regions]

    _apply_scheduler(world)

    by_id = {ch.id: ch for ch in world.channels}
    if cfg.mode is Mode.TEMPERATURE:
        # only loops whose bound channel is currently an inlet act
        active = []
        for i, region in enumerate(world.regions):
            ch = by_id.get(region.bound_mfc)
            if ch is not None and ch.role is ChannelRole.INLET:
                active.append((i, ch))
        outputs = {i: world.loops[i].step(means[i], cfg.control_period)
                   for i, _ in active}
        if cfg.decoupler_enabled and world.gain_matrix is not None and active:
            deltas = [outputs[i] - world.loops[i].output_bias for i, _ in active]
            idx = [i for i, _ in active]
            K = np.asarray(world.gain_matrix, dtype=float)[np.ix_(idx, idx)]
            adjusted = decouple(deltas, K)
            for (i, _), adj in zip(active, adjusted):
                outputs[i] = world.loops[i].output_bias + float(adj)
        for i, ch in active:
            command_mfc(ch, min(max(outputs[i], 0.0), 300.0))

    _advance_hardware_and_plant(world, cfg.control_period)

    telemetry = TelemetryFrame(
        time=t,
        frame=frame,
        commanded=tuple(ch.mfc.commanded_flow for ch in world.channels),
        actual=tuple(ch.mfc.actual_flow for ch in world.channels),
        region_means=tuple(means),
        setpoints=tuple(loop.setpoint for loop in world.loops),
        mode=cfg.mode,
        roles=tuple(ch.role for ch in world.channels),
    )

    if world.run_writer is not None:
        record = persistence.RunLogRecord(
            elapsed=t - world.save_start_time,
            commanded=telemetry.commanded,
            actual=telemetry.actual,
            region_means=telemetry.region_means,
            region_bounds=tuple((r.x_min, r.x_max, r.y_min, r.y_max)
                                for r in world.regions),
            setpoints=telemetry.setpoints if cfg.mode is Mode.TEMPERATURE else None,
            gains=tuple((lp.gains.kp, lp.gains.ki, lp.gains.kd)
                        for lp in world.loops)
            if cfg.mode is Mode.TEMPERATURE else None,
        )
        world.run_writer.append(record)
    if world.pixel_writer is not None:
        world.pixel_writer.append(t - world.save_start_time, frame.pixels)

    return telemetry


def run_cycles(world: World, n: int) -> list[TelemetryFrame]:
    """Advance ``n`` cycles, collecting telemetry."""
    return [control_cycle(world) for _ in range(n)]
