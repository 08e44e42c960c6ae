"""Headless experiment harness: bump test, setpoint tracking, disturbance
rejection, and response-metric extraction from run logs.

Every run is reproducible bit for bit under a fixed seed and writes the two
standard log files plus a metrics summary into its output directory.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import scenarios as sc
from .control import PidGains, StepNotFound, savgol_filter
from .hardware import ChannelRole, MAX_FLOW, MIN_FLOW, command_mfc
from .orchestration import Mode, World, control_cycle
from .persistence import PixelLogWriter, RunLogWriter
from .plant import steady_state

BUMP_ARRANGEMENT = [ChannelRole.OUTLET, ChannelRole.CLOSED, ChannelRole.INLET,
                    ChannelRole.CLOSED, ChannelRole.OUTLET]
BUMP_INLET = 2
DISTURBANCE_ARRANGEMENT = [ChannelRole.OUTLET, ChannelRole.INLET,
                           ChannelRole.CLOSED, ChannelRole.INLET,
                           ChannelRole.OUTLET]
# paper-style labels: the left inlet hosts "MFC 1", the right one "MFC 0"
DISTURBANCE_INLETS = (1, 3)
DISTURBANCE_GAINS = PidGains(kp=10.0, ki=0.1, kd=0.0)
DISTURBANCE_SETPOINT = 100.0
GUN_ON_TIME = 50.0
GUN_MOVE_TIME = 1000.0
DISTURBANCE_END = 2000.0


@dataclass
class ResponseMetrics:
    """Step-response characterization of one logged run.

    ``t63`` and ``settling_time`` are measured from the step instant;
    settling uses a +-2% band of the steady change around the final value.
    Metrics are meaningful only when ``converged`` is set and ``degenerate``
    is not.
    """

    steady_gain: float
    t63: float
    settling_time: float
    overshoot_pct: float
    steady_state_error: float
    converged: bool
    degenerate: bool = False

    @classmethod
    def degenerate_result(cls) -> "ResponseMetrics":
        nan = math.nan
        return cls(steady_gain=nan, t63=nan, settling_time=nan,
                   overshoot_pct=nan, steady_state_error=nan,
                   converged=False, degenerate=True)


@dataclass
class ExperimentResult:
    metrics: ResponseMetrics | None
    run_log: Path
    pixel_log: Path
    extras: dict


def summarize_response(times, inputs, outputs, target: float | None = None,
                       window: int = 10, order: int = 1) -> ResponseMetrics:
    """Metrics from a logged step experiment.

    ``inputs`` must contain exactly one step (flow or setpoint); ``outputs``
    is the responding temperature series, smoothed here with the standard
    (10, 1) filter before measurement.
    """
    t = np.asarray(times, dtype=float)
    u = np.asarray(inputs, dtype=float)
    y = savgol_filter(np.asarray(outputs, dtype=float), window, order)

    changes = np.nonzero(np.abs(np.diff(u)) > 1e-9)[0]
    if changes.size == 0:
        raise StepNotFound("input never changes")
    k = int(changes[0]) + 1
    t_step = float(t[k])
    delta_u = float(u[-1] - u[0])

    y0 = float(y[:k].mean())
    tail = max(3, int(0.15 * (t.size - k)))
    y_ss = float(y[-tail:].mean())
    delta_y = y_ss - y0
    if delta_y == 0 or delta_u == 0:
        return ResponseMetrics.degenerate_result()

    prev = float(y[-2 * tail:-tail].mean())
    converged = abs(prev - y_ss) <= max(0.02 * abs(delta_y), 0.05)

    frac = (y[k:] - y0) / delta_y
    tf = t[k:]
    t63 = _crossing(tf, frac, 0.632)
    if t63 is None:
        return ResponseMetrics(steady_gain=delta_y / delta_u, t63=math.nan,
                               settling_time=math.nan, overshoot_pct=math.nan,
                               steady_state_error=math.nan, converged=False)

    band = 0.02 * abs(delta_y)
    outside = np.nonzero(np.abs(y[k:] - y_ss) > band)[0]
    settling = float(tf[outside[-1] + 1] - t_step) \
        if outside.size and outside[-1] + 1 < tf.size \
        else (float(tf[-1] - t_step) if outside.size else 0.0)

    direction = 1.0 if delta_y > 0 else -1.0
    excursion = float((direction * (y[k:] - y_ss)).max())
    overshoot = max(0.0, excursion) / abs(delta_y) * 100.0

    sse = float(y[-tail:].mean() - target) if target is not None else math.nan
    return ResponseMetrics(steady_gain=delta_y / delta_u,
                           t63=t63 - t_step, settling_time=settling,
                           overshoot_pct=overshoot, steady_state_error=sse,
                           converged=converged)


def _crossing(times: np.ndarray, values: np.ndarray,
              level: float) -> float | None:
    above = values >= level
    idx = int(np.argmax(above))
    if not above[idx]:
        return None
    if idx == 0:
        return float(times[0])
    t0, t1 = times[idx - 1], times[idx]
    v0, v1 = values[idx - 1], values[idx]
    if v1 == v0:
        return float(t1)
    return float(t0 + (level - v0) / (v1 - v0) * (t1 - t0))


def _run_cycles(world: World, seconds: float, collect: list | None = None,
                realtime: bool = False) -> None:
    n = int(round(seconds / world.config.control_period))
    for _ in range(n):
        frame = control_cycle(world)
        if collect is not None:
            collect.append(frame)
        if realtime:
            time.sleep(world.config.control_period)


def _start_logs(world: World, out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_path = out / "run_log.csv"
    pixel_path = out / "pixel_log.csv"
    world.start_save(RunLogWriter(run_path), PixelLogWriter(pixel_path))
    return run_path, pixel_path


def _write_metrics(out_dir: Path, metrics: ResponseMetrics | None,
                   extras: dict) -> None:
    doc = dict(extras)
    if metrics is not None:
        doc["metrics"] = asdict(metrics)
    (Path(out_dir) / "metrics.json").write_text(json.dumps(doc, indent=2))


def _fast_forward_flows(world: World) -> None:
    for ch in world.channels:
        ch.mfc.actual_flow = ch.mfc.commanded_flow


def bump_world(params: dict, seed: int) -> World:
    world = sc.build_world(params, seed=seed)
    sc.arrange(world, BUMP_ARRANGEMENT)
    world.regions[BUMP_INLET] = sc.zone_region(world.cfg, world.geom,
                                               BUMP_INLET, BUMP_INLET)
    world.gun = replace(world.gun, enabled=True,
                        total_power=params["gun_power"],
                        center=world.geom.channel_positions[BUMP_INLET])
    return world


def run_bump_test(flow_from: float, flow_to: float, out_dir: str | Path,
                  params: dict | None = None, seed: int = 1,
                  plateau: float = 120.0, duration: float = 2500.0,
                  realtime: bool = False) -> ExperimentResult:
    """Open-loop step in inlet flow on the calibrated single-inlet scenario.

    Settles at ``flow_from`` (unlogged), then logs a plateau, the step to
    ``flow_to``, and the transient to the new steady state.
    """
    for flow in (flow_from, flow_to):
        if not MIN_FLOW <= flow <= MAX_FLOW:
            raise ValueError(f"flow {flow} outside MFC range "
                             f"[{MIN_FLOW}, {MAX_FLOW}] L/min")
    params = params or sc.load_calibration()
    world = bump_world(params, seed)
    inlet = world.channels[BUMP_INLET]
    command_mfc(inlet, flow_from)
    _fast_forward_flows(world)

    if flow_from == flow_to:
        run_path, pixel_path = _start_logs(world, out_dir)
        _run_cycles(world, plateau, realtime=realtime)
        world.stop_save()
        metrics = ResponseMetrics.degenerate_result()
        _write_metrics(Path(out_dir), metrics, {"experiment": "bump",
                                                "degenerate": True})
        return ExperimentResult(metrics, run_path, pixel_path,
                                {"experiment": "bump"})

    grid, settled = steady_state(world.grid, world.channels, world.gun,
                                 world.cfg, world.geom, tol=5e-4,
                                 step_dt=2.0, max_steps=6000)
    world.grid = grid

    run_path, pixel_path = _start_logs(world, out_dir)
    frames: list = []
    _run_cycles(world, plateau, frames, realtime)
    command_mfc(inlet, flow_to)
    _run_cycles(world, duration, frames, realtime)
    world.stop_save()

    t = [f.time for f in frames]
    u = [f.commanded[BUMP_INLET] for f in frames]
    y = [f.region_means[BUMP_INLET] for f in frames]
    metrics = summarize_response(t, u, y)
    metrics.converged = metrics.converged and settled
    extras = {"experiment": "bump", "flow_from": flow_from,
              "flow_to": flow_to, "seed": seed}
    _write_metrics(Path(out_dir), metrics, extras)
    return ExperimentResult(metrics, run_path, pixel_path, extras)


def run_setpoint_tracking(sp_from: float, sp_to: float,
                          out_dir: str | Path,
                          gains: PidGains | None = None,
                          params: dict | None = None, seed: int = 1,
                          settle: float = 2500.0, plateau: float = 120.0,
                          duration: float = 2500.0,
                          realtime: bool = False) -> ExperimentResult:
    """Closed-loop setpoint step on the single-inlet scenario.

    Gains default to the direct-synthesis tuning of the committed process
    model.  The loop first regulates at ``sp_from`` (unlogged settle phase),
    then the logged run covers a plateau, the setpoint step, and the
    transient.
    """
    params = params or sc.load_calibration()
    gains = gains or sc.tuned_gains(params)
    world = bump_world(params, seed)
    world.grid = type(world.grid).uniform(world.cfg, sp_from)

    loop = world.loops[BUMP_INLET]
    loop.gains = gains
    loop.setpoint = sp_from
    world.set_mode(Mode.TEMPERATURE)

    _run_cycles(world, settle)
    zone0 = world.loops[BUMP_INLET].last_error + sp_from
    settled = abs(zone0 - sp_from) < 1.5

    run_path, pixel_path = _start_logs(world, out_dir)
    frames: list = []
    _run_cycles(world, plateau, frames, realtime)
    loop.setpoint = sp_to
    _run_cycles(world, duration, frames, realtime)
    world.stop_save()

    t = [f.time for f in frames]
    u = [f.setpoints[BUMP_INLET] for f in frames]
    y = [f.region_means[BUMP_INLET] for f in frames]
    metrics = summarize_response(t, u, y, target=sp_to)
    if sp_from == sp_to:
        metrics = ResponseMetrics.degenerate_result()
    else:
        metrics.converged = metrics.converged and settled

    flows = np.array([f.commanded[BUMP_INLET] for f in frames])
    tail = max(10, int(0.1 * len(frames)))
    extras = {
        "experiment": "setpoint", "sp_from": sp_from, "sp_to": sp_to,
        "seed": seed, "gains": asdict(gains),
        "final_flow_mean": float(flows[-tail:].mean()),
        "flow_saturated": bool(np.all(flows[-tail:] >= MAX_FLOW)
                               or np.all(flows[-tail:] <= 0.0)),
    }
    if not math.isnan(metrics.settling_time) and not metrics.degenerate:
        y_f = savgol_filter(np.asarray(y))
        n_pre = int(np.searchsorted(np.asarray(t),
                                    t[0] + plateau + metrics.settling_time))
        if n_pre < len(y_f) - 10:
            extras["post_settle_std"] = float(np.std(y_f[n_pre:]))
    _write_metrics(Path(out_dir), metrics, extras)
    return ExperimentResult(metrics, run_path, pixel_path, extras)


def disturbance_world(params: dict, seed: int) -> World:
    world = sc.build_world(params, seed=seed)
    sc.arrange(world, DISTURBANCE_ARRANGEMENT)
    for cid in DISTURBANCE_INLETS:
        world.regions[cid] = sc.zone_region(world.cfg, world.geom, cid, cid)
        world.loops[cid].gains = DISTURBANCE_GAINS
    for loop in world.loops:
        loop.setpoint = DISTURBANCE_SETPOINT
    world.gun = replace(world.gun, enabled=False,
                        total_power=params["gun_power_disturbance"],
                        center=world.geom.channel_positions[DISTURBANCE_INLETS[0]])
    world.set_mode(Mode.TEMPERATURE)
    return world


def _tail_slope(t: np.ndarray, y: np.ndarray, window_s: float = 120.0) -> float:
    """Least-squares slope (degC/s) of the filtered tail of a series."""
    y_f = savgol_filter(y)
    mask = t >= t[-1] - window_s
    return float(np.polyfit(t[mask], y_f[mask], 1)[0])


def run_disturbance_rejection(out_dir: str | Path, params: dict | None = None,
                              seed: int = 1,
                              realtime: bool = False) -> ExperimentResult:
    """Two PI loops reject a relocating localized heat load.

    Arrangement outlet / inlet / closed / inlet / outlet; both loops hold
    100 degC over 3x3 zones centered on their inlets.  The gun lights over
    the left inlet's zone at t=50 s and relocates to the right inlet's zone
    at t=1000 s; the run ends at t=2000 s.
    """
    params = params or sc.load_calibration()
    world = disturbance_world(params, seed)
    left, right = DISTURBANCE_INLETS

    run_path, pixel_path = _start_logs(world, out_dir)
    frames: list = []
    _run_cycles(world, GUN_ON_TIME, frames, realtime)
    world.gun = replace(world.gun, enabled=True,
                        center=world.geom.channel_positions[left])
    _run_cycles(world, GUN_MOVE_TIME - GUN_ON_TIME, frames, realtime)
    phase1_end = len(frames)
    world.gun = world.gun.moved_to(world.geom.channel_positions[right])
    _run_cycles(world, DISTURBANCE_END - GUN_MOVE_TIME, frames, realtime)
    world.stop_save()

    t = np.array([f.time for f in frames])
    cmd = {cid: np.array([f.commanded[cid] for f in frames])
           for cid in DISTURBANCE_INLETS}
    means = {cid: np.array([f.region_means[cid] for f in frames])
             for cid in DISTURBANCE_INLETS}

    pre = t < GUN_ON_TIME
    p1 = (t >= GUN_MOVE_TIME - 400) & (t < GUN_MOVE_TIME)
    p2 = t >= DISTURBANCE_END - 400
    after = t >= GUN_MOVE_TIME
    cross = np.nonzero(cmd[right][after] > cmd[left][after])[0]

    report = {
        "experiment": "disturbance",
        "seed": seed,
        "loaded_first": left,
        "loaded_second": right,
        "pre_disturbance_max_flow": float(max(cmd[left][pre].max(),
                                              cmd[right][pre].max())),
        "phase1_mean_flow": {str(c): float(cmd[c][p1].mean())
                             for c in DISTURBANCE_INLETS},
        "phase2_mean_flow": {str(c): float(cmd[c][p2].mean())
                             for c in DISTURBANCE_INLETS},
        "crossover_time": float(t[after][cross[0]]) if cross.size else None,
        "end_slopes_C_per_s": {str(c): _tail_slope(t, means[c])
                               for c in DISTURBANCE_INLETS},
        "phase1_end_slopes_C_per_s": {
            str(c): _tail_slope(t[:phase1_end], means[c][:phase1_end])
            for c in DISTURBANCE_INLETS},
    }
    report["resettled"] = all(abs(s) < 0.01
                              for s in report["end_slopes_C_per_s"].values())
    _write_metrics(Path(out_dir), None, report)
    return ExperimentResult(None, run_path, pixel_path, report)
