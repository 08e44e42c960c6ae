"""Scripted search for the committed scenario constants.

The reference rig's bump test pins three observable targets: hot-zone mean
71 degC at 100 L/min, 64 degC at 150 L/min, and a 63.2% response time near
400 s.  The plant model has three free constants to match them: jet h_ref,
jet_sigma, and the gun power deposited on the plate.  Because the plate
equation is linear in temperature for a fixed convection field, steady
offsets scale exactly with gun power, so the search splits cleanly:

  1. Broyden-solve (h_ref, jet_sigma) so the ratio of specific offsets
     a(150)/a(100) and the step-response t63 hit their targets.
  2. Set gun power from the absolute 71 degC level: P = 51 / a(100).

The 400 s response only emerges when the measured zone rides the plate's
slow global pole, which takes a broad jet footprint (sigma comparable to
the channel pitch) and a small flow-independent base loss; tight footprints
put a fast local mode under the zone and cap t63 far below target no matter
the other constants.  natural_h = 8 W/(m^2 K) is committed as part of that
regime.

The result is written as a config file; the packaged data/calibration.cfg
is the committed output of one such run.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import scenarios as sc
from .control import fit_fopdt, region_mean
from .hardware import ChannelRole, capture_ir_frame, command_mfc
from .plant import steady_state, step_plant

AMBIENT = 20.0
T_AT_100 = 71.0
T_AT_150 = 64.0
T63_TARGET = 400.0
RATIO_TARGET = (T_AT_150 - AMBIENT) / (T_AT_100 - AMBIENT)
PAPER_KP = 10.46  # reported proportional gain the tuning target reproduces
PROBE_POWER = 100.0  # W, arbitrary thanks to linearity

BUMP_ARRANGEMENT = [ChannelRole.OUTLET, ChannelRole.CLOSED, ChannelRole.INLET,
                    ChannelRole.CLOSED, ChannelRole.OUTLET]
DISTURBANCE_ARRANGEMENT = [ChannelRole.OUTLET, ChannelRole.INLET,
                           ChannelRole.CLOSED, ChannelRole.INLET,
                           ChannelRole.OUTLET]
INLET_CHANNEL = 2


def _setup(params: dict, arrangement, flows: dict[int, float],
           gun_channel: int):
    world = sc.build_world(params, seed=0)
    world.noise_sigma = 0.0
    sc.arrange(world, arrangement)
    for cid, q in flows.items():
        command_mfc(world.channels[cid], q)
    for ch in world.channels:
        ch.mfc.actual_flow = ch.mfc.commanded_flow
    world.gun = replace(
        world.gun, enabled=True, total_power=PROBE_POWER,
        center=world.geom.channel_positions[gun_channel])
    region = sc.zone_region(world.cfg, world.geom, gun_channel, 0)
    return world, region


def _zone_mean(world, region, grid) -> float:
    return region_mean(capture_ir_frame(grid, 0.0), region)


def _steady_offset(world, region) -> float:
    grid, converged = steady_state(
        world.grid, world.channels, world.gun, world.cfg, world.geom,
        tol=2e-4, step_dt=2.0, max_steps=8000)
    if not converged:
        raise RuntimeError("steady state did not converge")
    return (_zone_mean(world, region, grid) - world.cfg.ambient_temp) \
        / PROBE_POWER


def specific_offset(params: dict, flow: float) -> float:
    """Steady (T_zone - ambient) per watt of gun power, single-inlet bump
    arrangement with the gun over the inlet."""
    world, region = _setup(params, BUMP_ARRANGEMENT, {INLET_CHANNEL: flow},
                           INLET_CHANNEL)
    return _steady_offset(world, region)


def disturbance_offset(params: dict, flow: float) -> float:
    """Same specific offset for the two-inlet disturbance arrangement with
    the gun over the first inlet (channel 1) at the given flow."""
    world, region = _setup(params, DISTURBANCE_ARRANGEMENT,
                           {1: flow, 3: 0.0}, gun_channel=1)
    return _steady_offset(world, region)


def step_trace(params: dict, flow_from: float, flow_to: float,
               duration: float = 2500.0, sample_dt: float = 2.0):
    """Noiseless bump-test trace (t, u, y) from steady state at flow_from."""
    world, region = _setup(params, BUMP_ARRANGEMENT,
                           {INLET_CHANNEL: flow_from}, INLET_CHANNEL)
    grid, _ = steady_state(world.grid, world.channels, world.gun, world.cfg,
                           world.geom, tol=2e-4, step_dt=2.0, max_steps=8000)
    pre = 60.0
    times, flows, means = [], [], []
    t = -pre
    while t < duration:
        if t >= 0 and flows and flows[-1] == flow_from:
            command_mfc(world.channels[INLET_CHANNEL], flow_to)
            for ch in world.channels:
                ch.mfc.actual_flow = ch.mfc.commanded_flow
        times.append(t)
        flows.append(world.channels[INLET_CHANNEL].mfc.commanded_flow)
        means.append(_zone_mean(world, region, grid))
        grid = step_plant(grid, world.channels, world.gun, world.cfg,
                          world.geom, sample_dt)
        t += sample_dt
    return np.array(times), np.array(flows), np.array(means)


def measure_t63(params: dict) -> float:
    t, u, y = step_trace(params, 100.0, 150.0)
    y0 = y[t < 0].mean()
    y_ss = y[int(0.9 * y.size):].mean()
    level = y0 + 0.632 * (y_ss - y0)
    gone = np.nonzero((y <= level) & (t >= 0))[0]
    if gone.size == 0:
        raise RuntimeError("response never reaches 63.2%")
    i = gone[0]
    t0, t1 = t[i - 1], t[i]
    v0, v1 = y[i - 1], y[i]
    return float(t0 + (level - v0) / (v1 - v0) * (t1 - t0))


def _residuals(params: dict) -> np.ndarray:
    a100 = specific_offset(params, 100.0)
    a150 = specific_offset(params, 150.0)
    t63 = measure_t63(params)
    return np.array([a150 / a100 - RATIO_TARGET, (t63 - T63_TARGET) / 100.0])


def solve_constants(params: dict, max_iter: int = 12,
                    verbose: bool = True) -> dict:
    """Broyden iteration on (h_ref, jet_sigma) for the ratio/t63 targets."""
    x = np.array([params["h_ref"], params["jet_sigma"]])

    def f(xv):
        p = dict(params, h_ref=float(xv[0]), jet_sigma=float(xv[1]))
        return _residuals(p)

    fx = f(x)
    # finite-difference Jacobian to start
    J = np.zeros((2, 2))
    for j, step in enumerate((5.0, 0.003)):
        xp = x.copy()
        xp[j] += step
        J[:, j] = (f(xp) - fx) / step
    for it in range(max_iter):
        if verbose:
            print(f"  iter {it}: h_ref={x[0]:.1f} sigma={x[1]:.4f} "
                  f"residuals={fx}")
        # ratio tolerance 4e-3 is ~0.2 degC on the 150 L/min level
        if np.abs(fx[0]) < 4e-3 and np.abs(fx[1]) < 0.05:
            break
        dx = np.linalg.solve(J, -fx)
        dx[0] = np.clip(dx[0], -10.0, 10.0)
        dx[1] = np.clip(dx[1], -0.004, 0.004)
        x_new = x + dx
        x_new[0] = min(max(5.0, x_new[0]), 200.0)
        x_new[1] = min(max(0.015, x_new[1]), 0.06)
        fx_new = f(x_new)
        denom = float(dx @ dx)
        if denom > 0:
            J += np.outer(fx_new - fx - J @ dx, dx) / denom
        x, fx = x_new, fx_new
    return dict(params, h_ref=float(round(x[0], 3)),
                jet_sigma=float(round(x[1], 5)))


def calibrate(params: dict | None = None, verbose: bool = True) -> dict:
    """Full search; returns the calibrated params dict."""
    params = dict(params or sc.DEFAULTS)
    if verbose:
        print("solving (h_ref, jet_sigma) for offset ratio and t63...")
    params = solve_constants(params, verbose=verbose)

    a100 = specific_offset(params, 100.0)
    params["gun_power"] = round((T_AT_100 - AMBIENT) / a100, 3)
    if verbose:
        print(f"gun_power = {params['gun_power']} W")

    # identify the process model on the final constants and pick the tuning
    # target that reproduces the reference proportional gain
    t, u, y = step_trace(params, 100.0, 150.0)
    scale = params["gun_power"] / PROBE_POWER
    model = fit_fopdt(t, u, 20.0 + (y - 20.0) * scale)
    params["fopdt_gain"] = round(model.gain, 5)
    params["fopdt_tau"] = round(model.time_constant, 2)
    params["fopdt_theta"] = round(model.dead_time, 2)
    tau_c = model.time_constant / (abs(model.gain) * PAPER_KP) \
        - model.dead_time
    params["tau_c"] = round(tau_c, 2)
    if verbose:
        print(f"fit: K={model.gain:.4f} tau={model.time_constant:.1f} "
              f"theta={model.dead_time:.1f} -> tau_c={params['tau_c']}")

    # disturbance scenario: pick a gun power that parks the loaded loop
    # around 150 L/min when holding 100 degC over an off-center inlet; that
    # leaves authority below saturation and crosses the setpoint early
    # enough for the loop to settle within the 950 s first phase
    a_dist = disturbance_offset(params, 150.0)
    params["gun_power_disturbance"] = round((100.0 - AMBIENT) / a_dist, 3)
    if verbose:
        print(f"gun_power_disturbance = {params['gun_power_disturbance']} W")
    return params


def report(params: dict) -> dict:
    """Calibration quality summary at the committed constants."""
    p_gun = params["gun_power"]
    out = {}
    for q in (9.0, 75.0, 100.0, 150.0):
        out[f"T_at_{q:g}"] = AMBIENT + p_gun * specific_offset(params, q)
    out["t63"] = measure_t63(params)
    return out
