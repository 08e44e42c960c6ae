"""Thermal model of the cooled plate.

A thin metal plate conducts heat laterally while a localized hot-air source
feeds power in from above and air jets impinging from below carry it away.
Per unit area the energy balance is

    rho * c_p * delta * dT/dt = k * delta * laplacian(T)
                                + q_gun(x, y)
                                - h_nat * (T - T_ambient)
                                - h_jet(x, y) * (T - T_coolant)

with zero-flux (insulated) plate edges.  ``h_jet`` is a sum of Gaussian
footprints, one per active channel, scaling with flow as (q/q_ref)^0.8.
Time stepping is explicit with automatic sub-division below the stability
limit, so callers can ask for any dt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from .hardware import CAMERA_NX, CAMERA_NY, ChannelRole, WyeChannel, \
    total_inlet_flow

# explicit scheme runs at this fraction of the stability limit
STABILITY_SAFETY = 0.4


class SimulationDiverged(RuntimeError):
    """Plate field became non-finite; the scenario or step size is broken."""


@dataclass(frozen=True)
class PlateConfig:
    """Plate geometry, material, grid, and environment.

    Defaults describe a 10" x 10" x 1/8" low-carbon steel sheet cooled with
    compressed air, discretized at 3x the camera resolution.  The model is a
    single in-plane temperature field, valid because the plate is thin
    relative to its span (thickness / length ~ 1/80 here).
    """

    length_x: float = 0.254  # m
    length_y: float = 0.254  # m
    thickness: float = 0.003175  # m
    density: float = 7850.0  # kg/m^3
    specific_heat: float = 490.0  # J/(kg K)
    conductivity: float = 51.0  # W/(m K)
    grid_nx: int = 3 * CAMERA_NX
    grid_ny: int = 3 * CAMERA_NY
    ambient_temp: float = 20.0  # deg C
    coolant_temp: float = 20.0  # deg C, compressed air at the nozzle
    natural_h: float = 10.0  # W/(m^2 K), still-air losses

    def __post_init__(self):
        for name in ("length_x", "length_y", "thickness", "density",
                     "specific_heat", "conductivity"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.natural_h < 0:
            raise ValueError("natural_h must be >= 0")
        if self.grid_nx % CAMERA_NX or self.grid_nx <= 0:
            raise ValueError(f"grid_nx must be a positive multiple of {CAMERA_NX}")
        if self.grid_ny % CAMERA_NY or self.grid_ny <= 0:
            raise ValueError(f"grid_ny must be a positive multiple of {CAMERA_NY}")
        if self.thickness > 0.2 * min(self.length_x, self.length_y):
            raise ValueError("thin-plate model needs thickness << length")

    @property
    def dx(self) -> float:
        return self.length_x / self.grid_nx

    @property
    def dy(self) -> float:
        return self.length_y / self.grid_ny

    @property
    def areal_heat_capacity(self) -> float:
        """rho * c_p * thickness, J/(m^2 K)."""
        return self.density * self.specific_heat * self.thickness

    @property
    def diffusivity(self) -> float:
        """k / (rho * c_p), m^2/s."""
        return self.conductivity / (self.density * self.specific_heat)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(X, Y) cell-center coordinate arrays, each shaped (ny, nx)."""
        x = (np.arange(self.grid_nx) + 0.5) * self.dx
        y = (np.arange(self.grid_ny) + 0.5) * self.dy
        return np.meshgrid(x, y)


@dataclass(frozen=True, eq=False)
class ThermalGrid:
    """Plate temperature field (deg C, [y][x]) at a simulation time.

    Instances are immutable snapshots; stepping produces a new grid.
    """

    temps: np.ndarray
    sim_time: float = 0.0

    def __post_init__(self):
        self.temps.setflags(write=False)

    @classmethod
    def uniform(cls, cfg: PlateConfig, temp: float | None = None,
                sim_time: float = 0.0) -> "ThermalGrid":
        value = cfg.ambient_temp if temp is None else temp
        return cls(np.full((cfg.grid_ny, cfg.grid_nx), float(value)), sim_time)


@dataclass(frozen=True)
class HeatGun:
    """Localized Gaussian heat load aimed at the plate top."""

    center: tuple[float, float] = (0.127, 0.127)  # (x, y) m
    total_power: float = 0.0  # W deposited on the plate
    spread_sigma: float = 0.03  # m
    enabled: bool = False

    def __post_init__(self):
        if self.total_power < 0:
            raise ValueError("total_power must be >= 0")
        if self.spread_sigma <= 0:
            raise ValueError("spread_sigma must be > 0")

    def moved_to(self, center: tuple[float, float]) -> "HeatGun":
        return replace(self, center=center)


@dataclass(frozen=True)
class JetGeometry:
    """Where the chamber channels sit under the plate and how jets cool.

    An inlet at flow q contributes h_ref * (q/q_ref)^flow_exponent inside a
    Gaussian footprint of width jet_sigma.  Outlets see the crossflow of all
    inlets and get outlet_h_fraction of the same form at the total inlet
    flow; closed channels contribute nothing.
    """

    channel_positions: tuple[tuple[float, float], ...]
    jet_sigma: float = 0.02  # m
    h_ref: float = 380.0  # W/(m^2 K) at q_ref
    q_ref: float = 100.0  # L/min
    flow_exponent: float = 0.8
    outlet_h_fraction: float = 0.2

    def __post_init__(self):
        if not self.channel_positions:
            raise ValueError("need at least one channel position")
        if self.jet_sigma <= 0 or self.h_ref <= 0 or self.q_ref <= 0:
            raise ValueError("jet_sigma, h_ref and q_ref must be > 0")
        if not 0 < self.flow_exponent <= 1:
            raise ValueError("flow_exponent must be in (0, 1]")
        if not 0 <= self.outlet_h_fraction <= 1:
            raise ValueError("outlet_h_fraction must be in [0, 1]")

    def validate_positions(self, cfg: PlateConfig) -> None:
        for x, y in self.channel_positions:
            if not (0 <= x <= cfg.length_x and 0 <= y <= cfg.length_y):
                raise ValueError(f"channel position ({x}, {y}) outside plate")


def row_positions(cfg: PlateConfig, n: int) -> tuple[tuple[float, float], ...]:
    """Evenly spaced channel positions along the plate's x mid-line."""
    return tuple((cfg.length_x * (i + 1) / (n + 1), cfg.length_y / 2)
                 for i in range(n))


@lru_cache(maxsize=16)
def _jet_footprints(geom: JetGeometry, nx: int, ny: int,
                    lx: float, ly: float) -> np.ndarray:
    """Unit Gaussian footprint per channel, stacked (n_channels, ny, nx)."""
    x = (np.arange(nx) + 0.5) * (lx / nx)
    y = (np.arange(ny) + 0.5) * (ly / ny)
    xx, yy = np.meshgrid(x, y)
    stack = np.empty((len(geom.channel_positions), ny, nx))
    two_sigma2 = 2.0 * geom.jet_sigma ** 2
    for i, (cx, cy) in enumerate(geom.channel_positions):
        r2 = (xx - cx) ** 2 + (yy - cy) ** 2
        stack[i] = np.exp(-r2 / two_sigma2)
    stack.setflags(write=False)
    return stack


def jet_h_field(channels: Sequence[WyeChannel], geom: JetGeometry,
                cfg: PlateConfig) -> np.ndarray:
    """Convection coefficient field h(x, y) in W/(m^2 K).

    Baseline natural_h everywhere, plus per-channel jet contributions as
    described on JetGeometry.  Flow dependence is evaluated on each MFC's
    actual (not commanded) flow.
    """
    if not channels:
        raise ValueError("need at least one channel")
    if len(channels) != len(geom.channel_positions):
        raise ValueError(f"{len(channels)} channels but "
                         f"{len(geom.channel_positions)} positions")
    for ch in channels:
        if ch.mfc.actual_flow < 0:
            raise ValueError(f"channel {ch.id} has negative flow")

    footprints = _jet_footprints(geom, cfg.grid_nx, cfg.grid_ny,
                                 cfg.length_x, cfg.length_y)
    h = np.full((cfg.grid_ny, cfg.grid_nx), float(cfg.natural_h))
    q_total = total_inlet_flow(channels)
    for i, ch in enumerate(channels):
        if ch.role is ChannelRole.INLET:
            q = ch.mfc.actual_flow
            if q > 0:
                h += geom.h_ref * (q / geom.q_ref) ** geom.flow_exponent \
                    * footprints[i]
        elif ch.role is ChannelRole.OUTLET:
            if q_total > 0:
                h += geom.outlet_h_fraction * geom.h_ref \
                    * (q_total / geom.q_ref) ** geom.flow_exponent \
                    * footprints[i]
    return h


@lru_cache(maxsize=16)
def _gun_flux_cached(gun: HeatGun, nx: int, ny: int,
                     lx: float, ly: float) -> np.ndarray:
    x = (np.arange(nx) + 0.5) * (lx / nx)
    y = (np.arange(ny) + 0.5) * (ly / ny)
    xx, yy = np.meshgrid(x, y)
    cx, cy = gun.center
    r2 = (xx - cx) ** 2 + (yy - cy) ** 2
    sigma2 = gun.spread_sigma ** 2
    flux = gun.total_power / (2.0 * math.pi * sigma2) * np.exp(-r2 / (2 * sigma2))
    flux.setflags(write=False)
    return flux


def heat_gun_flux(gun: HeatGun, cfg: PlateConfig) -> np.ndarray:
    """Heat flux field (W/m^2) deposited by the gun.

    A 2D Gaussian normalized so its full integral equals total_power; the
    part falling outside the plate is lost (under 1% when the center stays
    3 sigma from every edge).  Zero field when the gun is disabled.
    """
    if not gun.enabled or gun.total_power == 0:
        return np.zeros((cfg.grid_ny, cfg.grid_nx))
    return _gun_flux_cached(gun, cfg.grid_nx, cfg.grid_ny,
                            cfg.length_x, cfg.length_y)


def stable_substep(cfg: PlateConfig, h_max: float) -> float:
    """Largest explicit step we allow, with the convective sink included."""
    diffusion_rate = 2.0 * cfg.diffusivity * (1.0 / cfg.dx ** 2 + 1.0 / cfg.dy ** 2)
    sink_rate = h_max / cfg.areal_heat_capacity
    return STABILITY_SAFETY / (diffusion_rate + sink_rate)


def step_plant(grid: ThermalGrid, channels: Sequence[WyeChannel],
               gun: HeatGun, cfg: PlateConfig, geom: JetGeometry,
               dt: float) -> ThermalGrid:
    """Advance the plate field by ``dt`` seconds and return the new grid.

    ``dt`` is subdivided internally to stay below the explicit stability
    limit; MFC flows are held constant over the call (the orchestration loop
    interleaves MFC and plant updates at a finer cadence when that matters).
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")

    h = jet_h_field(channels, geom, cfg)
    h_jet = h - cfg.natural_h
    q_gun = heat_gun_flux(gun, cfg)

    # lump sinks: loss = H*T - S with the ambient/coolant split folded into S
    H = cfg.natural_h + h_jet
    S = q_gun + cfg.natural_h * cfg.ambient_temp + h_jet * cfg.coolant_temp
    inv_cap = 1.0 / cfg.areal_heat_capacity

    n_sub = max(1, math.ceil(dt / stable_substep(cfg, float(H.max()))))
    sub_dt = dt / n_sub

    alpha = cfg.diffusivity
    inv_dx2, inv_dy2 = 1.0 / cfg.dx ** 2, 1.0 / cfg.dy ** 2

    T = grid.temps.copy()
    ny, nx = T.shape
    padded = np.empty((ny + 2, nx + 2))
    for _ in range(n_sub):
        padded[1:-1, 1:-1] = T
        padded[0, 1:-1] = T[0]
        padded[-1, 1:-1] = T[-1]
        padded[1:-1, 0] = T[:, 0]
        padded[1:-1, -1] = T[:, -1]
        lap = (padded[1:-1, 2:] - 2.0 * T + padded[1:-1, :-2]) * inv_dx2 \
            + (padded[2:, 1:-1] - 2.0 * T + padded[:-2, 1:-1]) * inv_dy2
        T += sub_dt * (alpha * lap + (S - H * T) * inv_cap)

    if not np.isfinite(T).all():
        raise SimulationDiverged(
            f"non-finite plate temperature at t={grid.sim_time + dt:.3f}s "
            f"(dt={dt}, sub-steps={n_sub})")
    return ThermalGrid(T, grid.sim_time + dt)


def steady_state(grid: ThermalGrid, channels: Sequence[WyeChannel],
                 gun: HeatGun, cfg: PlateConfig, geom: JetGeometry,
                 tol: float = 1e-3, step_dt: float = 1.0,
                 max_steps: int = 30000) -> tuple[ThermalGrid, bool]:
    """Step until max |dT/dt| falls below ``tol`` (deg C/s).

    Returns (final grid, converged).  Running out of the step budget flags
    converged=False rather than raising.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    current = grid
    for _ in range(max_steps):
        nxt = step_plant(current, channels, gun, cfg, geom, step_dt)
        rate = float(np.abs(nxt.temps - current.temps).max()) / step_dt
        current = nxt
        if rate < tol:
            return current, True
    return current, False
