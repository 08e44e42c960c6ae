"""Scenario configuration: plain-text config files, material presets, and
the calibrated default setup the experiment harness runs on.

Config files are `key = value` per line, '#' comments, keys as listed in
DEFAULTS.  The packaged ``data/calibration.cfg`` pins the convection and
heat-load constants that reproduce the reference rig's step-response
numbers; rebuild it with ``jetcool calibrate`` if the plant model changes.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .control import FopdtModel, PidGains, Region, direct_synthesis_tune
from .hardware import CAMERA_NX, CAMERA_NY, ChannelRole, set_channel_role
from .orchestration import World, make_world
from .plant import HeatGun, JetGeometry, PlateConfig, row_positions

# plate sheet options from the rig's stock list: (density, c_p, k)
MATERIALS = {
    "steel": (7850.0, 490.0, 51.0),
    "aluminum": (2700.0, 896.0, 167.0),
    "copper": (8940.0, 385.0, 391.0),
    "stainless": (8000.0, 500.0, 16.2),
}

DEFAULTS: dict[str, float | int | str] = {
    "material": "steel",
    "length_x": 0.254,
    "length_y": 0.254,
    "thickness": 0.003175,
    "grid_nx": 96,
    "grid_ny": 72,
    "ambient_temp": 20.0,
    "coolant_temp": 20.0,
    "natural_h": 8.0,
    "n_channels": 5,
    "jet_sigma": 0.0545,
    "h_ref": 21.4,
    "q_ref": 100.0,
    "flow_exponent": 0.8,
    "outlet_h_fraction": 0.2,
    "gun_power": 33.2,
    "gun_sigma": 0.03,
    "gun_power_disturbance": 45.0,
    "noise_sigma": 0.5,
    "control_period": 1.0,
    # identified process model and tuning target for the PI experiments
    "fopdt_gain": -0.14,
    "fopdt_tau": 400.0,
    "fopdt_theta": 10.0,
    "tau_c": 273.3,
}

_INT_KEYS = {"grid_nx", "grid_ny", "n_channels"}
_STR_KEYS = {"material"}


class ConfigError(ValueError):
    """Config text rejected; message names the line or key."""


def parse_config(text: str) -> dict:
    """Parse `key = value` lines into a params dict over DEFAULTS."""
    params = dict(DEFAULTS)
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key == "version":
            continue
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            if key in _STR_KEYS:
                params[key] = raw
            elif key in _INT_KEYS:
                params[key] = int(raw)
            else:
                params[key] = float(raw)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key}: "
                              f"{raw!r}") from None
    return params


def format_config(params: dict, header: str | None = None) -> str:
    lines = [f"# {header}"] if header else []
    lines.append("version = 1")
    for key in DEFAULTS:
        value = params.get(key, DEFAULTS[key])
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def load_config_file(path: str | Path) -> dict:
    return parse_config(Path(path).read_text())


def load_calibration() -> dict:
    """Packaged calibrated parameters (see data/calibration.cfg)."""
    text = resources.files("jetcool").joinpath("data/calibration.cfg") \
        .read_text()
    return parse_config(text)


def apply_overrides(params: dict, overrides: list[str]) -> dict:
    """Apply CLI `key=value` overrides on top of a params dict."""
    out = dict(params)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, _, raw = item.partition("=")
        patched = parse_config(f"{key.strip()} = {raw.strip()}")
        out[key.strip()] = patched[key.strip()]
    return out


def plate_config(params: dict) -> PlateConfig:
    material = params["material"]
    if material not in MATERIALS:
        raise ConfigError(f"unknown material {material!r}; "
                          f"options: {sorted(MATERIALS)}")
    density, specific_heat, conductivity = MATERIALS[material]
    return PlateConfig(
        length_x=params["length_x"], length_y=params["length_y"],
        thickness=params["thickness"], density=density,
        specific_heat=specific_heat, conductivity=conductivity,
        grid_nx=params["grid_nx"], grid_ny=params["grid_ny"],
        ambient_temp=params["ambient_temp"],
        coolant_temp=params["coolant_temp"],
        natural_h=params["natural_h"])


def jet_geometry(params: dict, cfg: PlateConfig) -> JetGeometry:
    return JetGeometry(
        channel_positions=row_positions(cfg, params["n_channels"]),
        jet_sigma=params["jet_sigma"], h_ref=params["h_ref"],
        q_ref=params["q_ref"], flow_exponent=params["flow_exponent"],
        outlet_h_fraction=params["outlet_h_fraction"])


def fopdt_model(params: dict) -> FopdtModel:
    return FopdtModel(gain=params["fopdt_gain"],
                      time_constant=params["fopdt_tau"],
                      dead_time=params["fopdt_theta"])


def tuned_gains(params: dict) -> PidGains:
    return direct_synthesis_tune(fopdt_model(params), params["tau_c"])


def channel_pixel(cfg: PlateConfig, position: tuple[float, float]) -> tuple[int, int]:
    """Camera pixel (x, y) over a plate coordinate."""
    px = min(CAMERA_NX - 1, int(position[0] / cfg.length_x * CAMERA_NX))
    py = min(CAMERA_NY - 1, int(position[1] / cfg.length_y * CAMERA_NY))
    return px, py


def zone_region(cfg: PlateConfig, geom: JetGeometry, channel_id: int,
                region_id: int, half: int = 1) -> Region:
    """3x3 (by default) pixel region centered over a channel's orifice."""
    px, py = channel_pixel(cfg, geom.channel_positions[channel_id])
    return Region(id=region_id,
                  x_min=max(0, px - half), x_max=min(CAMERA_NX, px + half + 1),
                  y_min=max(0, py - half), y_max=min(CAMERA_NY, py + half + 1),
                  bound_mfc=channel_id)


def build_world(params: dict | None = None, seed: int = 0) -> World:
    """Default world from a params dict (calibrated fixture when None)."""
    params = params or load_calibration()
    cfg = plate_config(params)
    geom = jet_geometry(params, cfg)
    world = make_world(
        n_channels=params["n_channels"], cfg=cfg, geom=geom,
        gun=HeatGun(center=geom.channel_positions[params["n_channels"] // 2],
                    total_power=params["gun_power"],
                    spread_sigma=params["gun_sigma"], enabled=False),
        seed=seed, noise_sigma=params["noise_sigma"],
        control_period=params["control_period"])
    return world


def arrange(world: World, roles: list[ChannelRole]) -> None:
    """Set the whole arrangement at once, outlets first so the at-least-one-
    outlet rule never trips on a valid target arrangement."""
    if len(roles) != len(world.channels):
        raise ValueError("role list must cover every channel")
    order = sorted(range(len(roles)),
                   key=lambda i: 0 if roles[i] is ChannelRole.OUTLET else 1)
    for i in order:
        set_channel_role(world.channels, world.channels[i].id, roles[i])
