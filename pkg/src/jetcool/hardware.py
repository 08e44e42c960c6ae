"""Virtual rig hardware: wye channels, mass flow controllers, solenoid valves,
and the infrared camera.

Each chamber orifice sits behind a wye fitting whose two branches hold a mass
flow controller (inlet path) and a solenoid valve (outlet path).  The channel
role decides which branch is active:

  INLET  -> solenoid closed, MFC regulates the commanded flow
  OUTLET -> solenoid open, MFC forced to zero
  CLOSED -> solenoid closed, MFC forced to zero

Whenever at least one channel is an inlet, at least one other channel must be
an outlet so the chamber cannot pressurize; ``set_channel_role`` enforces this.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .plant import ThermalGrid

MIN_FLOW = 9.0  # L/min, lowest flow the MFC can regulate
MAX_FLOW = 300.0  # L/min
MFC_TIME_CONSTANT = 0.125  # s, gives ~2% settling at 0.5 s

CAMERA_NX = 32  # pixels along x
CAMERA_NY = 24  # pixels along y


class ArrangementViolation(ValueError):
    """Requested role change would leave inlets with no outlet."""


class UnknownChannel(KeyError):
    """Channel id does not exist."""


class NotAnInlet(ValueError):
    """Flow commands are only accepted by channels in the inlet role."""


class ChannelRole(Enum):
    INLET = "inlet"
    OUTLET = "outlet"
    CLOSED = "closed"


@dataclass
class MfcState:
    """Mass flow controller state in L/min.

    ``actual_flow`` follows ``commanded_flow`` as a first-order lag with
    ``time_constant`` (default tuned so a full step settles to 2% in 0.5 s).
    """

    commanded_flow: float = 0.0
    actual_flow: float = 0.0
    time_constant: float = MFC_TIME_CONSTANT


@dataclass
class WyeChannel:
    """One chamber orifice: role plus the MFC/solenoid pair behind its wye."""

    id: int
    role: ChannelRole = ChannelRole.CLOSED
    mfc: MfcState = field(default_factory=MfcState)
    solenoid_open: bool = False


def make_channels(n: int) -> list[WyeChannel]:
    """Build ``n`` closed channels with ids 0..n-1."""
    if n < 1:
        raise ValueError("need at least one channel")
    return [WyeChannel(id=i) for i in range(n)]


def _violates_outlet_rule(roles: Sequence[ChannelRole]) -> bool:
    has_inlet = any(r is ChannelRole.INLET for r in roles)
    has_outlet = any(r is ChannelRole.OUTLET for r in roles)
    return has_inlet and not has_outlet


def set_channel_role(channels: Sequence[WyeChannel], channel_id: int,
                     new_role: ChannelRole) -> None:
    """Change one channel's role, applying the implied solenoid/MFC settings.

    Raises ArrangementViolation if the result would leave one or more inlets
    with no outlet; the channel list is untouched in that case.  Setting a
    channel to its current role is a no-op.
    """
    by_id = {ch.id: ch for ch in channels}
    if channel_id not in by_id:
        raise UnknownChannel(channel_id)
    channel = by_id[channel_id]
    if channel.role is new_role:
        return

    roles = [new_role if ch.id == channel_id else ch.role for ch in channels]
    if _violates_outlet_rule(roles):
        raise ArrangementViolation(
            f"channel {channel_id} -> {new_role.value}: arrangement must keep "
            "at least one outlet while any inlet exists")

    channel.role = new_role
    channel.solenoid_open = new_role is ChannelRole.OUTLET
    channel.mfc.commanded_flow = 0.0


def command_mfc(channel: WyeChannel, flow: float) -> float:
    """Set an inlet channel's flow setpoint, returning the applied value.

    The MFC cannot regulate below MIN_FLOW, so sub-range requests snap: below
    MIN_FLOW/2 they shut the valve (0), otherwise they round up to MIN_FLOW.
    Requests above MAX_FLOW clip to MAX_FLOW.
    """
    if channel.role is not ChannelRole.INLET:
        raise NotAnInlet(f"channel {channel.id} role is {channel.role.value}")
    if not math.isfinite(flow):
        raise ValueError(f"flow must be finite, got {flow!r}")
    if flow < MIN_FLOW / 2:
        applied = 0.0
    elif flow < MIN_FLOW:
        applied = MIN_FLOW
    else:
        applied = min(flow, MAX_FLOW)
    channel.mfc.commanded_flow = applied
    return applied


def step_mfc(channel: WyeChannel, dt: float) -> None:
    """Relax actual flow toward commanded flow over ``dt`` seconds.

    Uses the exact discrete solution of the first-order lag so the update is
    independent of how ``dt`` is subdivided.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    mfc = channel.mfc
    # exact: actual' = cmd + (actual - cmd) * exp(-dt/tau)
    mfc.actual_flow += (mfc.commanded_flow - mfc.actual_flow) * (
        -math.expm1(-dt / mfc.time_constant))


def total_inlet_flow(channels: Sequence[WyeChannel]) -> float:
    """Sum of actual flows over channels currently in the inlet role."""
    return sum(ch.mfc.actual_flow for ch in channels
               if ch.role is ChannelRole.INLET)


@dataclass(frozen=True, eq=False)
class IrFrame:
    """One 32x24 thermal camera frame, pixels in deg C, [y][x] indexed."""

    pixels: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        if self.pixels.shape != (CAMERA_NY, CAMERA_NX):
            raise ValueError(
                f"frame must be {CAMERA_NY}x{CAMERA_NX}, got {self.pixels.shape}")


def capture_ir_frame(grid: "ThermalGrid", noise_sigma: float = 0.0,
                     rng: int | np.random.Generator | None = None) -> IrFrame:
    """Downsample the plate field to a 32x24 camera frame.

    Each pixel is the exact mean of its (ny/24)x(nx/32) cell block, plus
    zero-mean Gaussian noise with std ``noise_sigma``.  ``rng`` may be a seed
    or a Generator; passing the same seed reproduces the frame bit for bit.
    """
    temps = grid.temps
    ny, nx = temps.shape
    if nx % CAMERA_NX or ny % CAMERA_NY:
        raise ValueError(
            f"grid {nx}x{ny} is not a multiple of {CAMERA_NX}x{CAMERA_NY}")
    bx, by = nx // CAMERA_NX, ny // CAMERA_NY
    pixels = temps.reshape(CAMERA_NY, by, CAMERA_NX, bx).mean(axis=(1, 3))
    if noise_sigma > 0:
        gen = rng if isinstance(rng, np.random.Generator) \
            else np.random.default_rng(rng)
        pixels = pixels + gen.normal(0.0, noise_sigma, pixels.shape)
    pixels.setflags(write=False)
    return IrFrame(pixels=pixels, timestamp=grid.sim_time)
