"""Region-based PID control, static decoupling, model fitting/tuning, and
signal smoothing.

The error convention throughout is e = measured - setpoint: the plant is a
cooling process (more flow lowers temperature, negative process gain), so a
hot plate yields a positive error and the positive controller gains push the
flow up.  Outputs are flows clamped to the MFC range [0, 300] L/min.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .hardware import CAMERA_NX, CAMERA_NY, IrFrame, MAX_FLOW

DEFAULT_SAVGOL_WINDOW = 10
DEFAULT_SAVGOL_ORDER = 1


class StepNotFound(ValueError):
    """Record holds no usable step change in the input."""


class NotSettled(ValueError):
    """Response never flattens out; steady-state values are undefined."""


@dataclass
class Region:
    """Rectangular camera-pixel zone whose mean feeds one control loop.

    Bounds are half-open pixel intervals: x in [x_min, x_max) with
    x_max <= 32, y likewise up to 24.  ``bound_mfc`` names the channel this
    region's controller commands.
    """

    id: int
    x_min: int = 0
    x_max: int = CAMERA_NX
    y_min: int = 0
    y_max: int = CAMERA_NY
    bound_mfc: int = 0

    def __post_init__(self):
        if not (0 <= self.x_min < self.x_max <= CAMERA_NX):
            raise ValueError(f"region {self.id}: bad x bounds "
                             f"[{self.x_min}, {self.x_max})")
        if not (0 <= self.y_min < self.y_max <= CAMERA_NY):
            raise ValueError(f"region {self.id}: bad y bounds "
                             f"[{self.y_min}, {self.y_max})")


def region_mean(frame: IrFrame, region: Region) -> float:
    """Arithmetic mean temperature of the region's pixels."""
    block = frame.pixels[region.y_min:region.y_max,
                         region.x_min:region.x_max]
    if block.size == 0:
        raise ValueError(f"region {region.id} selects no pixels")
    return float(block.mean())


@dataclass(frozen=True)
class PidGains:
    """Controller gains; kp in (L/min)/degC, ki per second, kd times seconds."""

    kp: float = 0.0
    ki: float = 0.0
    kd: float = 0.0

    def __post_init__(self):
        for name in ("kp", "ki", "kd"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0 "
                                 "(reverse action lives in the error sign)")


@dataclass
class PidLoop:
    """One region's PID state: gains, setpoint, integrator, bias.

    ``output_bias`` is the flow at zero error; the orchestration sets it to
    the bound MFC's command at mode-switch time for bumpless transfer.
    """

    gains: PidGains = field(default_factory=PidGains)
    setpoint: float = 20.0
    integrator: float = 0.0
    last_error: float = 0.0
    output_bias: float = 0.0
    out_min: float = 0.0
    out_max: float = MAX_FLOW

    def step(self, measured: float, dt: float) -> float:
        """Advance one control period and return the flow command (L/min).

        Anti-windup is by conditional integration: when the raw output is
        already outside the limits and the integral update would push it
        further out, the update is discarded.
        """
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        g = self.gains
        error = measured - self.setpoint
        candidate = self.integrator + error * dt
        raw = self.output_bias + g.kp * error + g.ki * candidate \
            + g.kd * (error - self.last_error) / dt
        output = min(max(raw, self.out_min), self.out_max)
        pushing_out = (raw > self.out_max and error > 0) \
            or (raw < self.out_min and error < 0)
        if not pushing_out:
            self.integrator = candidate
        self.last_error = error
        return output

    def arm(self, bias: float, error: float = 0.0) -> None:
        """Reset state for bumpless entry into temperature control."""
        self.output_bias = bias
        self.integrator = 0.0
        self.last_error = error


def decouple(deltas: Sequence[float], gain_matrix: np.ndarray) -> np.ndarray:
    """Correct per-loop flow deltas for static cross-gains between zones.

    ``gain_matrix[i][j]`` is the steady temperature gain of region i to MFC
    j's flow.  Off-diagonal compensation -K[i][j]/K[j][j] is added so each
    loop's action lands mostly in its own region; a diagonal matrix makes
    this the identity.
    """
    K = np.asarray(gain_matrix, dtype=float)
    u = np.asarray(deltas, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"gain matrix must be square, got {K.shape}")
    if K.shape[0] != u.shape[0]:
        raise ValueError(f"{u.shape[0]} deltas but {K.shape[0]}x{K.shape[0]} matrix")
    diag = np.diag(K)
    if np.any(diag == 0):
        raise ValueError("gain matrix has a zero diagonal entry")
    comp = -K / diag[np.newaxis, :]  # -K[i][j] / K[j][j]
    np.fill_diagonal(comp, 1.0)
    return comp @ u


@dataclass(frozen=True)
class FopdtModel:
    """First-order-plus-dead-time fit: gain (degC per L/min), seconds."""

    gain: float
    time_constant: float
    dead_time: float = 0.0
    method: str = "two-point-28-63"

    def __post_init__(self):
        if self.time_constant <= 0:
            raise ValueError("time_constant must be > 0")
        if self.dead_time < 0:
            raise ValueError("dead_time must be >= 0")

    def response(self, t: np.ndarray, u_step: float, y0: float = 0.0,
                 t_step: float = 0.0) -> np.ndarray:
        """Analytic step response, handy for round-trip checks."""
        t = np.asarray(t, dtype=float)
        shifted = t - t_step - self.dead_time
        y = np.where(shifted > 0,
                     self.gain * u_step * (1.0 - np.exp(-np.maximum(shifted, 0)
                                                        / self.time_constant)),
                     0.0)
        return y0 + y


def _first_crossing(times: np.ndarray, values: np.ndarray,
                    level: float) -> float | None:
    """Interpolated time where ``values`` first reaches ``level``."""
    above = values >= level
    idx = np.argmax(above)
    if not above[idx]:
        return None
    if idx == 0:
        return float(times[0])
    t0, t1 = times[idx - 1], times[idx]
    v0, v1 = values[idx - 1], values[idx]
    if v1 == v0:
        return float(t1)
    return float(t0 + (level - v0) / (v1 - v0) * (t1 - t0))


def fit_fopdt(times: Sequence[float], inputs: Sequence[float],
              outputs: Sequence[float]) -> FopdtModel:
    """Identify an FOPDT model from one open-loop step record.

    The input must hold a single clean step.  Gain is the steady output
    change over the input change; time constant and dead time come from the
    28.3% / 63.2% two-point method on the response.
    """
    t = np.asarray(times, dtype=float)
    u = np.asarray(inputs, dtype=float)
    y = np.asarray(outputs, dtype=float)
    if not t.shape == u.shape == y.shape or t.size < 8:
        raise ValueError("need equally sized t/u/y series of at least 8 points")

    du = np.diff(u)
    changes = np.nonzero(np.abs(du) > 1e-12)[0]
    if changes.size == 0:
        raise StepNotFound("input never changes")
    k = int(changes[0]) + 1  # first sample at the new input level
    if np.abs(du[k:]).max(initial=0.0) > 1e-12:
        raise StepNotFound("input changes more than once")
    t_step = float(t[k])
    delta_u = float(u[-1] - u[0])

    y0 = float(y[:k].mean())
    tail = max(3, int(0.15 * (t.size - k)))
    y_ss = float(y[-tail:].mean())
    prev = y[-2 * tail:-tail]
    delta_y = y_ss - y0
    if delta_y == 0:
        raise NotSettled("output shows no response to the step")
    if abs(float(prev.mean()) - y_ss) > 0.05 * abs(delta_y):
        raise NotSettled("output still trending at the end of the record")

    frac = (y[k:] - y0) / delta_y
    tf = t[k:]
    t28 = _first_crossing(tf, frac, 0.283)
    t63 = _first_crossing(tf, frac, 0.632)
    if t28 is None or t63 is None:
        raise NotSettled("response never reaches 63.2% of its steady change")
    tau = 1.5 * (t63 - t28)
    if tau <= 0:
        raise NotSettled("degenerate response times")
    theta = max(0.0, (t63 - t_step) - tau)
    return FopdtModel(gain=delta_y / delta_u, time_constant=tau,
                      dead_time=theta)


def direct_synthesis_tune(model: FopdtModel, target_tau_c: float) -> PidGains:
    """PI gains from the direct-synthesis rule for a first-order model.

    kp = tau / (|K| * (tau_c + theta)), ki = kp / tau.  The magnitude of the
    process gain is used because the engine's error sign convention already
    accounts for the cooling plant's reverse action.
    """
    if target_tau_c <= 0:
        raise ValueError("target_tau_c must be > 0")
    if model.gain == 0:
        raise ValueError("model gain must be non-zero")
    kp = model.time_constant / (abs(model.gain)
                                * (target_tau_c + model.dead_time))
    return PidGains(kp=kp, ki=kp / model.time_constant, kd=0.0)


def savgol_filter(series: Sequence[float],
                  window: int = DEFAULT_SAVGOL_WINDOW,
                  poly_order: int = DEFAULT_SAVGOL_ORDER) -> np.ndarray:
    """Least-squares polynomial smoothing over a sliding window.

    Each output sample is the fitted polynomial's value at that sample's own
    position.  The window spans (window-1)//2 points back and window//2
    forward (one extra ahead when window is even); at the edges the window is
    truncated to what exists and the fit order drops to keep the fit
    determined.  Polynomials of degree <= poly_order pass through unchanged.
    """
    y = np.asarray(series, dtype=float)
    if y.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if window < poly_order + 1:
        raise ValueError(f"window {window} too short for order {poly_order}")
    if y.size < window:
        raise ValueError(f"series of {y.size} shorter than window {window}")

    back = (window - 1) // 2
    fwd = window // 2
    n = y.size
    out = np.empty(n)

    # interior: one shared projection row, applied as a correlation
    offsets = np.arange(-back, fwd + 1, dtype=float)
    vand = np.vander(offsets, poly_order + 1, increasing=True)
    row = np.linalg.pinv(vand)[0]  # picks the fit value at offset 0
    out[back:n - fwd] = np.correlate(y, row, mode="valid")

    # edges: refit on the truncated window
    for i in list(range(back)) + list(range(n - fwd, n)):
        lo, hi = max(0, i - back), min(n, i + fwd + 1)
        xs = np.arange(lo, hi, dtype=float) - i
        order = min(poly_order, hi - lo - 1)
        coeffs = np.polynomial.polynomial.polyfit(xs, y[lo:hi], order)
        out[i] = coeffs[0]
    return out
