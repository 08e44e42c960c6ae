"""Software twin of a jet-impingement active cooling rig.

Simulates a thin metal plate under a localized heat load, cooled by a
manifold of air-jet channels whose roles (inlet / outlet / closed) and flow
rates are manipulated by per-region PID loops, with a scheduler, run
logging, a live service API, and an experiment harness.
"""

from .control import FopdtModel, PidGains, PidLoop, Region, decouple, \
    direct_synthesis_tune, fit_fopdt, region_mean, savgol_filter
from .hardware import ArrangementViolation, ChannelRole, IrFrame, MfcState, \
    NotAnInlet, UnknownChannel, WyeChannel, capture_ir_frame, command_mfc, \
    make_channels, set_channel_role, step_mfc
from .orchestration import LoopConfig, Mode, SchedulerTable, TelemetryFrame, \
    World, control_cycle, load_scheduler, make_world, run_cycles, \
    scheduler_lookup
from .plant import HeatGun, JetGeometry, PlateConfig, SimulationDiverged, \
    ThermalGrid, heat_gun_flux, jet_h_field, steady_state, step_plant

__version__ = "0.1.0"
