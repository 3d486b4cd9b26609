"""Closed-loop controller checks on the cycle-averaged and flapping plants."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..actuation import MotorParams
from ..control import ControllerGains, FlightController, References
from ..dynamics import (VehicleParams, VehicleState, calibrate_wrench_gains, control_wrench,
                        integrate_rigid_body)
from ..engine import FREE, PhysicsModel
from ..environment import ContactParams, GroundEffectCurve, World

CONTROL_DT = 0.002
PHYSICS_DT = 1e-4


@dataclass
class StepResponse:
    t: np.ndarray
    e_z: np.ndarray
    lyapunov: np.ndarray

    def settling_time(self, band: float = 0.005) -> float:
        """Time after which ``|e_z|`` stays inside ``band``; inf if it never does."""
        out = np.abs(self.e_z) > band
        if not out.any():
            return 0.0
        last = int(np.nonzero(out)[0][-1])
        if last == len(self.t) - 1:
            return float("inf")
        return float(self.t[last + 1])


def averaged_step_response(z0: float = 0.15, z_r: float = 0.10, d_z: float = 0.0,
                           duration: float = 3.0, params: VehicleParams | None = None,
                           gains: ControllerGains = ControllerGains(),
                           y0=None) -> StepResponse:
    """Altitude step on the cycle-averaged plant.

    The wrench map is held over each control period and ``d_z`` is a
    constant world-z force.  ``y0`` overrides the hover start state.
    """
    p = params or VehicleParams()
    W = calibrate_wrench_gains(p)
    ctl = FlightController(p, W, gains, dt=CONTROL_DT)
    refs = References(z_r=z_r, xy_r=(0.0, 0.0))
    st = VehicleState.hover((0.0, 0.0, z0)) if y0 is None else VehicleState.from_vector(y0)
    sub = int(round(CONTROL_DT / PHYSICS_DT))
    n = int(round(duration / CONTROL_DT))
    t, e, V = np.zeros(n), np.zeros(n), np.zeros(n)
    for k in range(n):
        y = st.to_vector()
        t[k], e[k], V[k] = k * CONTROL_DT, y[2] - z_r, ctl.lyapunov(y, refs)
        u = ctl.step(y, refs)
        F, tau = control_wrench(u, W)
        f_b = np.array([0.0, 0.0, F]) + st.R.T @ np.array([0.0, 0.0, d_z])
        st, _, _ = integrate_rigid_body(st, f_b, tau, p, PHYSICS_DT, sub)
    return StepResponse(t, e, V)


def flapping_step_response(z0: float = 0.35, z_r: float = 0.30, duration: float = 3.0,
                           params: VehicleParams | None = None,
                           gains: ControllerGains = ControllerGains()) -> StepResponse:
    """Altitude step on the stroke-resolved plant, out of ground effect."""
    p = params or VehicleParams()
    W = calibrate_wrench_gains(p)
    m = PhysicsModel(p, MotorParams(), World(), GroundEffectCurve(), ContactParams(),
                     gains=W, mode=FREE)
    m.start(VehicleState.hover((0.0, 0.0, z0)).to_vector())
    ctl = FlightController(p, W, gains, dt=CONTROL_DT)
    refs = References(z_r=z_r)
    sub = int(round(CONTROL_DT / m.dt))
    n = int(round(duration / CONTROL_DT))
    t, e, V = np.zeros(n), np.zeros(n), np.zeros(n)
    for k in range(n):
        y = m.averaged_state()
        t[k], e[k], V[k] = k * CONTROL_DT, m.y[2] - z_r, ctl.lyapunov(y, refs)
        m.step_block(ctl.step(y, refs).as_array(), sub)
    return StepResponse(t, e, V)
