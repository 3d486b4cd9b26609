"""Wing-drive DC motors: armature current from excitation and wing load.

The electrical model is purely resistive,

    V - i_a * R_a = K_a * phi_dot / N_g,

and the drivetrain converts armature current into stroke-axis torque with
``K_a * N_g``.  In kinematic drive the stroke is prescribed, the driver
supplies whatever voltage holds it, and the armature current carries the
wing load torque.  The sensed quantity is the bus current, ``|i_a|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, NamedTuple

import numpy as np
from numba import njit

SAMPLE_RATE = 2000.0


@dataclass(frozen=True)
class MotorParams:
    R_a: float = 3.0
    K_a: float = 1.0e-3
    N_g: float = 10.0
    J_d: float = 5.0e-8
    R_sense: float = 0.4
    sense_rating: float = 0.5

    def __post_init__(self):
        for name in ("R_a", "K_a", "N_g", "J_d", "R_sense"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def pack(self) -> np.ndarray:
        return np.array([self.R_a, self.K_a, self.N_g, self.J_d, self.R_sense])


class CurrentSample(NamedTuple):
    t: float
    i_L: float
    i_R: float


@dataclass
class CurrentTrace:
    """Uniformly sampled left/right currents."""

    t: np.ndarray
    i_L: np.ndarray
    i_R: np.ndarray
    rate: float = SAMPLE_RATE

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[CurrentSample]:
        for k in range(len(self.t)):
            yield CurrentSample(float(self.t[k]), float(self.i_L[k]), float(self.i_R[k]))

    def __getitem__(self, k) -> CurrentSample:
        return CurrentSample(float(self.t[k]), float(self.i_L[k]), float(self.i_R[k]))

    def as_array(self) -> np.ndarray:
        return np.stack([self.i_L, self.i_R], axis=1)


@njit(cache=True)
def _armature_current(V, phid, R_a, K_a, N_g):
    return (V - K_a * phid / N_g) / R_a


@njit(cache=True)
def _load_current(tau_load, K_a, N_g):
    return tau_load / (K_a * N_g)


def motor_step(V_inst: float, phi_w_dot: float, tau_load: float, params: MotorParams,
               dt: float = 1e-4) -> tuple[float, float]:
    """Armature current and drivetrain acceleration for one physics step.

    Inductance is neglected, so the current follows the applied voltage
    within the step.  In kinematic drive the acceleration is informational.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    i_a = _armature_current(V_inst, phi_w_dot, params.R_a, params.K_a, params.N_g)
    acc = (params.K_a * params.N_g * i_a - tau_load) / params.J_d
    return i_a, acc


def kinematic_drive_voltage(phi_w_dot: float, tau_load: float, params: MotorParams) -> float:
    """Voltage that holds the prescribed stroke rate against ``tau_load``."""
    return (params.K_a * phi_w_dot / params.N_g
            + params.R_a * _load_current(tau_load, params.K_a, params.N_g))


def load_current(tau_load: float, params: MotorParams) -> float:
    return _load_current(tau_load, params.K_a, params.N_g)


def wing_rate_from_current(V_inst: float, i_a: float, params: MotorParams) -> float:
    """Invert the electrical equation for the stroke rate."""
    return params.N_g * (V_inst - i_a * params.R_a) / params.K_a


def stall_current(V: float, params: MotorParams) -> float:
    return V / params.R_a


def no_load_rate(V: float, params: MotorParams) -> float:
    return V * params.N_g / params.K_a


def sense_power(i, params: MotorParams):
    """Power dissipated in the sense resistor, W."""
    return np.asarray(i, float) ** 2 * params.R_sense


def sample_currents(trace: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]] | CurrentTrace,
                    t_start: float, t_end: float, noise_sigma: float = 0.0,
                    seed: int | None = 0, rate: float = SAMPLE_RATE) -> CurrentTrace:
    """Sample a continuous current trace at ``rate`` with additive noise.

    Samples sit at ``t_start + k / rate`` for every such time strictly below
    ``t_end``.  ``trace`` is either a vectorised callable returning
    ``(i_L, i_R)`` or a finer ``CurrentTrace`` that is linearly interpolated.
    """
    if t_end <= t_start:
        raise ValueError("t_end must exceed t_start")
    span = (t_end - t_start) * rate
    n = int(math.ceil(span - 1e-9))
    t = t_start + np.arange(n) / rate
    if isinstance(trace, CurrentTrace):
        iL = np.interp(t, trace.t, trace.i_L)
        iR = np.interp(t, trace.t, trace.i_R)
    else:
        iL, iR = trace(t)
        iL = np.broadcast_to(np.asarray(iL, float), t.shape).copy()
        iR = np.broadcast_to(np.asarray(iR, float), t.shape).copy()
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        iL = iL + rng.normal(0.0, noise_sigma, n)
        iR = iR + rng.normal(0.0, noise_sigma, n)
    return CurrentTrace(t, iL, iR, rate)
