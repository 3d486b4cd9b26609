"""Simulation of a flapping-wing micro air vehicle that senses the ground,
walls and gusts from its wing-motor currents.

Modules: ``dynamics`` (rigid body and wing kinematics), ``actuation``
(drive motors and current sampling), ``environment`` (terrain, panels,
gusts, ground effect, contact), ``sensing`` (filtering, thresholds,
collision classification), ``control`` (sliding-mode flight controller),
``navigation`` (terrain following, avoidance, mapping) and ``harness``
(scenarios, calibration, CLI).
"""

__version__ = "0.1.0"
