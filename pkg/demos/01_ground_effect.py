"""How wing-motor current reveals height above the ground.

A clamped vehicle is held at a range of clearances and driven at 12 V.
Close to the floor the wings meet less drag, so each motor draws less
current; far away the current returns to its free-air value.  The
threshold line fitted at 3.3 mean chords is what the flight controller
later compares against.
"""

import numpy as np

from wingsense.dynamics import ControlInput
from wingsense.harness.calibration import Bench, clamped_trace, threshold_protocol

bench = Bench()
print("clearance [cbar]   mean current L / R [A]")
for d in (15.0, 6.0, 4.0, 3.3, 2.3, 1.5):
    tr = clamped_trace(bench, ControlInput(12.0), d, 3, settle_beats=1)
    i_L, i_R = tr.i.mean(axis=0)
    print(f"{d:8.1f}           {i_L:.4f} / {i_R:.4f}")

model, _ = threshold_protocol(bench, (10.0, 11.0, 12.0, 13.0, 14.0, 15.0), datasets=5)
print("\nthreshold lines at 3.3 cbar")
for side, k, b, r2 in (("left ", model.slope_L, model.intercept_L, model.r2[0]),
                      ("right", model.slope_R, model.intercept_R, model.r2[1])):
    print(f"  {side}: slope {k:.4f} A/V, intercept {b:+.4f} A, R2 {r2:.4f}")
V = 12.0
print(f"  at {V:.0f} V: {model.slope_L * V + model.intercept_L:.4f} / "
      f"{model.slope_R * V + model.intercept_R:.4f} A")
