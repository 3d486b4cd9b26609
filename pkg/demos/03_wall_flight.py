"""A flight across a wall with no position sensing of the wall itself.

The vehicle cruises toward a goal 0.7 m away.  A 1 ft wall panel blocks
the straight line.  Each bump is classified from current, the vehicle
backs off, steps sideways and tries again, and the wingtip position at
each bump becomes an obstacle point on the map.
"""

import os
from pathlib import Path

from wingsense.harness.config import bundled_scenarios, load_config
from wingsense.harness.sim import run_scenario

out = Path(os.environ.get("WINGSENSE_OUTPUT", "runs")) / "demos" / "wall"
res = run_scenario(load_config(bundled_scenarios()["wall"]), out)

for row in res.events:
    t, sig, direction, _, x, y = row[:6]
    print(f"t={t:6.2f} s  {sig:9} ({direction})  at x={x:+.3f} y={y:+.3f}  -> {row[11]}")
for x, y, _, sig in res.map.obstacles:
    print(f"obstacle point ({x:+.3f}, {y:+.3f}) from {sig}")
m = res.metrics
print(f"mission complete: {m['mission_complete']} after {m['cycles']} avoidance cycles, "
      f"{m['mission_time']:.1f} s")
print(f"worst obstacle point error: {m['obstacle_distance_max'] * 1000:.1f} mm")
print(f"traces and figures in {out}")
