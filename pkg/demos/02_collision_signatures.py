"""Telling where a wing hit something from four current channels.

Each wing's current is split into its upstroke and downstroke halves.
A wall ahead is met on the upstroke, a wall behind on the downstroke,
and a wall to one side is met by one wing only.  The six panel
placements below each raise a different subset of the four channels.
"""

import numpy as np

from wingsense.harness.calibration import Bench, classify_trial, direction_traces
from wingsense.sensing import BeatAccumulator, CHANNELS

bench = Bench()
f = bench.params.wingbeat_hz
free, hits = direction_traces(bench)


def channel_means(tr):
    acc = BeatAccumulator(f)
    beats = [s.channels() for _, s in acc.push(tr.t, tr.i, tr.up, (0.5, 0.5))]
    return np.mean(beats, axis=0)


base = channel_means(free)
print("panel       " + "  ".join(f"{c:>7}" for c in CHANNELS) + "   detected")
for sig, tr in hits.items():
    ratio = channel_means(tr) / base
    got = classify_trial(free, tr, f)
    print(f"{sig:10}  " + "  ".join(f"{r:7.3f}" for r in ratio) + f"   {got}")
