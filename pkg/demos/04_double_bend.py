"""Track the simulated double bend and compare the piecewise line function
with a single cubic per line.

Run: python demos/04_double_bend.py   (about 25 s)
"""

import numpy as np

from lanemodel import compare_models, double_bend_scenario

spec = double_bend_scenario()
print(f"{spec.length:.0f} m of road, {spec.lane_count} lanes, features every "
      f"{spec.feature_spacing} m up to {spec.feature_horizon} m, noise {spec.noise_y} m")

comp = compare_models(spec)
for name, res in (("spline", comp.spline), ("clothoid", comp.clothoid)):
    print(f"{name:>8}: max per-frame RMSE {res.max_rmse():.3f} m, {res.runtime:.1f} s")
print(f"max ratio {comp.max_ratio:.2f}, straight-section ratio {comp.straight_ratio:.3f}")

# per-frame series around the bend, every 20 m
for fs, fc, s in list(zip(comp.spline.frames, comp.clothoid.frames, comp.arclength))[100::20]:
    bar = "#" * int(round(fc.rmse / 0.01))
    print(f"s={s:5.0f} m  spline {fs.rmse:.3f}  clothoid {fc.rmse:.3f} {bar}")

print("\nspline RMSE by distance ahead:")
for a, b, label, rmse, n in comp.spline.bins(10.0):
    if label == "all":
        print(f"  {a:5.0f}-{b:<5.0f} {rmse:.3f} m  ({n} samples)")
