"""
Calibrating and sampling the weather generator
==============================================

Fit the multisite generator to thirty years of procedural station data and
compare a few simulated monthly statistics with the archive.
"""

import numpy as np

from cropsynth import swg, toy

# three coupled stations, about 25 km apart
ids = ["north", "centre", "south"]
coords = {"north": (-33.8, -61.0), "centre": (-34.0, -61.1), "south": (-34.2, -61.2)}
archives = toy.procedural_archives(ids, n_years=30, seed=1)

model = swg.calibrate(archives, coords)
print("occurrence correlation\n", np.round(model.occ_corr, 2))

# January parameters of one station
p = model.stations["centre"][0]
print(f"January p01={p.p01:.3f} p11={p.p11:.3f} "
      f"alpha={p.alpha:.2f} beta1={p.beta1_mm:.1f} mm beta2={p.beta2_mm:.1f} mm")

# fifty simulated years from 1 January
rng = np.random.default_rng(swg.stream_seed(0, "demo"))
runs = [swg.simulate_stations(model, ids, 1, 365, rng) for _ in range(50)]
wet = np.concatenate([r["wet"] for r in runs])
tmax = np.concatenate([r["tmax"] for r in runs])
months = np.tile(runs[0]["month"], len(runs))

a = archives[1]
print("month  wet(arch)  wet(sim)  tmax(arch)  tmax(sim)")
for m in range(1, 13):
    obs_wet = (a.prcp_mm[a.months == m] >= swg.WET_THRESHOLD_MM).mean()
    print(f"{m:5d}  {obs_wet:9.3f}  {wet[months == m, 1].mean():8.3f}"
          f"  {a.tmax_c[a.months == m].mean():10.2f}  {tmax[months == m, 1].mean():9.2f}")

# growing degree days: 8 C base, tmax capped at 34 C
print("gdd(30, 20) =", swg.gdd(30, 20), " gdd(40, 20) =", swg.gdd(40, 20))
