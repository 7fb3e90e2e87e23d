"""
One pixel through a growing season
==================================

Plant, grow and harvest a single grid cell under generated weather, then
turn its leaf area into a daily NDVI trace.
"""

import numpy as np

from cropsynth import canopy, phenology, swg, toy
from cropsynth.ingest import STAGES
from cropsynth.seasons import doy_of_index

zone = toy.toy_zone("demo", [("early", 258, 285), ("late", 335, 360)], 0.5, n_cells=4)
model = swg.calibrate(toy.procedural_archives(list(zone.station_ids), 20, seed=4), zone.station_coords)
weather = swg.generate_season(model, zone, 364, seed=11)

cell = zone.grid_cells[0]
soil = {s.soil_id: s for s in toy.TOY_SOILS}[cell.soil_id]
rng = np.random.default_rng(0)
season = phenology.simulate_pixel(cell, "early", weather[cell.cell_id], phenology.DEFAULT_CULTIVAR, soil, zone, rng)

# event days, reported as day of year
for name, day in sorted(season.events.items(), key=lambda kv: kv[1]):
    print(f"{name:13s} day {day:3d}  doy {int(doy_of_index(day, zone.season_start_doy)):3d}")

ndvi = canopy.simulate_ndvi_series(season, soil, canopy.DEFAULT_OPTICS, rng)

# weekly summary: stage, LAI and NDVI at each week-end
print("week  stage          lai   ndvi")
for w in range(0, 52, 3):
    d = 7 * w + 6
    print(f"{w:4d}  {STAGES[season.stage[d]]:13s} {season.lai[d]:5.2f}  {ndvi[d]:.3f}")
