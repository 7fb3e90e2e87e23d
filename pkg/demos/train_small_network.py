"""
Training the sequence network on synthetic zones
================================================

Generate a few dozen synthetic zone-seasons, train the bidirectional LSTM on
most of them and score the rest with the overlap F1.
"""

import numpy as np

from cropsynth import evaluation, features, phenology, pipeline, swg, toy, training
from cropsynth.ingest import STAGES
from cropsynth.seqnet import NetConfig
from cropsynth.training import TrainConfig

zones = toy.toy_zones(n_cells=6)
soils = {s.soil_id: s for s in toy.TOY_SOILS}

datasets = []
for i, z in enumerate(zones):
    model = swg.calibrate(toy.procedural_archives(list(z.station_ids), 20, seed=101 * i), z.station_coords)
    datasets += [pipeline.synthetic_zone_season(z, model, soils, phenology.DEFAULT_CULTIVAR, 0, k) for k in range(12)]

# each dataset: daily 20-bin NDVI and 27-bin GDD histograms plus weekly targets
ds = datasets[0]
print(ds.key, "inputs", ds.inputs().shape, "targets", ds.targets.shape)

train_ds = [d for d in datasets if int(d.season_id) < 10]
test_ds = [d for d in datasets if int(d.season_id) >= 10]
assembly = features.assemble("Asyn", [], train_ds, seed=0)

# small width and weekly pooling keep this to about a minute on one core
def show(row):
    if row["epoch"] % 5 == 4:
        print(f"epoch {row['epoch']:2d}  train {row['train_loss']:.3f}  val {row['vl']:.3f}")


run = training.train(assembly, NetConfig(hidden=16, time_stride=7), TrainConfig(epochs=30), seed=0, progress=show)
print("selected epoch", run.selected_epoch)

rep = evaluation.evaluate(run, test_ds)
print("overall net F1", round(rep.overall(), 3))
for s in STAGES:
    print(f"  {s:13s} {rep.net_z(s):.3f}")

# an estimator that echoes the targets scores exactly one
print("oracle", evaluation.evaluate(evaluation.oracle_estimator, test_ds).overall())
print("uniform", round(evaluation.evaluate(lambda d: np.full(d.targets.shape, 1 / 6), test_ds).overall(), 3))
