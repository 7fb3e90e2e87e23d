"""
The command-line pipeline on a toy experiment
=============================================

Write a self-contained toy experiment to a temporary directory and run every
subcommand in order, as one would from a shell::

    cropsynth --config experiment.json calibrate
    cropsynth --config experiment.json generate
    ...

The network is kept tiny and trained for four epochs so the whole run takes
under a minute; the scores it reports are close to chance.
"""

import sys
import tempfile
from pathlib import Path

from cropsynth.cli import main
from cropsynth.toy import write_toy_fixture

root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="cropsynth-"))
config = write_toy_fixture(
    root, survey_years=range(2012, 2019), seasons_per_zone=8, n_cells=6,
    experiment={"network": {"hidden": 16, "time_stride": 7}, "training": {"epochs": 4}},
)
print("experiment written to", config)

for cmd in ("calibrate", "generate", "featurize", "train", "eval", "report"):
    print(f"\n$ cropsynth --config {config.name} {cmd}")
    code = main(["--config", str(config), cmd])
    if code:
        sys.exit(code)

print("\noutputs under", root / "out")
