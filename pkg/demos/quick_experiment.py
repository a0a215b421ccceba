"""A small end-to-end experiment: every model, a few trials, a few epochs.

Takes about a minute on one core. The full desk-scale run is
`mmnowcast experiment --config demos/desk.toml --out runs/desk`.

    python demos/quick_experiment.py [out_dir]
"""

import sys

from mmnowcast import datagen, harness, nn
from mmnowcast.harness import ExperimentConfig

out = sys.argv[1] if len(sys.argv) > 1 else "quick_out"
ds = datagen.build_dataset(config=datagen.DatasetConfig(seed=1, n_samples=400, n_days=30, render_resolution=128))
cfg = ExperimentConfig(
    trials=2,
    train=nn.TrainConfig(max_epochs=6, patience=3),
    e2e=nn.TrainConfig(lr=1e-4, max_epochs=2, patience=2),
)
res = harness.run_experiment(cfg, ds)
harness.write_experiment(res, out)
for model, row in res.summary().items():
    print(f"{model:<12} MSE {row['mse_mean']:.5f}  excess cost {row['excess_pct_median']:6.2f}%")
print(f"artifacts in {out}/")
