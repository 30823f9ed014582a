"""Grouped CSV input (the meg-style path): a manifest assigns columns to regions."""
# %%
import tempfile
from pathlib import Path

import numpy as np

from oivae import ArchitectureSpec, TrainConfig, fit
from oivae import evaluate as ev
from oivae.data import load_grouped_csv

# Two latent sources drive three "regions"; region c only sees source 0.
rng = np.random.default_rng(1)
s = rng.normal(size=(400, 2))
cols = {
    "a1": s[:, 0], "a2": -s[:, 0],
    "b1": s[:, 1], "b2": 0.5 * s[:, 1],
    "c1": s[:, 0],
}
tmp = Path(tempfile.mkdtemp())
header = list(cols)
rows = np.column_stack([cols[h] for h in header]) + rng.normal(0, 0.05, size=(400, 5))
(tmp / "regions.csv").write_text(
    ",".join(header) + "\n" + "\n".join(",".join(repr(float(v)) for v in r) for r in rows) + "\n")
(tmp / "regions.manifest").write_text("# region: columns\na: a1, a2\nb: b1, b2\nc: c1\n")

# %%
ds = load_grouped_csv(tmp / "regions.csv", tmp / "regions.manifest")
print(ds.groups)

arch = ArchitectureSpec(latent_dim=4, p=2, inference_hidden=("affine:32", "relu"),
                        generator=("tanh", "affine"))
params, _ = fit(ds, arch, TrainConfig(lam=0.1, iterations=8000, log_every=10**6, lr_adam=5e-3, lr_prox=1e-3))
np.set_printoptions(precision=3, suppress=True)
print(ev.weight_norm_matrix(params).values)

# %%
# Expect one dimension shared by regions a and c (they see the same source),
# one dimension for b, and the spare dimensions pruned or nearly so.
for j, ranked in enumerate(ev.top_groups_per_dim(ev.weight_norm_matrix(params), 2)):
    print(j, ranked)
