"""Parse a CMU-style skeleton and motion file, normalize, and train briefly.

Uses the trimmed fixture shipped with the tests; point ``DIR`` at a folder
holding ``07.asf`` and ``07_01.amc`` ... to use real subject-7 data.
"""
# %%
from pathlib import Path

import numpy as np

from oivae import ArchitectureSpec, TrainConfig, fit
from oivae import evaluate as ev
from oivae.mocap import normalize_angles, parse_motion, parse_skeleton

DIR = Path(__file__).resolve().parents[1] / "tests" / "fixtures"
skel = parse_skeleton((DIR / "mini.asf").read_text())
print("bones with dofs:", skel.joint_names, " dofless:", skel.static_bones)
print("channel layout:", skel.channel_layout())

# %%
seq = parse_motion((DIR / "mini_01.amc").read_text(), skel, trial_id="mini_01")
ds, warnings = normalize_angles(seq, skel, root_mode="rotation")
print(ds.groups)
print(ds.data.round(3))
print("warnings:", warnings)

# %%
# Repeat the three frames with a little jitter so there is something to fit.
rng = np.random.default_rng(0)
ds.data = np.repeat(ds.data, 40, axis=0) + rng.normal(0, 0.02, size=(120, ds.data.shape[1]))
arch = ArchitectureSpec(latent_dim=4, p=8, generator=("tanh", "affine"))
params, _ = fit(ds, arch, TrainConfig(lr_adam=1e-3, iterations=None, epochs=60,
                                      batching_mode="shuffled_epochs", log_every=10**6))
print(ev.format_rankings(ev.weight_norm_matrix(params), 3))
