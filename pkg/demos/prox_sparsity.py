"""What the group-lasso prox does to a weight matrix, one step at a time."""
# %%
import numpy as np

from oivae import prox_group_lasso

rng = np.random.default_rng(0)
W = rng.normal(size=(3, 6)) * np.array([2.0, 1.0, 0.5, 0.2, 0.1, 0.0])
print("column norms before", np.linalg.norm(W, axis=0).round(3))

# %%
# Each column shrinks by eta*lam in norm; columns shorter than that vanish exactly.
for eta_lam in (0.05, 0.3, 1.0):
    out = prox_group_lasso([W], eta=eta_lam, lam=1.0)[0]
    print(f"eta*lam={eta_lam:4}", np.linalg.norm(out, axis=0).round(3),
          "exact zeros:", int(np.sum(np.all(out == 0.0, axis=0))))

# %%
# Direction is preserved for every surviving column.
out = prox_group_lasso([W], eta=0.3, lam=1.0)[0]
alive = np.linalg.norm(out, axis=0) > 0
cos = np.sum(out[:, alive] * W[:, alive], axis=0) / (
    np.linalg.norm(out[:, alive], axis=0) * np.linalg.norm(W[:, alive], axis=0))
print("cosine to the original column", cos.round(12))
