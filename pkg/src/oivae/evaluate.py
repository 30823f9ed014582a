"""Post-training analysis and CSV exports."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import GroupedDataset
from .model import DEFAULT_STD_FLOOR, OiVaeParams, decode, encode, gaussian_loglik_graph, noise_log_std
from .objective import column_norms, kl_diag_gaussian


@dataclass
class WeightNormMatrix:
    """``G x K`` matrix of ``||W[g][:, j]||_2`` with group names as row labels."""

    values: np.ndarray
    group_names: tuple[str, ...]
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.values.shape


def weight_norm_matrix(params: OiVaeParams) -> WeightNormMatrix:
    values = np.vstack(column_norms(params.W))
    return WeightNormMatrix(values, params.groups.names)


def top_groups_per_dim(matrix: WeightNormMatrix, k: int):
    """For each latent dimension, the ``k`` groups with the largest norms.

    Returns a list (one entry per dimension) of ``[(group_name, norm), ...]``
    sorted by decreasing norm; ties keep group order.
    """
    G = len(matrix.group_names)
    if not 1 <= k <= G:
        raise ValueError(f"k must lie in [1, {G}], got {k}")
    out = []
    for j in range(matrix.values.shape[1]):
        col = matrix.values[:, j]
        order = np.argsort(-col, kind="stable")[:k]
        out.append([(matrix.group_names[g], float(col[g])) for g in order])
    return out


def match_dimensions(matrix: WeightNormMatrix, dims=None):
    """One-to-one assignment of latent dimensions to groups maximising total norm.

    Returns ``{dim: group_index}`` for the dimensions in ``dims`` (all by
    default).  Uses the Hungarian algorithm.
    """
    from scipy.optimize import linear_sum_assignment

    dims = list(range(matrix.values.shape[1])) if dims is None else list(dims)
    sub = matrix.values[:, dims]
    rows, cols = linear_sum_assignment(-sub)
    return {dims[c]: int(r) for r, c in zip(rows, cols)}


def elbo_terms(
    params: OiVaeParams,
    x,
    mc_samples: int = 1,
    rng=None,
    std_floor: float = DEFAULT_STD_FLOOR,
    eps=None,
):
    """Per-row Monte Carlo reconstruction term and analytic KL."""
    x = np.asarray(x, dtype=np.float64)
    mu, sigma = encode(params, x, std_floor=std_floor)
    mu, sigma = mu.value, sigma.value
    if eps is None:
        rng = np.random.default_rng(0) if rng is None else rng
        eps = rng.standard_normal((mc_samples,) + mu.shape)
    log_std = noise_log_std(params).value
    recon = np.zeros(x.shape[0])
    for e in eps:
        recon += gaussian_loglik_graph(x, decode(params, mu + sigma * e), log_std).value
    return recon / len(eps), kl_diag_gaussian(mu, sigma)


def per_datum_elbo(params, x, mc_samples=1, rng=None, std_floor=DEFAULT_STD_FLOOR, eps=None):
    recon, kl = elbo_terms(params, x, mc_samples, rng, std_floor, eps)
    return recon - kl


def test_loglik(
    params: OiVaeParams,
    test: GroupedDataset,
    mc_samples: int = 1,
    rng=None,
    std_floor: float = DEFAULT_STD_FLOOR,
):
    """Per-datum ELBO summed and averaged over ``test``; returns ``(total, mean)``."""
    if test.groups != params.groups:
        raise ValueError("test dataset groups do not match the model")
    if rng is None:
        rng = np.random.default_rng(0)
    values = per_datum_elbo(params, test.data, mc_samples, rng, std_floor)
    return float(values.sum()), float(values.mean())


def reconstruction_error(params: OiVaeParams, dataset, std_floor: float = DEFAULT_STD_FLOOR) -> float:
    """Mean squared error between ``x`` and ``decode(mu(x))``."""
    x = dataset.data if isinstance(dataset, GroupedDataset) else np.asarray(dataset, float)
    mu, _ = encode(params, x, std_floor=std_floor)
    return float(np.mean((decode(params, mu.value).value - x) ** 2))


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def _open_for_write(path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return path.open("w", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def export_weight_norms(matrix: WeightNormMatrix, path) -> None:
    """CSV with one row per group: ``group,z0,z1,...``."""
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group"] + [f"z{j}" for j in range(matrix.values.shape[1])])
        for name, row in zip(matrix.group_names, matrix.values):
            w.writerow([name] + [_fmt(v) for v in row])


def import_weight_norms(path) -> WeightNormMatrix:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    names = tuple(r[0] for r in rows[1:])
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
    return WeightNormMatrix(values, names)


def export_rankings(matrix: WeightNormMatrix, k: int, path) -> None:
    """CSV ``dim,rank,group,norm`` with ``k`` rows per latent dimension."""
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dim", "rank", "group", "norm"])
        for j, ranked in enumerate(top_groups_per_dim(matrix, k)):
            for r, (name, norm) in enumerate(ranked, start=1):
                w.writerow([j, r, name, _fmt(norm)])


def export_samples(x, z, group_names_by_column, path) -> None:
    """CSV with one datum per row: observation columns then latent ``z*`` columns."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(group_names_by_column) + [f"z{j}" for j in range(z.shape[1])])
        for xr, zr in zip(x, z):
            w.writerow([_fmt(v) for v in xr] + [_fmt(v) for v in zr])


def column_labels(params_or_groups) -> list[str]:
    """``group[i]`` labels for every observation column."""
    groups = getattr(params_or_groups, "groups", params_or_groups)
    return [f"{n}[{i}]" for n, w in zip(groups.names, groups.widths) for i in range(w)]


def format_rankings(matrix: WeightNormMatrix, k: int) -> str:
    lines = []
    for j, ranked in enumerate(top_groups_per_dim(matrix, k), start=1):
        lines.append(f"{j:3d}  " + ", ".join(f"{n} ({v:.4f})" for n, v in ranked))
    return "\n".join(lines)
