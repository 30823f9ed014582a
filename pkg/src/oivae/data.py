"""Grouped datasets: synthetic bars, grouped CSV files and train/test splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import GroupSpec


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass
class GroupedDataset:
    """``N x D`` observations whose columns are partitioned by ``groups``."""

    data: np.ndarray
    groups: GroupSpec
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise DataError(f"dataset must be 2-d, got shape {self.data.shape}")
        if self.data.shape[1] != self.groups.total_width:
            raise DataError(
                f"dataset has {self.data.shape[1]} columns but groups sum to "
                f"{self.groups.total_width}"
            )
        if not np.all(np.isfinite(self.data)):
            raise DataError("dataset contains non-finite values")

    def __len__(self) -> int:
        return self.data.shape[0]

    def subset(self, rows, note: str | None = None) -> "GroupedDataset":
        prov = dict(self.provenance)
        if note:
            prov["subset"] = note
        return GroupedDataset(self.data[rows], self.groups, prov)


def generate_bars(
    n: int = 2048,
    side: int = 8,
    bar_value: float = 0.5,
    noise_std: float = 0.05,
    rng=None,
    seed: int | None = None,
) -> GroupedDataset:
    """Images with one random row set to ``bar_value`` plus white noise.

    Rows of the image are the groups; images are flattened row-major.
    """
    if side < 1:
        raise ValueError("side must be >= 1")
    if rng is None:
        rng = np.random.default_rng(seed)
    rows = rng.integers(0, side, size=n)
    images = np.zeros((n, side, side))
    images[np.arange(n), rows, :] = bar_value
    if noise_std > 0:
        images = images + rng.normal(0.0, noise_std, size=images.shape)
    groups = GroupSpec(tuple(f"row{r}" for r in range(side)), (side,) * side)
    prov = {
        "source": "bars",
        "n": int(n),
        "side": int(side),
        "bar_value": float(bar_value),
        "noise_std": float(noise_std),
        "seed": seed,
        "bar_rows": rows.tolist(),
    }
    return GroupedDataset(images.reshape(n, side * side), groups, prov)


def parse_manifest(text: str) -> list[tuple[str, list[str]]]:
    """Parse ``group: col, col, ...`` lines (``#`` comments allowed)."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, sep, cols = line.partition(":")
        if not sep or not name.strip():
            raise DataError(f"manifest line {lineno}: expected 'group: col, col, ...'")
        columns = [c.strip() for c in cols.split(",") if c.strip()]
        if not columns:
            raise DataError(f"manifest line {lineno}: group {name.strip()!r} has no columns")
        out.append((name.strip(), columns))
    if not out:
        raise DataError("manifest defines no groups")
    return out


def load_grouped_csv(path, manifest) -> GroupedDataset:
    """Load a numeric CSV with header, reordering columns into group blocks.

    ``manifest`` is the manifest text, a path to it, or an already parsed
    list of ``(group, [columns])``.
    """
    if isinstance(manifest, (str, Path)) and Path(manifest).is_file():
        manifest = Path(manifest).read_text()
    if isinstance(manifest, str):
        manifest = parse_manifest(manifest)
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                bad = next(i for i, c in enumerate(row) if not _is_float(c))
                raise DataError(
                    f"{path}:{lineno}: non-numeric cell {row[bad]!r} in column {header[bad]!r}"
                ) from None
    index = {h: i for i, h in enumerate(header)}
    order, seen = [], {}
    for name, cols in manifest:
        for c in cols:
            if c not in index:
                raise DataError(f"manifest group {name!r} references missing column {c!r}")
            if c in seen:
                raise DataError(f"column {c!r} assigned to both {seen[c]!r} and {name!r}")
            seen[c] = name
            order.append(index[c])
    unassigned = [h for h in header if h not in seen]
    if unassigned:
        raise DataError(f"columns not assigned to any group: {unassigned}")
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))[:, order]
    groups = GroupSpec(tuple(n for n, _ in manifest), tuple(len(c) for _, c in manifest))
    return GroupedDataset(data, groups, {"source": "csv", "path": str(path)})


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def split_rows(dataset: GroupedDataset, train_fraction: float = 0.9, seed: int = 0):
    """Random row split; the training part has ``floor(train_fraction * N)`` rows."""
    n = len(dataset)
    n_train = math.floor(train_fraction * n)
    if n_train <= 0 or n_train >= n:
        raise DataError(f"split of {n} rows at {train_fraction} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    train_idx, test_idx = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    return dataset.subset(train_idx, "train"), dataset.subset(test_idx, "test")


def split_trials(trials: dict, train_ids, test_ids):
    """Split per-trial datasets (``{trial_id: GroupedDataset}``) by trial.

    Returns ``(train, test)`` where each is the row concatenation of its
    trials, in the order given.
    """
    train_ids, test_ids = list(train_ids), list(test_ids)
    if not train_ids or not test_ids:
        raise DataError("both train and test trial lists must be nonempty")
    overlap = set(train_ids) & set(test_ids)
    if overlap:
        raise DataError(f"trials assigned to both train and test: {sorted(overlap)}")
    missing = [t for t in train_ids + test_ids if t not in trials]
    if missing:
        raise DataError(f"unknown trials: {missing}")
    return concat_datasets([trials[t] for t in train_ids]), concat_datasets(
        [trials[t] for t in test_ids]
    )


def concat_datasets(parts) -> GroupedDataset:
    groups = parts[0].groups
    for p in parts[1:]:
        if p.groups != groups:
            raise DataError("cannot concatenate datasets with different group layouts")
    prov = {"source": "concat", "parts": [p.provenance for p in parts]}
    return GroupedDataset(np.vstack([p.data for p in parts]), groups, prov)
