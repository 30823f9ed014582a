"""Self-describing JSON containers for checkpoints and cached datasets.

Arrays are stored as base64 of their little-endian float64 bytes, keys are
sorted and separators fixed, so ``dump(load(dump(x))) == dump(x)`` byte for
byte.  Writes go through a temporary file and an atomic rename.
"""

from __future__ import annotations

import base64
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .model import ArchitectureSpec, GroupSpec, OiVaeParams

CHECKPOINT_FORMAT = "oivae-checkpoint"
DATASET_FORMAT = "oivae-dataset"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """A container file is malformed or of the wrong kind/version."""


def encode_array(a) -> dict:
    a = np.ascontiguousarray(np.asarray(a, dtype="<f8"))
    return {
        "dtype": "float64",
        "shape": list(a.shape),
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def decode_array(d: dict) -> np.ndarray:
    if d.get("dtype") != "float64":
        raise FormatError(f"unsupported array dtype {d.get('dtype')!r}")
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(d["shape"])


def dumps(doc: dict) -> bytes:
    return (json.dumps(doc, sort_keys=True, separators=(",", ":"), indent=1) + "\n").encode()


def atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_doc(path, expected_format: str) -> dict:
    try:
        doc = json.loads(Path(path).read_bytes())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not a valid container ({exc})") from None
    if doc.get("format") != expected_format:
        raise FormatError(f"{path}: expected format {expected_format!r}, got {doc.get('format')!r}")
    if doc.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {doc.get('version')!r}")
    return doc


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def params_to_doc(params: OiVaeParams) -> dict:
    p = params.as_arrays()
    return {
        "groups": p.groups.to_dict(),
        "arch": p.arch.to_dict(),
        "step": int(p.step),
        "tensors": {name: encode_array(v) for name, v in p.named_tensors()},
        "phi_order": list(p.phi.keys()),
        "theta_order": [list(t.keys()) for t in p.theta],
    }


def params_from_doc(doc: dict) -> OiVaeParams:
    groups = GroupSpec.from_dict(doc["groups"])
    arch = ArchitectureSpec.from_dict(doc["arch"])
    t = {k: decode_array(v) for k, v in doc["tensors"].items()}
    G = groups.n_groups
    return OiVaeParams(
        groups=groups,
        arch=arch,
        phi={k: t[f"phi.{k}"] for k in doc["phi_order"]},
        theta=[{k: t[f"theta.{g}.{k}"] for k in doc["theta_order"][g]} for g in range(G)],
        W=[t[f"W.{g}"] for g in range(G)],
        log_noise=[t[f"log_noise.{g}"] for g in range(G)],
        step=int(doc["step"]),
    )


def save_checkpoint(path, params: OiVaeParams, trainer_state: dict | None = None, meta=None):
    """Write params (and optional optimizer/RNG state) to ``path``."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": FORMAT_VERSION,
        "model": params_to_doc(params),
        "trainer": trainer_state,
        "meta": meta or {},
    }
    atomic_write(path, dumps(doc))


def load_checkpoint(path):
    """Returns ``(params, trainer_state, meta)``."""
    doc = _read_doc(path, CHECKPOINT_FORMAT)
    return params_from_doc(doc["model"]), doc.get("trainer"), doc.get("meta", {})


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def save_dataset(path, dataset) -> None:
    doc = {
        "format": DATASET_FORMAT,
        "version": FORMAT_VERSION,
        "groups": dataset.groups.to_dict(),
        "data": encode_array(dataset.data),
        "provenance": dataset.provenance,
    }
    atomic_write(path, dumps(doc))


def load_dataset(path):
    from .data import GroupedDataset

    doc = _read_doc(path, DATASET_FORMAT)
    return GroupedDataset(
        decode_array(doc["data"]), GroupSpec.from_dict(doc["groups"]), doc.get("provenance", {})
    )
