"""Collapsed VI training loop.

Each step computes gradients of the smooth objective once, applies Adam to
the inference network, the generators and the observation noise, takes a
plain gradient step on every latent-to-group matrix and finally applies the
group-lasso proximal operator with threshold ``lr_prox * lam``.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .data import DataError, GroupedDataset
from .io import decode_array, encode_array, load_checkpoint, save_checkpoint
from .model import DEFAULT_STD_FLOOR, ArchitectureSpec, OiVaeParams, init_params
from .objective import ElboBreakdown, ObjectiveConfig, build_objective, prox_group_lasso

BATCHING_MODES = ("uniform_with_replacement", "shuffled_epochs")
DATA_SCALES = ("mean", "dataset", "sum")


class NumericError(RuntimeError):
    """Loss or gradient became non-finite."""


@dataclass
class TrainConfig:
    lam: float = 1.0
    lr_adam: float = 1e-2
    lr_prox: float = 1e-4
    batch_size: int = 64
    iterations: int | None = 20000
    epochs: int | None = None
    batching_mode: str = "uniform_with_replacement"
    mc_samples: int = 1
    throttle_factor: float = 0.1
    throttle_epochs: int = 25
    std_floor: float = DEFAULT_STD_FLOOR
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    theta_prior: bool = True
    data_scale: str | float = "mean"
    log_every: int = 100
    checkpoint_every: int = 0

    def validate(self) -> list[str]:
        """All problems at once; empty when the config is usable."""
        errs = []
        if self.lam < 0:
            errs.append("lam must be >= 0")
        if self.lr_adam <= 0:
            errs.append("lr_adam must be > 0")
        if self.lr_prox < 0:
            errs.append("lr_prox must be >= 0")
        if self.batch_size < 1:
            errs.append("batch_size must be >= 1")
        if (self.iterations is None) == (self.epochs is None):
            errs.append("exactly one of iterations / epochs must be set")
        elif (self.iterations or self.epochs or 0) < 0:
            errs.append("iterations / epochs must be >= 0")
        if self.batching_mode not in BATCHING_MODES:
            errs.append(f"batching_mode must be one of {BATCHING_MODES}")
        if self.mc_samples < 1:
            errs.append("mc_samples must be >= 1")
        if not 0 < self.throttle_factor <= 1:
            errs.append("throttle_factor must lie in (0, 1]")
        if self.throttle_epochs < 0:
            errs.append("throttle_epochs must be >= 0")
        if self.std_floor < 0:
            errs.append("std_floor must be >= 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            errs.append("adam betas must lie in [0, 1) and adam_eps must be > 0")
        if not (self.data_scale in DATA_SCALES or isinstance(self.data_scale, (int, float))):
            errs.append(f"data_scale must be one of {DATA_SCALES} or a number")
        if self.log_every < 1:
            errs.append("log_every must be >= 1")
        return errs

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_update(values: dict, grads: dict, state: AdamState, lr, beta1, beta2, eps) -> dict:
    """One bias-corrected Adam step minimising the loss whose gradient is ``grads``."""
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    out = {}
    for name, value in values.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        out[name] = value - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return out


def count_zero_columns(params: OiVaeParams):
    """Per-group and total number of ``W`` columns that are exactly zero."""
    per_group = [int(np.sum(np.all(np.asarray(w) == 0.0, axis=0))) for w in params.W]
    return per_group, sum(per_group)


def throttle_for_epoch(epoch: int, config: TrainConfig) -> float:
    return config.throttle_factor if epoch < config.throttle_epochs else 1.0


def _adam_names(params: OiVaeParams) -> list[str]:
    return [n for n, _ in params.named_tensors() if not n.startswith("W.")]


def train_step(
    params: OiVaeParams,
    batch,
    adam_state: AdamState,
    config: TrainConfig,
    rng,
    data_scale: float = 1.0,
    throttle: float = 1.0,
    eps=None,
):
    """One collapsed-VI update; returns ``(params, adam_state, breakdown)``.

    ``eps`` overrides the Monte Carlo noise (shape ``S x batch x K``).
    """
    batch = np.asarray(batch, dtype=np.float64)
    if eps is None:
        eps = rng.standard_normal((config.mc_samples, batch.shape[0], params.arch.latent_dim))
    obj_cfg = ObjectiveConfig(
        lam=config.lam,
        data_scale=data_scale,
        include_theta_prior=config.theta_prior,
        throttle=throttle,
        std_floor=config.std_floor,
    )
    nodes = params.as_nodes()
    smooth, breakdown, _ = build_objective(nodes, batch, eps, obj_cfg)
    if not math.isfinite(breakdown.smooth_total):
        raise NumericError(f"step {params.step}: non-finite objective {breakdown.smooth_total}")
    loss = dc.neg(smooth)
    dc.backward(loss)

    grads = {}
    for name, node in nodes.named_tensors():
        if not np.all(np.isfinite(node.grad)):
            raise NumericError(f"step {params.step}: non-finite gradient in {name}")
        grads[name] = node.grad

    names = _adam_names(params)
    current = dict(params.named_tensors())
    updated = adam_update(
        {n: current[n] for n in names},
        grads,
        adam_state,
        config.lr_adam,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    )
    W = [current[f"W.{g}"] - config.lr_prox * grads[f"W.{g}"] for g in range(len(params.W))]
    W = prox_group_lasso(W, config.lr_prox, config.lam)
    updated.update({f"W.{g}": w for g, w in enumerate(W)})
    new_params = params.with_tensors(updated)
    new_params.step = params.step + 1
    return new_params, adam_state, breakdown


LOG_COLUMNS = (
    "step",
    "epoch",
    "reconstruction",
    "kl",
    "theta_prior",
    "penalty",
    "smooth_total",
    "full_total",
    "recon_per_datum",
    "kl_per_datum",
    "elbo_per_datum",
    "zero_columns",
)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def append(self, record: dict) -> None:
        if self.records and record["step"] <= self.records[-1]["step"]:
            raise ValueError("TrainLog steps must be strictly increasing")
        self.records.append(record)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records])


def format_log_line(record: dict) -> str:
    parts = []
    for c in LOG_COLUMNS:
        v = record[c]
        parts.append(str(v) if isinstance(v, int) else repr(float(v)))
    return "\t".join(parts)


def resolve_data_scale(data_scale, n: int, batch_len: int) -> float:
    """Factor multiplying the summed per-datum terms of a minibatch.

    ``"mean"`` gives the per-datum average, ``"dataset"`` the full-data
    estimate ``n / batch_len`` and ``"sum"`` the raw minibatch sum.
    """
    if data_scale == "mean":
        return 1.0 / batch_len
    if data_scale == "dataset":
        return n / batch_len
    if data_scale == "sum":
        return 1.0
    return float(data_scale)


def steps_per_epoch(n: int, batch_size: int) -> int:
    return max(1, math.ceil(n / batch_size))


def _rng_state(rng) -> dict:
    return rng.bit_generator.state


def fit(
    dataset: GroupedDataset,
    arch: ArchitectureSpec,
    config: TrainConfig,
    params: OiVaeParams | None = None,
    resume_from=None,
    checkpoint_path=None,
    log_path=None,
    progress=None,
):
    """Run the full training budget; returns ``(params, TrainLog)``.

    ``resume_from`` is a checkpoint written by a previous call; training
    continues from its step counter, optimizer and RNG state.  ``progress``
    is called with every logged record.
    """
    errs = config.validate()
    if errs:
        raise ValueError("invalid train config: " + "; ".join(errs))
    arch.validate_for(dataset.groups)
    data = dataset.data
    n = data.shape[0]
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    spe = steps_per_epoch(n, config.batch_size)
    total = config.iterations if config.iterations is not None else config.epochs * spe

    rng = np.random.default_rng(config.seed)
    adam = AdamState()
    perm = None
    if resume_from is not None:
        params, state, _ = load_checkpoint(resume_from)
        if params.groups != dataset.groups:
            raise DataError(
                f"checkpoint groups {params.groups.to_dict()} do not match dataset groups "
                f"{dataset.groups.to_dict()}"
            )
        adam = AdamState(
            {k: decode_array(v) for k, v in state["adam_m"].items()},
            {k: decode_array(v) for k, v in state["adam_v"].items()},
            int(state["adam_t"]),
        )
        rng.bit_generator.state = state["rng"]
        perm = None if state.get("perm") is None else np.asarray(state["perm"], dtype=np.int64)
    elif params is None:
        params = init_params(dataset.groups, arch, rng)

    log = TrainLog()
    log_fh = None
    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        fresh = resume_from is None or not log_path.exists()
        log_fh = log_path.open("w" if fresh else "a")
        if fresh:
            log_fh.write("\t".join(LOG_COLUMNS) + "\n")

    t0 = time.perf_counter()
    try:
        while params.step < total:
            step = params.step
            epoch = step // spe
            if config.batching_mode == "uniform_with_replacement":
                idx = rng.integers(0, n, size=config.batch_size)
            else:
                pos = step % spe
                if pos == 0 or perm is None:
                    perm = rng.permutation(n)
                idx = perm[pos * config.batch_size : (pos + 1) * config.batch_size]
            batch = data[idx]
            scale = resolve_data_scale(config.data_scale, n, len(idx))
            params, adam, bd = train_step(
                params, batch, adam, config, rng,
                data_scale=scale,
                throttle=throttle_for_epoch(epoch, config),
            )
            done = params.step
            if done % config.log_every == 0 or done == total:
                _, zeros = count_zero_columns(params)
                rec = {"step": done, "epoch": epoch, **bd.to_dict()}
                rec["recon_per_datum"] = bd.reconstruction / (scale * len(idx))
                rec["kl_per_datum"] = bd.kl / (scale * len(idx))
                rec["elbo_per_datum"] = rec["recon_per_datum"] - rec["kl_per_datum"]
                rec["zero_columns"] = zeros
                rec["wall_time"] = time.perf_counter() - t0
                log.append(rec)
                if log_fh is not None:
                    log_fh.write(format_log_line(rec) + "\n")
                if progress is not None:
                    progress(rec)
            if checkpoint_path is not None and (
                done == total or (config.checkpoint_every and done % config.checkpoint_every == 0)
            ):
                save_checkpoint(
                    checkpoint_path,
                    params,
                    trainer_state(adam, rng, perm),
                    {"train": config.to_dict()},
                )
    finally:
        if log_fh is not None:
            log_fh.close()
    return params, log


def trainer_state(adam: AdamState, rng, perm) -> dict:
    return {
        "adam_m": {k: encode_array(v) for k, v in adam.m.items()},
        "adam_v": {k: encode_array(v) for k, v in adam.v.items()},
        "adam_t": adam.t,
        "rng": _rng_state(rng),
        "perm": None if perm is None else [int(i) for i in perm],
    }
