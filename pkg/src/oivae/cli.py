"""Command-line driver: ``oivae <command> [options]``.

Commands: ``generate-bars``, ``train``, ``eval``, ``sample``,
``export-weights``.  Each command writes its effective configuration next
to its outputs.  Exit codes: 0 success, 2 configuration error, 3 data or
checkpoint error, 4 numeric abort, 5 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import evaluate as ev
from .data import DataError, generate_bars, load_grouped_csv, split_rows, split_trials
from .io import FormatError, atomic_write, load_checkpoint, load_dataset, save_dataset
from .diffcore import DimensionError
from .model import conditional_perturb, sample_prior
from .trainer import NumericError, count_zero_columns, fit

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5


class IncompatibleCheckpoint(DataError):
    pass


def emit(event: str, **fields) -> None:
    """One ``event key=value ...`` line on stdout."""
    parts = [event]
    for k, v in fields.items():
        if isinstance(v, float):
            v = repr(v)
        parts.append(f"{k}={v}")
    print(" ".join(parts), flush=True)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def build_datasets(cfg: dict):
    """``(train, test)`` for the configured dataset; ``test`` may be None."""
    ds = cfg["dataset"]
    kind = ds["kind"]
    if kind == "mocap":
        from .mocap import load_subject, normalize_trials

        train_ids = [int(t) for t in ds["train_trials"]]
        test_ids = [int(t) for t in ds["test_trials"]]
        skel, seqs = load_subject(ds["directory"], ds["subject"], train_ids + test_ids)
        trials, warnings = normalize_trials(skel, seqs, train_ids, ds.get("root_mode", "rotation"))
        for w in warnings:
            emit("warning", message=json.dumps(w))
        return split_trials(trials, train_ids, test_ids)
    if kind == "bars":
        full = generate_bars(
            n=int(ds.get("n", 2048)),
            side=int(ds.get("side", 8)),
            bar_value=float(ds.get("bar_value", 0.5)),
            noise_std=float(ds.get("noise_std", 0.05)),
            seed=int(ds.get("seed", cfg["seed"])),
        )
    elif kind == "csv":
        full = load_grouped_csv(ds["path"], ds["manifest"])
    else:
        full = load_dataset(ds["path"])
    split = ds.get("split") or {"kind": "none"}
    if split.get("kind", "none") == "rows":
        return split_rows(
            full, float(split.get("train_fraction", 0.9)), int(split.get("seed", cfg["seed"]))
        )
    return full, None


def check_compatible(params, dataset, where: str) -> None:
    if params.groups != dataset.groups:
        raise IncompatibleCheckpoint(
            f"{where}: checkpoint groups {params.groups.to_dict()} differ from "
            f"dataset groups {dataset.groups.to_dict()}"
        )


def _write_config(cfg: dict, path) -> None:
    atomic_write(path, cfgmod.dump(cfg).encode())


def _effective(args, overrides: dict) -> dict:
    user = cfgmod.load(args.config) if getattr(args, "config", None) else {}
    for key in ("preset", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    return cfgmod.expand(user, overrides)


def _set(d: dict, dotted: str, value) -> None:
    if value is None:
        return
    *head, last = dotted.split(".")
    for h in head:
        d = d.setdefault(h, {})
    d[last] = value


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate_bars(args) -> int:
    ov: dict = {}
    _set(ov, "dataset.kind", "bars")
    _set(ov, "dataset.n", args.n)
    _set(ov, "dataset.side", args.side)
    _set(ov, "dataset.noise_std", args.noise_std)
    _set(ov, "dataset.bar_value", args.bar_value)
    if args.preset is None and not args.config:
        args.preset = "bars"
    cfg = _effective(args, ov)
    cfgmod.validate(cfg, need_model=False)
    ds = cfg["dataset"]
    dataset = generate_bars(
        n=int(ds["n"]),
        side=int(ds["side"]),
        bar_value=float(ds["bar_value"]),
        noise_std=float(ds["noise_std"]),
        seed=int(ds.get("seed", cfg["seed"])),
    )
    save_dataset(args.out, dataset)
    _write_config(cfg, str(args.out) + ".config.yaml")
    emit("generated", path=args.out, rows=len(dataset), columns=dataset.data.shape[1])
    return EXIT_OK


def cmd_train(args) -> int:
    ov: dict = {}
    if args.data:
        ov["dataset"] = {"kind": "file", "path": args.data}
    _set(ov, "train.lam", args.lam)
    _set(ov, "train.iterations", args.iterations)
    if args.epochs is not None:
        ov.setdefault("train", {}).update(epochs=args.epochs, iterations=None)
    _set(ov, "train.log_every", args.log_every)
    _set(ov, "train.checkpoint_every", args.checkpoint_every)
    _set(ov, "model.latent_dim", args.latent_dim)
    _set(ov, "output.dir", args.out_dir)
    if args.preset is None and not args.config:
        args.preset = "bars"
    cfg = _effective(args, ov)
    cfgmod.validate(cfg)
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    _write_config(cfg, out / "config.yaml")
    train, _ = build_datasets(cfg)
    tc = cfgmod.train_config(cfg)
    arch = cfgmod.arch_spec(cfg)
    emit("train_start", rows=len(train), groups=train.groups.n_groups, K=arch.latent_dim,
         lam=tc.lam, out=str(out))

    def progress(rec):
        emit(
            "step",
            step=rec["step"],
            epoch=rec["epoch"],
            elbo_per_datum=rec["elbo_per_datum"],
            penalty=rec["penalty"],
            full_total=rec["full_total"],
            zero_columns=rec["zero_columns"],
        )

    params, log = fit(
        train,
        arch,
        tc,
        resume_from=args.resume,
        checkpoint_path=out / "checkpoint.json",
        log_path=out / "metrics.tsv",
        progress=progress,
    )
    per_group, total = count_zero_columns(params)
    emit("train_done", step=params.step, zero_columns=total,
         checkpoint=str(out / "checkpoint.json"))
    return EXIT_OK


def _load_model(args):
    params, _, meta = load_checkpoint(args.checkpoint)
    std_floor = float(meta.get("train", {}).get("std_floor", 1e-3))
    return params, std_floor


def cmd_eval(args) -> int:
    ov: dict = {}
    if args.data:
        ov["dataset"] = {"kind": "file", "path": args.data, "split": {"kind": "none"}}
    _set(ov, "eval.mc_samples", args.mc_samples)
    _set(ov, "eval.topk", args.topk)
    _set(ov, "eval.split", args.split)
    _set(ov, "output.dir", args.out_dir)
    cfg = _effective(args, ov)
    cfgmod.validate(cfg, need_model=False)
    params, std_floor = _load_model(args)
    train, test = build_datasets(cfg)
    which = cfg["eval"].get("split", "test")
    target = test if (which == "test" and test is not None) else train
    if which == "test" and test is None:
        which = "all"
    check_compatible(params, target, "eval")
    rng = np.random.default_rng(cfg["seed"])
    total, mean = ev.test_loglik(params, target, int(cfg["eval"]["mc_samples"]), rng, std_floor)
    mse = ev.reconstruction_error(params, target, std_floor)
    per_group, zeros = count_zero_columns(params)
    matrix = ev.weight_norm_matrix(params)
    k = min(int(cfg["eval"]["topk"]), params.groups.n_groups)
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    ev.export_weight_norms(matrix, out / "weights.csv")
    ev.export_rankings(matrix, k, out / "rankings.csv")
    report = {
        "split": which,
        "rows": len(target),
        "loglik_total": total,
        "loglik_per_datum": mean,
        "reconstruction_mse": mse,
        "zero_columns": zeros,
        "zero_columns_per_group": dict(zip(params.groups.names, per_group)),
        "step": params.step,
    }
    atomic_write(out / "report.json", (json.dumps(report, indent=1, sort_keys=True) + "\n").encode())
    _write_config(cfg, out / "config.yaml")
    emit("eval", split=which, rows=len(target), loglik_total=total, loglik_per_datum=mean,
         reconstruction_mse=mse, zero_columns=zeros)
    print(f"top {k} groups per latent dimension:")
    print(ev.format_rankings(matrix, k))
    return EXIT_OK


def cmd_sample(args) -> int:
    ov: dict = {}
    if args.data:
        ov["dataset"] = {"kind": "file", "path": args.data, "split": {"kind": "none"}}
    cfg = _effective(args, ov)
    params, std_floor = _load_model(args)
    rng = np.random.default_rng(cfg["seed"])
    if args.mode == "prior":
        n = 100 if args.n is None else args.n
        x, z = sample_prior(params, n, rng, with_noise=args.with_noise)
    else:
        if args.index is None or not (args.data or cfg["dataset"].get("kind")):
            raise UsageError("conditional sampling needs --data (or a config dataset) and --index")
        cfgmod.validate(cfg, need_model=False)
        train, test = build_datasets(cfg)
        source = test if test is not None else train
        check_compatible(params, source, "sample")
        if not 0 <= args.index < len(source):
            raise UsageError(f"--index {args.index} out of range for {len(source)} rows")
        n = 32 if args.n is None else args.n
        x, z = conditional_perturb(params, source.data[args.index], n, rng, std_floor)
    ev.export_samples(x, z, ev.column_labels(params), args.out)
    _write_config(cfg, str(args.out) + ".config.yaml")
    emit("samples", mode=args.mode, rows=len(x), path=args.out)
    return EXIT_OK


def cmd_export_weights(args) -> int:
    params, _ = _load_model(args)
    matrix = ev.weight_norm_matrix(params)
    ev.export_weight_norms(matrix, args.out)
    if args.rankings:
        k = min(args.topk, params.groups.n_groups)
        ev.export_rankings(matrix, k, args.rankings)
    emit("weights", path=args.out, groups=matrix.shape[0], latent_dim=matrix.shape[1])
    return EXIT_OK


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oivae", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--preset", choices=sorted(cfgmod.PRESETS))
        sp.add_argument("--seed", type=int)

    g = sub.add_parser("generate-bars", help="write a synthetic bars dataset")
    common(g)
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int)
    g.add_argument("--side", type=int)
    g.add_argument("--noise-std", type=float)
    g.add_argument("--bar-value", type=float)
    g.set_defaults(func=cmd_generate_bars)

    t = sub.add_parser("train", help="fit a model")
    common(t)
    t.add_argument("--data", help="dataset container written by generate-bars")
    t.add_argument("--out-dir")
    t.add_argument("--lam", type=float)
    t.add_argument("--latent-dim", type=int)
    t.add_argument("--iterations", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--log-every", type=int)
    t.add_argument("--checkpoint-every", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data")
    e.add_argument("--split", choices=["train", "test"])
    e.add_argument("--mc-samples", type=int)
    e.add_argument("--topk", type=int)
    e.add_argument("--out-dir")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sample", help="draw prior or conditional samples")
    common(s)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--mode", choices=["prior", "conditional"], default="prior")
    s.add_argument("--n", type=int)
    s.add_argument("--data")
    s.add_argument("--index", type=int)
    s.add_argument("--with-noise", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    w = sub.add_parser("export-weights", help="write the weight-norm matrix as CSV")
    w.add_argument("--checkpoint", required=True)
    w.add_argument("--out", required=True)
    w.add_argument("--rankings")
    w.add_argument("--topk", type=int, default=3)
    w.set_defaults(func=cmd_export_weights)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (cfgmod.ConfigError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
