"""Command-line front end.

Subcommands: synth (generate a toy dataset), train, eval, diagnose
(embedding-geometry checks), validate-dump.  Reports are canonical JSON and
contain no wall-clock data, so identical runs produce identical bytes;
timings go to a separate file on request.

Exit codes: 0 success, 2 configuration problems, 3 malformed artifacts,
4 numerical failure or divergence, 1 anything else.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from .encoders import encode_class_prompts, encode_image, init_params
from .errors import ConfigError, EmplError, FormatError, NumericalError
from .gaps import (
    density_energy_correlation,
    gap_certificate,
    grid_energy,
    harmonic_mean,
)
from .meta import evaluate, train
from .persistence import (
    ExperimentConfig,
    load_checkpoint,
    load_config,
    read_dump,
    read_grid,
    save_checkpoint,
    write_report,
)
from .synth import SynthSpec, generate, toy_benchmark
from .tasks import holdout_task


def _parse_ids(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(",") if p.strip() != "")
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from exc


def _require(cfg: ExperimentConfig, key: str):
    section, _, name = key.partition(".")
    value = getattr(cfg, section)[name]
    if value is None:
        raise ConfigError("required for this command", key=key)
    return value


def _load_training_world(cfg: ExperimentConfig):
    dump = read_dump(_require(cfg, "data.train_dump"))
    observed = tuple(_require(cfg, "data.observed_classes"))
    vocab = dump.to_vocabulary()
    data = dump.to_labeled_set(observed)
    return dump, vocab, data, observed


def _write_timings(path: str | None, seconds: float) -> None:
    if path:
        write_report(path, {"wall_seconds": seconds})


def cmd_synth(args) -> int:
    if args.toy:
        manifest = toy_benchmark(args.out, seed=args.seed)
    else:
        spec = SynthSpec(
            n_classes=args.classes,
            input_dim=args.dim,
            observed=_parse_ids(args.observed),
            train_per_class=args.train_per_class,
            eval_per_class=args.eval_per_class,
            cluster_std=args.cluster_std,
            mean_scale=args.mean_scale,
            seed=args.seed,
            grid_side=args.grid_side,
        )
        manifest = generate(args.out, spec)
    print(f"wrote {manifest['train_dump']}, {manifest['eval_dump']}, {manifest['config']}")
    return 0


def cmd_train(args) -> int:
    started = time.perf_counter()
    cfg = load_config(args.config)
    dump, vocab, data, _ = _load_training_world(cfg)
    model = cfg.model
    params = init_params(
        vocab,
        input_dim=dump.dim,
        embed_dim=model["embed_dim"],
        context_tokens=model["context_tokens"],
        init_scale=model["init_scale"],
        seed=cfg.seed,
        learn_word_vecs=model["learn_word_vecs"],
    )
    result = train(params, data, vocab, cfg.train_config())
    save_checkpoint(args.params, result.params, vocab)
    report = {
        "schema_version": 1,
        "kind": "train",
        "config": cfg.to_dict(),
        "steps": len(result.history),
        "history": result.history,
        "final_loss": result.history[-1]["loss"] if result.history else None,
    }
    write_report(args.report, report)
    _write_timings(args.timings, time.perf_counter() - started)
    print(f"trained {len(result.history)} steps; wrote {args.params} and {args.report}")
    return 0


def cmd_eval(args) -> int:
    started = time.perf_counter()
    cfg = load_config(args.config)
    params, vocab = load_checkpoint(args.params)
    dump = read_dump(_require(cfg, "data.eval_dump"))
    observed = tuple(_require(cfg, "data.observed_classes"))
    feats, labels = dump.image_records()
    class_list = cfg.eval["class_list"]
    ids = tuple(class_list) if class_list else tuple(range(vocab.size))
    result = evaluate(
        params,
        vocab,
        feats,
        labels,
        class_list=ids,
        observed_pool=observed,
        n_prompts=cfg.eval["n_prompts"],
        sim=cfg.sim,
        sgld=cfg.sgld,
        seed=cfg.eval["seed"],
    )
    pool = set(observed)
    label_set = set(int(l) for l in labels)
    seen_labels = sorted(label_set & pool)
    unseen_labels = sorted(label_set - pool)
    observed_acc = result.accuracy_over(seen_labels) if seen_labels else None
    unseen_acc = result.accuracy_over(unseen_labels) if unseen_labels else None
    report = {
        "schema_version": 1,
        "kind": "eval",
        "config": cfg.to_dict(),
        "n": result.size,
        "class_list": list(result.class_ids),
        "accuracy": result.accuracy,
        "observed_accuracy": observed_acc,
        "unseen_accuracy": unseen_acc,
        "harmonic_accuracy": (
            harmonic_mean(observed_acc, unseen_acc)
            if observed_acc is not None and unseen_acc is not None
            else None
        ),
        "per_class": {str(c): list(v) for c, v in result.per_class().items()},
        "predictions": [int(p) for p in result.predictions],
    }
    write_report(args.report, report)
    _write_timings(args.timings, time.perf_counter() - started)
    print(f"evaluated {result.size} examples, accuracy {result.accuracy:.4f}; wrote {args.report}")
    return 0


def cmd_diagnose(args) -> int:
    cfg = load_config(args.config)
    params, vocab = load_checkpoint(args.params)
    dump = read_dump(_require(cfg, "data.eval_dump"))
    observed = tuple(_require(cfg, "data.observed_classes"))
    feats, labels = dump.image_records()
    image_emb = encode_image(params, feats)
    prompt_table = encode_class_prompts(params, vocab, range(vocab.size))
    cert = gap_certificate(image_emb, prompt_table[labels])
    report: dict = {
        "schema_version": 1,
        "kind": "diagnose",
        "config": cfg.to_dict(),
        "gap": {
            "n_pairs": cert.n_pairs,
            "direction_mean": cert.direction_mean,
            "magnitude_mean": cert.magnitude_mean,
            "magnitude_std": cert.magnitude_std,
            "magnitude_cv": cert.magnitude_cv,
        },
        "density_energy": None,
    }
    grid_path = cfg.data["grid"]
    if grid_path:
        pts, dens = read_grid(grid_path)
        if dens is None:
            raise ConfigError("grid file has no density column", key="data.grid")
        task = holdout_task(vocab, observed)
        energies = grid_energy(params, vocab, task, pts, cfg.sim)
        rho, pvalue = density_energy_correlation(dens, energies)
        report["density_energy"] = {"spearman_rho": rho, "pvalue": pvalue, "n": int(len(dens))}
    write_report(args.report, report)
    print(f"wrote {args.report}")
    return 0


def cmd_validate_dump(args) -> int:
    dump = read_dump(args.path)
    kinds = {0: "image", 1: "text"}
    counts = {kinds[m]: int(np.sum(dump.modality == m)) for m in (0, 1)}
    print(
        f"{args.path}: {dump.n_records} records (dim {dump.dim}), "
        f"{dump.n_classes} classes, {counts['image']} image / {counts['text']} text, "
        f"word_vecs={'yes' if dump.word_vecs is not None else 'no'}, "
        f"ref_pred={'yes' if dump.ref_pred is not None else 'no'}, "
        f"normalized={'yes' if dump.normalized else 'no'}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="empl",
        description="Energy-regularized multi-prompt learning on embedding dumps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cluster dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument(
        "--toy",
        action="store_true",
        help="write the calibrated benchmark bundle; only --seed applies",
    )
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--observed", default="0,1,2,3", help="comma-separated class ids")
    p.add_argument("--train-per-class", type=int, default=40)
    p.add_argument("--eval-per-class", type=int, default=25)
    p.add_argument("--cluster-std", type=float, default=0.05)
    p.add_argument("--mean-scale", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid-side", type=int, default=20)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train from a config and a training dump")
    p.add_argument("--config", required=True)
    p.add_argument("--params", required=True, help="checkpoint output path")
    p.add_argument("--report", required=True)
    p.add_argument("--timings", default=None, help="write wall-clock timings to this file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on an evaluation dump")
    p.add_argument("--config", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--timings", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diagnose", help="embedding-geometry diagnostics")
    p.add_argument("--config", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("validate-dump", help="check a dump file and print a summary")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate_dump)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except EmplError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
