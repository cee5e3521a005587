"""Command-line interface.

One binary with subcommands for the full pipeline: dataset generation,
action decomposition / sentence parsing over stdin, pretraining,
fine-tuning, evaluation, the ablation grid, and embedding export.

Options may come from a JSON config file (``--config``); explicitly passed
flags win over the file, which wins over built-in defaults.  Every command
that writes an artifact records its fully resolved configuration next to it.
Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

from . import datagen, training
from .actions import (
    Action7,
    BinningConfig,
    ParseError,
    default_config,
    discretize,
    parse_language,
    render_language,
    representative_action,
    format_number,
)
from .affinity import AffinityWeights
from .losses import ContrastiveConfig
from .model import load_checkpoint, save_checkpoint


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's 2
        raise _UsageError(message)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--batch-size", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--clip-norm", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--lam", type=float, help="action-primitive branch weight")
    p.add_argument("--ma-window", type=int)
    p.add_argument("--w-t", type=float)
    p.add_argument("--w-r", type=float)
    p.add_argument("--w-g", type=float)
    p.add_argument("--eval-fraction", type=float)
    p.add_argument("--d-v", type=int)
    p.add_argument("--d-l", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--d", type=int)
    for flag in ("hard-labels", "fixed-weights", "freeze-encoders", "inverse-weighting"):
        p.add_argument(f"--{flag}", action=argparse.BooleanOptionalAction, default=None)


TRAIN_DEFAULTS = {
    "batch_size": 32, "steps": 1500, "lr": 0.05, "momentum": 0.9,
    "clip_norm": 10.0, "seed": 0, "tau": 0.3, "lam": 1.0, "ma_window": 100,
    "w_t": 1.0, "w_r": 1.0, "w_g": 1.0, "eval_fraction": 0.2,
    "d_v": 32, "d_l": 32, "hidden": 64, "d": 16,
    "hard_labels": False, "fixed_weights": False,
    "freeze_encoders": False, "inverse_weighting": False,
}


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < explicitly set flags."""
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path) as fh:
            file_values = json.load(fh)
        unknown = set(file_values) - set(defaults)
        if unknown:
            raise _UsageError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_values)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _train_config(merged: dict) -> training.TrainConfig:
    return training.TrainConfig(
        batch_size=merged["batch_size"],
        steps=merged["steps"],
        lr=merged["lr"],
        momentum=merged["momentum"],
        clip_norm=merged["clip_norm"],
        seed=merged["seed"],
        weights=AffinityWeights(merged["w_t"], merged["w_r"], merged["w_g"]),
        contrastive=ContrastiveConfig(tau=merged["tau"], lam=merged["lam"]),
        ma_window=merged["ma_window"],
        hard_labels=merged["hard_labels"],
        fixed_weights=merged["fixed_weights"],
        freeze_encoders=merged["freeze_encoders"],
        inverse_weighting=merged["inverse_weighting"],
        eval_fraction=merged["eval_fraction"],
        d_v=merged["d_v"],
        d_l=merged["d_l"],
        hidden=merged["hidden"],
        d=merged["d"],
    )


def _write_resolved(out_path: str, command: str, merged: dict) -> None:
    with open(f"{out_path}.config.json", "w") as fh:
        json.dump({"command": command, **merged}, fh, indent=2, sort_keys=True)


def _load_binning(path: str | None) -> BinningConfig:
    if path is None:
        return default_config()
    with open(path) as fh:
        return BinningConfig.from_json(fh.read())


def _load_data(args) -> tuple[datagen.Suite, list[datagen.Episode]]:
    with open(args.suite) as fh:
        suite = datagen.Suite.from_json(fh.read())
    return suite, datagen.read_dataset(args.dataset)


def build_parser() -> _Parser:
    parser = _Parser(prog="primalign", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="build a task suite and dataset")
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--seed", type=int)
    p.add_argument("--tasks", type=int)
    p.add_argument("--sharing", type=float)
    p.add_argument("--phases", type=int)
    p.add_argument("--duration", type=int)
    p.add_argument("--noise-t", type=float)
    p.add_argument("--noise-r", type=float)
    p.add_argument("--pool-size", type=int)
    p.add_argument("--transfer-tasks", type=int)
    p.add_argument("--episodes-per-task", type=int)
    p.add_argument("--obs-dim", type=int)
    p.add_argument("--data-seed", type=int)
    p.add_argument("--binning")
    p.add_argument("--out", required=True, help="dataset JSONL path")
    p.add_argument("--suite-out", required=True, help="suite JSON path")

    p = sub.add_parser("decompose",
                       help="stdin action lines -> primitive sentences")
    p.add_argument("--binning")

    p = sub.add_parser("parse",
                       help="stdin sentences -> representative action lines")
    p.add_argument("--binning")

    p = sub.add_parser("pretrain", help="contrastive + imitation pretraining")
    p.add_argument("--config")
    p.add_argument("--dataset", required=True)
    p.add_argument("--suite", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics", help="per-step metrics CSV path")
    _add_train_flags(p)

    p = sub.add_parser("finetune", help="L1 action regression fine-tuning")
    p.add_argument("--config")
    p.add_argument("--dataset", required=True)
    p.add_argument("--suite", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics")
    p.add_argument("--unfreeze-all", action=argparse.BooleanOptionalAction, default=None)
    _add_train_flags(p)

    p = sub.add_parser("eval", help="retrieval and affinity-correlation")
    p.add_argument("--config")
    p.add_argument("--dataset", required=True)
    p.add_argument("--suite", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="metrics CSV path")
    p.add_argument("--probe-size", type=int, default=256)
    _add_train_flags(p)

    p = sub.add_parser("ablate",
                       help="{soft,hard} x {adaptive,fixed} grid, medians across seeds")
    p.add_argument("--config")
    p.add_argument("--dataset", required=True)
    p.add_argument("--suite", required=True)
    p.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seed list")
    p.add_argument("--out", required=True, help="comparison CSV path")
    _add_train_flags(p)

    p = sub.add_parser("export", help="per-step embedding CSV")
    p.add_argument("--dataset", required=True)
    p.add_argument("--suite", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)

    return parser


GEN_DEFAULTS = {
    "seed": 0, "tasks": 4, "sharing": 0.5, "phases": 4, "duration": 5,
    "noise_t": 0.003, "noise_r": 1.5, "pool_size": 4, "transfer_tasks": 0,
    "episodes_per_task": 12, "obs_dim": 32, "data_seed": 1,
}


def _cmd_gen(args) -> int:
    merged = _resolve(args, GEN_DEFAULTS)
    suite = datagen.build_suite(
        merged["seed"],
        merged["tasks"],
        merged["sharing"],
        phases_per_task=merged["phases"],
        duration=merged["duration"],
        noise_t=merged["noise_t"],
        noise_r=merged["noise_r"],
        pool_size=merged["pool_size"],
        n_transfer_tasks=merged["transfer_tasks"],
        binning=_load_binning(args.binning),
        obs_dim=merged["obs_dim"],
    )
    episodes = datagen.generate_dataset(suite, merged["episodes_per_task"], merged["data_seed"])
    with open(args.suite_out, "w") as fh:
        fh.write(suite.to_json())
    datagen.write_dataset(suite, episodes, args.out)
    _write_resolved(args.out, "gen", merged)
    print(f"wrote {len(episodes)} episodes ({sum(len(e.steps) for e in episodes)} steps) "
          f"to {args.out}; suite to {args.suite_out}")
    return 0


def _cmd_decompose(args) -> int:
    cfg = _load_binning(args.binning)
    for line_no, line in enumerate(sys.stdin, start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 7:
            raise ValueError(f"stdin line {line_no}: expected 7 numbers, got {len(parts)}")
        action = Action7(*(float(x) for x in parts))
        print(render_language(discretize(action, cfg), cfg))
    return 0


def _cmd_parse(args) -> int:
    cfg = _load_binning(args.binning)
    for line_no, line in enumerate(sys.stdin, start=1):
        if not line.strip():
            continue
        try:
            triple = parse_language(line.rstrip("\n"), cfg)
        except ParseError as exc:
            raise ValueError(f"stdin line {line_no}: {exc}") from exc
        action = representative_action(triple, cfg)
        print(" ".join(format_number(v) for v in action.as_tuple()))
    return 0


def _cmd_pretrain(args) -> int:
    merged = _resolve(args, TRAIN_DEFAULTS)
    suite, episodes = _load_data(args)
    params, log = training.pretrain(_train_config(merged), suite, episodes)
    save_checkpoint(params, args.out)
    if args.metrics:
        log.to_csv(args.metrics)
    _write_resolved(args.out, "pretrain", merged)
    print(f"pretrained {merged['steps']} steps; final total loss "
          f"{log.rows[-1][log.columns.index('total')]:.4f}; checkpoint at {args.out}")
    return 0


def _cmd_finetune(args) -> int:
    merged = _resolve(args, {**TRAIN_DEFAULTS, "unfreeze_all": False})
    suite, episodes = _load_data(args)
    params = load_checkpoint(args.checkpoint)
    params, log = training.finetune(
        _train_config(merged), suite, episodes, params, unfreeze_all=merged["unfreeze_all"]
    )
    save_checkpoint(params, args.out)
    if args.metrics:
        log.to_csv(args.metrics)
    _write_resolved(args.out, "finetune", merged)
    _, held_out, _ = training.split_episodes(suite, episodes, merged["eval_fraction"])
    print(f"fine-tuned {merged['steps']} steps; held-out L1 "
          f"{training.evaluate_l1(params, suite, held_out):.4f}; checkpoint at {args.out}")
    return 0


def _cmd_eval(args) -> int:
    merged = _resolve(args, TRAIN_DEFAULTS)
    suite, episodes = _load_data(args)
    params = load_checkpoint(args.checkpoint)
    cfg = _train_config(merged)
    _, held_out, transfer = training.split_episodes(suite, episodes, cfg.eval_fraction)
    candidates = training.candidate_texts(suite)
    retrieval = training.evaluate_retrieval(params, suite, held_out, candidates)
    rho = training.affinity_correlation(
        params, suite, held_out, cfg.weights, probe_size=args.probe_size, seed=cfg.seed
    )
    rows = [("retrieval_top1", retrieval["top1"]), ("affinity_spearman", rho)]
    rows += [(f"retrieval_top1_task_{tid}", acc) for tid, acc in sorted(retrieval["per_task"].items())]
    if transfer:
        rows.append(
            ("transfer_retrieval_top1",
             training.evaluate_retrieval(params, suite, transfer, candidates)["top1"])
        )
    for name, value in rows:
        print(f"{name}: {value:.4f}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            writer.writerows([(n, repr(float(v))) for n, v in rows])
        _write_resolved(args.out, "eval", merged)
    return 0


def _cmd_ablate(args) -> int:
    merged = _resolve(args, TRAIN_DEFAULTS)
    suite, episodes = _load_data(args)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise _UsageError("--seeds must name at least one seed")
    rows = training.ablation_grid(_train_config(merged), suite, episodes, seeds)
    columns = list(rows[0].keys())
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([row["config"]] + [repr(float(row[c])) for c in columns[1:]])
    _write_resolved(args.out, "ablate", {**merged, "seeds": seeds})
    for row in rows:
        print("  ".join(f"{k}={row[k]:.4f}" if k != "config" else row[k] for k in columns))
    return 0


def _cmd_export(args) -> int:
    suite, episodes = _load_data(args)
    params = load_checkpoint(args.checkpoint)
    training.export_embeddings(params, suite, episodes, args.out)
    print(f"wrote embeddings for {sum(len(e.steps) for e in episodes)} steps to {args.out}")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "decompose": _cmd_decompose,
    "parse": _cmd_parse,
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "export": _cmd_export,
}


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # --help exits 0 through here
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure contract: exit 2
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
