"""``vidprompt`` command line: train, eval, count-params, grad-check, export-embeddings."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .adapters import count_params
from .config import ConfigError, RunConfig, load_run_config
from .encoders import build_layout
from .evalkit import CategorySplit, base_to_novel_eval, few_shot_eval, few_shot_sample, zero_shot_eval
from .gradcheck import TOLERANCE, gradcheck
from .model import VideoTextModel
from .serialization import canonical_json, load_checkpoint
from .synthdata import CategoryPromptSet, generate, load_dataset, load_descriptions, synthetic_prompts
from .trainer import TrainingAborted, train

log = logging.getLogger("vidprompt")

PROTOCOLS = ("zero-shot", "base-to-novel", "few-shot")
# checkpoint and run config must agree on these for evaluation to make sense
_COMPAT_FIELDS = ("embed_dim", "frames", "height", "width", "channels", "patch", "ctx", "vocab")


class UsageError(Exception):
    pass


def config_echo(run: RunConfig, **extra) -> str:
    body = run.to_dict()
    body.update(extra)
    return "# config: " + canonical_json(body) + "\n"


def prompt_set(run: RunConfig, ids) -> CategoryPromptSet:
    if run.data.descriptions:
        return load_descriptions(run.data.descriptions, run.model.ctx).select(list(ids))
    return synthetic_prompts(run.data.mode, list(ids), run.model.ctx)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_model(path: str, run: RunConfig) -> VideoTextModel:
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    store, mconf, meta = load_checkpoint(path)
    mismatched = [f for f in _COMPAT_FIELDS if getattr(mconf, f) != getattr(run.model, f)]
    if mismatched:
        detail = ", ".join(f"{f}: checkpoint {getattr(mconf, f)} vs config {getattr(run.model, f)}" for f in mismatched)
        raise UsageError(f"checkpoint does not match the run config ({detail})")
    return VideoTextModel(mconf, store, list(meta.get("trained_on", [])))


# ---------------------------------------------------------------- commands


def cmd_train(args, run: RunConfig) -> int:
    out = _out_dir(args)
    data = generate(run.synth_spec())
    model = VideoTextModel.create(run.model)
    prompts = prompt_set(run, data.category_ids)
    try:
        result = train(model, data, prompts, run.trainer, out, run_header=run.to_dict())
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 1
    last = result.records[-1]
    print(f"checkpoint: {result.checkpoint}")
    print(f"metrics:    {result.log_path}")
    print(f"final epoch {last['epoch']}: loss {last['train_loss']:.4f}, top1 {last['train_top1']:.2f}")
    return 0


def cmd_eval(args, run: RunConfig) -> int:
    protocol = args.protocol
    if protocol is None:
        raise UsageError("eval needs --protocol (one of: " + ", ".join(PROTOCOLS) + ")")
    if not args.checkpoint:
        raise UsageError("eval needs --checkpoint PATH")
    k = args.k if args.k is not None else run.eval.k
    if protocol == "few-shot" and k is None:
        raise UsageError("few-shot evaluation needs --k N")
    model = _load_model(args.checkpoint, run)
    ev = run.eval
    if protocol == "zero-shot":
        target = generate(run.synth_spec(ev.target_categories, ev.samples_per_category, ev.seed))
        report = zero_shot_eval(model, target, prompt_set(run, target.category_ids), seed=ev.seed)
    elif protocol == "base-to-novel":
        split = CategorySplit.even_odd(ev.categories)
        data = generate(run.synth_spec(ev.categories, ev.samples_per_category, ev.seed))
        report = base_to_novel_eval(model, data, prompt_set(run, ev.categories), split,
                                    ev.include_base_distractors, seed=ev.seed)
    else:
        pool = generate(run.synth_spec())
        shots = few_shot_sample(pool, k, run.trainer.seed)
        prompts = prompt_set(run, pool.category_ids)
        train(model, shots, prompts, run.trainer)
        test = generate(run.synth_spec(pool.category_ids, ev.samples_per_category, ev.seed))
        report = few_shot_eval(model, test, prompts, k, seed=run.trainer.seed)
    out = _out_dir(args)
    path = out / f"eval_{protocol}.csv"
    path.write_text(config_echo(run, checkpoint=str(args.checkpoint), protocol=protocol) + report.to_csv())
    print(report.table())
    print(f"report: {path}")
    return 0


def cmd_count_params(args, run: RunConfig) -> int:
    counts = count_params(build_layout(run.model))
    counts["total"] = counts["frozen"] + counts["total_tunable"]
    print(f"{'tag':<16}{'params':>14}{'millions':>11}")
    for key, value in counts.items():
        print(f"{key:<16}{value:>14d}{value / 1e6:>11.2f}")
    if args.out:
        path = _out_dir(args) / "param_counts.csv"
        body = "tag,params\n" + "".join(f"{k},{v}\n" for k, v in counts.items())
        path.write_text(config_echo(run) + body)
    return 0


def cmd_grad_check(args, run: RunConfig, corrupt_tag: str | None = None) -> int:
    seeds = [args.seed] if args.seed is not None else list(range(args.seeds))
    worst: dict[str, float] = {}
    for seed in seeds:
        for row in gradcheck(replace(run.model, seed=seed), seed, corrupt_tag=corrupt_tag):
            worst[row.tag] = max(worst.get(row.tag, 0.0), row.max_rel_error)
    ok = all(err < TOLERANCE for err in worst.values())
    lines = ["tag,max_rel_error,status"]
    print(f"{'tag':<16}{'max rel error':>15}  status   (64-bit, tolerance {TOLERANCE:g}, seeds {seeds})")
    for tag, err in sorted(worst.items()):
        status = "pass" if err < TOLERANCE else "FAIL"
        print(f"{tag:<16}{err:>15.3e}  {status}")
        lines.append(f"{tag},{err:.6e},{status}")
    if args.out:
        (_out_dir(args) / "gradcheck.csv").write_text(config_echo(run, seeds=seeds) + "\n".join(lines) + "\n")
    if not ok:
        failed = [t for t, e in worst.items() if e >= TOLERANCE]
        print(f"gradient check failed for: {', '.join(sorted(failed))}", file=sys.stderr)
    return 0 if ok else 1


def cmd_export_embeddings(args, run: RunConfig) -> int:
    if not args.checkpoint:
        raise UsageError("export-embeddings needs --checkpoint PATH")
    model = _load_model(args.checkpoint, run)
    data = load_dataset(args.dataset) if args.dataset else generate(run.synth_spec())
    if data.videos.shape[2:] != (model.config.height, model.config.width, model.config.channels):
        raise UsageError(f"dataset frames {data.videos.shape[2:]} do not fit the checkpoint's model")
    emb = model.frame_embeddings(data.videos)
    out = _out_dir(args) / "embeddings.csv"
    d = emb.shape[-1]
    rows = [config_echo(run, checkpoint=str(args.checkpoint)),
            "video_id,label,frame," + ",".join(f"e{i}" for i in range(d)) + "\n"]
    for vid in range(emb.shape[0]):
        for t in range(emb.shape[1]):
            rows.append(f"{vid},{int(data.labels[vid])},{t}," + ",".join(repr(float(x)) for x in emb[vid, t]) + "\n")
    out.write_text("".join(rows))
    print(f"embeddings: {out} ({emb.shape[0]} videos x {emb.shape[1]} frames x {d} dims)")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "count-params": cmd_count_params,
    "grad-check": cmd_grad_check,
    "export-embeddings": cmd_export_embeddings,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vidprompt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default="toy", help="YAML config path or builtin name (toy, vit-b16)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one setting, e.g. trainer.epochs=1 (repeatable)")
        p.add_argument("--out", default=None if name in ("count-params", "grad-check") else "runs/latest",
                       help="output directory")
        p.add_argument("--seed", type=int, default=None)
        if name in ("eval", "export-embeddings"):
            p.add_argument("--checkpoint", default=None)
        if name == "eval":
            p.add_argument("--protocol", choices=PROTOCOLS, default=None)
            p.add_argument("--k", type=int, default=None, help="shots per category (few-shot)")
        if name == "export-embeddings":
            p.add_argument("--dataset", default=None, help="dataset file; default: generate from config")
        if name == "grad-check":
            p.add_argument("--seeds", type=int, default=5, help="number of seeds when --seed is absent")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        # grad-check seeds select problems, not the run seed
        run_seed = None if args.command == "grad-check" else args.seed
        run = load_run_config(args.config, args.overrides, run_seed)
        return COMMANDS[args.command](args, run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
