"""``evclip`` command line.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numerical
failure.  Relative ``--out`` paths resolve under ``$EVCLIP_OUTPUT_ROOT`` when
it is set.  Every command writes ``run_manifest.json`` next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, checkpoint
from . import config as config_mod
from .encoders import encode_prompts
from .errors import ConfigError, DataError, EvclipError
from .evaluation import (
    PromptSet,
    RetrievalSet,
    anomaly_score,
    auc,
    format_table,
    read_embeddings,
    read_relevance,
    retrieval_metrics,
    zero_shot_accuracy,
)
from .synth import PairedSamples, gen_dataset, load_split, pretrain_teacher, teacher_accuracy, write_dataset_dir
from .training import (
    TrainState,
    event_embeddings,
    few_shot_eval,
    finetune,
    heldout_evaluator,
    load_checkpoint,
    pretrain,
    save_checkpoint,
    teacher_image_embeddings,
)
from .video import read_frame_dump, read_instances, read_labels, segment_video, write_instances

log = logging.getLogger("evclip")

OUTPUT_ROOT_ENV = "EVCLIP_OUTPUT_ROOT"
PRETRAIN_COLUMNS = ("step", "L", "L_ct", "L_zs", "L_kl", "heldout_acc")
ABLATIONS = {"all": {}, "no_ct": {"use_ct": False}, "no_zs": {"alpha": 0.0}, "no_kl": {"use_kl": False}}

PLOT_SCRIPT = '''"""Plot {title} from {data}. Requires matplotlib."""
import csv
import sys

import matplotlib.pyplot as plt

with open("{data}") as fh:
    rows = list(csv.DictReader(fh, delimiter="\\t"))
x = [float(r["{x}"]) for r in rows]
for col in {ycols!r}:
    pts = [(a, float(r[col])) for a, r in zip(x, rows) if r[col] not in ("nan", "")]
    if pts:
        plt.plot(*zip(*pts), label=col)
plt.xlabel("{x}")
plt.legend()
plt.title("{title}")
plt.savefig(sys.argv[1] if len(sys.argv) > 1 else "{stem}.png", dpi=120)
'''


# -- helpers ----------------------------------------------------------------

def _out_path(p: str) -> Path:
    path = Path(p)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _write_manifest(out_dir: Path, args, cfg, outputs, started):
    manifest = {
        "command": args.command,
        "argv": sys.argv[1:],
        "config": cfg.to_dict() if cfg is not None else None,
        "seed": cfg.seed if cfg is not None else None,
        "threads": args.threads,
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "outputs": sorted(str(o) for o in outputs),
        "wall_clock_s": round(time.time() - started, 3),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_cfg(args):
    cfg = config_mod.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = config_mod.from_dict({**cfg.to_dict(), "seed": args.seed, "data": {**cfg.to_dict()["data"], "seed": args.seed},
                                    "optimizer": {**cfg.to_dict()["optimizer"], "seed": args.seed}}, require=False)
    return cfg


def _require(args, *names):
    """Missing input paths are usage errors, reported before any work starts."""
    for name in names:
        value = getattr(args, name, None)
        if value is not None and not Path(value).exists():
            raise ConfigError(f"--{name.replace('_', '-')} {value}: no such file or directory")


def _load_teacher(path):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"teacher checkpoint {p} not found; run `evclip pretrain-teacher` first")
    return checkpoint.load_teacher(p)


def _event_encoder(args, cfg, image):
    if getattr(args, "checkpoint", None):
        return load_checkpoint(args.checkpoint)
    return TrainState.start(image, seed=cfg.optimizer.seed)


def _write_tsv(path: Path, rows, columns):
    path.write_text(format_table(rows, columns))


def _write_plot(out: Path, data: str, x: str, ycols, title: str) -> str:
    stem = Path(data).stem
    name = f"plot_{stem}.py"
    (out / name).write_text(PLOT_SCRIPT.format(title=title, data=data, x=x, ycols=list(ycols), stem=stem))
    return name


def _steps(cfg, n_train):
    if cfg.pretrain.steps is not None:
        return int(cfg.pretrain.steps)
    return cfg.optimizer.epochs * math.ceil(n_train / cfg.optimizer.batch_size)


# -- commands ---------------------------------------------------------------

def cmd_gen_data(args, cfg):
    out = _out_path(args.out)
    ds = gen_dataset(cfg.data, keep_streams=True)
    files = write_dataset_dir(ds, out)
    (out / "config.yaml").write_text(cfg.dump())
    print(f"wrote {len(ds.train)} train / {len(ds.heldout)} heldout samples to {out}")
    return out, files + ["config.yaml"]


def cmd_pretrain_teacher(args, cfg):
    out = _out_path(args.out)
    train, train_ids = load_split(args.data, "train", cfg.data.clamp, cfg.data.template)
    held, held_ids = load_split(args.data, "heldout", cfg.data.clamp, cfg.data.template)
    # the teacher sees every class, as a pre-trained image-text model would
    ids = train_ids + held_ids
    names = train.class_names + held.class_names
    labels = np.concatenate([train.labels, held.labels + len(train_ids)])
    order = sorted(range(len(ids)), key=ids.__getitem__)
    rank = np.argsort(order)
    samples = PairedSamples(np.concatenate([train.images, held.images]), np.concatenate([train.events, held.events]),
                            rank[labels], [names[i] for i in order], cfg.data.template)
    image, text = pretrain_teacher(samples, cfg.teacher_config())
    out.parent.mkdir(parents=True, exist_ok=True)
    acc = teacher_accuracy(image, text, samples)
    checkpoint.save_teacher(out, image, text, {"accuracy": acc, "classes": names})
    print(f"teacher zero-shot top-1 on its classes: {acc:.4f}; saved {out}")
    return out.parent, [out.name]


def _pretrain_run(cfg, args, image, text, train, held, loss_cfg, out: Path, steps, log_name="loss_log.tsv"):
    state = load_checkpoint(args.resume) if getattr(args, "resume", None) else TrainState.start(image, cfg.optimizer.seed)
    I = teacher_image_embeddings(image, train)
    T = encode_prompts(text, train.prompts)
    Th = encode_prompts(text, held.prompts)
    evaluate = heldout_evaluator(held.events, Th, held.labels)
    target = image if cfg.optimizer.update_rule == "anchored" else None
    log_path = out / log_name
    fresh = not log_path.exists() or state.step == 0
    fh = log_path.open("w" if fresh else "a")
    if fresh:
        fh.write("\t".join(PRETRAIN_COLUMNS) + "\n")

    def on_row(row):
        fh.write("\t".join(str(row["step"]) if c == "step" else f"{row[c]:.6f}" for c in PRETRAIN_COLUMNS) + "\n")

    try:
        rows = pretrain(state, train, I, T, loss_cfg, cfg.optimizer, steps, evaluate, cfg.pretrain.eval_every,
                        target, on_row)
    finally:
        fh.close()
    return state, rows


def cmd_pretrain(args, cfg):
    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    image, text = _load_teacher(args.teacher)
    train, _ = load_split(args.data, "train", cfg.data.clamp, cfg.data.template)
    held, _ = load_split(args.data, "heldout", cfg.data.clamp, cfg.data.template)
    loss_cfg = cfg.loss
    if args.no_zs:
        loss_cfg.alpha = 0.0
    if args.no_ct:
        loss_cfg.use_ct = False
    if args.no_kl:
        loss_cfg.use_kl = False
    steps = args.steps if args.steps is not None else _steps(cfg, len(train))
    state, rows = _pretrain_run(cfg, args, image, text, train, held, loss_cfg, out, steps)
    save_checkpoint(state, out / "event_encoder.ck")
    plot = _write_plot(out, "loss_log.tsv", "step", ["L", "L_ct", "L_zs", "L_kl", "heldout_acc"], "pre-training")
    last = [r for r in rows if not math.isnan(r["heldout_acc"])]
    print(f"{state.step} steps; heldout zero-shot {last[-1]['heldout_acc']:.4f}" if last else f"{state.step} steps")
    return out, ["event_encoder.ck", "loss_log.tsv", plot]


def cmd_ablate(args, cfg):
    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    image, text = _load_teacher(args.teacher)
    train, _ = load_split(args.data, "train", cfg.data.clamp, cfg.data.template)
    held, _ = load_split(args.data, "heldout", cfg.data.clamp, cfg.data.template)
    steps = args.steps if args.steps is not None else _steps(cfg, len(train))
    curves = {}
    files = []
    for name, override in ABLATIONS.items():
        loss_cfg = config_mod.from_dict({**cfg.to_dict(), "loss": {**cfg.to_dict()["loss"], **override}},
                                        require=False).loss
        state, rows = _pretrain_run(cfg, args, image, text, train, held, loss_cfg, out, steps, f"loss_log_{name}.tsv")
        curves[name] = {r["step"]: r["heldout_acc"] for r in rows if not math.isnan(r["heldout_acc"])}
        files.append(f"loss_log_{name}.tsv")
    table = [{"step": s, **{n: curves[n][s] for n in ABLATIONS}} for s in sorted(curves["all"])]
    _write_tsv(out / "ablation.tsv", table, ["step", *ABLATIONS])
    files += ["ablation.tsv", _write_plot(out, "ablation.tsv", "step", list(ABLATIONS), "heldout zero-shot accuracy")]
    summary = [{"config": n, "min_acc": min(curves[n].values()), "final_acc": curves[n][max(curves[n])]} for n in ABLATIONS]
    _write_tsv(out / "ablation_summary.tsv", summary, ["config", "min_acc", "final_acc"])
    print(format_table(summary), end="")
    return out, files + ["ablation_summary.tsv"]


def cmd_finetune(args, cfg):
    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    image, text = _load_teacher(args.teacher)
    train, _ = load_split(args.data, "train", cfg.data.clamp, cfg.data.template)
    state = _event_encoder(args, cfg, image)
    T = encode_prompts(text, train.prompts)
    opt = config_mod.from_dict({**cfg.to_dict(), "optimizer": {**cfg.to_dict()["optimizer"],
                                                               "learning_rate": cfg.finetune.learning_rate}},
                               require=False).optimizer
    steps = args.steps if args.steps is not None else cfg.finetune.steps
    rows = finetune(state, train, T, cfg.loss, opt, steps)
    acc = zero_shot_accuracy(event_embeddings(state.student, train.events), T, train.labels)
    save_checkpoint(state, out / "event_encoder.ck")
    _write_tsv(out / "finetune_log.tsv", rows, ["step", "L_pred", "batch_acc"])
    _write_tsv(out / "report.tsv", [{"split": "train", "top1": acc, "steps": steps}], ["split", "top1", "steps"])
    plot = _write_plot(out, "finetune_log.tsv", "step", ["L_pred", "batch_acc"], "fine-tuning")
    print(f"fine-tuned {steps} steps; train top-1 {acc:.4f}")
    return out, ["event_encoder.ck", "finetune_log.tsv", "report.tsv", plot]


def cmd_eval_zeroshot(args, cfg):
    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    image, text = _load_teacher(args.teacher)
    split, _ = load_split(args.data, args.split, cfg.data.clamp, cfg.data.template)
    state = _event_encoder(args, cfg, image)
    prompts = PromptSet.build(text, split.class_names, cfg.data.template)
    rows = [
        {"encoder": "event", "input": "events", "top1": zero_shot_accuracy(
            event_embeddings(state.student, split.events), prompts, split.labels)},
        {"encoder": "image_teacher", "input": "events", "top1": zero_shot_accuracy(
            teacher_image_embeddings(image, _as_images(split)), prompts, split.labels)},
        {"encoder": "image_teacher", "input": "images", "top1": zero_shot_accuracy(
            teacher_image_embeddings(image, split), prompts, split.labels)},
    ]
    _write_tsv(out / "zeroshot.tsv", rows, ["encoder", "input", "top1"])
    print(format_table(rows), end="")
    return out, ["zeroshot.tsv"]


def _as_images(samples):
    """Paired samples whose image column holds the event frames."""
    return PairedSamples(samples.events, samples.events, samples.labels, samples.class_names, samples.template)


def cmd_eval_fewshot(args, cfg):
    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    image, text = _load_teacher(args.teacher)
    held, _ = load_split(args.data, "heldout", cfg.data.clamp, cfg.data.template)
    state = _event_encoder(args, cfg, image)
    T = encode_prompts(text, held.prompts)
    shots = [int(v) for v in args.shots.split(",")] if args.shots else cfg.fewshot.shots
    opt = config_mod.from_dict({**cfg.to_dict(), "optimizer": {**cfg.to_dict()["optimizer"],
                                                               "learning_rate": cfg.fewshot.learning_rate}},
                               require=False).optimizer
    rows = few_shot_eval(state.student, held, T, shots, cfg.fewshot.steps, cfg.loss, opt, cfg.seed)
    _write_tsv(out / "fewshot.tsv", rows, ["n_per_class", "support", "query", "top1"])
    print(format_table(rows), end="")
    return out, ["fewshot.tsv"]


def cmd_eval_vad(args, cfg):
    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    image, text = _load_teacher(args.teacher)
    state = _event_encoder(args, cfg, image)
    instances = read_instances(args.instances)
    labels = [inst.label for inst in instances]
    if any(lab is None for lab in labels):
        raise DataError(f"{args.instances}: instances carry no labels; AUC needs them")
    frames = np.stack([inst.frame for inst in instances])
    size = state.student.arch.image_size
    if frames.shape[1:] != (size, size):
        frames = _resize(frames, size)
    emb = event_embeddings(state.student, frames)
    normal = encode_prompts(text, cfg.vad.normal_prompts)
    abnormal = encode_prompts(text, cfg.vad.abnormal_prompts)
    scores = anomaly_score(emb, normal, abnormal)
    score_rows = [{"instance": i, "start": inst.source_range[0], "end": inst.source_range[1],
                   "label": inst.label, "score": float(s)} for i, (inst, s) in enumerate(zip(instances, scores))]
    _write_tsv(out / "vad_scores.tsv", score_rows, ["instance", "start", "end", "label", "score"])
    rows = [{"dataset": Path(args.instances).stem, "instances": len(instances), "AUC": auc(scores, labels)}]
    _write_tsv(out / "vad.tsv", rows, ["dataset", "instances", "AUC"])
    print(format_table(rows), end="")
    return out, ["vad.tsv", "vad_scores.tsv"]


def _resize(frames, size):
    """Nearest-neighbour resize of ``(N, H, W)`` frames to ``size`` x ``size``."""
    n, h, w = frames.shape
    ry = (np.arange(size) * h // size)
    rx = (np.arange(size) * w // size)
    return frames[:, ry][:, :, rx]


def cmd_eval_retrieval(args, cfg):
    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    qid, q = read_embeddings(args.queries)
    kid, k = read_embeddings(args.keys)
    rel = read_relevance(args.relevance)
    ks = [int(v) for v in args.ks.split(",")]
    metrics = retrieval_metrics(RetrievalSet(qid, q, kid, k, rel), ks)
    rows = [{"task": args.name, **metrics}]
    _write_tsv(out / "retrieval.tsv", rows, ["task", *metrics])
    print(format_table(rows), end="")
    return out, ["retrieval.tsv"]


def cmd_extract_events(args, cfg):
    out = _out_path(args.out)
    frames = read_frame_dump(args.video)
    labels = read_labels(args.labels) if args.labels else None
    instances = segment_video(frames, labels, args.window, args.stride, args.threshold)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_instances(instances, out)
    hist = {}
    for inst in instances:
        key = "unlabeled" if inst.label is None else str(inst.label)
        hist[key] = hist.get(key, 0) + 1
    summary = {"instances": len(instances), "label_histogram": hist, "window": args.window,
               "stride": args.stride or args.window, "threshold": args.threshold}
    (out.parent / f"{out.stem}_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"{len(instances)} event instances -> {out}")
    return out.parent, [out.name, f"{out.stem}_summary.json"]


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evclip", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, cfg=True):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        if cfg:
            sp.add_argument("--config", help="YAML run config (defaults built in)")
            sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        sp.add_argument("--threads", type=int, default=1, help="BLAS threads; 1 is bit-reproducible")
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    sp = add("gen-data", cmd_gen_data, "generate the synthetic paired dataset")
    sp.add_argument("--out", required=True)

    sp = add("pretrain-teacher", cmd_pretrain_teacher, "train and freeze the toy image/text teacher")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="teacher checkpoint path")

    for name, fn, text in (("pretrain", cmd_pretrain, "align the event encoder to the frozen teacher"),
                           ("ablate", cmd_ablate, "pre-train with each loss term removed in turn")):
        sp = add(name, fn, text)
        sp.add_argument("--data", required=True)
        sp.add_argument("--teacher", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--steps", type=int, default=None)
        sp.add_argument("--resume", default=None, help="event-encoder checkpoint to continue from")
        if name == "pretrain":
            sp.add_argument("--no-zs", action="store_true", help="alpha = 0")
            sp.add_argument("--no-ct", action="store_true", help="drop the contrastive term")
            sp.add_argument("--no-kl", action="store_true", help="drop the KL term")

    sp = add("finetune", cmd_finetune, "supervised fine-tuning on the train split")
    sp.add_argument("--data", required=True)
    sp.add_argument("--teacher", required=True)
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--steps", type=int, default=None)

    sp = add("eval-zeroshot", cmd_eval_zeroshot, "zero-shot top-1 on a split")
    sp.add_argument("--data", required=True)
    sp.add_argument("--teacher", required=True)
    sp.add_argument("--checkpoint", default=None, help="event encoder; default is the step-0 copy of the teacher")
    sp.add_argument("--split", choices=("heldout", "train"), default="heldout")
    sp.add_argument("--out", required=True)

    sp = add("eval-fewshot", cmd_eval_fewshot, "n-shot fine-tune then evaluate on heldout classes")
    sp.add_argument("--data", required=True)
    sp.add_argument("--teacher", required=True)
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--shots", default=None, help="comma list, e.g. 0,1,2,5")
    sp.add_argument("--out", required=True)

    sp = add("eval-vad", cmd_eval_vad, "anomaly AUC over extracted event instances")
    sp.add_argument("--instances", required=True, help="EVF1 container from extract-events")
    sp.add_argument("--teacher", required=True)
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--out", required=True)

    sp = add("eval-retrieval", cmd_eval_retrieval, "Recall@k / mAP@k / MRR over embedding sets")
    sp.add_argument("--queries", required=True)
    sp.add_argument("--keys", required=True)
    sp.add_argument("--relevance", required=True)
    sp.add_argument("--ks", default="1,5,10")
    sp.add_argument("--name", default="retrieval")
    sp.add_argument("--out", required=True)

    sp = add("extract-events", cmd_extract_events, "frame-difference event instances from a VID1 dump")
    sp.add_argument("--video", required=True)
    sp.add_argument("--labels", default=None, help="one 0/1 label per frame")
    sp.add_argument("--window", type=int, default=16)
    sp.add_argument("--stride", type=int, default=None)
    sp.add_argument("--threshold", type=int, default=25)
    sp.add_argument("--out", required=True, help="EVF1 output path")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    started = time.time()
    try:
        cfg = _load_cfg(args) if hasattr(args, "config") else None
        with threadpool_limits(limits=args.threads):
            _require(args, "data", "checkpoint", "resume", "instances", "queries", "keys", "relevance", "video",
                     "labels")
            out_dir, files = args.fn(args, cfg)
        _write_manifest(out_dir, args, cfg, files, started)
    except EvclipError as exc:
        print(f"evclip {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
