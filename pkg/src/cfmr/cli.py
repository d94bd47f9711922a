"""Command line entry point.

Exit codes: 0 success, 1 validation error, 2 data/format error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from .exceptions import CFMRError, InputError, NumericalError
from .flops import flops_report, write_sweep_csv
from .index import Retriever, build_index, load_index, save_index
from .io import export_concepts, load_dataset, read_feature_dir
from .metrics import evaluate
from .model import encode_text, load_model, save_model
from .synthetic import SyntheticSpec, generate_corpus, write_corpus
from .training import TrainConfig, train
from .validation import parse_list

log = logging.getLogger("cfmr")


def cmd_gen_data(args):
    spec = SyntheticSpec.load(args.spec) if args.spec else SyntheticSpec()
    corpus = generate_corpus(spec)
    out = write_corpus(corpus, args.out, spec)
    print(json.dumps({"out": str(out), "train_samples": len(corpus.train),
                      "test_samples": len(corpus.test)}))


def cmd_train(args):
    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    videos, vocab, train_samples, _ = load_dataset(args.data, cfg.encoder.max_video_len)
    if len(vocab) != cfg.encoder.vocab_size:
        log.info("vocab_size set from data: %d", len(vocab))
        cfg.encoder.vocab_size = len(vocab)
    if train_samples and train_samples[0].video.dim != cfg.encoder.video_dim:
        cfg.encoder.video_dim = train_samples[0].video.dim
    validation = None
    if args.val_data:
        val_videos, _, _, val_samples = load_dataset(args.val_data, cfg.encoder.max_video_len)
        validation = (list(val_videos.values()), val_samples)
    try:
        result = train(train_samples, cfg, validation=validation, log_path=args.log)
    except NumericalError as exc:
        if args.dump:
            with open(args.dump, "w") as f:
                json.dump(exc.dump, f, indent=1)
        raise
    save_model(result.model, args.out, vocab, extra={"train_config": cfg.to_dict()})
    print(json.dumps(result.log[-1] if result.log else {}))


def _train_config(extra) -> TrainConfig:
    return TrainConfig.from_dict(extra["train_config"]) if extra.get("train_config") else TrainConfig()


def cmd_build_index(args):
    model, _, extra = load_model(args.model)
    cfg = _train_config(extra)
    videos = read_feature_dir(args.features, model.cfg.max_video_len)
    index = build_index(model, videos.values(),
                        centers=args.centers or cfg.centers, n_scales=args.scales or cfg.n_scales,
                        v_max=args.vmax or cfg.v_max, gamma=args.gamma or cfg.gamma)
    save_index(index, args.out)
    print(json.dumps({"videos": len(index.videos), "entries": len(index)}))


def _retriever(args):
    model, vocab, extra = load_model(args.model)
    if vocab is None:
        raise InputError("model file carries no vocabulary")
    cfg = _train_config(extra)
    return Retriever(load_index(args.index), model, cfg.sim_mode), vocab, cfg


def cmd_query(args):
    retriever, vocab, cfg = _retriever(args)
    nms_iou = cfg.nms_iou if args.nms is None else args.nms
    for m in retriever.query(args.video, vocab.encode(args.text), args.topk, nms_iou):
        print(json.dumps(m.as_dict()))


def cmd_eval(args):
    retriever, vocab, cfg = _retriever(args)
    _, _, _, samples = load_dataset(args.data)
    samples = [s for s in samples if s.video_id in retriever.index.videos]
    if not samples:
        raise InputError("no evaluation samples refer to indexed videos")
    ks = parse_list(args.topk, int)
    ms = parse_list(args.iou, float)
    nms_iou = cfg.nms_iou if args.nms is None else args.nms
    preds = [retriever.query(s.video_id, s.query, max(ks), nms_iou) for s in samples]
    result = evaluate(preds, [(s.start, s.end) for s in samples], ks, ms)
    print(result.to_json())
    print(result.to_csv(), end="")
    if args.csv:
        Path(args.csv).write_text(result.to_csv())


def cmd_export(args):
    index = load_index(args.index)
    queries = []
    if args.model and args.data:
        retriever, vocab, _ = _retriever(args)
        _, _, _, samples = load_dataset(args.data)
        with torch.no_grad():
            queries = [(f"{s.video_id}:{i}", encode_text(retriever.model, s.query)[0].numpy())
                       for i, s in enumerate(samples)]
    rows = export_concepts(index, args.out, queries)
    print(json.dumps({"rows": rows, "out": args.out}))


def cmd_bench(args):
    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    report = flops_report(cfg.encoder, cfg.centers, cfg.n_scales)
    print(json.dumps(report.as_dict()))
    lengths = parse_list(args.lengths, int)
    write_sweep_csv(cfg.encoder, cfg.centers, cfg.n_scales, lengths, args.csv)


def build_parser():
    p = argparse.ArgumentParser(prog="cfmr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="write a synthetic point-annotated corpus")
    s.add_argument("--spec", help="YAML/JSON SyntheticSpec")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="train on DIR/train.jsonl")
    s.add_argument("--config", help="YAML/JSON TrainConfig")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--log", help="append per-epoch JSON lines here")
    s.add_argument("--val-data", help="data dir whose test.jsonl drives early stopping")
    s.add_argument("--dump", help="where to write the offending batch on NaN abort")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("build-index", help="encode videos offline into a concept index")
    s.add_argument("--features", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--centers", type=int)
    s.add_argument("--scales", type=int)
    s.add_argument("--vmax", type=float)
    s.add_argument("--gamma", type=float)
    s.set_defaults(func=cmd_build_index)

    s = sub.add_parser("query", help="rank moments of one video for a text query")
    s.add_argument("--index", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--video", required=True)
    s.add_argument("--text", required=True)
    s.add_argument("--topk", type=int, default=5)
    s.add_argument("--nms", type=float)
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("eval", help="R@K, IoU=m over DIR/test.jsonl")
    s.add_argument("--index", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--topk", default="1,5")
    s.add_argument("--iou", default="0.5,0.7")
    s.add_argument("--nms", type=float)
    s.add_argument("--csv")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("export-concepts", help="dump concept vectors to CSV")
    s.add_argument("--index", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--model", help="with --data, also export query concepts")
    s.add_argument("--data")
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("bench", help="analytical offline/online FLOPs report")
    s.add_argument("--config", help="YAML/JSON TrainConfig")
    s.add_argument("--csv", default="flops.csv")
    s.add_argument("--lengths", default="50,100,200,400,800")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CFMRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
