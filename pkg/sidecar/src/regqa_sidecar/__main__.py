"""Entry points: serve the protocol, or run one-shot fine-tunes."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict

from .profiles import default_profiles, load_profiles
from .server import Worker
from .training import train_reranker, train_triplets


def _profiles(args):
    return load_profiles(args.profiles) if args.profiles else default_profiles()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="regqa-sidecar")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="serve the line protocol on stdio")
    serve.add_argument("--profiles", help="profile config JSON")

    tt = sub.add_parser("train-triplets", help="one-shot triplet fine-tune + export")
    tt.add_argument("--triplets", required=True)
    tt.add_argument("--corpus", required=True)
    tt.add_argument("--questions", required=True)
    tt.add_argument("--profile", default="default")
    tt.add_argument("--batches", type=int, default=400)
    tt.add_argument("--batch-size", type=int, default=8)
    tt.add_argument("--checkpoint-in")
    tt.add_argument("--checkpoint-out", default="encoder.pt")
    tt.add_argument("--export", dest="export_path")
    tt.add_argument("--profiles", help="profile config JSON")

    tr = sub.add_parser("train-reranker", help="one-shot relevance-head fine-tune")
    tr.add_argument("--trainset", required=True)
    tr.add_argument("--profile", default="rerank-default")
    tr.add_argument("--batches", type=int, default=100)
    tr.add_argument("--batch-size", type=int, default=8)
    tr.add_argument("--checkpoint-in")
    tr.add_argument("--checkpoint-out", default="reranker.pt")
    tr.add_argument("--profiles", help="profile config JSON")

    args = parser.parse_args(argv)
    if args.command == "serve":
        Worker(_profiles(args)).serve()
        return 0
    if args.command == "train-triplets":
        profile_set = _profiles(args)
        report = train_triplets(
            args.triplets, profile_set.resolve("embed", args.profile),
            corpus_path=args.corpus, questions_path=args.questions,
            batches=args.batches, batch_size=args.batch_size,
            checkpoint_in=args.checkpoint_in, checkpoint_out=args.checkpoint_out,
            export_path=args.export_path,
        )
    else:
        profile_set = _profiles(args)
        report = train_reranker(
            args.trainset, profile_set.resolve("rerank", args.profile),
            batches=args.batches, batch_size=args.batch_size,
            checkpoint_in=args.checkpoint_in, checkpoint_out=args.checkpoint_out,
        )
    print(json.dumps(asdict(report), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
