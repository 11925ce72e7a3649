"""Command-line interface: train on a labeled corpus, evaluate a checkpoint."""

from __future__ import annotations

import argparse
import json
import sys

from .train import TrainerConfig, evaluate, train


def _parse_ids(text):
    if text is None:
        return None
    return [int(tok) for tok in text.split(",") if tok.strip() != ""]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sensibound-trainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit the bound predictor")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--dgp-ids", type=str, default=None,
                   help="comma-separated DGP ids (default: all labeled)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("evaluate", help="calibration metrics on held-out DGPs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--dgp-ids", type=str, default=None)
    p.add_argument("--json-out", type=str, default=None)
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "train":
        kwargs = {"seed": args.seed}
        if args.epochs is not None:
            kwargs["max_epochs"] = args.epochs
        config = TrainerConfig(**kwargs)
        ckpt, history = train(config, args.data_dir, args.out_dir,
                              dgp_ids=_parse_ids(args.dgp_ids))
        print(f"checkpoint written to {ckpt} after {len(history)} epochs")
        return 0
    metrics = evaluate(args.checkpoint, args.data_dir,
                       dgp_ids=_parse_ids(args.dgp_ids), seed=args.seed)
    text = json.dumps(metrics, indent=2)
    print(text)
    if args.json_out:
        with open(args.json_out, "w") as fh:
            fh.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
