"""Subprocess surface of the built-in backend (``sleepspec-backend``)."""

from __future__ import annotations

import argparse
import json
import sys

from sleepspec.refcnn import service


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sleepspec-backend",
        description="Built-in CNN classifier speaking the backend file protocol.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train on manifest files")
    p_train.add_argument("--train", required=True, dest="train_manifest")
    p_train.add_argument("--val", required=True, dest="val_manifest")
    p_train.add_argument("--out", required=True, dest="out_dir")
    p_train.add_argument("--config", help="JSON file of training options")

    for name in ("predict", "input-grad"):
        p = sub.add_parser(name)
        p.add_argument("--model", required=True, dest="model_dir")
        p.add_argument("--manifest", required=True)
        p.add_argument("--out", required=True, dest="out_path")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            config = None
            if args.config:
                with open(args.config) as fh:
                    config = json.load(fh)
            service.backend_train(
                args.train_manifest, args.val_manifest, args.out_dir, config
            )
        elif args.command == "predict":
            service.backend_predict(args.model_dir, args.manifest, args.out_path)
        else:
            service.backend_input_grad(args.model_dir, args.manifest, args.out_path)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
