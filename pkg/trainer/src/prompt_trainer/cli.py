"""Trainer CLI fulfilling the pipeline's command-backend contract.

``prompt-trainer train <dataset.jsonl> <spec.kv> <output_dir>`` exits 0 and
leaves modelref.json in the output directory on success; any failure exits
nonzero with a single-line message.
"""

from __future__ import annotations

import argparse
import sys


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prompt-trainer",
                                     description="LoRA fine-tuning backend")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train an adapter per the contract")
    p_train.add_argument("dataset", help="SFT JSON Lines file")
    p_train.add_argument("spec", help="flat key=value spec file")
    p_train.add_argument("output_dir", help="where artifacts and modelref.json go")
    p_train.add_argument("--seed", type=int, default=0)

    p_serve = sub.add_parser("serve", help="serve a trained adapter")
    p_serve.add_argument("descriptor", help="path to modelref.json")
    p_serve.add_argument("--port", type=int, default=8220)

    p_smoke = sub.add_parser("smoke", help="overfit sanity check on a dataset")
    p_smoke.add_argument("dataset")

    return parser


def cli_entry(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "train":
            from .train import train_adapter
            descriptor = train_adapter(args.dataset, args.spec, args.output_dir,
                                       seed=args.seed)
            print(f"descriptor {descriptor}")
            return 0
        if args.command == "serve":
            from .serve import serve_adapter
            handle = serve_adapter(args.descriptor, port=args.port)
            print(f"adapter serving on {handle.base_url}", flush=True)
            try:
                import time
                while True:
                    time.sleep(3600)
            except KeyboardInterrupt:
                handle.stop()
                return 0
        if args.command == "smoke":
            from .train import overfit_smoke
            passed = overfit_smoke(args.dataset)
            print("smoke pass" if passed else "smoke fail")
            return 0 if passed else 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(cli_entry())
