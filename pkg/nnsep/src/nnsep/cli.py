"""Command-line interface: ``nn-sep train`` and ``nn-sep infer``.

``infer`` takes the chip directory as its final positional argument, so the
pipeline's external-separator runner — which appends the exchange directory
to the configured command — can invoke it as
``external:nn-sep infer --checkpoint <path>``.
"""

from __future__ import annotations

import argparse
import json
import sys

from nnsep.infer import infer_chips
from nnsep.model import ModelConfig
from nnsep.train import TrainConfig, train

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nn-sep",
        description="Neural chip separator: train on scene manifests, "
        "predict over chip exchange directories.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a scene manifest")
    p_train.add_argument("--manifest", required=True, help="scene manifest JSON")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--base-width", type=int, default=32)
    p_train.add_argument("--batch", type=int, default=8)
    p_train.add_argument("--lr", type=float, default=1e-3)
    p_train.add_argument("--max-steps", type=int, default=3000)
    p_train.add_argument("--val-fraction", type=float, default=0.2)
    p_train.add_argument("--log-every", type=int, default=50)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--device", default="cpu")
    p_train.add_argument("--workers", type=int, default=0)
    p_train.add_argument(
        "--stop-at-f1",
        type=float,
        default=None,
        help="stop as soon as validation F1 reaches this value",
    )
    p_train.add_argument(
        "--no-augment",
        action="store_true",
        help="disable training-time augmentation",
    )

    p_infer = sub.add_parser("infer", help="predict all chips in a directory")
    p_infer.add_argument("--checkpoint", required=True, help="trained model file")
    p_infer.add_argument("--batch", type=int, default=4)
    p_infer.add_argument("--device", default="cpu")
    p_infer.add_argument("directory", help="chip exchange directory")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "train":
            summary = train(
                args.manifest,
                args.out,
                model_config=ModelConfig(base_width=args.base_width),
                train_config=TrainConfig(
                    lr=args.lr,
                    batch_size=args.batch,
                    max_steps=args.max_steps,
                    val_fraction=args.val_fraction,
                    log_every=args.log_every,
                    seed=args.seed,
                    device=args.device,
                    num_workers=args.workers,
                    stop_at_f1=args.stop_at_f1,
                    augment=not args.no_augment,
                ),
            )
            print(json.dumps(summary, sort_keys=True))
        else:
            ids = infer_chips(
                args.checkpoint,
                args.directory,
                device=args.device,
                batch_size=args.batch,
            )
            print(json.dumps({"chips": len(ids)}))
    except Exception as exc:  # surface a one-line diagnostic, fail the command
        print(f"nn-sep {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
