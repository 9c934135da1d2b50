"""Train the cavity network on CT/mask pairs and export predicted masks."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import torch

from .data import slice_stacks
from .model import CavityNet, NetworkSpec, spec_from_text, spec_to_text
from .predict import export_cavity_mask
from .train import TrainSpec, train


def _load_model(args) -> CavityNet:
    spec = NetworkSpec()
    if args.network_spec:
        spec = spec_from_text(NetworkSpec, Path(args.network_spec).read_text())
    model = CavityNet(spec)
    if getattr(args, "weights", None):
        model.load_state_dict(torch.load(args.weights, weights_only=True))
    return model


def _cmd_train(args) -> int:
    tspec = TrainSpec()
    if args.train_spec:
        tspec = spec_from_text(TrainSpec, Path(args.train_spec).read_text())
    dataset = []
    for pair in args.case:
        ct_path, _, cavity_path = pair.partition(":")
        if not cavity_path:
            print(f"error: --case wants CT.mhd:CAVITY.mhd, got {pair!r}", file=sys.stderr)
            return 1
        dataset.extend(slice_stacks(ct_path, cavity_path))
    model = _load_model(args)
    result = train(model, dataset, tspec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    torch.save(result.state_dict, out / "weights.pt")
    result.save_history(out / "loss_curve.json")
    (out / "network_spec.txt").write_text(spec_to_text(model.spec))
    (out / "train_spec.txt").write_text(spec_to_text(tspec))
    print(f"stopped at iteration {result.stopped_at}, "
          f"best validation loss {result.best_val_loss:.6f}", file=sys.stderr)
    return 0


def _cmd_predict(args) -> int:
    model = _load_model(args)
    model.load_state_dict(torch.load(args.weights, weights_only=True))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for ct in args.ct:
        name = Path(ct).stem
        export_cavity_mask(model, ct, out / f"{name}_cavity.mhd")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cavity-cnn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on CT/cavity pairs")
    p.add_argument("--case", action="append", required=True,
                   metavar="CT.mhd:CAVITY.mhd", help="repeatable training case")
    p.add_argument("--out", required=True, help="output directory for weights and curves")
    p.add_argument("--network-spec", help="flat NetworkSpec overrides")
    p.add_argument("--train-spec", help="flat TrainSpec overrides")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="export cavity masks for CT volumes")
    p.add_argument("--weights", required=True)
    p.add_argument("--ct", action="append", required=True, help="repeatable CT volume")
    p.add_argument("--out", required=True, help="directory for *_cavity.mhd masks")
    p.add_argument("--network-spec", help="flat NetworkSpec overrides")
    p.set_defaults(func=_cmd_predict)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
