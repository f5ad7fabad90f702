"""Train the desk-scale model and compare held-out PSNR-mu with the reference-only baseline.

Optionally follows up with the AE-vs-DCS flicker study on the default scene.
"""

import argparse
import json

from dualhdr import engine as E
from dualhdr.eafnet import EafnetConfig, TrainConfig
from dualhdr.studies import desk_training, flicker_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--lr", type=float, default=TrainConfig.lr)
    ap.add_argument("--channels", type=int, default=8)
    ap.add_argument("--train-groups", type=int, default=64)
    ap.add_argument("--val-groups", type=int, default=16)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--flicker", action="store_true", help="also run the flicker study with the trained model")
    ap.add_argument("--checkpoint", help="save the trained parameters here")
    args = ap.parse_args()

    def progress(rec, _net):
        if rec["epoch"] % 10 == 0:
            print(f"epoch {rec['epoch']:4d}  loss {rec['loss']:.5f}  lr {rec['lr']:.2e}", flush=True)

    res = desk_training(EafnetConfig(base_channels=args.channels),
                        TrainConfig(epochs=args.epochs, lr=args.lr),
                        n_train=args.train_groups, n_val=args.val_groups, size=args.size, seed=args.seed,
                        on_epoch=progress)
    out = {"training": res.summary()}
    if args.checkpoint:
        E.save_checkpoint(args.checkpoint, res.net.params, {"model": res.net.cfg.to_json()})
    if args.flicker:
        out["flicker"] = flicker_study(res.net)
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
