"""Held-out PSNR-mu of the full model and its ablations over several seeds."""

import argparse
import json

from dualhdr.eafnet import TrainConfig
from dualhdr.studies import VARIANTS, ablation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--variants", default=",".join(VARIANTS))
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--train-groups", type=int, default=64)
    ap.add_argument("--val-groups", type=int, default=16)
    args = ap.parse_args()
    res = ablation([v for v in args.variants.split(",") if v], [int(s) for s in args.seeds.split(",")],
                   TrainConfig(epochs=args.epochs), n_train=args.train_groups, n_val=args.val_groups,
                   log=lambda msg: print(msg, flush=True))
    full = res.get("full", {}).get("mean")
    for name, r in res.items():
        gap = "" if full is None else f"  full - variant = {full - r['mean']:+.3f} dB"
        print(f"{name:8s} mean {r['mean']:.3f} dB  std {r['std']:.3f}{gap}")
    print(json.dumps(res, indent=2))


if __name__ == "__main__":
    main()
