"""Luminance stability of AE and DCS capture on the default dynamic scene.

Without a checkpoint only the raw streams and naive reconstructions are
reported; with one, the network's DCS reconstruction is scored as well.
"""

import argparse
import json

from dualhdr.capture import CaptureConfig
from dualhdr.experiment import load_model
from dualhdr.studies import flicker_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--checkpoint")
    ap.add_argument("--model-config")
    ap.add_argument("--duration", type=float, default=CaptureConfig.duration)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    net = load_model(args.checkpoint, args.model_config) if args.checkpoint else None
    res = flicker_study(net, capture=CaptureConfig(duration=args.duration), seed=args.seed)
    print(json.dumps(res, indent=2))


if __name__ == "__main__":
    main()
