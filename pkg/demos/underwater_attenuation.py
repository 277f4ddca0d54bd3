"""What Beer-Lambert attenuation does to a frame, and to its embedding.

Run: python demos/underwater_attenuation.py [OUT_DIR]

A synthetic frame is attenuated with growing beta over a depth ramp that is
near at the top of the image and far at the bottom. Far pixels fade to the
water colour first. The handcrafted embedding of the target drifts quickly
away from the clean one, because its colour histogram sees the shift. That
gap is what the physics positive in contrastive training teaches the
projection head to close.
"""

import sys
from pathlib import Path

import numpy as np

from manta import synth
from manta.embedder import Embedder
from manta.geometry import BBox
from manta.imageio import write_image
from manta.physics import AttenuationParams, beer_lambert, crop, linear_depth


def main() -> None:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else None
    cfg = synth.example_scenario()
    bundle = synth.generate_synthetic(cfg)
    frame = bundle.frames[0]
    depth = linear_depth(cfg.height, cfg.width, 0.5, 3.0)
    target = BBox.from_seq(bundle.gt[0])
    emb = Embedder()
    clean = emb.embed(crop(frame, target))

    print("beta  top-row mean RGB     bottom-row mean RGB  cos(target, clean target)")
    for beta in (0.0, 0.1, 0.3, 0.5, 1.0, 2.0):
        img = beer_lambert(frame, depth, AttenuationParams(beta))
        top, bottom = img[:5].mean(axis=(0, 1)), img[-5:].mean(axis=(0, 1))
        cos = float(clean @ emb.embed(crop(img, target)))
        print(f"{beta:4.1f}  {np.round(top, 2)!s:20s} {np.round(bottom, 2)!s:20s} {cos:.3f}")
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            write_image(out / f"beta_{beta:.1f}.png", img)
    print("\nAt beta = 0 nothing changes. As beta grows every pixel moves toward the water colour")
    print("(0.6, 0.8, 0.9), far rows faster than near ones. The untrained embedding is not")
    print("invariant to this, which is why attenuated views are used as positives in training.")
    if out is not None:
        print(f"images written to {out}")


if __name__ == "__main__":
    main()
