"""
How a blurry frame is made
==========================

A blurry frame is the mean of sharp renders taken while the shutter is open.
This walks through the synthetic moving-square scene: the exposure timing,
the blurry input next to its sharp mid-exposure frame, and how the mean
converges as more sharp substeps are averaged.
"""
import os
import sys

import numpy as np

from blurf import synthdata as sd
from blurf.imageio import write_png
from blurf.metrics import psnr

out = sys.argv[1] if len(sys.argv) > 1 else "demo_out/blur"
os.makedirs(out, exist_ok=True)

# the scene: a textured square crossing a textured wall, filmed by a shaking camera
script = sd.moving_square()
print(f"{script.width}x{script.height} px, {script.frames} frames, "
      f"{script.substeps} substeps per exposure")

# frame i is centred at (i - 0.5) / N on the global [0, 1] clock and stays open
# for half the gap between frames
for i in (1, 2, script.frames):
    a, b = script.exposure_interval(i)
    print(f"frame {i:2d}: shutter open {a:.4f} .. {b:.4f}")

# blurry input vs the sharp frame at mid-exposure
i = 4
blurry = sd.make_blurry(script, i)
sharp = sd.sharp_frame(script, i).image
write_png(os.path.join(out, "blurry.png"), blurry)
write_png(os.path.join(out, "sharp.png"), sharp)
print(f"blurry vs sharp: {psnr(blurry, sharp):.2f} dB")

# averaging fewer substeps approximates the same exposure more coarsely
for S in (1, 3, 5, 11):
    approx = sd.make_blurry(script, i, S)
    print(f"S={S:2d}: max deviation from S=21 {np.abs(approx - blurry).max():.4f}")

# the exposure-min depth prior pulls the mover's depth over every pixel it
# touched during the exposure, which is what the depth loss compares against
ds = sd.generate(sd.moving_square(frames=4))
touched = ds.mask[1] > 0
print(f"frame 2: {touched.mean():.1%} of pixels see the mover at some substep; "
      f"their prior depth is {ds.depth[1][touched].mean():.2f} vs wall "
      f"{ds.depth[1][~touched].mean():.2f}")
