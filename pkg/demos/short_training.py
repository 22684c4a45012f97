"""
A short deblurring run
======================

Train the compact model on a reduced moving-square scene for a few hundred
steps, then render sharp mid-exposure frames and score them against the
ground truth.  The full-size run behind the acceptance numbers takes about an
hour on one core; this one takes a few minutes.

    python demos/short_training.py [steps] [out_dir]
"""
import os
import sys

from blurf import synthdata as sd
from blurf import training as T
from blurf.evaluation import blurry_baseline, evaluate, offset_view
from blurf.imageio import write_png

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 600
out = sys.argv[2] if len(sys.argv) > 2 else "demo_out/train"

# half resolution, four frames
ds = sd.generate(sd.moving_square(width=48, height=27, focal=40.0, frames=4))
print(f"blurry inputs score {blurry_baseline(ds).mean_psnr:.2f} dB against the sharp frames")

# the compact preset, with the data-term decay rescaled to the short run
config = T.compact_config(steps=steps, checkpoint_every=0, weights={"decay_interval": steps // 6})


def progress(step, report, model):
    if (step + 1) % 100 == 0:
        print(f"step {step + 1}: total {report.total:.4f}  rgb {report.rgb_cb:.4f}  "
              f"cross {report.cross:.4f}  depth {report.data_depth:.3f}")


result = T.train(ds, config, out, progress)

# sharp renders at the middle of each exposure
rep = evaluate(result.model, ds, os.path.join(out, "renders"), samples=32)
rep.write(out)
print(f"renders score {rep.mean_psnr:.2f} dB, SSIM {rep.mean_ssim:.3f}")

# the same instant seen from a camera shifted sideways
write_png(os.path.join(out, "offset_view.png"), offset_view(result.model, 2, (0.1, 0, 0), 32))
print(f"wrote checkpoints, losses.csv and renders to {out}")
