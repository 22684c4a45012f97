"""
Minimum depth, largest flow
===========================

Depth and flow priors computed on a blurry frame describe whatever was in
front at any point of the exposure.  A rendered prior therefore has to be
composited the same way: the nearest depth and the largest flow over the
exposure timestamps, not their average.
"""
import numpy as np

from blurf.renderer import composite_priors

# one pixel, three timestamps: the foreground (depth 10) covers it once,
# the background (depth 100) the other two times
stack = np.array([[10.0], [100.0], [100.0]])
print("extreme-value depth:", composite_priors(stack, None, evc=True).depth.value[0])
print("averaged depth:     ", composite_priors(stack, None, evc=False).depth.value[0])

# flows are 2-vectors; the one with the largest norm wins outright, so the
# result is always a flow that some timestamp actually had
flows = np.array([[[0.0, 0.0]], [[3.0, 4.0]], [[1.0, 0.0]]])
print("extreme-value flow: ", composite_priors(stack, flows, evc=True).flow.value[0])
print("averaged flow:      ", composite_priors(stack, flows, evc=False).flow.value[0])

# on a random stack the nearest depth never exceeds the mean, and the chosen
# flow is never shorter than the mean flow
rng = np.random.default_rng(0)
depth, flow = rng.uniform(1, 10, (7, 500)), rng.normal(size=(7, 500, 2))
evc, avg = composite_priors(depth, flow, True), composite_priors(depth, flow, False)
print("depth <= mean everywhere:", bool(np.all(evc.depth.value <= avg.depth.value)))
print("|flow| >= |mean| everywhere:",
      bool(np.all(np.linalg.norm(evc.flow.value, axis=-1)
                  >= np.linalg.norm(avg.flow.value, axis=-1))))
