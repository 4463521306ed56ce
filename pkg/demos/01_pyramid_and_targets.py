"""
Pyramid geometry and training targets
=====================================

Walks through the coordinate bookkeeping shared by the two heads: the
feature pyramid over a 128-step window, the default anchors, and how one
annotated action becomes anchor-free and anchor-based regression targets.
"""

import numpy as np

from a2net.geometry import Segment, assign_level, build_pyramid_spec
from a2net.targets import decode_ab, decode_af, encode_ab, encode_af

###############################################################################
# The six-level pyramid. Each level halves the temporal length; strides and
# scale ranges are in base feature steps (4 frames each).
spec = build_pyramid_spec(128, 6)
for lv in spec.levels:
    print(f"level {lv.index}: length {lv.length:3d}  stride {lv.stride:3g}  "
          f"scales [{lv.scale_lo:g}, {lv.scale_hi:g})  anchor width {lv.anchor_width:g}")

###############################################################################
# One action of 7 steps. Level assignment looks at the action length only.
gt = Segment(10.0, 17.0, 3)
level = assign_level(gt.end - gt.start, spec)
print("\naction", gt, "-> level", level)

###############################################################################
# Anchor-free targets: every location of that level whose mapped-back
# position falls inside the action regresses its distances to both ends.
af = encode_af([gt], spec)
fg = np.nonzero(af.foreground)[0]
for j in fg:
    print(f"AF location at step {af.positions[j]:g}: start distance {af.start_dist[j]:g}, "
          f"end distance {af.end_dist[j]:g}")
s, e = decode_af(af.positions[fg], af.start_dist[fg], af.end_dist[fg])
print("decoded back:", [(float(a), float(b)) for a, b in zip(s, e)])

###############################################################################
# Anchor-based targets: anchors overlapping the action by more than 0.5 IoU
# become positives; as many negatives are sampled from the rest.
anchors = spec.anchors()
ab = encode_ab([gt], anchors, rng_seed=0, alpha=0.1, beta=0.2)
pos = np.nonzero(ab.pos_mask)[0]
print(f"\n{len(pos)} positive anchors, {ab.neg_mask.sum()} sampled negatives")
for k in pos:
    print(f"anchor [{anchors.starts[k]:g}, {anchors.ends[k]:g}] IoU {ab.overlap[k]:.3f} "
          f"deltas ({ab.reg[k, 0]:.3f}, {ab.reg[k, 1]:.3f})")
s, e = decode_ab(anchors.centers[pos], anchors.widths[pos], ab.reg[pos, 0], ab.reg[pos, 1], 0.1, 0.2)
print("decoded back:", [(round(float(a), 9), round(float(b), 9)) for a, b in zip(s, e)])
