"""Pseudo-labels from rectified stereo pairs next to the sweep estimate, on one suite scene.

    python3 demos/teacher_vs_student.py [--scene walls] [--pinhole 320]
"""

import argparse
import time

import numpy as np

from omnisweep.metrics import evaluate, report_text
from omnisweep.pipeline import band_grid, estimate_depth
from omnisweep.suite import SUITE, bundled_rig, bundled_scene
from omnisweep.synth import render_groundtruth_erp, render_rig
from omnisweep.teacher import VirtualPinhole, pseudo_label

ap = argparse.ArgumentParser()
ap.add_argument("--scene", default="walls", choices=SUITE)
ap.add_argument("--pinhole", type=int, default=320)
args = ap.parse_args()

rig, scene = bundled_rig("suite"), bundled_scene(args.scene)
grid = band_grid(rig)
images = render_rig(scene, rig, 2, seed=0)
gt = render_groundtruth_erp(scene, grid)

t0 = time.perf_counter()
label, pairs, _ = pseudo_label(rig, images, grid, vp=VirtualPinhole(args.pinhole, args.pinhole))
t1 = time.perf_counter()
est = estimate_depth(rig, images)
t2 = time.perf_counter()

print(f"pairs: {', '.join(f'{p.cameras} at {p.pair_yaw:.0f} deg' for p in pairs)}")
print(f"support per pixel: min {label.support_count.min()}, mean {label.support_count.mean():.2f}")
print(report_text([("teacher", args.scene, evaluate(label.as_depth_map(), gt)),
                   ("sweep", args.scene, evaluate(est.depth, gt))]), end="")
print(f"teacher {t1 - t0:.1f} s, sweep {t2 - t1:.1f} s")
agree = np.abs(label.depth - est.depth.depths) / label.depth
print(f"teacher and sweep agree within 5% on {100 * np.nanmean(agree < 0.05):.1f}% of the band")
