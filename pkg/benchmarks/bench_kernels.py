"""Compare the numba and numpy kernel backends.

Run from the repository root::

    python3 benchmarks/bench_kernels.py [--repeat 5]

Part one times each kernel on inputs sized like a crowded frame. Part two
runs the whole tracking loop on the bundled six-person sequence once per
backend (each in a fresh interpreter, because the backend is chosen at
import time through POSETRACKER_NUMBA).
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from posetracker import kernels

_LOOP_SCRIPT = r"""
import json, time
from posetracker import kernels
from posetracker.cli import _weights_path
from posetracker.gcn import SiameseMatcher
from posetracker.synth import bundled_config, synth_sequence
from posetracker.tracking import TrackerConfig, track_sequence
kernels.warmup()
seq = synth_sequence(bundled_config("six_person"))
m = SiameseMatcher.load(_weights_path("bundled"))
best = None
for _ in range(REPEAT):
    t = time.perf_counter()
    res, eng = track_sequence(seq, TrackerConfig(), m)
    el = time.perf_counter() - t
    fw = el - eng.timings["estimator"] - eng.timings["detector"]
    if best is None or el < best[0]:
        best = (el, fw)
print(json.dumps({"backend": kernels.BACKEND, "frames": len(seq.frames),
                  "fps": len(seq.frames) / best[0], "fps_excluding_inference": len(seq.frames) / best[1]}))
"""


def kernel_inputs(rng):
    poses = np.column_stack([rng.uniform(0, 500, size=(15, 2)), rng.uniform(0, 1, size=15)])
    cands = np.stack([np.column_stack([rng.uniform(0, 500, size=(15, 2)), rng.uniform(0, 1, size=15)])
                      for _ in range(8)])
    box = np.array([100.0, 100.0, 300.0, 400.0])
    a = np.sort(rng.uniform(0, 500, size=(8, 4)).reshape(8, 2, 2), axis=1).reshape(8, 4)
    b = np.sort(rng.uniform(0, 500, size=(8, 4)).reshape(8, 2, 2), axis=1).reshape(8, 4)
    pts_a = rng.uniform(0, 500, size=(8, 2))
    pts_b = rng.uniform(0, 500, size=(8, 2))
    score = rng.uniform(0, 1, size=(8, 8))
    return {
        "tight_box": (poses, 0.05),
        "containment": (cands, box, 0.05),
        "iou_matrix": (a, b),
        "greedy_assign": (score, 0.3, True),
        "pairwise_dist": (pts_a, pts_b),
    }


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    inputs = kernel_inputs(rng)
    tables = {"numpy": kernels.implementations("numpy")}
    if kernels.HAVE_NUMBA:
        tables["numba"] = kernels.implementations("numba")
        kernels.warmup(tables["numba"])
    print(f"{'kernel':16s}" + "".join(f"{name:>14s}" for name in tables) + "   (microseconds per call)")
    for name, args in inputs.items():
        row = f"{name:16s}"
        for table in tables.values():
            fn = table[name]
            n = 2000
            t = min(timeit.repeat(lambda: fn(*args), number=n, repeat=repeat)) / n
            row += f"{1e6 * t:14.2f}"
        print(row)


def bench_loop(repeat):
    print()
    print("tracking loop, bundled six-person sequence, replay providers, GCN matching on")
    for flag in ("1", "0"):
        if flag == "1" and not kernels.HAVE_NUMBA:
            continue
        env = dict(os.environ, POSETRACKER_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", _LOOP_SCRIPT.replace("REPEAT", str(repeat))],
                             env=env, capture_output=True, text=True, check=True)
        r = json.loads(out.stdout.strip().splitlines()[-1])
        print(f"  {r['backend']:6s} {r['frames']} frames: {r['fps']:9.0f} fps overall, "
              f"{r['fps_excluding_inference']:9.0f} fps excluding pose inference")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    bench_kernels(args.repeat)
    bench_loop(args.repeat)


if __name__ == "__main__":
    main()
