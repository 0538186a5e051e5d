"""Stream frames through tracking, encoding and smoothed classification.

Needs a checkpoint, e.g. the one written by train_and_evaluate.py.
Run: python demos/live_inference.py demo_work/demo.ckpt
"""
import sys
from collections import Counter

from ehpi_action.micronn import load_checkpoint
from ehpi_action.pipeline_io import ActionStream
from ehpi_action.synthgen import CameraParams, MotionParams, generate_sequence, project

net = load_checkpoint(sys.argv[1] if len(sys.argv) > 1 else "demo_work/demo.ckpt")
actions = ("idle", "walk", "wave")

for action in actions:
    seq = project(generate_sequence(MotionParams(action, duration_s=3.0, seed=99)), CameraParams(yaw=30.0))
    stream = ActionStream(net, seq.meta.image_w, seq.meta.image_h)
    votes = Counter()
    for frame in seq.frames:
        for p in stream.step([h.skeleton() for h in frame.humans]):
            votes[actions[p.action]] += 1
    print(f"performed {action:5s} -> smoothed predictions {dict(votes)}")
