"""Generate a small clean+noisy dataset, train a narrow network, evaluate it.

Takes about 20 seconds on one core. Run: python demos/train_and_evaluate.py [work_dir]
"""
import sys
import warnings
from pathlib import Path

from ehpi_action.micronn import NetConfig, TrainConfig, save_checkpoint, train
from ehpi_action.pipeline_io import evaluate, window_dataset
from ehpi_action.synthgen import DatasetSpec, build_dataset, standard_cameras

work = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_work")

with warnings.catch_warnings():
    warnings.simplefilter("ignore")  # tiny classes trigger split-size warnings
    manifests = build_dataset(DatasetSpec(per_action=12, cameras=standard_cameras(2)), seed=7, out_dir=work / "data")
manifest = manifests["combined"]
print(f"{len(manifest)} sequences written under {work / 'data'}")

cache = {}
train_set = window_dataset(manifest, "train", stride=10, cache=cache)
val_set = window_dataset(manifest, "val", stride=20, cache=cache)
print(f"training windows {len(train_set)}, validation windows {len(val_set)}")

result = train(
    train_set,
    NetConfig(len(manifest.actions), channels=(16, 16, 32, 32, 64, 64)),
    TrainConfig(epochs=8),
    seed=11,
    val=val_set,
    log=lambda r: print(f"epoch {r.epoch} loss {r.train_loss:.4f} val_acc {r.val_acc:.3f}"),
)
save_checkpoint(result.net, work / "demo.ckpt")

for variants in (("clean",), ("noisy",)):
    report = evaluate(result.net, manifest, "test", variants)
    print(f"test {variants[0]}: sequences {report.accuracy_seq:.3f}, windows {report.accuracy_ehpi:.3f}")
    print(report.confusion)
