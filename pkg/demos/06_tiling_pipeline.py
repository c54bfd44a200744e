"""The full data pipeline driven through the command-line interface.

Fabricates a few large synthetic scenes on disk, then runs the same
subcommands a user would: `tile` to cut them into a train/test tile tree
with a manifest, `train` on the tile directory, `eval` on the held-out
split, and `predict` on one tile. Everything lands in demos/output/pipeline.

Runs in roughly a minute on one CPU core.

Run:  python3 demos/06_tiling_pipeline.py
"""

import json
from pathlib import Path

from roadseg.cli import main
from roadseg.data import save_sample, synth_roads

ROOT = Path(__file__).parent / "output" / "pipeline"
SRC = ROOT / "sources"
for sub in ("images", "masks"):
    (SRC / sub).mkdir(parents=True, exist_ok=True)

# five 128x128 "satellite scenes" -> 4 tiles of 64px each
for i, pair in enumerate(synth_roads(5, size=128, seed=21)):
    save_sample(pair, SRC / "images" / f"scene{i}.png", SRC / "masks" / f"scene{i}.png")
print("wrote 5 source scenes (128x128) with masks")

print("\n$ roadseg tile --tile 64 --ratio 0.8 --seed 9 ...")
assert main([
    "tile", "--images", str(SRC / "images"), "--masks", str(SRC / "masks"),
    "--tile", "64", "--out", str(ROOT / "tiles"), "--ratio", "0.8", "--seed", "9",
]) == 0

config = {
    "seed": 9,
    "epochs": 40,
    "batch_size": 4,
    "model": {
        "backbone": {"stem_channels": 16, "blocks": [[2, 16, 2], [2, 32, 2], [2, 64, 2]]},
        "pyramid": {"kind": "dense", "dilation_rates": [3, 6, 12],
                    "growth_channels": 8, "projection_channels": 32},
        "se_reduction": 2,
        "decoder_channels": 64,
    },
    "data": {
        "train_dir": str(ROOT / "tiles" / "train"),
        "val_dir": str(ROOT / "tiles" / "test"),
    },
}
(ROOT / "run.json").write_text(json.dumps(config, indent=2))

print("\n$ roadseg train --config run.json --out run/")
assert main(["train", "--config", str(ROOT / "run.json"), "--out", str(ROOT / "run")]) == 0

print("\n$ roadseg eval --checkpoint run/best.ckpt --data tiles/test")
assert main([
    "eval", "--checkpoint", str(ROOT / "run" / "best.ckpt"),
    "--data", str(ROOT / "tiles" / "test"),
]) == 0

tile_img = sorted((ROOT / "tiles" / "test" / "images").iterdir())[0]
print(f"\n$ roadseg predict --image {tile_img.name} --out predicted.png")
assert main([
    "predict", "--checkpoint", str(ROOT / "run" / "best.ckpt"),
    "--image", str(tile_img), "--out", str(ROOT / "predicted.png"),
]) == 0

print(f"\nartifacts under {ROOT}:")
for p in sorted(ROOT.rglob("*")):
    if p.is_file() and "tiles" not in p.parts[-3:-1]:
        print(f"  {p.relative_to(ROOT)}")
