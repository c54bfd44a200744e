"""Command-line interface: tile, train, eval, predict, cost, selftest.

Run configuration is a JSON file (see RUN_CONFIG_DEFAULTS for every key and
its default). Unknown keys anywhere in the file are rejected. ``train``
writes three artifacts into its output directory: ``config.json`` (the fully
resolved configuration), ``history.csv``, and ``best.ckpt``; ``eval`` and
``predict`` rebuild the network from the ``config.json`` sitting next to the
checkpoint they are given.

Exit codes: 0 success, 2 configuration or data error, 3 checkpoint error,
4 self-test failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import load_model, save_model
from .data import (
    load_pair_dir,
    load_sample,
    pair_files,
    patchify,
    save_sample,
    split_sources,
    synth_roads,
    write_manifest,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DomainError,
    GradError,
    ShapeError,
)
from .metrics import f1, iou, precision, recall
from .model import BackboneConfig, Model, ModelConfig
from .optim import DecaySchedule
from .profiler import (
    REFERENCE_COMPARISON,
    format_profile,
    profile_json,
    profile_model,
    reference_comparison_text,
)
from .pyramid import DenseCascadeConfig, ParallelPyramidConfig
from .selftest import format_results, run_selftest, selftest_ok
from .tensor import DEFAULT_DTYPE, Tensor, no_grad
from .training import evaluate, train_model, write_history

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3
EXIT_SELFTEST = 4

# Every recognized run-configuration key with its default. "seed" has no
# default on purpose: training must state one explicitly.
RUN_CONFIG_DEFAULTS = {
    "seed": None,
    "epochs": 300,
    "batch_size": 8,
    "loss": "bce",
    "threshold": 0.5,
    "optimizer": {
        "base_lr": 0.001,
        "decay_steps": 10000,
        "decay_rate": 0.96,
        "staircase": False,
    },
    "data": {
        "train_dir": None,
        "val_dir": None,
        "synthetic": None,  # {"count": N, "size": S} -> generated road scenes
    },
    "model": {
        "backbone": {
            "stem_channels": 32,
            "blocks": [[2, 32, 2], [2, 64, 2], [2, 128, 2]],
            "low_tap_index": 0,
            "high_tap_index": 2,
            "low_output_stride": 4,
            "high_output_stride": 16,
            "in_channels": 3,
        },
        "pyramid": {
            "kind": "dense",  # dense | parallel
            "dilation_rates": [3, 6, 12, 18],
            "growth_channels": 64,       # dense only
            "projection_channels": 256,  # dense only
            "branch_channels": 256,        # parallel only
            "include_image_pooling": False,  # parallel only
        },
        "se_reduction": 16,
        "decoder_channels": 256,
        "low_proj_channels": 48,
        "num_classes": 1,
    },
}


# -- run configuration --------------------------------------------------------


def _reject_unknown(section: dict, allowed, context: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {context} keys: {unknown}")


def _merge_section(defaults: dict, override: dict, context: str) -> dict:
    _reject_unknown(override, defaults, context)
    merged = copy.deepcopy(defaults)
    merged.update(override)
    return merged


def resolve_run_config(doc: dict) -> dict:
    """Fill defaults into a raw config dict, rejecting unknown keys at every level."""
    if not isinstance(doc, dict):
        raise ConfigError(f"run config must be a JSON object, got {type(doc).__name__}")
    top = _merge_section(RUN_CONFIG_DEFAULTS, doc, "run config")
    for key in ("optimizer", "data", "model"):
        if not isinstance(doc.get(key, {}), dict):
            raise ConfigError(f"'{key}' must be a JSON object")
    top["optimizer"] = _merge_section(
        RUN_CONFIG_DEFAULTS["optimizer"], doc.get("optimizer", {}), "optimizer"
    )
    top["data"] = _merge_section(RUN_CONFIG_DEFAULTS["data"], doc.get("data", {}), "data")
    model_doc = doc.get("model", {})
    model = _merge_section(RUN_CONFIG_DEFAULTS["model"], model_doc, "model")
    model["backbone"] = _merge_section(
        RUN_CONFIG_DEFAULTS["model"]["backbone"], model_doc.get("backbone", {}), "backbone"
    )
    pyramid_doc = model_doc.get("pyramid", {})
    if not isinstance(pyramid_doc, dict):
        raise ConfigError("'pyramid' must be a JSON object")
    kind = pyramid_doc.get("kind", RUN_CONFIG_DEFAULTS["model"]["pyramid"]["kind"])
    if kind == "dense":
        allowed = {"kind", "dilation_rates", "growth_channels", "projection_channels"}
    elif kind == "parallel":
        allowed = {"kind", "dilation_rates", "branch_channels", "include_image_pooling"}
    else:
        raise ConfigError(f"pyramid kind must be 'dense' or 'parallel', got {kind!r}")
    _reject_unknown(pyramid_doc, allowed, "pyramid")
    pyramid = {
        k: v for k, v in RUN_CONFIG_DEFAULTS["model"]["pyramid"].items() if k in allowed
    }
    pyramid.update(pyramid_doc)
    pyramid["kind"] = kind
    model["pyramid"] = pyramid
    top["model"] = model

    sub = top["data"]["synthetic"]
    if sub is not None:
        if not isinstance(sub, dict):
            raise ConfigError("'synthetic' must be a JSON object")
        _reject_unknown(sub, {"count", "size"}, "synthetic data")
        sub = {"count": 16, "size": 64, **sub}
        top["data"]["synthetic"] = sub
    return top


def model_config_from(resolved: dict) -> ModelConfig:
    """Build the typed model configuration out of a resolved run config."""
    m = resolved["model"]
    backbone = BackboneConfig(
        stem_channels=m["backbone"]["stem_channels"],
        blocks=tuple(tuple(b) for b in m["backbone"]["blocks"]),
        low_tap_index=m["backbone"]["low_tap_index"],
        high_tap_index=m["backbone"]["high_tap_index"],
        low_output_stride=m["backbone"]["low_output_stride"],
        high_output_stride=m["backbone"]["high_output_stride"],
        in_channels=m["backbone"]["in_channels"],
    )
    p = m["pyramid"]
    if p["kind"] == "dense":
        pyramid = DenseCascadeConfig(
            dilation_rates=tuple(p["dilation_rates"]),
            growth_channels=p["growth_channels"],
            projection_channels=p["projection_channels"],
        )
    else:
        pyramid = ParallelPyramidConfig(
            dilation_rates=tuple(p["dilation_rates"]),
            branch_channels=p["branch_channels"],
            include_image_pooling=p["include_image_pooling"],
        )
    return ModelConfig(
        backbone=backbone,
        pyramid=pyramid,
        se_reduction=m["se_reduction"],
        decoder_channels=m["decoder_channels"],
        low_proj_channels=m["low_proj_channels"],
        num_classes=m["num_classes"],
    )


def schedule_from(resolved: dict) -> DecaySchedule:
    o = resolved["optimizer"]
    return DecaySchedule(
        base_lr=o["base_lr"],
        decay_steps=o["decay_steps"],
        decay_rate=o["decay_rate"],
        staircase=o["staircase"],
    )


def load_run_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    return resolve_run_config(doc)


def run_config_text(resolved: dict) -> str:
    """Canonical byte-stable serialization of a resolved run config."""
    return json.dumps(resolved, indent=2, sort_keys=True) + "\n"


# -- subcommands --------------------------------------------------------------


def cmd_tile(args) -> int:
    pairs = pair_files(args.images, args.masks)
    all_tiles = []
    for stem, image_path, _ in pairs:
        try:
            with Image.open(image_path) as img:
                w, h = img.size
        except OSError as err:
            raise DataError(f"cannot read {image_path}: {err}") from err
        all_tiles += patchify((h, w), args.tile, source_id=stem)
    if not all_tiles:
        raise DataError(f"no {args.tile}px tiles can be cut from {len(pairs)} sources")

    train, test = split_sources(all_tiles, ratio=args.ratio, seed=args.seed)
    tagged = train + test
    if args.limit is not None and args.limit < len(tagged):
        if args.limit < 1:
            raise ConfigError(f"--limit must be >= 1, got {args.limit}")
        rng = np.random.default_rng(args.seed)
        keep = rng.choice(len(tagged), size=args.limit, replace=False)
        tagged = [tagged[i] for i in sorted(keep)]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "manifest.json", tagged)

    by_source = {stem: (ip, mp) for stem, ip, mp in pairs}
    for split in ("train", "test"):
        (out / split / "images").mkdir(parents=True, exist_ok=True)
        (out / split / "masks").mkdir(parents=True, exist_ok=True)
    for t in tagged:
        image_path, mask_path = by_source[t.source_id]
        pair = load_sample(image_path, mask_path, t)
        name = f"{t.source_id}_r{t.row}_c{t.col}.png"
        save_sample(
            pair, out / t.split_tag / "images" / name, out / t.split_tag / "masks" / name
        )

    n_train = sum(t.split_tag == "train" for t in tagged)
    print(
        f"{len(pairs)} sources -> {len(tagged)} tiles "
        f"({n_train} train / {len(tagged) - n_train} test) in {out}"
    )
    return EXIT_OK


def _load_training_data(resolved: dict):
    data = resolved["data"]
    if data["synthetic"] is not None:
        spec = data["synthetic"]
        samples = synth_roads(spec["count"], size=spec["size"], seed=resolved["seed"])
        val = []
        if data["val_dir"] is not None:
            val = load_pair_dir(data["val_dir"])
        return samples, val
    if data["train_dir"] is None:
        raise ConfigError("config needs either data.train_dir or data.synthetic")
    train = load_pair_dir(data["train_dir"])
    val = load_pair_dir(data["val_dir"]) if data["val_dir"] is not None else []
    return train, val


def cmd_train(args) -> int:
    resolved = load_run_config(args.config)
    if resolved["seed"] is None:
        raise ConfigError("config key 'seed' is mandatory for training")
    train_set, val_set = _load_training_data(resolved)
    model = Model.build(model_config_from(resolved), seed=resolved["seed"])

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(run_config_text(resolved), encoding="utf-8")

    def log(row):
        line = (
            f"epoch {row.epoch}/{resolved['epochs']}  step {row.step}  "
            f"loss {row.loss:.4f}  iou {row.iou:.4f}"
        )
        if val_set:
            line += f"  val_iou {row.val_iou:.4f}"
        print(line)

    result = train_model(
        model,
        train_set,
        val_set,
        epochs=resolved["epochs"],
        batch_size=resolved["batch_size"],
        seed=resolved["seed"],
        loss=resolved["loss"],
        threshold=resolved["threshold"],
        schedule=schedule_from(resolved),
        checkpoint_path=out / "best.ckpt",
        log=log,
    )
    write_history(out / "history.csv", result.history)
    print(
        f"best {result.monitored} iou {result.best_iou:.4f} at epoch {result.best_epoch}; "
        f"wrote {out / 'history.csv'} and {out / 'best.ckpt'}"
    )
    return EXIT_OK


def _rebuild_from_sidecar(checkpoint_path) -> Model:
    checkpoint_path = Path(checkpoint_path)
    sidecar = checkpoint_path.parent / "config.json"
    if not sidecar.is_file():
        raise ConfigError(
            f"no config.json found next to {checkpoint_path}; "
            "eval/predict rebuild the network from the training output directory"
        )
    resolved = load_run_config(sidecar)
    model = Model.build(model_config_from(resolved), seed=0)
    load_model(checkpoint_path, model)
    return model


def cmd_eval(args) -> int:
    model = _rebuild_from_sidecar(args.checkpoint)
    samples = load_pair_dir(args.data)
    counts = evaluate(model, samples)
    print(f"samples    {len(samples)}")
    print(f"precision  {precision(counts):.4f}")
    print(f"recall     {recall(counts):.4f}")
    print(f"f1         {f1(counts):.4f}")
    print(f"iou        {iou(counts):.4f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = _rebuild_from_sidecar(args.checkpoint)
    try:
        with Image.open(args.image) as img:
            rgb = np.asarray(img.convert("RGB"))
    except OSError as err:
        raise DataError(f"cannot read {args.image}: {err}") from err
    h, w = rgb.shape[:2]
    stride = model.config.backbone.high_output_stride
    if h % stride or w % stride:
        raise DataError(
            f"{args.image} is {h}x{w}; both sides must be multiples of {stride}"
        )
    x = Tensor(rgb.astype(DEFAULT_DTYPE).transpose(2, 0, 1)[None] / 255.0)
    with no_grad():
        prob = model.forward(x)
    mask = (prob.data[0, 0] >= 0.5).astype(np.uint8) * 255
    Image.fromarray(mask, mode="L").save(args.out)
    if args.probabilities:
        np.save(args.probabilities, prob.data[0, 0])
    covered = float((mask > 0).mean())
    print(f"wrote {args.out} ({h}x{w}, {covered:.1%} road)")
    return EXIT_OK


def cmd_cost(args) -> int:
    reference_text = reference_comparison_text()
    if args.config is not None:
        resolved = load_run_config(args.config)
        profile = profile_model(model_config_from(resolved))
        if args.json:
            print(json.dumps(profile_json(profile), indent=2, sort_keys=True))
        else:
            print(reference_text)
            print(format_profile(profile), end="")
    else:
        if args.json:
            blob = {"reference": dict(REFERENCE_COMPARISON)}
            print(json.dumps(blob, indent=2, sort_keys=True))
        else:
            print(reference_text, end="")
    return EXIT_OK


def cmd_selftest(_args) -> int:
    results = run_selftest()
    print(format_results(results), end="")
    return EXIT_OK if selftest_ok(results) else EXIT_SELFTEST


# -- wiring -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roadseg",
        description="Road segmentation: tiling, training, evaluation, cost analysis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tile", help="cut image/mask pairs into square tiles")
    p.add_argument("--images", required=True, help="directory of source images")
    p.add_argument("--masks", required=True, help="directory of mask images (same stems)")
    p.add_argument("--tile", type=int, default=512, help="tile side in pixels")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--ratio", type=float, default=0.8, help="train fraction of sources")
    p.add_argument("--seed", type=int, required=True, help="split/subsample seed")
    p.add_argument("--limit", type=int, default=None, help="keep at most K tiles")
    p.set_defaults(fn=cmd_tile)

    p = sub.add_parser("train", help="train a model from a JSON run config")
    p.add_argument("--config", required=True, help="run config JSON file")
    p.add_argument("--out", required=True, help="output directory for artifacts")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a tile directory")
    p.add_argument("--checkpoint", required=True, help="checkpoint file (config.json beside it)")
    p.add_argument("--data", required=True, help="directory with images/ and masks/")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="predict a road mask for one image")
    p.add_argument("--checkpoint", required=True, help="checkpoint file (config.json beside it)")
    p.add_argument("--image", required=True, help="input RGB image")
    p.add_argument("--out", required=True, help="output 8-bit mask PNG")
    p.add_argument(
        "--probabilities", default=None, help="also save the raw probability map (.npy)"
    )
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("cost", help="print operation counts")
    p.add_argument("--config", default=None, help="run config JSON to profile per layer")
    p.add_argument("--json", action="store_true", help="emit JSON instead of a table")
    p.set_defaults(fn=cmd_cost)

    p = sub.add_parser("selftest", help="run the embedded verification suite")
    p.set_defaults(fn=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CheckpointError as err:
        print(f"checkpoint error: {err}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (ConfigError, DataError, ShapeError, DomainError, GradError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
