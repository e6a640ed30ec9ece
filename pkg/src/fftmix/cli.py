"""Command-line interface: train, model info, erf, coverage, truncate,
bench, and filters dump over JSON configs.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  Every run that
produces files writes them under ``--out`` together with a manifest
recording the subcommand, a hash of the effective config, the seed, and
tool versions.  ``HPX_THREADS`` caps worker/BLAS thread counts when the
optional threadpoolctl package is available.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, analysis, hpxio, model as mdl, training
from .mixers import GatedConvMixer


@dataclass
class CliConfig:
    subcommand: str
    args: dict
    payload: dict = field(default_factory=dict)  # validated JSON config body

    @property
    def seed(self) -> int:
        return int(self.args.get("seed") or 0)


def _strict_keys(d: dict, allowed, context: str) -> None:
    unknown = set(d) - set(allowed)
    if unknown:
        raise ValueError(f"unknown keys in {context}: {sorted(unknown)}")


def _load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


TRAIN_SECTIONS = ("model", "train", "data")


def _validate_train_payload(payload: dict) -> dict:
    _strict_keys(payload, TRAIN_SECTIONS, "config")
    model_sec = dict(payload.get("model", {}))
    if "preset" in model_sec:
        _strict_keys(model_sec, ("preset", "input_size", "num_classes"), "config.model")
    else:
        mdl.config_from_dict(model_sec)
    train_sec = dict(payload.get("train", {}))
    _strict_keys(train_sec, training.TrainConfig.__dataclass_fields__, "config.train")
    training.TrainConfig(**train_sec)
    data_sec = dict(payload.get("data", {}))
    _strict_keys(data_sec, training.DatasetSpec.__dataclass_fields__, "config.data")
    training.DatasetSpec(**data_sec)
    return {"model": model_sec, "train": train_sec, "data": data_sec}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fftmix", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_train = sub.add_parser("train", help="train a model from a JSON config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--seed", type=int, default=0)

    p_model = sub.add_parser("model", help="model utilities")
    model_sub = p_model.add_subparsers(dest="model_cmd", required=True)
    p_info = model_sub.add_parser("info", help="print shape ladder and parameter count")
    src = p_info.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset")
    src.add_argument("--checkpoint")
    p_info.add_argument("--input-size", type=int, default=224)
    p_info.add_argument("--num-classes", type=int, default=1000)
    p_info.add_argument("--out")
    p_info.add_argument("--seed", type=int, default=0)

    p_erf = sub.add_parser("erf", help="effective receptive field map")
    p_erf.add_argument("--model", required=True)
    p_erf.add_argument("--images", default="synthetic")
    p_erf.add_argument("--num", type=int, default=8)
    p_erf.add_argument("--out", required=True)
    p_erf.add_argument("--seed", type=int, default=0)

    p_cov = sub.add_parser("coverage", help="kernel coverage report")
    p_cov.add_argument("--model", required=True)
    p_cov.add_argument("--threshold", type=float, default=0.05)
    p_cov.add_argument("--out", required=True)
    p_cov.add_argument("--seed", type=int, default=0)

    p_tr = sub.add_parser("truncate", help="truncate stage kernels and evaluate")
    p_tr.add_argument("--model", required=True)
    p_tr.add_argument("--stage", type=int, required=True)
    p_tr.add_argument("--rel", type=float, required=True)
    p_tr.add_argument("--eval", action="store_true")
    p_tr.add_argument("--out", required=True)
    p_tr.add_argument("--seed", type=int, default=0)

    p_bench = sub.add_parser("bench", help="runtime scaling benchmark")
    p_bench.add_argument("--variants", required=True, help="comma-separated variant names")
    p_bench.add_argument("--extents", required=True, help="comma-separated side lengths")
    p_bench.add_argument("--channels", type=int, default=4)
    p_bench.add_argument("--repeats", type=int, default=5)
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--seed", type=int, default=0)

    p_filters = sub.add_parser("filters", help="filter utilities")
    f_sub = p_filters.add_subparsers(dest="filters_cmd", required=True)
    p_dump = f_sub.add_parser("dump", help="dump materialized kernels")
    p_dump.add_argument("--model", required=True)
    p_dump.add_argument("--per-channel", action="store_true")
    p_dump.add_argument("--out", required=True)
    p_dump.add_argument("--seed", type=int, default=0)
    return parser


def parse_args(argv) -> CliConfig:
    """Parse and validate; raises SystemExit(2) on any usage error."""
    parser = _build_parser()
    ns = parser.parse_args(argv)
    args = vars(ns)
    payload: dict = {}
    if ns.subcommand == "train":
        try:
            raw = _load_json(ns.config)
            payload = _validate_train_payload(raw)
        except (OSError, json.JSONDecodeError, ValueError, TypeError) as exc:
            parser.exit(2, f"fftmix train: invalid config: {exc}\n")
    return CliConfig(subcommand=ns.subcommand, args=args, payload=payload)


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------


def _config_hash(obj) -> str:
    canon = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _write_manifest(out: Path, subcommand: str, effective_config, seed: int) -> None:
    manifest = {
        "subcommand": subcommand,
        "config_hash": _config_hash(effective_config),
        "config": effective_config,
        "seed": seed,
        "versions": {
            "fftmix": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _model_from_args(cfg: CliConfig):
    model_sec = cfg.payload.get("model", {})
    if "preset" in model_sec:
        config = mdl.preset_config(
            model_sec["preset"],
            input_size=tuple(model_sec.get("input_size", (224, 224))),
            num_classes=model_sec.get("num_classes", 1000),
        )
    else:
        config = mdl.config_from_dict(model_sec)
    return mdl.build_model(config, seed=cfg.seed)


def _load_model(ckpt_dir) -> mdl.Model:
    manifest = hpxio.load_checkpoint_manifest(ckpt_dir)
    config = mdl.config_from_dict(manifest["config"])
    model = mdl.build_model(config, seed=0)
    mdl.load_params(model, hpxio.load_checkpoint_tensors(ckpt_dir))
    return model


def _synthetic_images(model: mdl.Model, num: int, seed: int) -> np.ndarray:
    spec = training.DatasetSpec(
        image_size=model.config.input_size[0],
        num_classes=model.config.num_classes,
        train_size=num,
        val_size=0,
        seed=seed,
    )
    images, _, _, _ = training.synthetic_quadrant_dataset(spec)
    return images


def _cmd_train(cfg: CliConfig) -> int:
    out = Path(cfg.args["out"])
    out.mkdir(parents=True, exist_ok=True)
    model = _model_from_args(cfg)
    tconf = training.TrainConfig(**cfg.payload.get("train", {}))
    dspec = training.DatasetSpec(**cfg.payload.get("data", {}))
    history = training.train(model, dspec, tconf, out_dir=out)
    _write_manifest(out, "train", cfg.payload, cfg.seed)
    last = history[-1]
    print(f"trained {tconf.total_epochs} epochs; final val_acc {last['val_acc']:.4f}")
    print(f"history: {out / 'history.csv'}")
    print(f"checkpoint: {out / 'checkpoint'}")
    return 0


def _cmd_model_info(cfg: CliConfig) -> int:
    if cfg.args.get("checkpoint"):
        manifest = hpxio.load_checkpoint_manifest(cfg.args["checkpoint"])
        config = mdl.config_from_dict(manifest["config"])
    else:
        size = int(cfg.args.get("input_size") or 224)
        config = mdl.preset_config(
            cfg.args["preset"], input_size=(size, size), num_classes=int(cfg.args["num_classes"])
        )
    model = mdl.build_model(config, seed=cfg.seed)
    echo = json.dumps(config.to_dict(), sort_keys=True)
    print(f"config: {echo}")
    for i, (fy, fx, c) in enumerate(model.shape_ladder()):
        variant = config.mixer_layout[i]
        print(f"stage {i + 1}: {fy}x{fx} x{c} ({variant}, {config.stage_blocks[i]} blocks)")
    print(f"params: {mdl.count_params(model)}")
    if cfg.args.get("out"):
        out = Path(cfg.args["out"])
        out.mkdir(parents=True, exist_ok=True)
        _write_manifest(out, "model info", config.to_dict(), cfg.seed)
    return 0


def _cmd_erf(cfg: CliConfig) -> int:
    out = Path(cfg.args["out"])
    out.mkdir(parents=True, exist_ok=True)
    model = _load_model(cfg.args["model"])
    source = cfg.args["images"]
    if source == "synthetic":
        images = _synthetic_images(model, int(cfg.args["num"]), cfg.seed)
    else:
        files = sorted(Path(source).glob("*.hpx1"))[: int(cfg.args["num"])]
        if not files:
            raise FileNotFoundError(f"no .hpx1 images under {source}")
        images = np.stack([hpxio.read_hpx1(f) for f in files])
    emap = analysis.erf_map(model, images)
    hpxio.write_hpx1(out / "erf.hpx1", emap.grid)
    hpxio.write_pgm(out / "erf.pgm", emap.grid)
    _write_manifest(out, "erf", {"model": str(cfg.args["model"]), "num": emap.num_images}, cfg.seed)
    print(f"erf over {emap.num_images} images -> {out / 'erf.pgm'}")
    return 0


def _cmd_coverage(cfg: CliConfig) -> int:
    out = Path(cfg.args["out"])
    out.mkdir(parents=True, exist_ok=True)
    model = _load_model(cfg.args["model"])
    report = analysis.coverage_report(model, threshold=float(cfg.args["threshold"]))
    with open(out / "coverage.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "block", "diameter", "coverage"])
        for row in report.rows:
            writer.writerow([row.stage, row.block, row.diameter, row.coverage])
    _write_manifest(
        out, "coverage", {"model": str(cfg.args["model"]), "threshold": cfg.args["threshold"]}, cfg.seed
    )
    print(f"coverage for {len(report.rows)} blocks -> {out / 'coverage.csv'}")
    return 0


def _cmd_truncate(cfg: CliConfig) -> int:
    out = Path(cfg.args["out"])
    out.mkdir(parents=True, exist_ok=True)
    model = _load_model(cfg.args["model"])
    stage, rel = int(cfg.args["stage"]), float(cfg.args["rel"])
    truncated = analysis.truncate_kernels(model, stage, rel)
    result = {"stage": stage, "relative_size": rel}
    if cfg.args.get("eval"):
        spec = training.DatasetSpec(
            image_size=model.config.input_size[0],
            num_classes=model.config.num_classes,
            train_size=0,
            val_size=256,
            seed=cfg.seed + 1,
        )
        _, _, val_x, val_y = training.synthetic_quadrant_dataset(spec)
        result["val_acc"] = training.evaluate_accuracy(truncated, val_x, val_y)
        result["val_acc_untruncated"] = training.evaluate_accuracy(model, val_x, val_y)
    with open(out / "results.json", "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
    _write_manifest(out, "truncate", result, cfg.seed)
    print(f"truncated stage {stage} at rel {rel} -> {out / 'results.json'}")
    return 0


def _cmd_bench(cfg: CliConfig) -> int:
    out = Path(cfg.args["out"])
    out.mkdir(parents=True, exist_ok=True)
    variants = [v.strip() for v in cfg.args["variants"].split(",") if v.strip()]
    extents = [int(e) for e in cfg.args["extents"].split(",") if e.strip()]
    table = analysis.bench_runtime(
        variants, extents, channels=int(cfg.args["channels"]), repeats=int(cfg.args["repeats"]),
        seed=cfg.seed,
    )
    with open(out / "bench.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "extent", "channels", "median_seconds", "pixels"])
        for row in table.rows:
            writer.writerow([row.variant, row.extent, row.channels, row.median_seconds, row.pixels])
    with open(out / "slopes.json", "w") as fh:
        json.dump(table.slopes, fh, indent=2, sort_keys=True)
    _write_manifest(
        out,
        "bench",
        {"variants": variants, "extents": extents, "channels": cfg.args["channels"],
         "repeats": cfg.args["repeats"]},
        cfg.seed,
    )
    for variant, slope in sorted(table.slopes.items()):
        print(f"{variant}: fitted log-log slope {slope:.3f}")
    print(f"table -> {out / 'bench.csv'}")
    return 0


def _cmd_filters_dump(cfg: CliConfig) -> int:
    out = Path(cfg.args["out"])
    out.mkdir(parents=True, exist_ok=True)
    model = _load_model(cfg.args["model"])
    count = 0
    for s, blocks in enumerate(model.stages):
        for b, block in enumerate(blocks):
            mixer = block.mixer
            if not isinstance(mixer, GatedConvMixer):
                continue
            for i, f in enumerate(mixer.filters):
                kernel = mixer.kernel(i).data  # [P, C]
                grid = f.grid_shape()
                shaped = kernel.reshape(*grid, kernel.shape[-1])
                tag = f"s{s + 1}b{b + 1}" + (f"f{i}" if len(mixer.filters) > 1 else "")
                hpxio.write_hpx1(out / f"kernel_{tag}.hpx1", shaped)
                mean = shaped.mean(axis=-1)
                hpxio.write_hpx1(out / f"kernel_{tag}_mean.hpx1", mean)
                hpxio.write_pgm(out / f"kernel_{tag}_mean.pgm", np.atleast_2d(mean))
                if cfg.args.get("per_channel"):
                    for c in range(shaped.shape[-1]):
                        hpxio.write_pgm(
                            out / f"kernel_{tag}_c{c:03d}.pgm", np.atleast_2d(shaped[..., c])
                        )
                count += 1
    if count == 0:
        raise ValueError("model contains no implicit-filter mixers")
    _write_manifest(out, "filters dump", {"model": str(cfg.args["model"]), "kernels": count}, cfg.seed)
    print(f"dumped {count} kernels -> {out}")
    return 0


_DISPATCH = {
    "train": _cmd_train,
    "erf": _cmd_erf,
    "coverage": _cmd_coverage,
    "truncate": _cmd_truncate,
    "bench": _cmd_bench,
}


def run(config: CliConfig) -> int:
    """Dispatch a parsed CliConfig; module errors surface as exit code 1."""
    _apply_thread_cap()
    try:
        if config.subcommand == "model":
            return _cmd_model_info(config)
        if config.subcommand == "filters":
            return _cmd_filters_dump(config)
        return _DISPATCH[config.subcommand](config)
    except (ValueError, OSError, KeyError, RuntimeError) as exc:
        print(f"fftmix {config.subcommand}: error: {exc}", file=sys.stderr)
        return 1


def _apply_thread_cap() -> None:
    cap = os.environ.get("HPX_THREADS")
    if not cap:
        return
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(int(cap))
    except (ImportError, ValueError):
        pass  # no worker pools of our own; the cap is best effort


def main(argv=None) -> int:
    try:
        config = parse_args(sys.argv[1:] if argv is None else list(argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
