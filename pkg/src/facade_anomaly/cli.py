"""Command line entry point: ``facade-anomaly <subcommand> ...``.

On failure a single line ``<module>:<ErrorName>: <message>`` goes to stderr;
the exit status is 2 for usage/configuration errors and 1 otherwise.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
from PIL import Image

from .config import RunConfig, resolve_out, write_snapshot
from .errors import ConfigError, FacadeAnomalyError

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _offset(text: str) -> tuple:
    try:
        dx, dy = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"offset must be 'dx,dy', got {text!r}") from None
    return dx, dy


def _eval_size(text: str):
    v = float(text)
    return int(v) if v >= 1 and v == int(v) else v


# -- subcommands -----------------------------------------------------------

def cmd_calibrate(args, cfg: RunConfig) -> int:
    from .geometry import fit_distortion

    rows = []
    with open(args.correspondences, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(((float(row["xd"]), float(row["yd"])), (float(row["xu"]), float(row["yu"]))))
    fit = fit_distortion(rows, width=args.width, height=args.height, fit_center=not args.fixed_center)
    model = fit.model
    if args.k1 is not None or args.k2 is not None:
        # manual fine-tuning of the automatic guess
        model = model.with_coefficients(args.k1 if args.k1 is not None else model.k1,
                                        args.k2 if args.k2 is not None else model.k2)
    model.check()
    out = resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    write_snapshot(out.with_suffix(".run.json"), "calibrate", cfg, vars(args), {"fitted_rms": fit.rms})
    print(f"k1={model.k1:.6g} k2={model.k2:.6g} center=({model.center_x:.3f}, {model.center_y:.3f}) "
          f"rms={fit.rms:.3g}px -> {out}")
    return 0


def cmd_preprocess(args, cfg: RunConfig) -> int:
    from .codec import AlignedPair, EncodingParams, encode_thermal, write_pair
    from .frames import ColorFrame, ThermalFrame
    from .geometry import RadialDistortionModel, RegisteredGrid, crop_to_thermal_fov, resample_thermal, undistort

    model = RadialDistortionModel.load(args.model)
    grid = RegisteredGrid(cfg.resolution, cfg.resolution)
    condition = cfg.condition(args.condition, args.t_out)
    out = resolve_out(args.out)
    rgb_files = {p.stem: p for p in Path(args.rgb_dir).iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")}
    th_files = {p.stem: p for p in Path(args.thermal_dir).glob("*.npy")}
    missing = sorted(set(rgb_files) ^ set(th_files))
    if missing:
        raise ConfigError(f"unmatched frames (need <id>.png and <id>.npy): {', '.join(missing)}")
    for scene_id in sorted(rgb_files):
        with Image.open(rgb_files[scene_id]) as im:
            rgb = ColorFrame(np.array(im.convert("RGB")))
        raw = np.load(th_files[scene_id])
        thermal = ThermalFrame(values=raw, t_out=condition.t_out, condition=condition.name)
        thermal = resample_thermal(undistort(thermal, model), grid)
        color = crop_to_thermal_fov(rgb, offset=args.offset, target=grid)
        enc = encode_thermal(thermal, EncodingParams(t_out=condition.t_out))
        enc.valid &= color.valid
        write_pair(AlignedPair(scene_id, color.pixels, enc, condition=condition.name), out)
    write_snapshot(out / "preprocess.run.json", "preprocess", cfg, vars(args),
                   {"distortion_model": asdict(model), "n_pairs": len(rgb_files)})
    print(f"wrote {len(rgb_files)} pairs to {out}")
    return 0


def cmd_split(args, cfg: RunConfig) -> int:
    from .dataset import build_catalog

    condition = cfg.condition(args.condition, args.t_out)
    seed = cfg.seed if args.seed is None else args.seed
    out = resolve_out(args.out) if args.out else Path(args.pairs) / "catalog.json"
    cat = build_catalog(args.pairs, condition, args.eval_count, seed=seed, notes=args.notes or "")
    cat.save(out)
    write_snapshot(out.with_suffix(".run.json"), "split", cfg, vars(args))
    print(f"{condition.name}: {len(cat.scene_ids('train'))} train / {len(cat.scene_ids('eval'))} eval -> {out}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    from . import plotting
    from .dataset import DatasetCatalog
    from .model import GeneratorModel, train

    catalog = DatasetCatalog.load_file(args.catalog)
    eval_catalog = DatasetCatalog.load_file(args.eval_catalog) if args.eval_catalog else None
    tcfg = cfg.training_config(args.preset, epochs=args.epochs, seed=args.seed,
                               checkpoint_every=args.checkpoint_every)
    init = GeneratorModel.load(args.init) if args.init else None
    scale = args.scale if args.scale is not None else cfg.scale
    out = resolve_out(args.out)
    result = train(catalog, tcfg, init=init, scale=scale, eval_catalog=eval_catalog,
                   checkpoint_dir=out.parent / f"{out.stem}_checkpoints" if tcfg.checkpoint_every else None,
                   init_name=str(args.init) if args.init else None,
                   on_epoch=lambda e: print(json.dumps({k: (round(v, 5) if isinstance(v, float) else v)
                                                         for k, v in e.items()}), flush=True))
    result.model.provenance["preset"] = args.preset
    result.model.save(out)
    with open(out.with_suffix(".history.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(result.history[0]))
        w.writeheader()
        w.writerows(result.history)
    plotting.save_training_curves(result.history, out.with_suffix(".curves.png"))
    write_snapshot(out.with_suffix(".run.json"), "train", cfg, vars(args),
                   {"training": asdict(tcfg), "scale": scale, "provenance": result.model.provenance})
    print(f"saved {out}")
    return 0


def cmd_predict(args, cfg: RunConfig) -> int:
    from .codec import INVALID_CODE
    from .model import GeneratorModel, predict

    model = GeneratorModel.load(args.model)
    with Image.open(args.rgb) as im:
        rgb = np.array(im.convert("RGB"))
    enc = predict(model, rgb, t_out=args.t_out)
    out = resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    codes = enc.codes.astype(np.uint8)
    codes[~enc.valid] = INVALID_CODE
    Image.fromarray(codes, mode="L").save(out)
    print(f"saved {out}")
    return 0


def _split_pair_arg(text: str) -> tuple:
    p = Path(text)
    for suffix in ("_rgb.png", "_th.png", "_meta.json"):
        if p.name.endswith(suffix):
            return p.parent, p.name[: -len(suffix)]
    return p.parent, p.name


def cmd_detect(args, cfg: RunConfig) -> int:
    from . import plotting
    from .anomaly import anomaly_map, render_overlay, summarize_regions, threshold, write_detection
    from .codec import read_pair
    from .model import GeneratorModel, predict

    model = GeneratorModel.load(args.model)
    directory, scene_id = _split_pair_arg(args.pair)
    pair = read_pair(directory, scene_id)
    tolerance = cfg.tolerance if args.tolerance is None else args.tolerance
    f = args.f or cfg.f_mode
    pred = predict(model, pair.rgb, t_out=pair.thermal.params.t_out)
    amap = anomaly_map(pair.thermal, pred, f)
    mask = threshold(amap, tolerance)
    regions = summarize_regions(mask, amap, cfg.min_area)
    overlay = render_overlay(pair.rgb, mask, amap)
    out = resolve_out(args.out)
    write_detection(out, scene_id, amap, mask, regions, overlay)
    plotting.save_overlay_figure(pair.rgb, overlay, amap, mask, out / f"{scene_id}_overlay_legend.png",
                                 title=scene_id)
    write_snapshot(out / f"{scene_id}_detect.run.json", "detect", cfg, vars(args),
                   {"tolerance": tolerance, "f": f})
    print(f"{scene_id}: {int(mask.values.sum())} flagged px, {len(regions)} regions -> {out}")
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    from .dataset import DatasetCatalog
    from .evaluation import evaluate_pairs, report
    from .model import GeneratorModel

    model = GeneratorModel.load(args.model)
    catalog = DatasetCatalog.load_file(args.catalog)
    tolerance = cfg.tolerance if args.tolerance is None else args.tolerance
    f = args.f or cfg.f_mode
    pairs = catalog.pairs(args.split)
    if not pairs:
        raise ConfigError(f"split {args.split!r} of {args.catalog} is empty")
    run = evaluate_pairs(model, pairs, tolerance, f, cfg.min_area, cfg.bin_width,
                         data_info={"catalog": str(args.catalog), "split": args.split,
                                    "condition": catalog.condition.to_dict()})
    out = resolve_out(args.out)
    paths = report(run, out, worst_k=cfg.worst_k, highlight=args.highlight or ())
    write_snapshot(out / "evaluate.run.json", "evaluate", cfg, vars(args))
    stats = run.stats
    det = run.detection
    line = f"n={stats.summary['n']} mean_dev={stats.summary['mean']:.4f}C mode_bin={stats.mode_bin}"
    if det is not None:
        line += f" recall={det.pixel_recall} precision={det.pixel_precision} iou={det.iou}"
    print(f"{line} -> {paths['report']}")
    return 0


def cmd_synth(args, cfg: RunConfig) -> int:
    from .synthgen import generate_set

    condition = cfg.condition(args.condition, args.t_out)
    size = args.size or cfg.resolution
    seed = cfg.seed if args.seed is None else args.seed
    delta = tuple(args.anomaly_delta) if len(args.anomaly_delta) == 2 else float(args.anomaly_delta[0])
    out = resolve_out(args.out)
    manifest = generate_set(args.n, condition, args.anomaly_rate, seed, out, size=size, anomaly_delta=delta)
    write_snapshot(out / "synth.run.json", "synth", cfg, vars(args))
    n_anom = sum(s["anomalous"] for s in manifest["scenes"])
    print(f"wrote {args.n} {condition.name} pairs ({n_anom} with anomalies) at {size}px -> {out}")
    return 0


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="facade-anomaly", description="Label-free thermal anomaly detection for building facades.")
    p.add_argument("--config", type=Path, help="JSON file with RunConfig defaults")
    p.add_argument("--toy", action="store_true", help="desk-scale profile: 128 px, scale 0.25, 15 epochs")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("calibrate", help="fit the radial distortion model")
    s.add_argument("--correspondences", required=True, type=Path, help="CSV with columns xd,yd,xu,yu")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--width", type=int, default=320)
    s.add_argument("--height", type=int, default=240)
    s.add_argument("--fixed-center", action="store_true")
    s.add_argument("--k1", type=float, help="override the fitted k1")
    s.add_argument("--k2", type=float, help="override the fitted k2")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("preprocess", help="undistort, crop, resample and encode raw frames")
    s.add_argument("--rgb-dir", required=True, type=Path)
    s.add_argument("--thermal-dir", required=True, type=Path, help="<id>.npy absolute °C arrays")
    s.add_argument("--model", required=True, type=Path)
    s.add_argument("--offset", type=_offset, default=(0.0, 0.0), help="dx,dy crop shift in RGB pixels")
    s.add_argument("--condition", required=True)
    s.add_argument("--t-out", type=float)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("split", help="random train/eval catalog")
    s.add_argument("--pairs", required=True, type=Path)
    s.add_argument("--condition", required=True)
    s.add_argument("--t-out", type=float)
    s.add_argument("--eval-count", type=_eval_size, default=0.05, help="count (>=1) or fraction (<1)")
    s.add_argument("--seed", type=int)
    s.add_argument("--notes")
    s.add_argument("--out", type=Path)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", help="train or fine-tune the colour-to-thermal model")
    s.add_argument("--catalog", required=True, type=Path)
    s.add_argument("--preset", choices=["winter", "summer"], default="winter")
    s.add_argument("--init", type=Path, help="checkpoint to fine-tune from")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--scale", type=float)
    s.add_argument("--eval-catalog", type=Path)
    s.add_argument("--checkpoint-every", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="expected thermal codes for one RGB image")
    s.add_argument("--model", required=True, type=Path)
    s.add_argument("--rgb", required=True, type=Path)
    s.add_argument("--t-out", type=float, default=0.0)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("detect", help="anomaly map, mask, regions and overlay for one pair")
    s.add_argument("--model", required=True, type=Path)
    s.add_argument("--pair", required=True, help="<pair-dir>/<scene_id>")
    s.add_argument("--tolerance", type=float)
    s.add_argument("--f", choices=["identity", "absolute"])
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("evaluate", help="deviation histogram, detection scores and report")
    s.add_argument("--model", required=True, type=Path)
    s.add_argument("--catalog", required=True, type=Path)
    s.add_argument("--split", choices=["train", "eval"], default="eval")
    s.add_argument("--tolerance", type=float)
    s.add_argument("--f", choices=["identity", "absolute"])
    s.add_argument("--highlight", nargs="*", help="scene ids marked in the histogram")
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth", help="generate a synthetic facade data set")
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--condition", required=True)
    s.add_argument("--t-out", type=float)
    s.add_argument("--anomaly-rate", type=float, default=0.0)
    s.add_argument("--anomaly-delta", type=float, nargs="+", default=[2.0, 4.0],
                   help="fixed delta or 'lo hi' range in °C")
    s.add_argument("--seed", type=int)
    s.add_argument("--size", type=int)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_synth)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise ConfigError("no subcommand given; see --help")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
        if args.toy:
            cfg = cfg.apply_toy()
        return args.func(args, cfg)
    except ConfigError as exc:
        print(exc.describe(), file=sys.stderr)
        return 2
    except FacadeAnomalyError as exc:
        print(exc.describe(), file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"cli:{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
