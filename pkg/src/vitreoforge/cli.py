"""Command-line entry point orchestrating the full pipeline.

Subcommands: phantom (synthetic acquisitions), average (artifact-weighted
ground truth), train / sample (the three model families), eval (metric
report with difference maps), stats (reader-study statistics), manifest
(question set for the reader study), serve (the HTTP service). Every
subcommand is deterministic given its config and seed, and exits non-zero
with a message on any validation or file error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys

import numpy as np

from .averaging import arithmetic_average, pseudo_art100
from .config import RunConfig, default_config, load_config, write_example_config
from .denoiser.params import load_params, save_params
from .denoiser.training import (
    TrainConfig,
    bbdm_denoiser,
    cddpm_denoiser,
    load_codec,
    save_codec,
    tiny_autoencoder_train,
    train_bbdm,
    train_cddpm,
    train_regression_baseline,
)
from .diffusion import bbdm_sample, cddpm_sample
from .errors import InvalidInputError, VitreoForgeError
from .evalstats import compute_statistics, read_log
from .imagecore import load_image, save_image
from .metrics import load_roi_mask, masked_psnr, metric_report
from .phantom import generate_art_series
from .turing import LocationImages, create_app, create_manifest, load_manifest, save_manifest

log = logging.getLogger("vitreoforge")

_FRAME_RE = re.compile(r"frame_(\d+)\.octf$")
_LOCATION_RE = re.compile(r"location_(\d+)$")


def _config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else default_config()
    if getattr(args, "seed", None) is not None:
        cfg = RunConfig(seed=args.seed, phantom=cfg.phantom,
                        schedule=cfg.schedule, model=cfg.model,
                        training=cfg.training, sampling=cfg.sampling,
                        metrics=cfg.metrics, turing=cfg.turing)
    return cfg


def _numeric_sorted(paths, pattern):
    def key(p):
        m = pattern.search(os.path.basename(p) if pattern is _FRAME_RE else p)
        return int(m.group(1)) if m else -1
    return sorted(paths, key=key)


def _frame_paths(folder: str) -> list:
    hits = [os.path.join(folder, name) for name in os.listdir(folder)
            if _FRAME_RE.search(name)]
    if not hits:
        raise InvalidInputError(f"no frame_*.octf files in {folder}")
    return _numeric_sorted(hits, _FRAME_RE)


def _location_dirs(root: str) -> list:
    hits = [os.path.join(root, name) for name in os.listdir(root)
            if _LOCATION_RE.search(name)
            and os.path.isdir(os.path.join(root, name))]
    if not hits:
        raise InvalidInputError(f"no location_* folders in {root}")
    return _numeric_sorted(hits, _LOCATION_RE)


# ---- phantom ----------------------------------------------------------------


def cmd_phantom(args) -> int:
    cfg = _config_from_args(args)
    out = args.out
    os.makedirs(out, exist_ok=True)
    p = cfg.phantom
    manifest = {
        "seed": cfg.seed,
        "locations": p["locations"],
        "frames_per_location": p["frames_per_location"],
        "height": p["height"],
        "width": p["width"],
        "files": {},
        "artifact_strips": {},
    }
    for i in range(p["locations"]):
        spec = cfg.phantom_spec(i)
        clean, frames = generate_art_series(spec, p["frames_per_location"])
        loc_dir = os.path.join(out, f"location_{i}")
        os.makedirs(loc_dir, exist_ok=True)
        files = []
        clean_path = os.path.join(loc_dir, "clean.octf")
        save_image(clean, clean_path)
        files.append(os.path.relpath(clean_path, out))
        for j, frame in enumerate(frames):
            fp = os.path.join(loc_dir, f"frame_{j}.octf")
            save_image(frame, fp)
            files.append(os.path.relpath(fp, out))
        manifest["files"][f"location_{i}"] = files
        manifest["artifact_strips"][f"location_{i}"] = [
            list(s) for s in spec.artifact_strips
        ]
        log.info("location_%d: %d frames written", i, len(frames))
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {p['locations']} locations x "
          f"{p['frames_per_location']} frames to {out}")
    return 0


# ---- average ----------------------------------------------------------------


def cmd_average(args) -> int:
    frames = [load_image(p) for p in _frame_paths(args.in_dir)]
    if args.mode == "arithmetic":
        avg = arithmetic_average(frames)
        masks = None
    else:
        avg, masks, coverage = pseudo_art100(frames, expected_frames=None)
        log.info("min artifact-free coverage: %d frames", int(coverage.min()))
    save_image(avg, args.out)
    written = [args.out]
    if args.export_masks:
        if masks is None:
            raise InvalidInputError("--export-masks requires --mode weighted")
        stem = os.path.splitext(args.out)[0]
        for j, m in enumerate(masks):
            mp = f"{stem}_mask_{j:02d}.png"
            save_image(m.astype(np.float32), mp)
            written.append(mp)
    print(f"wrote {len(written)} file(s), average at {args.out}")
    return 0


# ---- train ------------------------------------------------------------------


def _load_pairs(data_dir: str):
    """(input frame, averaged target) pairs from the location layout."""
    pairs = []
    targets = []
    for loc in _location_dirs(data_dir):
        frames = [load_image(p) for p in _frame_paths(loc)]
        target, _, _ = pseudo_art100(frames, expected_frames=None)
        targets.append(target)
        pairs.extend((frame, target) for frame in frames)
    return pairs, targets


def _progress_logger(every: int = 100):
    def cb(step, loss):
        if step % every == 0 or step == 1:
            log.info("step %d: loss %.6f", step, loss)
    return cb


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    pairs, targets = _load_pairs(args.data_dir)
    method = cfg.training["method"]
    tcfg = cfg.train_config()
    log.info("training %s on %d pairs for %d steps",
             method, len(pairs), tcfg.steps)
    if method == "cddpm":
        result = train_cddpm(pairs, cfg.noise_schedule(), tcfg,
                             model_cfg=cfg.model_config(in_channels=2),
                             progress=_progress_logger())
    elif method == "regression":
        result = train_regression_baseline(
            pairs, tcfg,
            model_cfg=cfg.model_config(in_channels=1, time_embedding=False),
            progress=_progress_logger())
    else:  # bbdm
        t = cfg.training
        ae_cfg = TrainConfig(learning_rate=t["ae_learning_rate"],
                             steps=t["ae_steps"], dropout=0.0,
                             seed=cfg.seed)
        codec = tiny_autoencoder_train(targets, ae_cfg,
                                       latent_channels=t["latent_channels"],
                                       hidden=t["ae_hidden"])
        ch = t["latent_channels"]
        result = train_bbdm(pairs, cfg.bridge_schedule(), tcfg, codec=codec,
                            model_cfg=cfg.model_config(
                                in_channels=ch, out_channels=ch,
                                time_embedding=True),
                            progress=_progress_logger())
        save_codec(args.out + ".codec", codec)
    # the averaged (EMA) weights are what gets evaluated
    save_params(args.out, result.ema_model)
    print(f"trained {method}: final loss {result.losses[-1]:.6f}, "
          f"params at {args.out}")
    return 0


# ---- sample -----------------------------------------------------------------


def _input_paths(path: str) -> list:
    if os.path.isdir(path):
        hits = [os.path.join(path, n) for n in sorted(os.listdir(path))
                if n.endswith(".octf")]
        if not hits:
            raise InvalidInputError(f"no .octf files in {path}")
        return hits
    return [path]


def cmd_sample(args) -> int:
    cfg = _config_from_args(args)
    method = cfg.training["method"]
    model = load_params(args.params)
    inputs = _input_paths(args.input)
    ys = [load_image(p) for p in inputs]
    if any(y.shape != ys[0].shape for y in ys):
        raise InvalidInputError("input frames must share one shape")
    batch = np.stack(ys)

    if method == "cddpm":
        if model.cfg.in_channels != 2 or not model.cfg.time_embedding:
            raise InvalidInputError(
                "params are not a conditional diffusion model; check "
                "training.method in the config")
        outs = cddpm_sample(cddpm_denoiser(model), batch, cfg.noise_schedule(),
                            seed=cfg.seed,
                            prediction=cfg.training["prediction"])
    elif method == "regression":
        if model.cfg.in_channels != 1 or model.cfg.time_embedding:
            raise InvalidInputError(
                "params are not a regression model; check training.method "
                "in the config")
        outs = np.clip(model.predict(batch[:, None, :, :]), 0.0, 1.0)
    else:  # bbdm
        codec = load_codec(args.params + ".codec")
        n_steps = args.steps if args.steps else cfg.sampling["steps"]
        outs = []
        for y in ys:
            lat = bbdm_sample(bbdm_denoiser(model), codec.encode(y),
                              cfg.bridge_schedule(), n_steps=n_steps)
            outs.append(np.clip(codec.decode(lat), 0.0, 1.0))
        outs = np.stack(outs)

    if len(inputs) == 1 and not os.path.isdir(args.input):
        save_image(outs[0], args.out)
        print(f"wrote {args.out}")
    else:
        os.makedirs(args.out, exist_ok=True)
        for p, img in zip(inputs, outs):
            save_image(img, os.path.join(args.out, os.path.basename(p)))
        print(f"wrote {len(inputs)} samples to {args.out}")
    return 0


# ---- eval -------------------------------------------------------------------


def _matched_files(gen_dir: str, gt_dir: str) -> list:
    gen = {n for n in os.listdir(gen_dir) if n.endswith(".octf")}
    gt = {n for n in os.listdir(gt_dir) if n.endswith(".octf")}
    names = sorted(gen & gt)
    if not names:
        raise InvalidInputError(
            f"no matching .octf basenames between {gen_dir} and {gt_dir}")
    return names


def cmd_eval(args) -> int:
    from .reporting import save_difference_map, write_metric_csv, write_rows_csv

    cfg = _config_from_args(args)
    names = _matched_files(args.gen_dir, args.gt_dir)
    pairs = [(load_image(os.path.join(args.gen_dir, n)),
              load_image(os.path.join(args.gt_dir, n))) for n in names]
    rois = None
    if args.roi_dir:
        rois = []
        for n in names:
            rp = os.path.join(args.roi_dir, n)
            if not os.path.exists(rp):
                raise InvalidInputError(f"missing ROI mask {rp}")
            rois.append(load_roi_mask(rp))
    report = metric_report(pairs, rois=rois,
                           perceptual_backend=cfg.metrics["perceptual_backend"])
    os.makedirs(args.out, exist_ok=True)
    write_metric_csv(report, os.path.join(args.out, "report.csv"))
    from .metrics import format_report
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_report(report) + "\n")
    for n, (g, t) in zip(names, pairs):
        base = os.path.splitext(n)[0]
        save_difference_map(g, t, os.path.join(args.out, f"diff_{base}.png"),
                            title=base)
    if rois is not None:
        rows = [(n, masked_psnr(g, t, m))
                for n, (g, t), m in zip(names, pairs, rois)]
        s = report.metrics["roi_psnr"]
        rows.append(("mean", s.mean))
        write_rows_csv(os.path.join(args.out, "roi_psnr.csv"),
                       ("image", "roi_psnr"), rows)
    print(f"evaluated {len(pairs)} pairs; report in {args.out}")
    return 0


# ---- stats ------------------------------------------------------------------


def cmd_stats(args) -> int:
    from .reporting import (
        save_fool_rate_figure,
        save_preservation_figure,
        save_rank_figure,
        save_stratified_rank_figure,
        write_rows_csv,
    )

    records = read_log(args.log)
    kinds = sorted({r.get("test_kind") for r in records}
                   & {"rank6", "spot", "anatomy"})
    if not kinds:
        raise InvalidInputError(f"no recognizable responses in {args.log}")
    os.makedirs(args.out, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    summary = {}
    for kind in kinds:
        doc = compute_statistics(records, kind, seed=seed)
        summary[kind] = doc
        if kind == "rank6":
            rows = [(lab, s["mean"], s["ci_low"], s["ci_high"],
                     (doc["p_values"] or {}).get(lab, ""),
                     (doc["p_adjusted"] or {}).get(lab, ""),
                     (doc["significant"] or {}).get(lab, ""))
                    for lab, s in doc["mean_ranks"].items()]
            write_rows_csv(os.path.join(args.out, "rank_means.csv"),
                           ("label", "mean_rank", "ci_low", "ci_high",
                            "p_raw", "p_holm", "significant"), rows)
            save_rank_figure(doc, os.path.join(args.out, "rank_means.png"))
            if any(v.get("mean_ranks")
                   for v in (doc.get("stratified") or {}).values()):
                save_stratified_rank_figure(
                    doc, os.path.join(args.out, "rank_stratified.png"))
        elif kind == "spot":
            write_rows_csv(os.path.join(args.out, "fool_rate.csv"),
                           ("group", "n", "fool_rate_percent"),
                           [("overall", doc["n_responses"], doc["fool_rate"])]
                           + [(g, b["n_responses"], b["fool_rate"])
                              for g, b in doc["stratified"].items()
                              if b["fool_rate"] is not None])
            save_fool_rate_figure(doc, os.path.join(args.out, "fool_rate.png"))
        else:
            rows = [(sid, b["n_responses"], b["preservation"])
                    for sid, b in doc["per_structure"].items()]
            rows.append(("overall", doc["n_responses"],
                         doc["overall"]["preservation"]))
            write_rows_csv(os.path.join(args.out, "preservation.csv"),
                           ("structure", "n", "preservation_percent"), rows)
            save_preservation_figure(
                doc, os.path.join(args.out, "preservation.png"))
    with open(os.path.join(args.out, "summary.json"), "w",
              encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"statistics for {', '.join(kinds)} written to {args.out}")
    return 0


# ---- manifest / serve ---------------------------------------------------------


_CAND_RE = re.compile(r"cand_(.+)\.octf$")


def _location_images(loc_dir: str) -> LocationImages:
    def maybe(name):
        p = os.path.join(loc_dir, name)
        return p if os.path.exists(p) else ""

    candidates = {}
    for name in os.listdir(loc_dir):
        m = _CAND_RE.match(name)
        if m:
            candidates[m.group(1)] = os.path.join(loc_dir, name)
    return LocationImages(
        location_id=os.path.basename(loc_dir),
        reference=maybe("reference.octf"),
        candidates=candidates or None,
        real=maybe("real.octf"),
        generated=maybe("generated.octf"),
    )


def cmd_manifest(args) -> int:
    cfg = _config_from_args(args)
    locations = [_location_images(d) for d in _location_dirs(args.data_dir)]
    manifest = create_manifest(locations, args.mode,
                               cfg.turing["n_questions"], seed=cfg.seed)
    save_manifest(manifest, args.out)
    print(f"{args.mode} manifest with {manifest.n_questions} questions "
          f"at {args.out} (checksum {manifest.checksum[:12]})")
    return 0


def cmd_config(args) -> int:
    write_example_config(args.out, seed=args.seed or 0)
    print(f"example configuration written to {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    manifest = load_manifest(args.manifest)
    log_path = args.out or os.path.join(
        os.path.dirname(os.path.abspath(args.manifest)), "responses.jsonl")
    app = create_app(manifest, log_path)
    print(f"serving {manifest.test_kind} manifest "
          f"({manifest.n_questions} questions) on port {args.port}; "
          f"responses -> {log_path}")
    uvicorn.run(app, host="127.0.0.1", port=args.port, log_level="warning")
    return 0


# ---- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vitreoforge",
        description="Synthetic-phantom pipeline: acquisition simulation, "
                    "artifact-weighted averaging, denoising models, metric "
                    "reports, and reader-study tooling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True, config=True):
        if config:
            p.add_argument("--config", help="INI run configuration")
        if seed:
            p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("phantom", help="generate synthetic acquisitions")
    common(p)
    p.add_argument("--out", required=True, help="output folder")
    p.set_defaults(fn=cmd_phantom)

    p = sub.add_parser("average", help="average one location's frames")
    p.add_argument("in_dir", help="folder holding frame_*.octf")
    p.add_argument("--out", required=True, help="output .octf path")
    p.add_argument("--mode", choices=("weighted", "arithmetic"),
                   default="weighted")
    p.add_argument("--export-masks", action="store_true",
                   help="also write the per-frame artifact masks")
    p.set_defaults(fn=cmd_average)

    p = sub.add_parser("train", help="fit a model on phantom locations")
    common(p)
    p.add_argument("data_dir", help="folder of location_* subfolders")
    p.add_argument("--out", required=True, help="output parameter file")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sample", help="run a trained model on inputs")
    common(p)
    p.add_argument("params", help="parameter file from train")
    p.add_argument("input", help=".octf file or folder of them")
    p.add_argument("--out", required=True, help="output file or folder")
    p.add_argument("--steps", type=int,
                   help="bridge sampling grid size (bbdm only)")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("eval", help="metric report for generated vs truth")
    common(p, seed=False)
    p.add_argument("gen_dir")
    p.add_argument("gt_dir")
    p.add_argument("--roi-dir", help="masks for region-restricted PSNR")
    p.add_argument("--out", required=True, help="report folder")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("stats", help="reader-study statistics from a log")
    p.add_argument("log", help="response log (one record per line)")
    p.add_argument("--seed", type=int, help="bootstrap seed (default 0)")
    p.add_argument("--out", required=True, help="output folder")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("manifest", help="build a reader-study question set")
    common(p)
    p.add_argument("data_dir", help="folder of location_* subfolders")
    p.add_argument("--mode", choices=("rank6", "spot", "anatomy"),
                   required=True, help="question format")
    p.add_argument("--out", required=True, help="manifest path")
    p.set_defaults(fn=cmd_manifest)

    p = sub.add_parser("config", help="write an example configuration file")
    p.add_argument("--seed", type=int, help="seed to embed (default 0)")
    p.add_argument("--out", required=True, help="INI path to write")
    p.set_defaults(fn=cmd_config)

    p = sub.add_parser("serve", help="run the reader-study HTTP service")
    p.add_argument("manifest", help="manifest file from the manifest command")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--out", help="response log path")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    level = os.environ.get("VITREOFORGE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (VitreoForgeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
