"""Batch command surface wiring all stages into reproducible experiments.

Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime
failure (for example the divergence guard). Every run directory receives
the fully resolved config, the seed, and the code version tag alongside
the artifacts, which is sufficient to reproduce the run.

Commands:
  synth           phantom corpus + manifest
  preprocess      surface-extracted, inpainted, normalized channels
  make-gt         Beer-Lambert RGB ground truth from channel pairs
  train           checkpoints + per-epoch history
  infer           stained outputs from a checkpoint
  evaluate        metric report for prediction/target directories
  ablate          the four component-removal runs plus the full baseline
  schedule-sweep  training across alternation periods, merged loss curves
  audit           parameter/complexity report
"""

import argparse
import json
import os
import sys
from dataclasses import replace, asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, dump_config, load_config
from .imagecore import (load_gray, load_rgb, normalize, random_crop_set,
                        save_gray16, save_rgb8, to_float, load_stack)
from .metrics import (MetricReport, compare_models, differences_csv,
                      evaluate_dataset, mse, ssim, vol, as_255)
from .model import (audit_params, generator_macs, generator_param_count,
                    discriminator_param_count, GeneratorSpec, DiscriminatorSpec)
from .preprocess import (DatasetSplit, build_dataset, extract_surface, inpaint,
                         load_mask, load_samples, mask_from_calibration,
                         save_mask, write_manifest)
from .synthgen import generate_corpus
from .training import (TrainingDivergedError, build_assembly, derive_seed,
                       infer, load_checkpoint, train)
from .virtual_he import beer_lambert_he


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_run_info(out_dir: Path, config: RunConfig, command: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.yaml").write_text(dump_config(config))
    info = {"version": __version__, "command": command, "seed": config.seed}
    (out_dir / "run_info.json").write_text(json.dumps(info, indent=2))


def _save_sample_images(sample, out_dir: Path) -> dict:
    sid = sample.sample_id or "sample"
    save_gray16(sample.rcm, out_dir / "images" / f"{sid}_rcm.tiff")
    save_gray16(sample.h_target, out_dir / "images" / f"{sid}_h.tiff")
    save_gray16(sample.e_target, out_dir / "images" / f"{sid}_e.tiff")
    save_rgb8(sample.rgb_target, out_dir / "images" / f"{sid}_rgb.png")
    entry = {
        "patient_id": sample.patient_id,
        "sample_id": sid,
        "rcm": f"images/{sid}_rcm.tiff",
        "h": f"images/{sid}_h.tiff",
        "e": f"images/{sid}_e.tiff",
        "rgb": f"images/{sid}_rgb.png",
    }
    if sample.artifact_mask is not None:
        save_mask(sample.artifact_mask, out_dir / "images" / f"{sid}_mask.png")
        entry["mask"] = f"images/{sid}_mask.png"
    return entry


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    corpus = generate_corpus(cfg.phantom, cfg.corpus.patients,
                             cfg.corpus.images_per_patient, coeffs=cfg.stain)
    _write_run_info(out, cfg, "synth")
    entries = [_save_sample_images(s, out) for s in corpus]
    write_manifest(entries, out / "manifest.jsonl")
    print(f"wrote {len(entries)} samples from {cfg.corpus.patients} patients to {out}")
    return 0


def _find_stacks(stack_dir: Path) -> dict:
    """Group stack files <sample>_<channel>.tif by sample id."""
    groups = {}
    for path in sorted(stack_dir.iterdir()):
        if path.suffix.lower() not in (".tif", ".tiff") or "_" not in path.stem:
            continue
        sample_id, channel = path.stem.rsplit("_", 1)
        if channel in ("rcm", "h", "e"):
            groups.setdefault(sample_id, {})[channel] = path
    return {sid: chans for sid, chans in groups.items() if "rcm" in chans}


def cmd_preprocess(args) -> int:
    cfg = load_config(args.config)
    pp = cfg.preprocess
    out = Path(args.out)
    stacks = _find_stacks(Path(args.stacks))
    if not stacks:
        raise ConfigError(f"no '<sample>_rcm.tif' stacks found in {args.stacks}")

    mask = None
    if args.mask:
        mask = load_mask(args.mask)
    elif args.calibration:
        mask = mask_from_calibration(load_gray(args.calibration), pp.mask_percentile)
        save_mask(mask, out / "artifact_mask.png")

    _write_run_info(out, cfg, "preprocess")
    entries = []
    for sample_id, chans in sorted(stacks.items()):
        planes = {}
        for channel, path in chans.items():
            surface, _ = extract_surface(load_stack(path), pp.smooth_radius)
            if channel == "rcm" and mask is not None:
                surface = inpaint(surface, mask, pp.inpaint_tol, pp.inpaint_max_iter)
            planes[channel] = normalize(surface, pp.normalize_lo, pp.normalize_hi)
        groups = [planes]
        if pp.crop_size:
            names = sorted(planes)
            crop_seed = derive_seed(cfg.seed, f"crop-{sample_id}")
            crops = random_crop_set([planes[n] for n in names], pp.crop_size,
                                    pp.crop_count, crop_seed)
            groups = [dict(zip(names, group)) for group in crops]
        patient_id = sample_id.split("_")[0]
        for i, group in enumerate(groups):
            sid = sample_id if len(groups) == 1 else f"{sample_id}_c{i:02d}"
            entry = {"patient_id": patient_id, "sample_id": sid}
            for channel, img in group.items():
                rel = f"images/{sid}_{channel}.tiff"
                save_gray16(img, out / rel)
                entry[channel] = rel
            entries.append(entry)
    write_manifest(entries, out / "manifest.jsonl")
    print(f"preprocessed {len(stacks)} stacks into {len(entries)} samples at {out}")
    return 0


def cmd_make_gt(args) -> int:
    cfg = load_config(args.config)
    manifest = Path(args.data)
    base = manifest.parent
    from .preprocess import read_manifest
    entries = read_manifest(manifest)
    updated = []
    for entry in entries:
        if "h" not in entry or "e" not in entry:
            raise ConfigError(f"manifest entry {entry.get('sample_id')} lacks h/e channels")
        h = to_float(load_gray(base / entry["h"]))
        e = to_float(load_gray(base / entry["e"]))
        rgb = beer_lambert_he(h, e, cfg.stain)
        rel = f"images/{entry['sample_id']}_rgb.png"
        save_rgb8(rgb, base / rel)
        entry = dict(entry)
        entry["rgb"] = rel
        updated.append(entry)
    write_manifest(updated, manifest)
    print(f"synthesized {len(updated)} ground-truth composites")
    return 0


def _split_from_config(manifest, cfg: RunConfig, exclude_file=None) -> DatasetSplit:
    exclude_ids = ()
    if exclude_file:
        exclude_ids = [line.strip() for line in Path(exclude_file).read_text().splitlines()
                       if line.strip()]
    samples = load_samples(manifest, exclude_ids=exclude_ids)
    if not samples:
        raise ConfigError(f"no usable samples in {manifest}")
    if cfg.split.test_patients:
        return build_dataset(samples, cfg.split.test_patients)
    return DatasetSplit(train=samples, test=[])


def _progress(rec):
    ev = f"{rec.eval_loss:.5f}" if np.isfinite(rec.eval_loss) else "n/a"
    print(f"epoch {rec.epoch:4d} [{rec.phase:5s}] eval_loss={ev}", file=sys.stderr)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    split = _split_from_config(args.data, cfg, exclude_file=args.exclude)
    out = Path(args.out)
    _write_run_info(out, cfg, "train")
    ckpt, history = train(split, cfg.training, cfg.model.gen_spec(),
                          cfg.model.disc_spec(), run_dir=out,
                          progress=_progress if not args.quiet else None)
    final = history.records[-1].eval_loss if history.records else float("nan")
    print(f"finished {cfg.training.total_epochs} epochs; final eval_loss="
          f"{final:.5f}; artifacts in {out}")
    return 0


def cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    src = Path(args.inputs)
    if src.is_dir():
        # a pipeline layout marks inputs with an _rcm suffix; otherwise take
        # every image file in the directory
        paths = sorted(p for p in src.iterdir() if p.stem.endswith("_rcm")
                       and p.suffix.lower() in (".tif", ".tiff", ".png"))
        if not paths:
            paths = sorted(p for p in src.iterdir()
                           if p.suffix.lower() in (".tif", ".tiff", ".png"))
    else:
        paths = [src]
    if not paths:
        raise ConfigError(f"no input images under {src}")
    images = [to_float(load_gray(p)) for p in paths]
    ids = [p.stem[:-4] if p.stem.endswith("_rcm") else p.stem for p in paths]
    infer(ckpt, images, out_dir=args.out, ids=ids)
    print(f"stained {len(images)} images into {args.out}")
    return 0


def _match_rgb(dir_path: Path) -> dict:
    return {p.stem.replace("_rgb", ""): p for p in sorted(dir_path.glob("*_rgb.png"))}


def cmd_evaluate(args) -> int:
    preds = _match_rgb(Path(args.predictions))
    targets = _match_rgb(Path(args.targets))
    common = sorted(set(preds) & set(targets))
    if not common:
        raise ConfigError("no matching *_rgb.png pairs between predictions and targets")
    report = evaluate_dataset([load_rgb(preds[k]) for k in common],
                              [load_rgb(targets[k]) for k in common],
                              ids=common, model_id=args.model_id)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_json(), indent=2))
    (out / "report.csv").write_text(report.to_csv())
    if args.baseline:
        base_raw = json.loads(Path(args.baseline).read_text())
        baseline = MetricReport(model_id=base_raw["model_id"],
                                image_ids=base_raw["image_ids"],
                                per_image=base_raw["per_image"],
                                means=base_raw["means"])
        tests = compare_models(report, baseline)
        (out / "paired_tests.json").write_text(json.dumps(
            [vars(t) for t in tests], indent=2))
        (out / "differences.csv").write_text(differences_csv(report, baseline))
    print(json.dumps(report.means, indent=2))
    return 0


ABLATION_RUNS = (
    ("baseline", {"ablation": "none"}),
    ("ablation1", {"ablation": "no_inout"}),
    ("ablation2", {"ablation": "no_dout", "alpha_policy": "fixed:0.5"}),
    ("ablation3", {"ablation": "no_dhde", "alpha_policy": "fixed:0.5"}),
    ("ablation4", {"ablation": "no_branches"}),
)


def _run_variant(split, cfg, overrides, run_dir, quiet) -> dict:
    tcfg = replace(cfg.training, **overrides)
    gen_spec = cfg.model.gen_spec()
    ckpt, history = train(split, tcfg, gen_spec, cfg.model.disc_spec(),
                          run_dir=run_dir, progress=None if quiet else _progress)
    row = {"eval_loss": history.records[-1].eval_loss}
    if split.test:
        outputs = infer(ckpt, [s.rcm for s in split.test],
                        out_dir=run_dir / "test_outputs",
                        ids=[s.sample_id or f"t{i:04d}" for i, s in enumerate(split.test)])
        preds = [rgb for _, _, rgb in outputs]
        gts = [s.rgb_target for s in split.test]
        row["mse"] = float(np.mean([mse(p, t) for p, t in zip(preds, gts)]))
        row["ssim"] = float(np.mean([ssim(p, t) for p, t in zip(preds, gts)]))
        row["vol"] = float(np.mean([vol(as_255(p)) for p in preds]))
    return row


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    split = _split_from_config(args.data, cfg)
    out = Path(args.out)
    _write_run_info(out, cfg, "ablate")
    table = {}
    for name, overrides in ABLATION_RUNS:
        if args.skip_baseline and name == "baseline":
            continue
        print(f"--- {name}: {overrides}", file=sys.stderr)
        table[name] = _run_variant(split, cfg, overrides, out / name, args.quiet)
    (out / "ablation_table.json").write_text(json.dumps(table, indent=2))
    cols = ["vol", "mse", "ssim", "eval_loss"]
    lines = ["run," + ",".join(cols)]
    for name, row in table.items():
        lines.append(name + "," + ",".join(f"{row.get(c, float('nan')):.6g}" for c in cols))
    (out / "ablation_table.csv").write_text("\n".join(lines) + "\n")
    print((out / "ablation_table.csv").read_text())
    return 0


def cmd_schedule_sweep(args) -> int:
    cfg = load_config(args.config)
    split = _split_from_config(args.data, cfg)
    out = Path(args.out)
    _write_run_info(out, cfg, "schedule-sweep")
    n_values = [int(v) for v in args.n_values.split(",") if v.strip()]
    if not n_values:
        raise ConfigError("need at least one alternation period in --n-values")
    curves = {}
    for n in n_values:
        tcfg = replace(cfg.training, n_alternate=n, ablation="none",
                       alpha_policy="alternating")
        _, history = train(split, tcfg, cfg.model.gen_spec(), cfg.model.disc_spec(),
                           run_dir=out / f"n{n}",
                           progress=None if args.quiet else _progress)
        curves[n] = history.eval_curve()
    epochs = max(len(c) for c in curves.values())
    lines = ["epoch," + ",".join(f"n{n}" for n in n_values)]
    for i in range(epochs):
        row = [str(i + 1)]
        for n in n_values:
            row.append(f"{curves[n][i]:.9g}" if i < len(curves[n]) else "")
        lines.append(",".join(row))
    (out / "eval_loss_curves.csv").write_text("\n".join(lines) + "\n")
    print(f"swept n in {n_values}; curves in {out / 'eval_loss_curves.csv'}")
    return 0


def cmd_audit(args) -> int:
    cfg = load_config(args.config)
    gen_spec = cfg.model.gen_spec()
    assembly = build_assembly(cfg.training, gen_spec, cfg.model.disc_spec())
    configured = audit_params(assembly)

    ref_gen = GeneratorSpec(in_channels=3, out_channels=3, levels=8, base_width=64)
    ref_gen_count = generator_param_count(ref_gen)
    ref_disc_count = discriminator_param_count(DiscriminatorSpec(in_channels=6))
    abl4_count = generator_param_count(
        GeneratorSpec(in_channels=1, out_channels=3, levels=8, base_width=64))

    report = {
        "configured": {
            "components": configured.components,
            "generator_side_total": configured.generator_side_total,
            "total": configured.total,
            "generator_gmacs": generator_macs(gen_spec, cfg.phantom.image_size) / 1e9,
        },
        "reference_full_scale": {
            "generator": ref_gen_count,
            "generator_side_total": 2 * ref_gen_count + 6,
            "discriminator": ref_disc_count,
            "single_branch_generator": abl4_count,
            "generator_gmacs_256": generator_macs(ref_gen, 256) / 1e9,
        },
    }
    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="rcm2he", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    data_env = os.environ.get("RCM2HE_DATA_DIR")
    runs_env = os.environ.get("RCM2HE_RUNS_DIR")

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(fn=fn)
        return p

    p = add("synth", cmd_synth, help="generate a phantom corpus and manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=runs_env is None, default=runs_env)

    p = add("preprocess", cmd_preprocess, help="stacks to training-ready channels")
    p.add_argument("--config", required=True)
    p.add_argument("--stacks", required=True, help="directory of <sample>_<channel>.tif stacks")
    p.add_argument("--mask", help="artifact mask PNG (nonzero = inpaint)")
    p.add_argument("--calibration", help="calibration image to threshold into a mask")
    p.add_argument("--out", required=runs_env is None, default=runs_env)

    p = add("make-gt", cmd_make_gt, help="compose RGB ground truth from channels")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=data_env is None, default=data_env,
                   help="manifest.jsonl with h/e entries")

    p = add("train", cmd_train, help="train on a manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=data_env is None, default=data_env)
    p.add_argument("--out", required=runs_env is None, default=runs_env)
    p.add_argument("--exclude", help="file of sample ids to drop, one per line")
    p.add_argument("--quiet", action="store_true")

    p = add("infer", cmd_infer, help="stain grayscale images with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--inputs", required=True, help="image file or directory")
    p.add_argument("--out", required=runs_env is None, default=runs_env)

    p = add("evaluate", cmd_evaluate, help="metric report for matched *_rgb.png sets")
    p.add_argument("--predictions", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--out", required=runs_env is None, default=runs_env)
    p.add_argument("--model-id", default="model")
    p.add_argument("--baseline", help="report.json of another model: adds paired "
                                      "t tests and per-image difference columns")

    p = add("ablate", cmd_ablate, help="run the component-removal matrix")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=data_env is None, default=data_env)
    p.add_argument("--out", required=runs_env is None, default=runs_env)
    p.add_argument("--skip-baseline", action="store_true")
    p.add_argument("--quiet", action="store_true")

    p = add("schedule-sweep", cmd_schedule_sweep, help="train across alternation periods")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=data_env is None, default=data_env)
    p.add_argument("--out", required=runs_env is None, default=runs_env)
    p.add_argument("--n-values", required=True, help="comma-separated, e.g. 10,50,200")
    p.add_argument("--quiet", action="store_true")

    p = add("audit", cmd_audit, help="parameter and complexity report")
    p.add_argument("--config", required=True)
    p.add_argument("--out")

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergedError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
