"""Command-line orchestration for the whole pipeline.

Stage graph: synth -> preprocess -> pretrain-cmr -> pretrain-align ->
{train-diffusion, finetune} -> {generate, predict, evaluate, gradcam,
label-efficiency}. Every command resolves its config (file + --set
overrides), verifies its prerequisites by name, writes outputs under
--out, and emits exactly one run manifest.

Exit codes: 0 success, 2 config error, 3 missing prerequisite,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .alignment import AlignConfig, AlignTrainConfig, load_align_model, train_alignment
from .checkpoint import load_checkpoint, save_checkpoint
from .cohort.dataset import CohortDataset
from .cohort.generate import GeneratorConfig, generate_cohort
from .cohort.latents import LabelThresholds
from .cohort.cmr_synth import CmrSynthConfig
from .cohort.ecg_synth import EcgSynthConfig
from .config import ConfigError, apply_overrides, config_schema, load_config
from .dataio import TrainingData
from .diffusion import (
    AutoencoderTrainConfig,
    DiffusionTrainConfig,
    ddim_sample,
    linear_beta_schedule,
    load_autoencoder_ckpt,
    load_unet,
    train_autoencoder,
    train_diffusion,
)
from .downstream import (
    FinetuneConfig,
    TaskSpec,
    finetune,
    grad_cam_ecg,
    load_finetuned,
    predict_scores,
    task_targets,
)
from .harness import (
    evaluate_classification,
    evaluate_regression,
    label_efficiency_curve,
)
from .manifest import ManifestWriter
from .models.autoencoder import AutoencoderConfig
from .models.unet import UNetConfig
from .preprocess.runner import preprocess_cohort
from .seeding import subseed
from .ssl import SslConfig, SslTrainConfig, train_ssl
from .trainutil import NumericError, freeze

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4


class MissingPrerequisite(RuntimeError):
    pass


def _require(path: Path, what: str) -> Path:
    if not Path(path).exists():
        raise MissingPrerequisite(
            f"missing prerequisite: {what} (expected at {path})")
    return Path(path)


def _generator_config(cfg: dict) -> GeneratorConfig:
    c = cfg["cohort"]
    return GeneratorConfig(
        ecg=EcgSynthConfig(length=c["ecg_len"], sample_rate=c["sample_rate"]),
        cmr=CmrSynthConfig(frames=c["frames"], image_size=c["image_size"]),
        thresholds=LabelThresholds(
            hypertrophic_lvm=c["hypertrophic_lvm"],
            dilated_rvedv=c["dilated_rvedv"],
            restrictive_lvm=c["restrictive_lvm"],
            restrictive_rvedv=c["restrictive_rvedv"]),
        n_phenotypes=c["n_phenotypes"],
        ratios=tuple(c["ratios"]))


# ---------------------------------------------------------------------------
# stages (shared by single commands and the pipeline command)
# ---------------------------------------------------------------------------

def stage_synth(cfg, seed, out: Path) -> Path:
    cohort_dir = out / "cohort"
    generate_cohort(cfg["cohort"]["n"], subseed(seed, "synth"),
                    _generator_config(cfg), cohort_dir)
    return cohort_dir


def stage_preprocess(cfg, out: Path, cohort_dir: Path, modality="both",
                     in_place=False) -> Path:
    _require(cohort_dir, "cohort directory (run `synth`)")
    dst = out / "preprocessed"
    return preprocess_cohort(cohort_dir, dst, cfg["preprocess"],
                             modality=modality, in_place=in_place)


def _training_data(cfg, seed, data_dir: Path) -> TrainingData:
    return TrainingData(CohortDataset(data_dir), cfg["transform"], seed)


def stage_pretrain_cmr(cfg, seed, out: Path, data_dir: Path) -> Path:
    _require(data_dir, "preprocessed cohort (run `preprocess`)")
    data = _training_data(cfg, seed, data_dir)
    s = cfg["ssl"]
    train_cfg = SslTrainConfig(
        epochs=s["epochs"], batch_size=s["batch_size"], peak_lr=s["peak_lr"],
        warmup_frac=s["warmup_frac"], seed=subseed(seed, "ssl"),
        model=SslConfig(
            image_size=cfg["transform"]["out_size"],
            patch_size=s["patch_size"], window_size=s["window_size"],
            frames=cfg["cohort"]["frames"], depths=tuple(s["depths"]),
            dims=tuple(s["dims"]), heads=tuple(s["heads"]),
            mask_ratio=s["mask_ratio"], temperature=s["temperature"],
            contrast_weight=s["contrast_weight"], proj_dim=s["proj_dim"],
            decoder_hidden=s["decoder_hidden"],
            share_weights=s["share_weights"]))
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    path = ckpt_dir / "ssl.ckpt"
    ds = data.dataset
    train_ssl(data.eval_clip_loader(), ds.ids("train"), ds.ids("val"),
              train_cfg, path)
    return path


def stage_pretrain_align(cfg, seed, out: Path, data_dir: Path,
                         ssl_ckpt: Path) -> Path:
    _require(data_dir, "preprocessed cohort (run `preprocess`)")
    _require(ssl_ckpt, "SSL checkpoint (run `pretrain-cmr`)")
    data = _training_data(cfg, seed, data_dir)
    a = cfg["align"]
    train_cfg = AlignTrainConfig(
        epochs=a["epochs"], batch_size=a["batch_size"], peak_lr=a["peak_lr"],
        warmup_frac=a["warmup_frac"], seed=subseed(seed, "align"),
        model=AlignConfig(
            ecg_length=cfg["cohort"]["ecg_len"], patch_width=a["patch_width"],
            depth=a["depth"], dim=a["dim"], heads=a["heads"],
            proj_dim=a["proj_dim"], temperature=a["temperature"]))
    path = out / "checkpoints" / "align.ckpt"
    path.parent.mkdir(parents=True, exist_ok=True)
    ds = data.dataset
    train_alignment(data.align_batch, ds.ids("train"), ds.ids("val"),
                    ssl_ckpt, train_cfg, path)
    return path


def _frozen_ecg_encoder(align_ckpt: Path):
    kind, meta, params = load_checkpoint(align_ckpt)
    if kind != "align":
        raise MissingPrerequisite(
            f"{align_ckpt} is a {kind!r} checkpoint, expected align")
    model = load_align_model(meta, params)
    return freeze(model.ecg)


def _precompute_cond(ecg_encoder, data: TrainingData, ids, batch=16) -> dict:
    out = {}
    with torch.no_grad():
        for i in range(0, len(ids), batch):
            chunk = ids[i:i + batch]
            tokens = ecg_encoder.tokens(data.ecg_eval_batch(chunk))
            for sid, tok in zip(chunk, tokens):
                out[sid] = tok
    return out


def _precompute_z0(ae, data: TrainingData, ids, view, batch=16) -> dict:
    out = {}
    with torch.no_grad():
        for i in range(0, len(ids), batch):
            chunk = ids[i:i + batch]
            z = ae.encode(data.clip_eval_batch(chunk, view))
            for sid, zi in zip(chunk, z):
                out[sid] = zi
    return out


def stage_train_diffusion(cfg, seed, out: Path, data_dir: Path,
                          align_ckpt: Path, view: str) -> dict:
    _require(data_dir, "preprocessed cohort (run `preprocess`)")
    _require(align_ckpt, "alignment checkpoint (run `pretrain-align`)")
    data = _training_data(cfg, seed, data_dir)
    ds = data.dataset
    short = "sa" if view == "short_axis" else "la"
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)

    ecg_encoder = _frozen_ecg_encoder(align_ckpt)

    ae_path = ckpt_dir / f"autoencoder_{short}.ckpt"
    acfg = cfg["autoencoder"]
    if not ae_path.exists():
        ae, report = train_autoencoder(
            data.eval_clip_loader(), ds.ids("train"), ds.ids("val"), view,
            AutoencoderTrainConfig(
                epochs=acfg["epochs"], batch_size=acfg["batch_size"],
                lr=acfg["lr"], target_mse=acfg["target_mse"],
                seed=subseed(seed, "ae", view),
                model=AutoencoderConfig(
                    downsample=acfg["downsample"],
                    latent_channels=acfg["latent_channels"],
                    base_channels=acfg["base_channels"])))
        from .trainutil import state_to_numpy
        save_checkpoint(ae_path, "autoencoder",
                        {"config": {"model": {
                            "downsample": acfg["downsample"],
                            "latent_channels": acfg["latent_channels"],
                            "base_channels": acfg["base_channels"]}},
                         "view": view, "report": report},
                        state_to_numpy(ae))
    ae = load_autoencoder_ckpt(ae_path)

    d = cfg["diffusion"]
    ids = ds.ids("train") + ds.ids("val")
    cond = _precompute_cond(ecg_encoder, data, ids)
    z0 = _precompute_z0(ae, data, ids, view)
    diff_path = ckpt_dir / f"diffusion_{short}.ckpt"
    from .manifest import artifact_hash
    train_diffusion(
        z0, cond, ds.ids("train"), ds.ids("val"), view,
        DiffusionTrainConfig(
            n_steps=d["timesteps"], epochs=d["epochs"],
            batch_size=d["batch_size"], lr=d["lr"],
            seed=subseed(seed, "diffusion", view),
            unet=UNetConfig(
                latent_channels=acfg["latent_channels"],
                base_channels=d["base_channels"],
                channel_mults=tuple(d["channel_mults"]),
                cond_dim=cfg["align"]["dim"], attn_dim=d["attn_dim"],
                heads=d["heads"], time_dim=d["time_dim"])),
        diff_path,
        frozen_modules={"ecg_encoder": ecg_encoder, "autoencoder": ae},
        refs={"align_ckpt": artifact_hash(align_ckpt),
              "autoencoder_ckpt": artifact_hash(ae_path)})
    return {"autoencoder": ae_path, "diffusion": diff_path}


def stage_generate(cfg, seed, out: Path, data_dir: Path, align_ckpt: Path,
                   view: str, subject_ids, steps=None, eta=None,
                   png=False) -> Path:
    short = "sa" if view == "short_axis" else "la"
    diff_path = _require(out / "checkpoints" / f"diffusion_{short}.ckpt",
                         f"diffusion checkpoint for {view} "
                         "(run `train-diffusion`)")
    ae_path = _require(out / "checkpoints" / f"autoencoder_{short}.ckpt",
                       f"autoencoder checkpoint for {view}")
    _require(align_ckpt, "alignment checkpoint (run `pretrain-align`)")
    data = _training_data(cfg, seed, data_dir)

    kind, meta, params = load_checkpoint(diff_path)
    unet = freeze(load_unet(meta, params))
    ae = load_autoencoder_ckpt(ae_path)
    ecg_encoder = _frozen_ecg_encoder(align_ckpt)
    schedule = linear_beta_schedule(meta["config"]["n_steps"])
    n_ddim = steps or cfg["diffusion"]["ddim_steps"]
    use_eta = cfg["diffusion"]["eta"] if eta is None else eta

    size = cfg["transform"]["out_size"]
    ds_factor = ae.cfg.downsample
    latent_shape = (cfg["cohort"]["frames"], ae.cfg.latent_channels,
                    size // ds_factor, size // ds_factor)

    gen_dir = out / "generated" / short
    gen_dir.mkdir(parents=True, exist_ok=True)
    shapes = {}
    batch = 16
    for i in range(0, len(subject_ids), batch):
        chunk = subject_ids[i:i + batch]
        with torch.no_grad():
            cond = ecg_encoder.tokens(data.ecg_eval_batch(chunk))
            clips = ddim_sample(unet, cond, schedule, n_ddim, use_eta,
                                seed=subseed(seed, "generate", i),
                                latent_shape=latent_shape, ae=ae)
        for sid, clip in zip(chunk, clips):
            arr = clip.numpy().astype("<f4")
            fname = f"{sid}_gen.bin"
            (gen_dir / fname).write_bytes(arr.tobytes())
            shapes[fname] = {"shape": list(arr.shape), "dtype": "float32"}
            if png:
                _dump_png(gen_dir / f"{sid}_gen.png", arr)
    (gen_dir / "shapes.json").write_text(json.dumps(shapes, sort_keys=True,
                                                    indent=1))
    (gen_dir / "generation.json").write_text(json.dumps({
        "view": view, "steps": n_ddim, "eta": use_eta, "seed": seed,
        "subjects": list(subject_ids)}, sort_keys=True, indent=1))
    return gen_dir


def _dump_png(path: Path, clip: np.ndarray):
    from PIL import Image
    frames = np.clip(clip * 0.5 + 0.5, 0.0, 1.0)  # undo normalization
    strip = np.concatenate(list(frames), axis=1)
    Image.fromarray((strip * 255).astype(np.uint8)).save(path)


def _task_from_config(cfg) -> TaskSpec:
    f = cfg["finetune"]
    if f["task"] == "disease_binary":
        return TaskSpec(kind="binary_classification",
                        label_field="disease_binary",
                        train_fraction=f["fraction"], balance=f["balance"])
    if f["task"] == "disease_class":
        return TaskSpec(kind="multiclass_classification",
                        label_field="disease_class", n_classes=4,
                        train_fraction=f["fraction"], balance=f["balance"])
    if f["task"] == "phenotypes":
        return TaskSpec(kind="regression",
                        phenotype_indices=tuple(f["phenotype_indices"]),
                        train_fraction=f["fraction"])
    raise ConfigError(f"unknown finetune.task {f['task']!r}")


def stage_finetune(cfg, seed, out: Path, data_dir: Path, align_ckpt: Path,
                   name: str | None = None, fraction=None,
                   scratch=None) -> Path:
    _require(data_dir, "preprocessed cohort (run `preprocess`)")
    _require(align_ckpt, "alignment checkpoint (run `pretrain-align`)")
    data = _training_data(cfg, seed, data_dir)
    f = cfg["finetune"]
    task = _task_from_config(cfg)
    if fraction is not None:
        task.train_fraction = fraction
    use_scratch = f["scratch"] if scratch is None else scratch
    run_cfg = FinetuneConfig(
        max_epochs=f["max_epochs"], warmup_epochs=f["warmup_epochs"],
        peak_lr=f["peak_lr"], batch_size=f["batch_size"],
        patience=f["patience"], seed=subseed(seed, "finetune"))
    label = name or f["task"] + ("_scratch" if use_scratch else "")
    path = out / "checkpoints" / f"finetune_{label}.ckpt"
    path.parent.mkdir(parents=True, exist_ok=True)
    finetune(task, align_ckpt, data.finetune_batch, data.dataset, run_cfg,
             path, scratch=use_scratch)
    return path


def stage_evaluate(cfg, seed, out: Path, data_dir: Path, ckpt: Path,
                   split="test") -> Path:
    _require(data_dir, "preprocessed cohort")
    _require(ckpt, "finetuned checkpoint (run `finetune`)")
    data = _training_data(cfg, seed, data_dir)
    ds = data.dataset
    model = load_finetuned(ckpt)
    ids = ds.ids(split)
    ecg, cov = data.finetune_batch(ids, "eval")
    scores = predict_scores(model, ecg, cov)
    targets = task_targets(ds, model.task, ids)

    e = cfg["evaluate"]
    if model.task.kind == "binary_classification":
        report = evaluate_classification(
            scores[:, 1], targets, task_id=f"{model.task.label_field}:{split}",
            threshold=e["threshold"], confidence=e["confidence"],
            n_boot=e["bootstrap_b"], seed=subseed(seed, "evaluate"))
    elif model.task.kind == "multiclass_classification":
        from .stats import one_vs_rest, roc_auc
        binary = one_vs_rest(targets.astype(int), model.task.n_classes)
        report = evaluate_classification(
            scores[:, 1], binary[1],
            task_id=f"{model.task.label_field}:ovr1:{split}",
            threshold=e["threshold"], confidence=e["confidence"],
            n_boot=e["bootstrap_b"], seed=subseed(seed, "evaluate"))
        macro = float(np.mean([
            roc_auc(scores[:, k], binary[k])
            for k in range(model.task.n_classes)
            if 0 < binary[k].sum() < len(ids)]))
        report.add_metric("macro_auc_ovr", macro)
    else:
        report = evaluate_regression(
            scores, targets, task_id=f"phenotypes:{split}",
            confidence=e["confidence"], n_boot=e["bootstrap_b"],
            seed=subseed(seed, "evaluate"))

    rep_dir = out / "reports"
    rep_dir.mkdir(parents=True, exist_ok=True)
    stem = rep_dir / f"metrics_{ckpt.stem}_{split}"
    json_path = stem.with_suffix(".json")
    json_path.write_text(report.to_json())
    with open(stem.with_suffix(".csv"), "w", newline="") as fh:
        csv.writer(fh).writerows(report.csv_rows())
    return json_path


# ---------------------------------------------------------------------------
# argument parsing / dispatch
# ---------------------------------------------------------------------------

def _common(parser):
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--set", action="append", default=[], metavar="K=V",
                        help="config override, repeatable")
    parser.add_argument("--seed", type=int,
                        default=int(os.environ.get("ECGCMR_SEED", "0")))
    parser.add_argument("--out", default=os.environ.get("ECGCMR_OUT", "runs"),
                        help="output root directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ecgcmr",
        description="cross-modal ECG-CMR pipeline on a synthetic cohort")
    sub = ap.add_subparsers(dest="command", required=True)

    for name, extra in {
        "synth": [],
        "preprocess": [("--cohort", {}), ("--modality", {"default": "both"}),
                       ("--in-place", {"action": "store_true"})],
        "pretrain-cmr": [("--data", {})],
        "pretrain-align": [("--data", {}), ("--ssl-ckpt", {})],
        "train-diffusion": [("--data", {}), ("--align-ckpt", {}),
                            ("--view", {"choices": ["la", "sa"],
                                        "required": True})],
        "generate": [("--data", {}), ("--align-ckpt", {}),
                     ("--view", {"choices": ["la", "sa"], "required": True}),
                     ("--ecg", {"help": "sample id; default: test split"}),
                     ("--count", {"type": int, "default": 0}),
                     ("--steps", {"type": int}), ("--eta", {"type": float}),
                     ("--png", {"action": "store_true"})],
        "finetune": [("--data", {}), ("--align-ckpt", {}),
                     ("--name", {}), ("--fraction", {"type": float}),
                     ("--scratch", {"action": "store_true", "default": None})],
        "predict": [("--data", {}), ("--ckpt", {"required": True}),
                    ("--split", {"default": "test"})],
        "evaluate": [("--data", {}), ("--ckpt", {"required": True}),
                     ("--split", {"default": "test"})],
        "gradcam": [("--data", {}), ("--ckpt", {"required": True}),
                    ("--sample", {"required": True}),
                    ("--target-class", {"type": int, "default": 1}),
                    ("--png", {"action": "store_true"})],
        "label-efficiency": [("--data", {}), ("--align-ckpt", {}),
                             ("--fractions", {"default": "0.1,0.25,0.5,1.0"}),
                             ("--seeds", {"type": int, "default": 3}),
                             ("--scratch", {"action": "store_true",
                                            "default": False})],
        "pipeline": [],
        "schema": [],
    }.items():
        p = sub.add_parser(name)
        _common(p)
        for flag, kw in extra:
            p.add_argument(flag, **kw)
    return ap


def _resolve(args):
    cfg = load_config(args.config)
    apply_overrides(cfg, args.set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _default_data(args, out: Path) -> Path:
    return Path(args.data) if getattr(args, "data", None) else out / "preprocessed"


def _default_align(args, out: Path) -> Path:
    return (Path(args.align_ckpt) if getattr(args, "align_ckpt", None)
            else out / "checkpoints" / "align.ckpt")


def run_command(args) -> int:
    if args.command == "schema":
        print(config_schema())
        return EXIT_OK

    cfg, out = _resolve(args)
    writer = ManifestWriter(args.command, args.seed, cfg, out)
    m = writer.manifest

    if args.command == "synth":
        cohort = stage_synth(cfg, args.seed, out)
        m.add_output(cohort)

    elif args.command == "preprocess":
        cohort = Path(args.cohort) if args.cohort else out / "cohort"
        m.add_input(_require(cohort, "cohort directory (run `synth`)"))
        dst = stage_preprocess(cfg, out, cohort, modality=args.modality,
                               in_place=args.in_place)
        m.add_output(dst)

    elif args.command == "pretrain-cmr":
        data_dir = _default_data(args, out)
        m.add_input(_require(data_dir, "preprocessed cohort (run `preprocess`)"))
        path = stage_pretrain_cmr(cfg, args.seed, out, data_dir)
        m.add_output(path)

    elif args.command == "pretrain-align":
        data_dir = _default_data(args, out)
        ssl_ckpt = (Path(args.ssl_ckpt) if args.ssl_ckpt
                    else out / "checkpoints" / "ssl.ckpt")
        m.add_input(_require(data_dir, "preprocessed cohort (run `preprocess`)"))
        m.add_input(_require(ssl_ckpt, "SSL checkpoint (run `pretrain-cmr`)"))
        path = stage_pretrain_align(cfg, args.seed, out, data_dir, ssl_ckpt)
        m.add_output(path)

    elif args.command == "train-diffusion":
        data_dir = _default_data(args, out)
        align_ckpt = _default_align(args, out)
        view = "short_axis" if args.view == "sa" else "long_axis"
        m.add_input(_require(data_dir, "preprocessed cohort (run `preprocess`)"))
        m.add_input(_require(align_ckpt,
                             "alignment checkpoint (run `pretrain-align`)"))
        paths = stage_train_diffusion(cfg, args.seed, out, data_dir,
                                      align_ckpt, view)
        for p in paths.values():
            m.add_output(p)

    elif args.command == "generate":
        data_dir = _default_data(args, out)
        align_ckpt = _default_align(args, out)
        view = "short_axis" if args.view == "sa" else "long_axis"
        m.add_input(_require(data_dir, "preprocessed cohort"))
        ds = CohortDataset(data_dir)
        if args.ecg:
            subjects = [args.ecg]
        else:
            subjects = ds.ids("test")
            if args.count:
                subjects = subjects[:args.count]
        gen_dir = stage_generate(cfg, args.seed, out, data_dir, align_ckpt,
                                 view, subjects, steps=args.steps,
                                 eta=args.eta, png=args.png)
        m.add_output(gen_dir)

    elif args.command == "finetune":
        data_dir = _default_data(args, out)
        align_ckpt = _default_align(args, out)
        m.add_input(_require(data_dir, "preprocessed cohort (run `preprocess`)"))
        m.add_input(_require(align_ckpt,
                             "alignment checkpoint (run `pretrain-align`)"))
        path = stage_finetune(cfg, args.seed, out, data_dir, align_ckpt,
                              name=args.name, fraction=args.fraction,
                              scratch=args.scratch)
        m.add_output(path)

    elif args.command == "predict":
        data_dir = _default_data(args, out)
        ckpt = _require(Path(args.ckpt), "finetuned checkpoint")
        m.add_input(data_dir)
        m.add_input(ckpt)
        data = _training_data(cfg, args.seed, data_dir)
        model = load_finetuned(ckpt)
        ids = data.dataset.ids(args.split)
        ecg, cov = data.finetune_batch(ids, "eval")
        scores = predict_scores(model, ecg, cov)
        pred_dir = out / "reports"
        pred_dir.mkdir(parents=True, exist_ok=True)
        path = pred_dir / f"predictions_{ckpt.stem}_{args.split}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id"] + [f"score_{i}"
                                        for i in range(scores.shape[1])])
            for sid, row in zip(ids, scores):
                w.writerow([sid] + [f"{v:.8g}" for v in row])
        m.add_output(path)

    elif args.command == "evaluate":
        data_dir = _default_data(args, out)
        ckpt = _require(Path(args.ckpt), "finetuned checkpoint")
        m.add_input(data_dir)
        m.add_input(ckpt)
        path = stage_evaluate(cfg, args.seed, out, data_dir, ckpt,
                              split=args.split)
        m.add_output(path)

    elif args.command == "gradcam":
        data_dir = _default_data(args, out)
        ckpt = _require(Path(args.ckpt), "finetuned checkpoint")
        m.add_input(data_dir)
        m.add_input(ckpt)
        data = _training_data(cfg, args.seed, data_dir)
        model = load_finetuned(ckpt)
        ecg, cov = data.finetune_batch([args.sample], "eval")
        heatmap = grad_cam_ecg(model, ecg, cov, args.target_class)
        hm_dir = out / "heatmaps"
        hm_dir.mkdir(parents=True, exist_ok=True)
        path = hm_dir / f"gradcam_{args.sample}.csv"
        np.savetxt(path, heatmap.values, delimiter=",", fmt="%.6g")
        if args.png:
            from PIL import Image
            img = (heatmap.values * 255).astype(np.uint8)
            img = np.repeat(img, 16, axis=0)  # visible lead rows
            Image.fromarray(img).save(hm_dir / f"gradcam_{args.sample}.png")
        m.add_output(path)

    elif args.command == "label-efficiency":
        data_dir = _default_data(args, out)
        align_ckpt = _default_align(args, out)
        m.add_input(_require(data_dir, "preprocessed cohort"))
        m.add_input(_require(align_ckpt,
                             "alignment checkpoint (run `pretrain-align`)"))
        fractions = [float(f) for f in args.fractions.split(",")]
        data = _training_data(cfg, args.seed, data_dir)
        targets = task_targets(data.dataset, _task_from_config(cfg),
                               data.dataset.ids("test"))

        def run_cell(fraction, seed_idx):
            path = stage_finetune(
                cfg, subseed(args.seed, "le", seed_idx), out, data_dir,
                align_ckpt, name=f"le_{fraction}_{seed_idx}",
                fraction=fraction, scratch=args.scratch)
            model = load_finetuned(path)
            ids = data.dataset.ids("test")
            ecg, cov = data.finetune_batch(ids, "eval")
            scores = predict_scores(model, ecg, cov)
            from .stats import roc_auc
            return roc_auc(scores[:, 1], targets)

        rows = label_efficiency_curve(fractions, range(args.seeds), run_cell)
        rep_dir = out / "reports"
        rep_dir.mkdir(parents=True, exist_ok=True)
        path = rep_dir / ("label_efficiency_scratch.csv" if args.scratch
                          else "label_efficiency.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fraction", "median", "ci_lo", "ci_hi", "values"])
            for row in rows:
                w.writerow([row["fraction"], row["median"], row["ci"][0],
                            row["ci"][1], ";".join(map(str, row["values"]))])
        m.add_output(path)

    elif args.command == "pipeline":
        # seven stages, one manifest each
        cohort = stage_synth(cfg, args.seed, out)
        writer_sub(out, "synth", args.seed, cfg, outputs=[cohort])
        pre = stage_preprocess(cfg, out, cohort)
        writer_sub(out, "preprocess", args.seed, cfg, inputs=[cohort],
                   outputs=[pre])
        ssl_ckpt = stage_pretrain_cmr(cfg, args.seed, out, pre)
        writer_sub(out, "pretrain-cmr", args.seed, cfg, inputs=[pre],
                   outputs=[ssl_ckpt])
        align_ckpt = stage_pretrain_align(cfg, args.seed, out, pre, ssl_ckpt)
        writer_sub(out, "pretrain-align", args.seed, cfg,
                   inputs=[pre, ssl_ckpt], outputs=[align_ckpt])
        ft_ckpt = stage_finetune(cfg, args.seed, out, pre, align_ckpt)
        writer_sub(out, "finetune", args.seed, cfg,
                   inputs=[pre, align_ckpt], outputs=[ft_ckpt])
        diff = stage_train_diffusion(cfg, args.seed, out, pre, align_ckpt,
                                     "short_axis")
        writer_sub(out, "train-diffusion", args.seed, cfg,
                   inputs=[pre, align_ckpt], outputs=list(diff.values()))
        report = stage_evaluate(cfg, args.seed, out, pre, ft_ckpt)
        writer_sub(out, "evaluate", args.seed, cfg,
                   inputs=[pre, ft_ckpt], outputs=[report])
        print(f"[pipeline] done; 7 stage manifests under {out / 'manifests'}")
        return EXIT_OK

    else:  # pragma: no cover
        raise ConfigError(f"unknown command {args.command}")

    path = writer.finish()
    print(f"[{args.command}] done; manifest at {path}")
    return EXIT_OK


def writer_sub(out: Path, command: str, seed: int, cfg: dict, inputs=(),
               outputs=()):
    """Emit a stage manifest from within the pipeline command."""
    w = ManifestWriter(command, seed, cfg, out)
    for p in inputs:
        w.manifest.add_input(p)
    for p in outputs:
        w.manifest.add_output(p)
    w.finish()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run_command(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingPrerequisite as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_MISSING
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
