"""Command-line surface: gen-data, train, align, eval, report.

Values resolve as builtin defaults < --config JSON file < explicit
flags. Every run is deterministic given (config, seed); exit codes are
0 success, 2 config error, 3 IO error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import audio as audio_mod
from . import autodiff as ad
from . import infer, metrics, model, synth
from .features import FeatureSequence, read_features, write_features_text
from .seeding import rng_for

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def worker_count() -> int:
    """Parallelism cap from CHRONOALIGN_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("CHRONOALIGN_THREADS", "1")))
    except ValueError:
        return 1


def _resolve(defaults: dict, args: argparse.Namespace) -> dict:
    """builtin defaults, overridden by --config file, overridden by flags."""
    given = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path) as f:
            file_values = json.load(f)
        unknown = set(file_values) - set(defaults)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_values)
    merged.update(given)
    return merged


def _log_resolved(resolved: dict, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved_config.json"), "w") as f:
        json.dump(resolved, f, indent=2, sort_keys=True, default=str)
        f.write("\n")


# ---------------------------------------------------------------------------
# SVG plotting (no plotting dependency; static polyline/rect documents)

def _svg_document(body: str, width: int = 640, height: int = 420) -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">\n'
            f'<rect width="{width}" height="{height}" fill="white"/>\n'
            f"{body}</svg>\n")


def _polyline(xs, ys, color: str, width: int = 640, height: int = 420,
              pad: int = 30, bounds=None) -> str:
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    x_lo, x_hi, y_lo, y_hi = bounds
    sx = (width - 2 * pad) / max(x_hi - x_lo, 1e-9)
    sy = (height - 2 * pad) / max(y_hi - y_lo, 1e-9)
    pts = " ".join(f"{pad + (x - x_lo) * sx:.1f},{height - pad - (y - y_lo) * sy:.1f}"
                   for x, y in zip(xs, ys))
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>\n'


def write_alignment_svg(predicted, truth, path) -> None:
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    xs = np.arange(len(predicted))
    keep = truth != synth.SENTINEL
    ys = np.concatenate([predicted, truth[keep]])
    bounds = (0, max(len(predicted) - 1, 1), float(ys.min()), float(ys.max()))
    body = _polyline(xs, predicted, "#d62728", bounds=bounds)
    if keep.any():
        body += _polyline(xs[keep], truth[keep], "#1f77b4", bounds=bounds)
    with open(path, "w") as f:
        f.write(_svg_document(body))


def write_error_histogram_svg(errors, path) -> None:
    errors = np.asarray(errors, dtype=np.int64)
    hi = int(errors.max()) if errors.size else 0
    counts = np.bincount(errors, minlength=hi + 1)
    width, height, pad = 640, 420, 30
    bar_w = (width - 2 * pad) / max(len(counts), 1)
    top = max(int(counts.max()), 1)
    body = ""
    for i, c in enumerate(counts):
        h = (height - 2 * pad) * c / top
        body += (f'<rect x="{pad + i * bar_w:.1f}" y="{height - pad - h:.1f}" '
                 f'width="{max(bar_w - 2, 1):.1f}" height="{h:.1f}" fill="#1f77b4"/>\n')
    # zero-height outline polyline keeps the plot parseable for curve checks
    body += _polyline(np.arange(len(counts)), counts, "#d62728",
                      bounds=(0, max(len(counts) - 1, 1), 0, top))
    with open(path, "w") as f:
        f.write(_svg_document(body))


# ---------------------------------------------------------------------------
# gen-data

GEN_DEFAULTS = {
    "seed": 0, "n_train": 2000, "n_val": 200, "n_test": 200,
    "n_symbols": 24, "video_dim": 16, "audio_dim": 16, "noise_sigma": 0.05,
    "p_drop": 0.12, "p_dup": 0.12, "self_transition": 0.7, "pair_frames": 120,
    "out": None,
}


def cmd_gen_data(args) -> int:
    r = _resolve(GEN_DEFAULTS, args)
    if r["out"] is None:
        raise ValueError("gen-data needs --out")
    if min(r["n_train"], r["n_val"], r["n_test"]) <= 0:
        raise ValueError("split sizes must be positive")
    config = synth.DatasetConfig(
        dataset_seed=r["seed"], n_symbols=r["n_symbols"], video_dim=r["video_dim"],
        audio_dim=r["audio_dim"], noise_sigma=r["noise_sigma"], p_drop=r["p_drop"],
        p_dup=r["p_dup"], self_transition=r["self_transition"],
        pair_frames=r["pair_frames"], n_train=r["n_train"], n_val=r["n_val"],
        n_test=r["n_test"])
    _log_resolved(r, r["out"])
    synth.write_manifest(config, os.path.join(r["out"], "manifest.json"))
    print(f"wrote manifest: {os.path.join(r['out'], 'manifest.json')}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train

TRAIN_DEFAULTS = {
    "seed": 0, "manifest": None, "out": None, "resume": False,
    "embed_dim": 32, "enc_hidden": 64, "rnn_hidden": 64, "rnn_layers": 1,
    "attn_dim": 64, "y_embed_dim": 16, "mlp_hidden": [64], "dropout_p": 0.1,
    "no_attention": False, "phase1_epochs": 5, "phase2_epochs": 20,
    "batch_size": 4, "lr": 1e-3, "beta1": 0.5, "beta2": 0.999,
    "jitter_sigma": 0.05, "self_feedback_p": 0.5, "phase1_contrastive": True,
    "val_examples": 200, "reset_after_phase1": False, "deterministic": False,
}

PHASES = ("phase1", "phase2")


def _save_train_checkpoint(path, params: model.ModelParams, opt: ad.Adam,
                           phase: str, epoch: int, seed: int) -> None:
    combined = dict(params.tensors)
    for name, arr in opt.m.items():
        combined[f"adam_m/{name}"] = ad.Tensor(arr)
    for name, arr in opt.v.items():
        combined[f"adam_v/{name}"] = ad.Tensor(arr)
    extra = {"config": model.asdict(params.config), "phase": phase, "epoch": epoch}
    ad.save_checkpoint(path, combined, step=opt.step_count, rng_seed=seed, extra=extra)


def _load_train_checkpoint(path):
    tensors, header = ad.load_checkpoint(path)
    weights = {k: v for k, v in tensors.items() if "/" not in k}
    cfg = model.AlignerConfig(**header["extra"]["config"])
    params = model.ModelParams(cfg, {k: ad.parameter(v.data) for k, v in weights.items()})
    moments = {
        "step_count": header["step"],
        "m": {k.split("/", 1)[1]: tensors[k].data for k in tensors if k.startswith("adam_m/")},
        "v": {k.split("/", 1)[1]: tensors[k].data for k in tensors if k.startswith("adam_v/")},
    }
    return params, moments, header["extra"]["phase"], header["extra"]["epoch"]


def _latest_checkpoint(out_dir: str):
    paths = sorted(glob.glob(os.path.join(out_dir, "ckpt_phase*_ep*.ckpt")))
    if not paths:
        return None
    def key(p):
        base = os.path.basename(p)
        phase = base.split("_")[1]
        epoch = int(base.split("_ep")[1].split(".")[0])
        return (PHASES.index(phase), epoch)
    return max(paths, key=key)


def cmd_train(args) -> int:
    r = _resolve(TRAIN_DEFAULTS, args)
    if not r["manifest"] or not r["out"]:
        raise ValueError("train needs --manifest and --out")
    ds_config = synth.read_manifest(r["manifest"])
    dataset = synth.SyntheticDataset(ds_config)
    _log_resolved(r, r["out"])
    settings = model.TrainSettings(
        phase1_epochs=r["phase1_epochs"], phase2_epochs=r["phase2_epochs"],
        batch_size=r["batch_size"], lr=r["lr"], beta1=r["beta1"], beta2=r["beta2"],
        jitter_sigma=r["jitter_sigma"], self_feedback_p=r["self_feedback_p"],
        phase1_contrastive=r["phase1_contrastive"],
        seed=r["seed"], val_examples=r["val_examples"],
        reset_after_phase1=r["reset_after_phase1"])
    cfg = model.AlignerConfig(
        audio_dim=ds_config.audio_dim, video_dim=ds_config.video_dim,
        enc_hidden=r["enc_hidden"], embed_dim=r["embed_dim"],
        rnn_hidden=r["rnn_hidden"], rnn_layers=r["rnn_layers"],
        mlp_hidden=tuple(r["mlp_hidden"]), attn_dim=r["attn_dim"],
        y_embed_dim=r["y_embed_dim"], dropout_p=r["dropout_p"],
        use_attention=not r["no_attention"])

    resume_from = _latest_checkpoint(r["out"]) if r["resume"] else None
    start_phase, start_epoch, moments = "phase1", 0, None
    if resume_from is not None:
        params, moments, start_phase, last_epoch, = _load_train_checkpoint(resume_from)
        start_epoch = last_epoch + 1
        print(f"resuming from {resume_from}")
    else:
        params = model.init_params(cfg, rng_for(r["seed"], "init"))

    val_idx = list(dataset.split_indices("val"))[:settings.val_examples]
    val_edit = [dataset.example(i) for i in val_idx]
    val_shift = [dataset.example(i, shift_only=True) for i in val_idx]

    log_path = os.path.join(r["out"], "training_log.csv")
    log_rows = []
    if resume_from is not None and os.path.exists(log_path):
        import csv as _csv
        with open(log_path) as f:
            for row in _csv.DictReader(f):
                phase_i, ep = PHASES.index(row["phase"]), int(row["epoch"])
                if (phase_i, ep) < (PHASES.index(start_phase), start_epoch):
                    row["epoch"] = ep
                    log_rows.append(row)

    def checkpoint_fn_for(phase, opt_holder):
        def fn(phase_name, epoch, step):
            path = os.path.join(r["out"], f"ckpt_{phase_name}_ep{epoch:03d}.ckpt")
            _save_train_checkpoint(path, params, opt_holder[0], phase_name, epoch, r["seed"])
        return fn

    if start_phase == "phase1":
        opt = ad.Adam(params.tensors, lr=settings.lr, beta1=settings.beta1,
                      beta2=settings.beta2)
        if moments is not None:
            opt.load_state(moments)
        holder = [opt]
        model.train_phase1(dataset, params, settings, val_examples=val_shift,
                           log_rows=log_rows, checkpoint_fn=checkpoint_fn_for("phase1", holder),
                           optimizer=opt, start_epoch=start_epoch)
        start_epoch, moments = 0, None
        if settings.reset_after_phase1:
            model.reset_non_encoder_params(params, rng_for(r["seed"], "reinit"))
    opt = ad.Adam(params.tensors, lr=settings.lr, beta1=settings.beta1,
                  beta2=settings.beta2)
    if moments is not None and start_phase == "phase2":
        opt.load_state(moments)
    holder = [opt]
    model.train_phase2(dataset, params, settings, val_examples=val_edit,
                       log_rows=log_rows, checkpoint_fn=checkpoint_fn_for("phase2", holder),
                       optimizer=opt, start_epoch=start_epoch if start_phase == "phase2" else 0)

    model.write_training_log(log_rows, log_path)
    final_path = os.path.join(r["out"], "model.ckpt")
    params.save(final_path, step=opt.step_count, rng_seed=r["seed"])
    print(f"wrote final checkpoint: {final_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# align

ALIGN_DEFAULTS = {
    "seed": 0, "checkpoint": None, "audio": None, "video": None, "out": None,
    "direction": "video", "global_only": False, "emit_votes": False,
    "stride": 10, "sigma_grid": [0.5, 1.0, 2.0, 4.0, 8.0],
    "smooth_threshold": 1.0, "emit_warped": False, "deterministic": False,
    "decode": "lattice", "distance_weight": 0.5,
}


def _load_audio_features(path) -> FeatureSequence:
    if str(path).lower().endswith(".wav"):
        pcm = audio_mod.load_wav(path)
        mfcc = audio_mod.compute_mfcc(pcm)
        return audio_mod.stack_audio_frames(mfcc)
    return read_features(path)


def cmd_align(args) -> int:
    r = _resolve(ALIGN_DEFAULTS, args)
    for key in ("checkpoint", "audio", "video", "out"):
        if not r[key]:
            raise ValueError(f"align needs --{key.replace('_', '-')}")
    params, _ = model.ModelParams.load(r["checkpoint"])
    audio = _load_audio_features(r["audio"])
    video = read_features(r["video"])
    if audio.dim != params.config.audio_dim or video.dim != params.config.video_dim:
        raise ValueError(
            f"feature dims ({audio.dim}, {video.dim}) do not match checkpoint "
            f"({params.config.audio_dim}, {params.config.video_dim})")
    os.makedirs(r["out"], exist_ok=True)
    _log_resolved(r, r["out"])
    if r["global_only"]:
        shift = infer.estimate_global_shift(audio, video, params, stride=r["stride"],
                                            decode=r["decode"],
                                            distance_weight=r["distance_weight"])
        print(shift)
        with open(os.path.join(r["out"], "global_shift.txt"), "w") as f:
            f.write(f"{shift}\n")
        return EXIT_OK
    smoothing = infer.SmoothingConfig(sigma_grid=tuple(r["sigma_grid"]),
                                      criterion_threshold=r["smooth_threshold"])
    swap = r["direction"] == "audio"
    dense, raw, table = infer.full_alignment(audio, video, params, stride=r["stride"],
                                             smoothing=smoothing, swap_roles=swap,
                                             decode=r["decode"],
                                             distance_weight=r["distance_weight"])
    infer.write_path(dense, os.path.join(r["out"], "path.txt"))
    infer.write_path(raw, os.path.join(r["out"], "path_raw.txt"))
    if r["emit_votes"]:
        with open(os.path.join(r["out"], "votes.json"), "w") as f:
            f.write(table.to_json() + "\n")
    if r["emit_warped"]:
        source = audio if swap else video
        warped = infer.render_video_warp(source, dense)
        write_features_text(warped, os.path.join(r["out"], "warped.feat"))
    print(f"wrote path: {os.path.join(r['out'], 'path.txt')}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval

EVAL_DEFAULTS = {
    "seed": 0, "out": None, "pred": None, "truth": None,
    "manifest": None, "checkpoint": None, "split": "test", "max_examples": None,
    "baseline_max_jump": 5, "mcd_ref": None, "mcd_test": None,
    "xy_ref": None, "xy_test": None, "deterministic": False,
    "decode": "lattice", "distance_weight": 0.5,
}


def _truth_path_from_labels(labels) -> np.ndarray:
    return np.asarray(labels, dtype=np.int64)


def _eval_pred_truth(pred: np.ndarray, truth: np.ndarray) -> metrics.MetricReport:
    keep = truth != synth.SENTINEL
    mean_e, max_e, top1 = metrics.shift_error_metrics(pred[keep], truth[keep])
    dup, deleted, conseq, unique = metrics.edit_statistics(pred[keep])
    return metrics.MetricReport(mean_shift_error=mean_e, max_shift_error=max_e,
                                top1_accuracy=top1, dup=dup, del_=deleted,
                                conseq=conseq, unique=unique)


def _eval_split(r: dict):
    ds_config = synth.read_manifest(r["manifest"])
    dataset = synth.SyntheticDataset(ds_config)
    params, _ = model.ModelParams.load(r["checkpoint"])
    indices = list(dataset.split_indices(r["split"]))
    if r["max_examples"]:
        indices = indices[:int(r["max_examples"])]
    examples = [dataset.example(i) for i in indices]

    def eval_one(ex):
        if r["decode"] == "lattice":
            preds = model.lattice_decode_batch(
                np.asarray(ex.audio)[None], np.asarray(ex.video)[None], params,
                distance_weight=float(r["distance_weight"]))[0]
        else:
            _, preds = model.forward_full(ex.audio, ex.video, params)
        pair = model.encode_inputs(ex.audio, ex.video, params)
        cost = model.distance_features(pair)
        base = metrics.modified_dta(cost, max_jump=int(r["baseline_max_jump"]))
        return preds, base

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(eval_one, examples))
    else:
        results = [eval_one(ex) for ex in examples]

    def aggregate(which):
        errs, exact_videos = [], 0
        for ex, (preds, base) in zip(examples, results):
            pred = preds if which == "model" else base
            keep = ex.labels != synth.SENTINEL
            err = np.abs(pred[keep] - ex.labels[keep])
            errs.append(err)
            if err.size and err.max() == 0:
                exact_videos += 1
        all_err = np.concatenate(errs)
        return metrics.MetricReport(
            mean_shift_error=float(all_err.mean()),
            max_shift_error=int(all_err.max()),
            top1_accuracy=float((all_err == 0).mean()),
            per_video_exact_shift_accuracy=exact_videos / max(len(examples), 1),
        ), all_err

    model_report, model_err = aggregate("model")
    base_report, _ = aggregate("baseline")
    rows = [("model", model_report), ("modified_dta", base_report)]
    first = examples[0]
    first_pred = results[0][0]
    return model_report, rows, model_err, (first_pred, first.labels)


def cmd_eval(args) -> int:
    r = _resolve(EVAL_DEFAULTS, args)
    if not r["out"]:
        raise ValueError("eval needs --out")
    os.makedirs(r["out"], exist_ok=True)
    _log_resolved(r, r["out"])
    report = metrics.MetricReport()
    rows = None
    errors = curve = None
    if r["pred"] and r["truth"]:
        pred = infer.read_path(r["pred"]).indices
        truth = infer.read_path(r["truth"]).indices
        if len(pred) != len(truth):
            raise ValueError("pred and truth lengths differ")
        report = _eval_pred_truth(pred, truth)
        keep = truth != synth.SENTINEL
        errors = np.abs(pred[keep] - truth[keep])
        curve = (pred, truth)
        rows = [("pred_vs_truth", report)]
    elif r["manifest"] and r["checkpoint"]:
        report, rows, errors, curve = _eval_split(r)
    elif not (r["mcd_ref"] or r["xy_ref"]):
        raise ValueError("eval needs --pred/--truth, --manifest/--checkpoint, "
                         "--mcd-ref/--mcd-test, or --xy-ref/--xy-test")
    if r["mcd_ref"] and r["mcd_test"]:
        ref = _mel_cepstra(r["mcd_ref"])
        test = _mel_cepstra(r["mcd_test"])
        n = min(len(ref), len(test))
        report.mcd = metrics.mcd(FeatureSequence(ref.frames[:n], ref.frame_rate),
                                 FeatureSequence(test.frames[:n], test.frame_rate))
        report.mcd_dtw = metrics.mcd_dtw(ref, test)
    if r["xy_ref"] and r["xy_test"]:
        a = read_features(r["xy_ref"])
        b = read_features(r["xy_test"])
        n = min(len(a), len(b))
        report.corr_x = metrics.pearson(a.frames[:n, 0], b.frames[:n, 0])
        report.corr_y = metrics.pearson(a.frames[:n, 1], b.frames[:n, 1])
    with open(os.path.join(r["out"], "report.json"), "w") as f:
        f.write(report.to_json())
    metrics.write_report_csv(rows or [("eval", report)],
                             os.path.join(r["out"], "report.csv"))
    if curve is not None:
        write_alignment_svg(curve[0], curve[1], os.path.join(r["out"], "alignment.svg"))
    if errors is not None:
        write_error_histogram_svg(errors, os.path.join(r["out"], "error_hist.svg"))
    print(f"wrote report: {os.path.join(r['out'], 'report.json')}")
    return EXIT_OK


def _mel_cepstra(path) -> FeatureSequence:
    if str(path).lower().endswith(".wav"):
        pcm = audio_mod.normalize_dbfs(audio_mod.load_wav(path), -30.0)
        return audio_mod.compute_mfcc(pcm, audio_mod.MCD_MFCC_CONFIG)
    return read_features(path)


# ---------------------------------------------------------------------------
# report

REPORT_DEFAULTS = {"seed": 0, "inputs": None, "out": None, "deterministic": False}


def cmd_report(args) -> int:
    r = _resolve(REPORT_DEFAULTS, args)
    if not r["inputs"] or not r["out"]:
        raise ValueError("report needs --inputs and --out")
    os.makedirs(r["out"], exist_ok=True)
    rows = []
    for path in r["inputs"]:
        with open(path) as f:
            doc = json.load(f)
        label = os.path.splitext(os.path.basename(path))[0]
        rows.append((label, metrics.MetricReport.from_dict(doc)))
    metrics.write_report_csv(rows, os.path.join(r["out"], "summary.csv"))
    top1 = [(rep.top1_accuracy if rep.top1_accuracy == rep.top1_accuracy else 0.0)
            for _, rep in rows]
    body = _polyline(np.arange(len(top1)), top1, "#1f77b4",
                     bounds=(0, max(len(top1) - 1, 1), 0.0, 1.0))
    with open(os.path.join(r["out"], "summary.svg"), "w") as f:
        f.write(_svg_document(body))
    print(f"wrote summary: {os.path.join(r['out'], 'summary.csv')}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def _add_common(p):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS)
    p.add_argument("--out", default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chronoalign",
                                     description="Cross-modal temporal alignment toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset manifest")
    _add_common(p)
    for key in ("n_train", "n_val", "n_test", "n_symbols", "video_dim", "audio_dim",
                "pair_frames"):
        p.add_argument(f"--{key.replace('_', '-')}", type=int, dest=key,
                       default=argparse.SUPPRESS)
    for key in ("noise_sigma", "p_drop", "p_dup", "self_transition"):
        p.add_argument(f"--{key.replace('_', '-')}", type=float, dest=key,
                       default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="two-phase training from a manifest")
    _add_common(p)
    p.add_argument("--manifest", default=argparse.SUPPRESS)
    p.add_argument("--resume", action="store_true", default=argparse.SUPPRESS)
    p.add_argument("--no-attention", action="store_true", dest="no_attention",
                   default=argparse.SUPPRESS)
    p.add_argument("--reset-after-phase1", action="store_true",
                   dest="reset_after_phase1", default=argparse.SUPPRESS)
    p.add_argument("--phase1-pipeline-loss", action="store_false",
                   dest="phase1_contrastive", default=argparse.SUPPRESS,
                   help="use the full decoding loss in phase 1 instead of "
                        "encoder-only contrastive pretraining")
    for key in ("embed_dim", "enc_hidden", "rnn_hidden", "rnn_layers", "attn_dim",
                "y_embed_dim", "phase1_epochs", "phase2_epochs", "batch_size",
                "val_examples"):
        p.add_argument(f"--{key.replace('_', '-')}", type=int, dest=key,
                       default=argparse.SUPPRESS)
    for key in ("lr", "beta1", "beta2", "jitter_sigma", "dropout_p",
                "self_feedback_p"):
        p.add_argument(f"--{key.replace('_', '-')}", type=float, dest=key,
                       default=argparse.SUPPRESS)
    p.add_argument("--mlp-hidden", type=int, nargs="+", dest="mlp_hidden",
                   default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("align", help="align one audio/video pair")
    _add_common(p)
    p.add_argument("--checkpoint", default=argparse.SUPPRESS)
    p.add_argument("--audio", default=argparse.SUPPRESS)
    p.add_argument("--video", default=argparse.SUPPRESS)
    p.add_argument("--direction", choices=("video", "audio"), default=argparse.SUPPRESS)
    p.add_argument("--global-only", action="store_true", dest="global_only",
                   default=argparse.SUPPRESS)
    p.add_argument("--emit-votes", action="store_true", dest="emit_votes",
                   default=argparse.SUPPRESS)
    p.add_argument("--emit-warped", action="store_true", dest="emit_warped",
                   default=argparse.SUPPRESS)
    p.add_argument("--stride", type=int, default=argparse.SUPPRESS)
    p.add_argument("--decode", choices=("greedy", "lattice"),
                   default=argparse.SUPPRESS)
    p.add_argument("--distance-weight", type=float, dest="distance_weight",
                   default=argparse.SUPPRESS)
    p.add_argument("--smooth-threshold", type=float, dest="smooth_threshold",
                   default=argparse.SUPPRESS)
    p.add_argument("--sigma-grid", type=float, nargs="+", dest="sigma_grid",
                   default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("eval", help="compute metric reports and plots")
    _add_common(p)
    for key in ("pred", "truth", "manifest", "checkpoint", "split",
                "mcd_ref", "mcd_test", "xy_ref", "xy_test"):
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=argparse.SUPPRESS)
    p.add_argument("--decode", choices=("greedy", "lattice"),
                   default=argparse.SUPPRESS)
    p.add_argument("--distance-weight", type=float, dest="distance_weight",
                   default=argparse.SUPPRESS)
    p.add_argument("--max-examples", type=int, dest="max_examples",
                   default=argparse.SUPPRESS)
    p.add_argument("--baseline-max-jump", type=int, dest="baseline_max_jump",
                   default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="summarize metric reports")
    _add_common(p)
    p.add_argument("--inputs", nargs="+", default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    except (FloatingPointError, ArithmeticError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
