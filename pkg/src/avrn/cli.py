"""Command-line entry point.

Subcommands: train (fit one model per split and write checkpoints), evaluate
(score held-out videos against human annotations), summarize (emit the shot
partition, summary mask and score curves of one video), and gradcheck
(finite-difference verification of every model variant's gradients).

Configuration precedence is flags > config file (--config, JSON) > defaults;
unknown config keys are rejected.  All randomness derives from --seed, and
every output file is written deterministically (sorted keys, no timestamps),
so identical invocations produce byte-identical artifacts.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
divergence, 5 gradient-check failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import data as avdata
from . import evaluation, model, segmentation
from .errors import ConfigError, DataError, DivergenceError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4
EXIT_GRADCHECK = 5

DEFAULTS = {
    "manifest": None,
    "organization": "canonical",
    "variant": "full",
    "target": None,
    "budget": 0.15,
    "hidden_dim": 256,
    "learning_rate": 1e-5,
    "decay_rate": 0.1,
    "decay_step": 30,
    "epochs": 60,
    "clip_norm": 5.0,
    "seed": 0,
    "out": "runs",
    "aggregate": "max",
    "max_shots": 10,
    "penalty": 1.0,
    "kts_features": "visual",
    "use_sum": None,
    "video": None,
    "checkpoint": None,
    "coords": 100,
    "tol": 1e-4,
    "fd_step": 1e-5,
    "corrupt": None,
}


@dataclass
class RunConfig:
    command: str
    manifest: str | None
    organization: avdata.Organization
    variant: model.ModelVariant
    target: str | None
    budget: float
    train: model.TrainConfig
    out: Path
    aggregate: evaluation.AggregateMode
    max_shots: int
    penalty: float
    kts_features: str
    use_sum: bool
    video: str | None
    checkpoint: str | None
    coords: int
    tol: float
    fd_step: float
    corrupt: bool

    @property
    def seed(self) -> int:
        return self.train.seed


def _enum_or_config_error(enum_cls, value, what):
    try:
        return enum_cls(value)
    except ValueError:
        valid = ", ".join(e.value for e in enum_cls)
        raise ConfigError(f"invalid {what} {value!r}; choose one of: {valid}") from None


def build_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, config file and explicit flags, then validate."""
    merged = dict(DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        p = Path(config_path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            loaded = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: malformed config JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{p}: config must be a JSON object")
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"{p}: unknown config keys: {', '.join(unknown)}")
        merged.update(loaded)
    for key in DEFAULTS:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            merged[key] = flag_value

    organization = _enum_or_config_error(
        avdata.Organization, merged["organization"], "organization")
    variant = _enum_or_config_error(model.ModelVariant, merged["variant"], "variant")
    aggregate = _enum_or_config_error(
        evaluation.AggregateMode, merged["aggregate"], "aggregate mode")
    if not 0 < float(merged["budget"]) <= 1:
        raise ConfigError(f"budget must be in (0, 1], got {merged['budget']}")
    if merged["kts_features"] not in ("visual", "fused"):
        raise ConfigError(
            f"kts_features must be 'visual' or 'fused', got {merged['kts_features']!r}")
    if int(merged["max_shots"]) < 1:
        raise ConfigError(f"max_shots must be >= 1, got {merged['max_shots']}")
    if float(merged["penalty"]) < 0:
        raise ConfigError(f"penalty must be >= 0, got {merged['penalty']}")
    if int(merged["coords"]) < 1:
        raise ConfigError(f"coords must be >= 1, got {merged['coords']}")
    if float(merged["tol"]) <= 0 or float(merged["fd_step"]) <= 0:
        raise ConfigError("tol and fd_step must be positive")
    train = model.TrainConfig(
        learning_rate=float(merged["learning_rate"]),
        decay_rate=float(merged["decay_rate"]),
        decay_step=int(merged["decay_step"]),
        max_epochs=int(merged["epochs"]),
        hidden_dim=int(merged["hidden_dim"]),
        seed=int(merged["seed"]),
        clip_norm=None if merged["clip_norm"] in (None, "none") else float(merged["clip_norm"]),
    )
    command = args.command
    if command in ("train", "evaluate", "summarize") and not merged["manifest"]:
        raise ConfigError(f"{command} requires --manifest")
    if command == "summarize":
        if not merged["video"]:
            raise ConfigError("summarize requires --video")
        if not merged["checkpoint"]:
            raise ConfigError("summarize requires --checkpoint")
    return RunConfig(
        command=command,
        manifest=merged["manifest"],
        organization=organization,
        variant=variant,
        target=merged["target"],
        budget=float(merged["budget"]),
        train=train,
        out=Path(merged["out"]),
        aggregate=aggregate,
        max_shots=int(merged["max_shots"]),
        penalty=float(merged["penalty"]),
        kts_features=merged["kts_features"],
        use_sum=bool(merged["use_sum"]),
        video=merged["video"],
        checkpoint=merged["checkpoint"],
        coords=int(merged["coords"]),
        tol=float(merged["tol"]),
        fd_step=float(merged["fd_step"]),
        corrupt=bool(merged["corrupt"]),
    )


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n",
                    encoding="utf-8")


def _load_videos(rc: RunConfig):
    """(by_id mapping, {dataset: [ids]}) from the manifest."""
    manifest = avdata.load_manifest(rc.manifest)
    pairs = avdata.load_dataset(rc.manifest)
    by_id = {feats.video_id: (feats, ann) for feats, ann in pairs}
    groups = {}
    for entry in manifest["videos"]:
        groups.setdefault(entry.get("dataset", "main"), []).append(entry["id"])
    return by_id, groups


def _split_dir(rc: RunConfig, index: int) -> Path:
    return rc.out / f"split-{index}"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_train(rc: RunConfig) -> int:
    by_id, groups = _load_videos(rc)
    plans = avdata.make_splits(groups, rc.organization, rc.seed, target=rc.target)
    _write_json(rc.out / "splits.json", [p.to_dict() for p in plans])
    single = rc.variant is model.ModelVariant.SINGLE_DIRECTION
    for plan in plans:
        pairs = avdata.training_pairs([by_id[v] for v in plan.train_ids])
        feats0 = pairs[0][0]
        rng = np.random.default_rng([rc.seed, plan.split_index])
        params = model.AvrnParams.init(
            feats0.audio_dim, feats0.visual_dim, rc.train.hidden_dim, rng,
            single_direction=single)
        trace = model.train(params, rc.variant, pairs, rc.train)
        out_dir = _split_dir(rc, plan.split_index)
        model.save_checkpoint(out_dir / "checkpoint.avfs", params, rc.variant, rc.train)
        _write_json(out_dir / "trace.json",
                    {"plan": plan.to_dict(), "trace": trace.to_dict()})
        print(f"split {plan.split_index}: {len(plan.train_ids)} train videos, "
              f"{trace.mean_losses and len(trace.mean_losses) or 0} epochs, "
              f"final mean loss {trace.mean_losses[-1] if trace.mean_losses else float('nan'):.6f}")
    print(f"wrote {len(plans)} checkpoints under {rc.out}")
    return EXIT_OK


def _kts_input(rc: RunConfig, feats, result):
    if rc.kts_features == "fused":
        if result.fused is None:
            raise ConfigError(
                f"variant '{rc.variant.value}' produces no fused sequence; "
                "use kts_features=visual")
        return result.fused.T
    return np.asarray(feats.visual, dtype=np.float64)


def _metric_row(video_id, split, variant, ver):
    return {
        "video_id": video_id,
        "split": split,
        "variant": variant,
        "precision": ver.result.precision,
        "recall": ver.result.recall,
        "f_measure": ver.result.f_measure,
        "kendall_tau": ver.correlation.kendall_tau,
        "spearman_rho": ver.correlation.spearman_rho,
    }


_METRIC_KEYS = ("precision", "recall", "f_measure", "kendall_tau", "spearman_rho")


def _mean_row(rows):
    return {key: float(np.mean([r[key] for r in rows])) for key in _METRIC_KEYS}


def cmd_evaluate(rc: RunConfig) -> int:
    by_id, groups = _load_videos(rc)
    plans = avdata.make_splits(groups, rc.organization, rc.seed, target=rc.target)
    video_rows, split_rows = [], []
    for plan in plans:
        ckpt = _split_dir(rc, plan.split_index) / "checkpoint.avfs"
        if not ckpt.exists():
            raise DataError(f"missing checkpoint: {ckpt}")
        params, variant, _ = model.load_checkpoint(ckpt)
        rows = []
        for vid in plan.test_ids:
            if vid not in by_id:
                raise DataError(f"split {plan.split_index}: video {vid!r} not in manifest")
            feats, ann = by_id[vid]
            result = model.forward(params, variant, feats)
            part = segmentation.kts_segment(
                _kts_input(rc, feats, result), rc.max_shots, rc.penalty)
            ver = evaluation.evaluate_video(
                result.p, ann, part, budget_fraction=rc.budget,
                mode=rc.aggregate, use_sum=rc.use_sum)
            rows.append(_metric_row(vid, plan.split_index, variant.value, ver))
        split_rows.append({"split": plan.split_index, "variant": variant.value,
                           **_mean_row(rows)})
        video_rows.extend(rows)
    overall = {"variant": split_rows[0]["variant"], **_mean_row(split_rows)}
    _write_json(rc.out / "results.json",
                {"videos": video_rows, "splits": split_rows, "overall": overall})
    _write_csv(rc.out / "results.csv", video_rows, split_rows, overall)
    print(f"overall: F={overall['f_measure']:.4f} tau={overall['kendall_tau']:.4f} "
          f"rho={overall['spearman_rho']:.4f} over {len(split_rows)} splits")
    return EXIT_OK


def _write_csv(path: Path, video_rows, split_rows, overall):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "split", "video_id", "variant", *_METRIC_KEYS])
        for row in video_rows:
            writer.writerow(["video", row["split"], row["video_id"], row["variant"],
                             *[repr(row[k]) for k in _METRIC_KEYS]])
        for row in split_rows:
            writer.writerow(["split", row["split"], "", row["variant"],
                             *[repr(row[k]) for k in _METRIC_KEYS]])
        writer.writerow(["overall", "", "", overall["variant"],
                         *[repr(overall[k]) for k in _METRIC_KEYS]])


def cmd_summarize(rc: RunConfig) -> int:
    by_id, _ = _load_videos(rc)
    if rc.video not in by_id:
        raise DataError(f"video {rc.video!r} not in manifest")
    ckpt = Path(rc.checkpoint)
    if not ckpt.exists():
        raise DataError(f"missing checkpoint: {ckpt}")
    params, variant, _ = model.load_checkpoint(ckpt)
    feats, ann = by_id[rc.video]
    result = model.forward(params, variant, feats)
    part = segmentation.kts_segment(_kts_input(rc, feats, result),
                                    rc.max_shots, rc.penalty)
    scores = segmentation.shot_scores(part, result.p, use_sum=rc.use_sum)
    mask = segmentation.select_summary(scores, part, rc.budget)
    g = avdata.make_ground_truth(ann, n_steps=feats.n)
    frame_mask = evaluation.expand_to_frames(
        mask.selected, ann.stride, ann.n_frames).astype(bool)
    _write_json(rc.out / f"summary-{rc.video}.json", {
        "video_id": rc.video,
        "variant": variant.value,
        "boundaries": [int(b) for b in part.boundaries],
        "shot_scores": [float(s) for s in scores.scores],
        "selected_steps": [int(v) for v in mask.selected],
        "selected_frames": [int(v) for v in frame_mask],
        "budget": rc.budget,
    })
    curve_path = rc.out / f"curve-{rc.video}.csv"
    with open(curve_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "predicted", "ground_truth"])
        for t in range(feats.n):
            writer.writerow([t, repr(float(result.p[t])), repr(float(g[t]))])
    print(f"{rc.video}: {part.m} shots, {mask.frame_count}/{feats.n} steps selected")
    return EXIT_OK


GRADCHECK_HIDDEN = 4
GRADCHECK_STEPS = 10


def _gradcheck_dims(variant: model.ModelVariant):
    # the raw-feature gate needs feature dims equal to its width
    if variant is model.ModelVariant.FUSION_ONLY:
        width = 2 * GRADCHECK_HIDDEN
        return width, width
    return 3, 5


def cmd_gradcheck(rc: RunConfig) -> int:
    failures = 0
    for index, variant in enumerate(model.ModelVariant):
        audio_dim, visual_dim = _gradcheck_dims(variant)
        rng = np.random.default_rng([rc.seed, index])
        params = model.AvrnParams.init(
            audio_dim, visual_dim, GRADCHECK_HIDDEN, rng,
            single_direction=variant is model.ModelVariant.SINGLE_DIRECTION)
        audio = rng.normal(size=(GRADCHECK_STEPS, audio_dim))
        visual = rng.normal(size=(GRADCHECK_STEPS, visual_dim))
        g = rng.uniform(size=GRADCHECK_STEPS)

        def f():
            node = model.training_loss_node(params, variant, (audio, visual), g)
            if rc.corrupt:
                # value depends on every weight through a term the tape
                # cannot see: the analytic gradient misses it, the
                # numeric one does not, so any sampled coordinate fails
                leak = 0.05 * sum(
                    float(np.sum(t.value)) for _, t in params.named_parameters())
                node = ad.add(node, ad.constant(leak))
            return node

        report = ad.finite_diff_check(
            f, params, h=rc.fd_step, tol=rc.tol,
            rng=np.random.default_rng([rc.seed, 1000 + index]), n_coords=rc.coords)
        status = "ok" if report.passed else "FAIL"
        print(f"{variant.value}: {status} (max rel error {report.max_rel_error:.3e}, "
              f"{len(report.checks)} coords)")
        if not report.passed:
            failures += 1
            for name, err in sorted(report.group_max().items()):
                print(f"  {name}: max rel error {err:.3e}")
    if failures:
        print(f"{failures} variant(s) failed the gradient check")
        return EXIT_GRADCHECK
    print("all variants pass the gradient check")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser / entry point
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--manifest", help="dataset manifest path")
    p.add_argument("--organization",
                   choices=[o.value for o in avdata.Organization])
    p.add_argument("--variant", choices=[v.value for v in model.ModelVariant])
    p.add_argument("--target", help="target dataset name (default: first)")
    p.add_argument("--budget", type=float, help="summary length fraction (default 0.15)")
    p.add_argument("--hidden-dim", type=int, dest="hidden_dim")
    p.add_argument("--lr", type=float, dest="learning_rate")
    p.add_argument("--decay-rate", type=float, dest="decay_rate")
    p.add_argument("--decay-step", type=int, dest="decay_step")
    p.add_argument("--epochs", type=int)
    p.add_argument("--clip-norm", type=float, dest="clip_norm")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: runs)")
    p.add_argument("--aggregate", choices=["max", "mean"],
                   help="per-annotator aggregation (max: best annotator)")
    p.add_argument("--max-shots", type=int, dest="max_shots")
    p.add_argument("--penalty", type=float, help="shot-count selection penalty")
    p.add_argument("--kts-features", choices=["visual", "fused"], dest="kts_features")
    p.add_argument("--use-sum", action="store_true", default=None, dest="use_sum",
                   help="score shots by summed (not mean) importance")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avrn",
        description="Audiovisual recurrent video summarization: train, evaluate, "
                    "summarize, gradcheck.")
    sub = parser.add_subparsers(dest="command")

    p_train = sub.add_parser("train", help="train one model per split")
    _add_common(p_train)

    p_eval = sub.add_parser("evaluate", help="score held-out videos per split")
    _add_common(p_eval)

    p_sum = sub.add_parser("summarize", help="emit one video's summary artifacts")
    _add_common(p_sum)
    p_sum.add_argument("--checkpoint", help="checkpoint file to load")
    p_sum.add_argument("--video", help="video id from the manifest")

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient check")
    _add_common(p_grad)
    p_grad.add_argument("--coords", type=int, help="coordinates to sample (default 100)")
    p_grad.add_argument("--tol", type=float, help="relative error tolerance (default 1e-4)")
    p_grad.add_argument("--fd-step", type=float, dest="fd_step",
                        help="finite-difference step (default 1e-5)")
    p_grad.add_argument("--corrupt", action="store_true", default=None,
                        help="deliberately break a gradient (debug/negative test)")
    return parser


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "summarize": cmd_summarize,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return EXIT_CONFIG
    try:
        rc = build_config(args)
        return COMMANDS[rc.command](rc)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
