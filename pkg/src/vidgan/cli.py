"""Command-line driver: train / sample / predict / eval / interpolate / ablate
/ dataset synth, all configured by one YAML file plus dotted overrides.

Exit codes: 0 success, 1 usage or config error, 2 training divergence,
3 I/O or checkpoint error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import torch

from . import __version__
from .ablation import AblationSpec, run_ablation
from .config import (ConfigError, ExperimentConfig, PRESETS, load_config)
from .data import (dataset_fingerprint, generate_synthetic_dataset, load_dataset,
                   save_dataset)
from .evaluation import (ClassifierConfig, FeatureExtractor, compute_dataset_stats,
                         load_stats, plot_truncation_curve, save_stats,
                         stats_cache_path, train_eval_classifier, truncation_curve,
                         write_truncation_csv)
from .generator import Generator, GeneratorConfig, interpolate_class, interpolate_latent
from .prediction import FPConfig, FPTrainer, FramePredictionModel
from .serialize import to_tensors
from .training import (CheckpointError, DivergenceError, Trainer, load_checkpoint)
from .videoio import load_video_tensor, sample_name, save_frame_grid, save_video_tensor


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are exit code 1, not argparse's 2
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vidgan", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default="", help="YAML experiment config")
        p.add_argument("--preset", default="", choices=("",) + PRESETS)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default="", help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted config override, e.g. training.batch_size=8")

    p = sub.add_parser("train", help="run adversarial training")
    common(p)
    p.add_argument("--dataset", default="", help="dataset directory (else synthesized)")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--steps", type=int, default=0, help="override total steps")
    p.add_argument("--mode", choices=("synthesis", "prediction"), default="synthesis")
    p.add_argument("--checkpoint-every", type=int, default=50)
    p.add_argument("--log-every", type=int, default=1)
    p.add_argument("--eval-every", type=int, default=0)
    p.add_argument("--extractor", default="", help="frozen metric classifier")

    p = sub.add_parser("sample", help="sample videos from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--class-id", type=int, default=0)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--stddev", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("predict", help="continue a conditioning clip")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frames", required=True, help="raw conditioning clip tensor file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("interpolate", help="latent or class-embedding interpolation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=("latent", "class"), default="latent")
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--class-id", type=int, default=0)
    p.add_argument("--class-id-b", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="truncation-curve FID/IS evaluation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", default="", help="real dataset directory (else synthesized)")
    p.add_argument("--extractor", default="")
    p.add_argument("--train-extractor", action="store_true")
    p.add_argument("--stddevs", default="", help="comma-separated sweep, e.g. 0,0.5,1")
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablate", help="multi-seed k / phi ablation")
    common(p)
    p.add_argument("--axis", choices=("k", "phi"), required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--steps", type=int, default=0, help="steps per run")
    p.add_argument("--eval-every", type=int, default=0)
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--extractor", default="")

    p = sub.add_parser("dataset", help="dataset utilities")
    dsub = p.add_subparsers(dest="dataset_command", required=True)
    p2 = dsub.add_parser("synth", help="render the synthetic dataset to disk")
    common(p2)
    return parser


def _overrides(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set needs KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key] = value
    return out


def _load_experiment(args) -> ExperimentConfig:
    config = load_config(args.config or "", preset=args.preset or None,
                         overrides=_overrides(args.set))
    if args.seed is not None:
        config.seed = args.seed
    if args.out:
        config.out_dir = args.out
    return config


def _get_dataset(args, config: ExperimentConfig):
    if getattr(args, "dataset", ""):
        if not os.path.isdir(args.dataset):
            raise ConfigError(f"--dataset path not found: {args.dataset}")
        return load_dataset(args.dataset)
    return generate_synthetic_dataset(config.data)


def _write_manifest(out_dir: str, config_hash: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "run.json"), "w") as f:
        json.dump({"config_hash": config_hash, "version": __version__}, f, indent=2)


def _tupled(section: dict) -> dict:
    out = dict(section)
    for key in ("layer_constants", "velocity_range", "stddev_sweep"):
        if isinstance(out.get(key), list):
            out[key] = tuple(out[key])
    return out


def load_eval_generator(checkpoint_path: str):
    """Rebuild the EMA generator (synthesis or prediction) from a checkpoint."""
    payload = load_checkpoint(checkpoint_path)
    bundle = payload["config"]
    gen_config = GeneratorConfig(**_tupled(bundle["generator"]))
    if bundle.get("mode") == "prediction":
        model = FramePredictionModel(gen_config, FPConfig(**bundle["prediction"]))
    else:
        model = Generator(gen_config)
    model.load_state_dict(to_tensors(payload["ema_generator"]))
    model.eval()
    return model, payload


def cmd_train(args) -> int:
    config = _load_experiment(args)
    dataset = _get_dataset(args, config)
    out_dir = config.out_dir
    if args.mode == "prediction":
        gen_config = GeneratorConfig(**{**vars(config.generator),
                                        "clip_length": config.prediction.t_gen})
        config.training.frame_stride = 1  # prediction clips are not frame-skipped
        trainer = FPTrainer(gen_config, config.spatial_disc, config.temporal_disc,
                            config.training, config.prediction, dataset,
                            seed=config.seed, out_dir=out_dir)
    else:
        trainer = Trainer(config.generator, config.spatial_disc, config.temporal_disc,
                          config.training, dataset, seed=config.seed, out_dir=out_dir)
    _write_manifest(out_dir, trainer.config_hash)
    ckpt = os.path.join(out_dir, "checkpoint.pkl")
    if args.resume:
        trainer.restore(ckpt)
        print(f"resumed from {ckpt} at step {trainer.state.step}")

    eval_fn = None
    if args.eval_every > 0:
        if not args.extractor:
            raise ConfigError("--eval-every needs --extractor PATH (train one via "
                              "`vidgan eval --train-extractor` first)")
        extractor = FeatureExtractor.load(args.extractor)
        stats = compute_dataset_stats(dataset, extractor, config.generator.resolution,
                                      config.generator.clip_length,
                                      config.training.frame_stride, seed=config.seed)
        from .evaluation import evaluate_model

        def eval_fn(tr):
            result = evaluate_model(tr.state.ema_generator, extractor, stats,
                                    num_samples=config.evaluation.num_samples,
                                    stddev=1.0, seed=config.seed,
                                    batch_size=config.evaluation.batch_size)
            return result.fid, result.is_mean

    total = args.steps if args.steps > 0 else config.training.total_steps
    trainer.run(total_steps=total, log_every=args.log_every,
                checkpoint_every=args.checkpoint_every,
                eval_every=args.eval_every, eval_fn=eval_fn)
    trainer.save(ckpt)
    print(f"finished at step {trainer.state.step}; checkpoint at {ckpt}")
    return 0


def cmd_sample(args) -> int:
    model, payload = load_eval_generator(args.checkpoint)
    if isinstance(model, FramePredictionModel):
        raise ConfigError("checkpoint is a prediction model; use `vidgan predict`")
    config = model.config
    if not 0 <= args.class_id < config.num_classes:
        raise ConfigError(f"class id {args.class_id} out of range "
                          f"[0, {config.num_classes})")
    rng = torch.Generator().manual_seed(args.seed)
    z = args.stddev * torch.randn(args.count, config.latent_dim, generator=rng)
    if not 0.0 <= args.stddev <= 1.0:
        raise ConfigError("stddev must be within [0, 1]")
    y = torch.full((args.count,), args.class_id, dtype=torch.long)
    with torch.no_grad():
        videos = model(z, y=y)
    os.makedirs(args.out, exist_ok=True)
    step = payload["step"]
    for i in range(args.count):
        save_video_tensor(videos[i], os.path.join(args.out,
                                                  sample_name(step, args.class_id, i) + ".raw"))
    grid = os.path.join(args.out, sample_name(step, args.class_id, "grid") + ".png")
    save_frame_grid(videos, grid, metadata={"config_hash": payload["config_hash"],
                                            "version": __version__})
    print(f"wrote {args.count} videos and {grid}")
    return 0


def cmd_predict(args) -> int:
    model, payload = load_eval_generator(args.checkpoint)
    if not isinstance(model, FramePredictionModel):
        raise ConfigError("checkpoint is a synthesis model; use `vidgan sample`")
    clip = load_video_tensor(args.frames)
    c = model.fp_config.num_cond_frames
    if clip.shape[0] < c:
        raise ConfigError(f"conditioning clip has {clip.shape[0]} frames, need {c}")
    cond = clip[:c].unsqueeze(0)
    rng = torch.Generator().manual_seed(args.seed)
    z = torch.randn(1, model.gen_config.latent_dim, generator=rng)
    with torch.no_grad():
        video = model(cond, z)[0]
    os.makedirs(args.out, exist_ok=True)
    out = os.path.join(args.out, sample_name(payload["step"], 0, 0) + ".raw")
    save_video_tensor(video, out)
    save_frame_grid(video, out.replace(".raw", ".png"),
                    metadata={"config_hash": payload["config_hash"]})
    print(f"wrote continuation ({video.shape[0]} frames) to {out}")
    return 0


def cmd_interpolate(args) -> int:
    model, payload = load_eval_generator(args.checkpoint)
    if isinstance(model, FramePredictionModel):
        raise ConfigError("interpolation needs a synthesis checkpoint")
    config = model.config
    for cid in (args.class_id, args.class_id_b):
        if not 0 <= cid < config.num_classes:
            raise ConfigError(f"class id {cid} out of range [0, {config.num_classes})")
    rng = torch.Generator().manual_seed(args.seed)
    if args.mode == "latent":
        z1 = torch.randn(config.latent_dim, generator=rng)
        z2 = torch.randn(config.latent_dim, generator=rng)
        videos = interpolate_latent(model, z1, z2, args.class_id, args.steps)
    else:
        z = torch.randn(config.latent_dim, generator=rng)
        videos = interpolate_class(model, z, args.class_id, args.class_id_b, args.steps)
    os.makedirs(args.out, exist_ok=True)
    grid = os.path.join(args.out, f"interp_{args.mode}_{args.class_id}.png")
    save_frame_grid(videos, grid, metadata={"config_hash": payload["config_hash"]})
    for i in range(videos.shape[0]):
        save_video_tensor(videos[i], os.path.join(args.out, f"interp_{i:03d}.raw"))
    print(f"wrote {videos.shape[0]}-step interpolation to {grid}")
    return 0


def _get_extractor(args, dataset, num_classes, resolution, clip_length, stride,
                   out_dir) -> FeatureExtractor:
    if args.extractor:
        return FeatureExtractor.load(args.extractor)
    if not getattr(args, "train_extractor", False):
        raise ConfigError("no extractor: pass --extractor PATH or --train-extractor")
    extractor = train_eval_classifier(dataset, ClassifierConfig(), num_classes,
                                      resolution, clip_length, stride, verbose=True)
    path = os.path.join(out_dir, "extractor.pt")
    extractor.save(path)
    print(f"trained extractor (hash {extractor.checkpoint_hash[:12]}) -> {path}")
    return extractor


def cmd_eval(args) -> int:
    model, payload = load_eval_generator(args.checkpoint)
    if isinstance(model, FramePredictionModel):
        raise ConfigError("eval expects a synthesis checkpoint")
    bundle = payload["config"]
    gen_config = model.config
    os.makedirs(args.out, exist_ok=True)
    if args.dataset:
        if not os.path.isdir(args.dataset):
            raise ConfigError(f"--dataset path not found: {args.dataset}")
        dataset = load_dataset(args.dataset)
    else:
        from .data import SyntheticDatasetConfig
        data_cfg = bundle.get("data")
        if data_cfg:
            dataset = generate_synthetic_dataset(SyntheticDatasetConfig(**_tupled(data_cfg)))
        else:
            raise ConfigError("no --dataset given and the checkpoint embeds no data config")
    stride = bundle.get("training", {}).get("frame_stride", 2)
    extractor = _get_extractor(args, dataset, gen_config.num_classes,
                               gen_config.resolution, gen_config.clip_length,
                               stride, args.out)

    cache = stats_cache_path(args.out, dataset_fingerprint(dataset),
                             extractor.checkpoint_hash)
    if os.path.exists(cache):
        stats = load_stats(cache)
    else:
        stats = compute_dataset_stats(dataset, extractor, gen_config.resolution,
                                      gen_config.clip_length, stride, seed=args.seed)
        save_stats(stats, cache)

    if args.stddevs:
        stddevs = [float(v) for v in args.stddevs.split(",")]
    else:
        stddevs = [0.0, 0.25, 0.5, 0.75, 1.0]
    rows = truncation_curve(model, extractor, stats, stddevs, args.samples,
                            seed=args.seed)
    csv_path = os.path.join(args.out, "truncation.csv")
    write_truncation_csv(rows, csv_path, payload["config_hash"], __version__)
    plot_truncation_curve(rows, os.path.join(args.out, "truncation.png"))
    no_trunc = next((r for r in rows if r["stddev"] == 1.0), None)
    if no_trunc is None:
        no_trunc = rows[-1]
    print(f"no-truncation: FID={no_trunc['fid']:.4f} IS={no_trunc['is']:.4f} "
          f"(stddev={no_trunc['stddev']})")
    print(f"curve written to {csv_path}")
    return 0


def cmd_ablate(args) -> int:
    config = _load_experiment(args)
    dataset = _get_dataset(args, config)
    out_dir = config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    values: tuple = tuple(
        int(v) if args.axis == "k" else v for v in args.values.split(","))
    seeds = tuple(int(v) for v in args.seeds.split(","))
    spec = AblationSpec(axis=args.axis, values=values, seeds=seeds,
                        steps_per_run=args.steps or 5000,
                        eval_every=args.eval_every or max(1, (args.steps or 5000) // 10),
                        eval_samples=args.samples)
    args.train_extractor = not args.extractor
    extractor = _get_extractor(args, dataset, config.generator.num_classes,
                               config.generator.resolution, config.generator.clip_length,
                               config.training.frame_stride, out_dir)
    stats = compute_dataset_stats(dataset, extractor, config.generator.resolution,
                                  config.generator.clip_length,
                                  config.training.frame_stride, seed=config.seed)
    report = run_ablation(spec, config.generator, config.spatial_disc,
                          config.temporal_disc, config.training, dataset,
                          extractor, stats, out_dir, verbose=True)
    print(f"{len(report.runs)} runs, {len(report.failures)} diverged; "
          f"summary at {os.path.join(out_dir, 'summary.csv')}")
    return 0


def cmd_dataset_synth(args) -> int:
    config = _load_experiment(args)
    out_dir = config.out_dir
    videos = generate_synthetic_dataset(config.data)
    save_dataset(videos, out_dir)
    _write_manifest(out_dir, config.hash)
    print(f"wrote {len(videos)} videos ({config.data.num_classes} classes) to {out_dir}")
    return 0


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "train":
        return cmd_train(args)
    if args.command == "sample":
        return cmd_sample(args)
    if args.command == "predict":
        return cmd_predict(args)
    if args.command == "interpolate":
        return cmd_interpolate(args)
    if args.command == "eval":
        return cmd_eval(args)
    if args.command == "ablate":
        return cmd_ablate(args)
    if args.command == "dataset" and args.dataset_command == "synth":
        return cmd_dataset_synth(args)
    raise ConfigError(f"unknown command {args.command}")


def main(argv=None) -> int:
    try:
        return run(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
