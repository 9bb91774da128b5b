"""Command-line entry point: synth, train, eval, predict, flops, bench.

Configuration precedence for every key is CLI flag > config file > built-in
default.  The JSON config file carries model keys (mirroring ``MimConfig``)
and training keys (mirroring ``TrainConfig``) at the top level.  The
``MIM_THREADS`` environment variable caps internal (BLAS) parallelism and is
applied before the numerical stack is imported.  Commands exit 0 on success
and nonzero after printing one ``error: ...`` line to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


def _apply_thread_cap() -> None:
    cap = os.environ.get("MIM_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, cap)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mimnet",
        description="Nested selective-scan segmentation for infrared small targets.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--out", type=Path, default=None, help="output path")

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p_synth)
    p_synth.add_argument("--count", type=int, default=16, help="number of samples")
    p_synth.add_argument("--height", type=int, default=None, help="image height")
    p_synth.add_argument("--width", type=int, default=None, help="image width")
    p_synth.add_argument("--min-radius", type=float, default=None, help="smallest target radius")
    p_synth.add_argument("--max-radius", type=float, default=None, help="largest target radius")
    p_synth.add_argument("--min-contrast", type=float, default=None, help="lowest target contrast")
    p_synth.add_argument("--max-contrast", type=float, default=None, help="highest target contrast")

    p_train = sub.add_parser("train", help="train a model on a dataset directory")
    common(p_train)
    p_train.add_argument("--data", type=Path, required=True, help="dataset directory")
    p_train.add_argument("--epochs", type=int, default=None, help="epoch count override")
    p_train.add_argument("--max-steps", type=int, default=None, help="cap on optimizer steps")
    p_train.add_argument("--split", choices=["train", "test", "all"], default="train",
                         help="which manifest split to train on")
    p_train.add_argument("--resize", action="store_true", help="resize samples to the model size")
    p_train.add_argument("--quiet", action="store_true", help="suppress per-step loss lines")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint, write a metrics JSON report")
    common(p_eval)
    p_eval.add_argument("--data", type=Path, required=True, help="dataset directory")
    p_eval.add_argument("--checkpoint", type=Path, default=None, help="checkpoint prefix")
    p_eval.add_argument("--split", choices=["train", "test", "all"], default="test",
                        help="which manifest split to evaluate")
    p_eval.add_argument("--threshold", type=float, default=0.5, help="binarization threshold")
    p_eval.add_argument("--roc-csv", type=Path, default=None, help="also write ROC points as CSV")
    p_eval.add_argument("--resize", action="store_true", help="resize samples to the model size")
    p_eval.add_argument("--oracle-stub", action="store_true",
                        help="diagnostic: echo ground truth as the prediction")

    p_pred = sub.add_parser("predict", help="write predicted masks as PGM files")
    common(p_pred)
    p_pred.add_argument("--data", type=Path, required=True, help="dataset directory")
    p_pred.add_argument("--checkpoint", type=Path, default=None, help="checkpoint prefix")
    p_pred.add_argument("--split", choices=["train", "test", "all"], default="test",
                        help="which manifest split to predict")
    p_pred.add_argument("--threshold", type=float, default=0.5, help="binarization threshold")
    p_pred.add_argument("--resize", action="store_true", help="resize samples to the model size")
    p_pred.add_argument("--oracle-stub", action="store_true",
                        help="diagnostic: echo ground truth as the prediction")

    p_flops = sub.add_parser("flops", help="write an analytic + measured operation-count report")
    common(p_flops)
    p_flops.add_argument("--height", type=int, default=None, help="input height override")
    p_flops.add_argument("--width", type=int, default=None, help="input width override")

    p_bench = sub.add_parser("bench", help="time the forward pass")
    common(p_bench)
    p_bench.add_argument("--repeat", type=int, default=5, help="timed repetitions")
    p_bench.add_argument("--warmup", type=int, default=1, help="untimed warmup repetitions")

    return parser


class CliError(RuntimeError):
    pass


def _load_config_file(path):
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise CliError(f"config file {path} must hold a JSON object")
    return data


def _split_config(raw: dict):
    from .arch import MimConfig
    from .train import TrainConfig

    model_keys = set(MimConfig.__dataclass_fields__)
    train_keys = set(TrainConfig.__dataclass_fields__)
    unknown = sorted(set(raw) - model_keys - train_keys)
    if unknown:
        raise CliError(f"unknown config keys: {unknown}")
    return ({k: v for k, v in raw.items() if k in model_keys},
            {k: v for k, v in raw.items() if k in train_keys})


def _build_configs(args, raw: dict):
    from .arch import MimConfig
    from .train import TrainConfig

    model_raw, train_raw = _split_config(raw)
    if args.seed is not None:
        train_raw["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        train_raw["epochs"] = args.epochs
    if getattr(args, "height", None) is not None:
        model_raw["input_h"] = args.height
    if getattr(args, "width", None) is not None:
        model_raw["input_w"] = args.width
    try:
        return MimConfig.from_dict(model_raw), TrainConfig.from_dict(train_raw)
    except ValueError as exc:
        raise CliError(str(exc))


def _select_split(data_dir, split: str, resize_to=None):
    from .data import load_dataset, load_manifest

    samples = load_dataset(data_dir, resize_to=resize_to)
    if split == "all":
        return samples
    try:
        manifest = load_manifest(data_dir)
    except FileNotFoundError:
        raise CliError(f"dataset {data_dir} has no manifest.json; use --split all")
    wanted = set(manifest.split[split])
    chosen = [s for s in samples if s.id in wanted]
    if not chosen:
        raise CliError(f"manifest split '{split}' selects no samples")
    return chosen


def _load_model(args, raw: dict):
    from .arch import MimConfig
    from .checkpoint import load_checkpoint
    from .tensor import ShapeError

    model_cfg, train_cfg = _build_configs(args, raw)
    from .arch import MimModel

    model = MimModel(model_cfg, seed=train_cfg.seed)
    ckpt = getattr(args, "checkpoint", None)
    if ckpt is not None:
        try:
            model.load_state(load_checkpoint(ckpt))
        except FileNotFoundError as exc:
            raise CliError(f"checkpoint not found: {exc}")
        except (ShapeError, ValueError, KeyError) as exc:
            raise CliError(f"checkpoint/config mismatch: {exc}")
    return model, model_cfg, train_cfg


def _write_json(path, payload) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def cmd_synth(args) -> int:
    from .data import SynthConfig, generate_dataset

    if args.out is None:
        raise CliError("synth requires --out DIR")
    raw = _load_config_file(args.config)
    cfg = SynthConfig(
        h=args.height if args.height is not None else raw.get("input_h", 64),
        w=args.width if args.width is not None else raw.get("input_w", 64),
        seed=args.seed if args.seed is not None else raw.get("seed", 0),
    )
    if args.min_radius is not None or args.max_radius is not None:
        cfg.target_radius = (args.min_radius or cfg.target_radius[0],
                             args.max_radius or cfg.target_radius[1])
    if args.min_contrast is not None or args.max_contrast is not None:
        cfg.contrast = (args.min_contrast if args.min_contrast is not None else cfg.contrast[0],
                        args.max_contrast if args.max_contrast is not None else cfg.contrast[1])
    try:
        cfg.validate()
    except ValueError as exc:
        raise CliError(str(exc))
    manifest = generate_dataset(cfg, args.count, args.out)
    print(f"wrote {len(manifest.samples)} samples to {args.out} "
          f"(train {len(manifest.split['train'])} / test {len(manifest.split['test'])})")
    return 0


def cmd_train(args) -> int:
    from .train import TrainingDiverged, save_run_config, train

    if args.out is None:
        raise CliError("train requires --out DIR")
    raw = _load_config_file(args.config)
    model, model_cfg, train_cfg = _load_model(args, raw)
    resize_to = model_cfg.input_h if args.resize else None
    samples = _select_split(args.data, args.split, resize_to)
    _check_sample_shape(samples[0], model_cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    log_fn = None if args.quiet else (lambda s, v: print(f"step {s}: loss {v:.6f}"))
    try:
        result = train(model, samples, train_cfg, out_dir=args.out,
                       log_fn=log_fn, max_steps=args.max_steps)
    except TrainingDiverged as exc:
        raise CliError(str(exc))
    save_run_config(args.out, model_cfg, train_cfg, train_cfg.seed)
    print(f"finished {result.steps} steps; checkpoint at {result.checkpoint_prefix}")
    return 0


def _check_sample_shape(sample, model_cfg) -> None:
    if sample.image.shape != (model_cfg.input_h, model_cfg.input_w):
        raise CliError(
            f"dataset images are {sample.image.shape} but the model expects "
            f"({model_cfg.input_h}, {model_cfg.input_w}); pass --resize or adjust the config")


def _stub_probs(samples):
    import numpy as np

    return [s.mask.astype(np.float64) for s in samples]


def cmd_eval(args) -> int:
    from .metrics import evaluate_masks, write_roc_csv

    raw = _load_config_file(args.config)
    if args.oracle_stub:
        model_cfg, _ = _build_configs(args, raw)
        samples = _select_split(args.data, args.split)
        probs = _stub_probs(samples)
    else:
        if args.checkpoint is None:
            raise CliError("eval requires --checkpoint (or --oracle-stub)")
        model, model_cfg, _ = _load_model(args, raw)
        resize_to = model_cfg.input_h if args.resize else None
        samples = _select_split(args.data, args.split, resize_to)
        _check_sample_shape(samples[0], model_cfg)
        from .train import predict_probs
        probs = predict_probs(model, samples)
    report = evaluate_masks(probs, [s.mask for s in samples], threshold=args.threshold)
    _write_json(args.out, report.to_dict())
    if args.roc_csv is not None:
        write_roc_csv(args.roc_csv, report.roc)
    for line in report.summary_lines():
        print(line)
    return 0


def cmd_predict(args) -> int:
    import numpy as np

    from .data import write_pgm
    from .metrics import binarize

    if args.out is None:
        raise CliError("predict requires --out DIR")
    raw = _load_config_file(args.config)
    if args.oracle_stub:
        _build_configs(args, raw)
        samples = _select_split(args.data, args.split)
        probs = _stub_probs(samples)
    else:
        if args.checkpoint is None:
            raise CliError("predict requires --checkpoint (or --oracle-stub)")
        model, model_cfg, _ = _load_model(args, raw)
        resize_to = model_cfg.input_h if args.resize else None
        samples = _select_split(args.data, args.split, resize_to)
        _check_sample_shape(samples[0], model_cfg)
        from .train import predict_probs
        probs = predict_probs(model, samples)
    args.out.mkdir(parents=True, exist_ok=True)
    for sample, prob in zip(samples, probs):
        mask = binarize(prob, args.threshold) * 255
        write_pgm(args.out / f"{sample.id}.pgm", mask.astype(np.uint8))
    print(f"wrote {len(samples)} predicted masks to {args.out}")
    return 0


def cmd_flops(args) -> int:
    from .arch import MimModel
    from .complexity import count_flops

    raw = _load_config_file(args.config)
    model_cfg, train_cfg = _build_configs(args, raw)
    model = MimModel(model_cfg, seed=train_cfg.seed)
    report = count_flops(model)
    _write_json(args.out, report.to_dict())
    if args.out is not None:
        print(f"measured total {report.measured_total:.3e} ops "
              f"(encoder {report.measured_encoder:.3e}); "
              f"analytic block {report.analytic_mim_block} ops")
    return 0


def cmd_bench(args) -> int:
    import statistics
    import time

    import numpy as np

    from . import tensor as T
    from .arch import MimModel
    from .tensor import Tensor

    if args.repeat < 1:
        raise CliError("bench requires --repeat >= 1")
    raw = _load_config_file(args.config)
    model_cfg, train_cfg = _build_configs(args, raw)
    model = MimModel(model_cfg, seed=train_cfg.seed)
    model.eval()
    rng = np.random.default_rng(train_cfg.seed)
    images = Tensor(rng.random((1, 3, model_cfg.input_h, model_cfg.input_w),
                               dtype=np.float64).astype(model_cfg.dtype))
    T.set_debug_checks(False)
    try:
        with T.no_grad():
            for _ in range(args.warmup):
                model(images)
            times = []
            for _ in range(args.repeat):
                start = time.perf_counter()
                model(images)
                times.append(time.perf_counter() - start)
    finally:
        T.set_debug_checks(True)
    payload = {
        "schema": "mimnet-bench/1",
        "repeats": args.repeat,
        "image_hw": [model_cfg.input_h, model_cfg.input_w],
        "mean_seconds": statistics.fmean(times),
        "stddev_seconds": statistics.stdev(times) if len(times) > 1 else 0.0,
        "parameter_count": model.parameter_count(),
    }
    _write_json(args.out, payload)
    print(f"forward: {payload['mean_seconds'] * 1e3:.2f} ms/image "
          f"+- {payload['stddev_seconds'] * 1e3:.2f} ms over {args.repeat} runs")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "flops": cmd_flops,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
