"""``lowlight-structure`` command line: make-data, train, enhance and eval.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure
(unreadable data, corrupt checkpoint, diverged training).
"""
import sys
import json
import typing
import pathlib
import argparse
import structlog

import torch

import lowlight_structure.errors as errors
from lowlight_structure import __version__
from lowlight_structure.config import ABLATION_ALIASES, AblationFlags, RunConfig, load_run_config, spatial_multiple
from lowlight_structure.context import bind_run
from lowlight_structure.csv import write_flat_csv, write_records_csv
from lowlight_structure.data import PairedDataset, add_gaussian_noise, build_dataset, synthesize_scenes
from lowlight_structure.imaging import edge_metrics, psnr, ssim, threshold_edges, to_luminance
from lowlight_structure.imaging.io import pad_to_multiple, read_image, unpad, write_image
from lowlight_structure.imaging.metrics import build_metric_report
from lowlight_structure.logs import configure_logging
from lowlight_structure.training import Trainer, load_checkpoint

logger = structlog.get_logger(__name__)

__all__ = ('main', 'build_parser', 'cmd_make_data', 'cmd_train', 'cmd_enhance', 'cmd_eval')

RUN_CONFIG = "run_config.json"
COMMAND_RECORD = "command.json"
INTERMEDIATE_SUFFIXES = ("_appearance", "_structure", "_pyramid_")
ABLATION_CHOICES = sorted(set(AblationFlags().dump()) | set(ABLATION_ALIASES))


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str):
        raise errors.UsageError(description=f"{self.prog}: {message}")


def _archive(config: RunConfig, out_dir: pathlib.Path, command: dict):
    """Write the effective config (loadable again with --config) and, beside it, the invocation."""
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / RUN_CONFIG, "w") as handle:
        json.dump(config.dump(), handle, indent=2, sort_keys=True)
    with open(out_dir / COMMAND_RECORD, "w") as handle:
        json.dump(command, handle, indent=2, sort_keys=True)


def _overrides(args: argparse.Namespace) -> dict:
    overrides: dict = {"train": {}, "data": {}}
    if getattr(args, "out", None):
        overrides["output_dir"] = args.out
    if args.log_level:
        overrides["log_level"] = args.log_level
    if args.seed is not None:
        overrides["train"]["seed"] = args.seed
        overrides["degrade"] = {"seed": args.seed}
    if getattr(args, "steps", None) is not None:
        overrides["train"]["steps"] = args.steps
    if getattr(args, "batch_size", None) is not None:
        overrides["train"]["batch_size"] = args.batch_size
    if getattr(args, "checkpoint_every", None) is not None:
        overrides["train"]["checkpoint_every"] = args.checkpoint_every
    if getattr(args, "ablation", None):
        overrides["train"]["ablation"] = {ABLATION_ALIASES.get(name, name): True for name in args.ablation}
    if getattr(args, "manifest", None):
        overrides["data"]["manifest"] = args.manifest
    if getattr(args, "workers", None) is not None:
        overrides["data"]["workers"] = args.workers
    return {key: value for key, value in overrides.items() if value != {}}


def _stems(directory: pathlib.Path, skip_intermediates: bool = False) -> typing.Dict[str, pathlib.Path]:
    if not directory.is_dir():
        raise errors.ObjectDoesntExistError("Directory", "path", str(directory))
    stems = {}
    for path in sorted(directory.glob("*.png")):
        if skip_intermediates and any(suffix in path.stem for suffix in INTERMEDIATE_SUFFIXES):
            continue
        stems[path.stem] = path
    return stems


def cmd_make_data(args: argparse.Namespace) -> int:
    config = load_run_config(args.config, _overrides(args))
    out_dir = pathlib.Path(args.out or config.output_dir)
    src_dir = pathlib.Path(args.src) if args.src else out_dir / "source"
    if args.synthetic:
        synthesize_scenes(src_dir, args.synthetic, args.size, config.degrade.seed)
    elif not args.src:
        raise errors.UsageError(description="make-data needs --src or --synthetic")
    _archive(config, out_dir, {"name": "make-data", "src": str(src_dir)})
    manifest = build_dataset(src_dir, out_dir, config.degrade, config.canny, workers=config.data.workers)
    summary = {
        "manifest": str(out_dir / "manifest.json"),
        "count": manifest["counts"]["images"],
        "skipped": manifest["counts"]["skipped"],
        "config_hash": manifest["config_hash"],
    }
    print(json.dumps(summary, sort_keys=True))
    return errors.EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    overrides = _overrides(args)
    if args.resume:
        saved = load_checkpoint(args.resume, overrides)
        config = saved.config
    else:
        config = load_run_config(args.config, overrides)
    if not config.data.manifest:
        raise errors.UsageError(description="train needs --manifest (or data.manifest in the config)")
    dataset = PairedDataset(config.data.manifest)
    out_dir = pathlib.Path(config.output_dir)
    _archive(config, out_dir, {"name": "train", "resume": args.resume})
    trainer = Trainer(saved, dataset, out_dir) if args.resume else Trainer.from_config(config, dataset)
    history = trainer.run()
    if history:
        print(json.dumps(history[-1]._asdict(), sort_keys=True))
    return errors.EXIT_OK


def _match_channels(image: torch.Tensor, channels: int) -> torch.Tensor:
    if image.shape[1] == channels:
        return image
    if channels == 1:
        return to_luminance(image)
    return image.expand(-1, channels, -1, -1)


def _feature_preview(feature: torch.Tensor) -> torch.Tensor:
    preview = feature.abs().mean(dim=1, keepdim=True)
    peak = preview.amax(dim=(-2, -1), keepdim=True).clamp_min(1e-12)
    return preview / peak


def cmd_enhance(args: argparse.Namespace) -> int:
    state = load_checkpoint(args.checkpoint)
    config = state.config
    framework = state.framework.eval()
    multiple = spatial_multiple(config.model)
    channels = config.model.image_channels
    out_dir = pathlib.Path(args.out)
    inputs = []
    for entry in args.inputs:
        path = pathlib.Path(entry)
        inputs.extend(sorted(path.glob("*.png")) if path.is_dir() else [path])
    if not inputs:
        raise errors.UsageError(description="enhance found no input images")
    _archive(config, out_dir, {"name": "enhance", "checkpoint": args.checkpoint, "inputs": [str(p) for p in inputs],
                               "extra_noise_sigma": args.extra_noise_sigma})
    guidance = {}
    for index, path in enumerate(inputs):
        sample_id = path.stem
        image = _match_channels(read_image(path, sample_id), channels)
        if args.extra_noise_sigma:
            image = add_gaussian_noise(image, args.extra_noise_sigma, seed=args.noise_seed + index)
        padded, record = pad_to_multiple(image, multiple)
        with torch.no_grad():
            outputs = framework(padded)
        write_image(out_dir / f"{sample_id}.png", unpad(outputs.enhanced, record))
        if args.dump_intermediates:
            write_image(out_dir / f"{sample_id}_appearance.png", unpad(outputs.appearance, record))
            if outputs.edges is not None:
                edges = threshold_edges(outputs.edges) if args.binarize_edges else outputs.edges
                write_image(out_dir / f"{sample_id}_structure.png", unpad(edges, record))
        if args.dump_pyramid and framework.structure is not None:
            with torch.no_grad():
                pyramid = framework.structure.intermediates(padded)["pyramid"]
            for level, feature in enumerate(pyramid):
                write_image(out_dir / f"{sample_id}_pyramid_{level}.png", _feature_preview(feature))
        if args.dump_guidance and outputs.edges is not None:
            with torch.no_grad():
                appearance = framework.estimate_appearance(padded)
            guidance[sample_id] = framework.sgem.guidance_statistics(appearance, padded, outputs.edges)
        logger.info("enhance.image", sample_id=sample_id, height=record.height, width=record.width)
    if args.dump_guidance:
        if not guidance:
            logger.warn("enhance.no_guidance", reason="structure model disabled")
        with open(out_dir / "guidance.json", "w") as handle:
            json.dump(guidance, handle, indent=2, sort_keys=True)
        if guidance:
            write_flat_csv(out_dir / "guidance.csv", guidance)
    print(json.dumps({"images": len(inputs), "out": str(out_dir)}, sort_keys=True))
    return errors.EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = load_run_config(args.config, _overrides(args))
    pred = _stems(pathlib.Path(args.pred), skip_intermediates=True)
    gt = _stems(pathlib.Path(args.gt))
    missing = sorted(set(pred) ^ set(gt))
    if missing:
        raise errors.IdMismatchError(missing)
    with_edges = bool(args.pred_edges and args.gt_edges)
    if bool(args.pred_edges) != bool(args.gt_edges):
        raise errors.UsageError(description="--pred-edges and --gt-edges go together")
    ids = sorted(gt)
    scores: typing.Dict[str, typing.List[float]] = {"psnr": [], "ssim": []}
    if with_edges:
        scores.update(ce=[], l2=[])
    for sample_id in ids:
        a, b = read_image(pred[sample_id], sample_id), read_image(gt[sample_id], sample_id)
        scores["psnr"].append(float(psnr(a, b)[0]))
        scores["ssim"].append(float(ssim(a, b)[0]))
        if with_edges:
            p_edges = read_image(pathlib.Path(args.pred_edges) / f"{sample_id}{args.edge_suffix}.png", sample_id)
            g_edges = read_image(pathlib.Path(args.gt_edges) / f"{sample_id}.png", sample_id)
            metrics = edge_metrics(p_edges[:, :1], g_edges[:, :1])
            scores["ce"].append(float(metrics["ce"][0]))
            scores["l2"].append(float(metrics["l2"][0]))
    report = build_metric_report(ids, scores)
    out_dir = pathlib.Path(args.out)
    _archive(
        config,
        out_dir,
        {"name": "eval", "pred": args.pred, "gt": args.gt, "pred_edges": args.pred_edges, "gt_edges": args.gt_edges},
    )
    with open(out_dir / "report.json", "w") as handle:
        json.dump(report, handle, indent=2, sort_keys=True)
    write_records_csv(out_dir / "report.csv", report["images"])
    print(json.dumps({"count": report["count"], "mean": report["mean"]}, sort_keys=True))
    return errors.EXIT_OK


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--log-level", default=None)
    parser.add_argument("--json-logs", action="store_true")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="lowlight-structure", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", parser_class=ArgumentParser)
    commands.required = True

    make_data = commands.add_parser("make-data", help="degrade clean images into a paired dataset")
    _common(make_data)
    make_data.add_argument("--src", help="directory of normal-light images")
    make_data.add_argument("--out", help="dataset directory")
    make_data.add_argument("--synthetic", type=int, default=0, help="generate this many scenes into <out>/source")
    make_data.add_argument("--size", type=int, default=64)
    make_data.add_argument("--workers", type=int)
    make_data.set_defaults(handler=cmd_make_data)

    train = commands.add_parser("train", help="train all models end to end")
    _common(train)
    train.add_argument("--manifest")
    train.add_argument("--out")
    train.add_argument("--steps", type=int)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--checkpoint-every", type=int)
    train.add_argument("--ablation", action="append", choices=ABLATION_CHOICES, default=[])
    train.add_argument("--resume", help="checkpoint to continue from")
    train.set_defaults(handler=cmd_train)

    enhance = commands.add_parser("enhance", help="enhance images with a trained checkpoint")
    _common(enhance)
    enhance.add_argument("--checkpoint", required=True)
    enhance.add_argument("--out", required=True)
    enhance.add_argument("inputs", nargs="+", help="PNG files or directories")
    enhance.add_argument("--dump-intermediates", action="store_true")
    enhance.add_argument("--binarize-edges", action="store_true", help="threshold the dumped structure map at 0.5")
    enhance.add_argument("--dump-pyramid", action="store_true")
    enhance.add_argument("--dump-guidance", action="store_true")
    enhance.add_argument("--extra-noise-sigma", type=float, default=0.0, help="noise std in [0, 1] units")
    enhance.add_argument("--noise-seed", type=int, default=0)
    enhance.set_defaults(handler=cmd_enhance)

    evaluate = commands.add_parser("eval", help="score predictions against ground truth")
    _common(evaluate)
    evaluate.add_argument("--pred", required=True)
    evaluate.add_argument("--gt", required=True)
    evaluate.add_argument("--pred-edges")
    evaluate.add_argument("--gt-edges")
    evaluate.add_argument("--edge-suffix", default="", help="suffix of predicted edge files, e.g. _structure")
    evaluate.add_argument("--out", required=True)
    evaluate.set_defaults(handler=cmd_eval)
    return parser


def main(argv: typing.Optional[typing.Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.log_level or "info", json=args.json_logs)
        bind_run(args.command)
        return args.handler(args)
    except errors.ApplicationError as e:
        logger.error("command.failed", **e.to_dict())
        print(f"error: {e.description}", file=sys.stderr)
        return e.exit_code
