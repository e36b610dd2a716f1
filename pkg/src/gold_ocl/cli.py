"""
Command-line interface.

    gold <command> [--config PATH] [--set KEY=VALUE ...] --out DIR [command flags]

Commands generate datasets, train and evaluate models, aggregate reports and
emit the qualitative artifacts (prototype images, composed scenes, extrinsic
swaps and decompositions). Every command writes ``provenance.json`` beside
its outputs.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import torch
from pydantic import ValidationError

from .config import GoldConfig
from .exceptions import GoldError, LoadError, UsageError
from .generation import compose, decompose, infer_scene, pair_scene_slots, prototypes, swap
from .metrics import Report, evaluate_runs, read_report, runs_to_csv
from .models import ObjectSpec, ProvenanceRecord
from .scenegen import SceneSample, generate_dataset, library_from_config, read_dataset, write_dataset
from .trainer import Trainer
from .utils import ImageUtils, package_version

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _read_split(path: Path, split: str) -> List[SceneSample]:
    """Read ``path/split`` when it holds a split, ``path`` itself otherwise."""
    if (path / split / "manifest.json").exists():
        path = path / split
    return read_dataset(path)


def _require(args: argparse.Namespace, *names: str) -> None:
    for name in names:
        if getattr(args, name) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required for {args.command}")


def _load_trainer(args: argparse.Namespace, config: GoldConfig) -> Trainer:
    """Checkpointed trainer whose evaluation settings come from the command line."""
    _require(args, "checkpoint")
    trainer = Trainer.from_checkpoint(args.checkpoint, device=config.train.device)
    trainer.config.eval = config.eval
    trainer.model.eval()
    return trainer


def _scene(args: argparse.Namespace, index: Optional[int] = None) -> SceneSample:
    _require(args, "data")
    samples = _read_split(Path(args.data), "test")
    index = args.scene_index if index is None else index
    if not 0 <= index < len(samples):
        raise UsageError(f"--scene-index {index} out of range 0..{len(samples) - 1}")
    return samples[index]


def _generator(config: GoldConfig) -> torch.Generator:
    return torch.Generator(device=config.train.device).manual_seed(config.eval.seed)


def _tau(config: GoldConfig) -> float:
    return config.eval.tau or config.train.tau_end


def cmd_gen_data(args: argparse.Namespace, config: GoldConfig, out: Path) -> None:
    scene = config.scene
    lib = library_from_config(scene)
    for offset, (split, size) in enumerate((("train", scene.train_size), ("test", scene.test_size))):
        seed = scene.dataset_seed + offset
        samples = generate_dataset(lib, scene, size, seed)
        write_dataset(
            samples,
            out / split,
            lib,
            config.config_hash(),
            split=split,
            count_range=(scene.min_objects, scene.max_objects),
            dataset_seed=seed,
        )


def cmd_train(args: argparse.Namespace, config: GoldConfig, out: Path) -> None:
    _require(args, "data")
    samples = _read_split(Path(args.data), "train")
    trainer = Trainer(config)
    if args.checkpoint is not None:
        trainer.load_checkpoint(args.checkpoint)
    trainer.train(samples, out)
    config.save_to_file(out / "config.json")


def cmd_eval(args: argparse.Namespace, config: GoldConfig, out: Path) -> None:
    _require(args, "data")
    trainer = _load_trainer(args, config)
    samples = _read_split(Path(args.data), "test")
    runs = evaluate_runs(trainer.model, samples, trainer.config)
    dataset = args.dataset_name or Path(args.data).name
    report = Report.from_runs(trainer.variant, dataset, runs)
    (out / "runs.csv").write_text(runs_to_csv(runs), encoding="utf-8")
    report.save(out)
    print(report.to_text(), end="")


def cmd_report(args: argparse.Namespace, config: GoldConfig, out: Path) -> None:
    if not args.inputs:
        raise UsageError("--inputs needs at least one evaluation output")
    report = Report()
    for path in args.inputs:
        report.extend(read_report(path))
    report.save(out)
    print(report.to_text(), end="")


def cmd_prototypes(args: argparse.Namespace, config: GoldConfig, out: Path) -> None:
    trainer = _load_trainer(args, config)
    for c, image in enumerate(prototypes(trainer.model), start=1):
        ImageUtils.save_image(image, out / f"prototype_{c:02d}.png")


def _read_specs(path: str) -> List[ObjectSpec]:
    spec_path = Path(path)
    if not spec_path.exists():
        raise LoadError("Compose specification not found", path=spec_path)
    try:
        data = json.loads(spec_path.read_text(encoding="utf-8"))
        if isinstance(data, dict):
            data = data.get("objects", [])
        return [ObjectSpec(**item) for item in data]
    except (json.JSONDecodeError, TypeError, ValidationError) as e:
        raise LoadError(f"Invalid compose specification: {e}", path=spec_path)


def cmd_compose(args: argparse.Namespace, config: GoldConfig, out: Path) -> None:
    _require(args, "spec")
    trainer = _load_trainer(args, config)
    specs = _read_specs(args.spec)
    reference = None
    if args.reference_index is not None:
        sample = _scene(args, args.reference_index)
        reference = infer_scene(trainer.model, sample.image, _tau(config), _generator(config)).output
    image = compose(trainer.model, specs, reference)
    ImageUtils.save_image(image, out / "compose.png")


def cmd_swap(args: argparse.Namespace, config: GoldConfig, out: Path) -> None:
    _require(args, "slot_i", "slot_j")
    trainer = _load_trainer(args, config)
    sample = _scene(args)
    scene = infer_scene(trainer.model, sample.image, _tau(config), _generator(config))
    pairing = pair_scene_slots(trainer.model, scene, sample, trainer.config)
    before, after = swap(trainer.model, scene, args.slot_i, args.slot_j, pairing)
    ImageUtils.save_image(before, out / "before.png")
    ImageUtils.save_image(after, out / "after.png")


def cmd_decompose(args: argparse.Namespace, config: GoldConfig, out: Path) -> None:
    trainer = _load_trainer(args, config)
    sample = _scene(args)
    scene = infer_scene(trainer.model, sample.image, _tau(config), _generator(config))
    panels = decompose(trainer.model, scene)
    ImageUtils.save_image(panels[0], out / "background.png")
    for slot, panel in enumerate(panels[1:-1], start=1):
        ImageUtils.save_image(panel, out / f"slot_{slot:02d}.png")
    ImageUtils.save_image(panels[-1], out / "overlay.png")
    ImageUtils.save_image(ImageUtils.tile(panels), out / "panels.png")
    ImageUtils.save_image(scene.reconstruction, out / "reconstruction.png")
    ImageUtils.save_label_map(scene.labels, out / "segmentation.png")


COMMANDS: Dict[str, Callable[[argparse.Namespace, GoldConfig, Path], None]] = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "report": cmd_report,
    "prototypes": cmd_prototypes,
    "compose": cmd_compose,
    "swap": cmd_swap,
    "decompose": cmd_decompose,
}


def build_parser() -> argparse.ArgumentParser:
    """Parser with one subcommand per entry of ``COMMANDS``."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="Override a configuration value (repeatable)",
    )
    common.add_argument("--out", required=True, help="Output directory")

    parser = argparse.ArgumentParser(
        prog="gold",
        description="Global object-centric learning with disentangled slot attention",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {package_version()}")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        return subparsers.add_parser(name, parents=[common], help=help_text)

    add("gen-data", "Generate train and test scene splits")

    train = add("train", "Train a model variant")
    train.add_argument("--data", help="Dataset directory or train split")
    train.add_argument("--checkpoint", help="Checkpoint to resume from")

    evaluate = add("eval", "Evaluate a checkpoint")
    evaluate.add_argument("--data", help="Dataset directory or test split")
    evaluate.add_argument("--checkpoint", help="Checkpoint directory")
    evaluate.add_argument("--dataset-name", help="Dataset name in the report")

    report = add("report", "Aggregate evaluation reports")
    report.add_argument("--inputs", nargs="+", help="Evaluation output directories or report files")

    proto = add("prototypes", "Render one image per prototype")
    proto.add_argument("--checkpoint", help="Checkpoint directory")

    comp = add("compose", "Generate a scene from chosen prototypes")
    comp.add_argument("--checkpoint", help="Checkpoint directory")
    comp.add_argument("--spec", help="JSON list of objects")
    comp.add_argument("--data", help="Dataset holding the reference scene")
    comp.add_argument("--reference-index", type=int, help="Reference scene index")

    sw = add("swap", "Exchange the extrinsic attributes of two objects")
    sw.add_argument("--checkpoint", help="Checkpoint directory")
    sw.add_argument("--data", help="Dataset directory or test split")
    sw.add_argument("--scene-index", type=int, default=0, help="Scene index")
    sw.add_argument("--slot-i", type=int, help="First object slot, 1-based")
    sw.add_argument("--slot-j", type=int, help="Second object slot, 1-based")

    dec = add("decompose", "Render per-slot panels of a scene")
    dec.add_argument("--checkpoint", help="Checkpoint directory")
    dec.add_argument("--data", help="Dataset directory or test split")
    dec.add_argument("--scene-index", type=int, default=0, help="Scene index")

    return parser


def _load_config(args: argparse.Namespace) -> GoldConfig:
    config = GoldConfig.from_file(args.config) if args.config else GoldConfig.from_env()
    if args.overrides:
        config = config.apply_overrides(args.overrides)
    return config


def _provenance(args: argparse.Namespace, config: GoldConfig) -> ProvenanceRecord:
    arguments: Dict[str, Any] = {
        key: value for key, value in vars(args).items() if key != "command"
    }
    seed = config.scene.dataset_seed if args.command == "gen-data" else config.train.seed
    return ProvenanceRecord(
        command=args.command,
        config_hash=config.config_hash(),
        seed=seed,
        version=package_version(),
        arguments=arguments,
    )


def run(args: argparse.Namespace) -> None:
    """Execute a parsed command and write its provenance record."""
    config = _load_config(args)
    config.setup_logging()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    logger.info(f"Running {args.command} into {out}")
    COMMANDS[args.command](args, config, out)
    record = _provenance(args, config)
    (out / "provenance.json").write_text(record.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"{args.command} finished")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Entry point of the ``gold`` command.

    Returns:
        0 on success, 1 when a command fails, 2 on usage errors
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    try:
        run(args)
    except UsageError as e:
        print(f"gold {args.command}: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (GoldError, FileNotFoundError) as e:
        print(f"gold {args.command}: error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
