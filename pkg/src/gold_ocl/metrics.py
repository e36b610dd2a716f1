"""
Evaluation Metrics

Segmentation quality (ARI-A, ARI-O, mIoU) and cross-scene object
identification (ACC) for trained models, plus the report tables that
aggregate repeated evaluation runs.
"""

import csv
import io
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from scipy.optimize import linear_sum_assignment
from torch.utils.data import DataLoader

from .config import GoldConfig
from .exceptions import InvalidArgumentError, LoadError, UndefinedMetricError
from .model import GoldModel
from .models import MetricRecord
from .scenegen import SceneDataset, SceneSample
from .utils import LoggingUtils

logger = logging.getLogger(__name__)

METRIC_NAMES = ("ARI-A", "ARI-O", "mIoU", "ACC")
REPORT_FIELDS = ("variant", "dataset", "metric", "mean", "std")


def _check_same_shape(pred: np.ndarray, truth: np.ndarray) -> None:
    if pred.shape != truth.shape:
        raise InvalidArgumentError(f"Prediction shape {pred.shape} != ground truth shape {truth.shape}")


def segmentation_from_masks(
    masks_hat: torch.Tensor,
    grid_shape: Tuple[int, int],
    image_shape: Tuple[int, int],
) -> np.ndarray:
    """
    Turn patch-level slot masks into pixel label maps.

    Masks are upsampled by nearest neighbour and each pixel takes the index
    of its most probable channel, so label 0 is the background slot.

    Args:
        masks_hat: B×(K+1)×N mask probabilities
        grid_shape: Patch grid (rows, cols) with rows*cols == N
        image_shape: Output (height, width)

    Returns:
        B×H×W integer labels in [0, K]
    """
    batch, channels, num_patches = masks_hat.shape
    rows, cols = grid_shape
    if rows * cols != num_patches:
        raise InvalidArgumentError(f"Grid {rows}x{cols} does not hold {num_patches} patches")
    grid = masks_hat.detach().float().reshape(batch, channels, rows, cols)
    pixels = F.interpolate(grid, size=tuple(image_shape), mode="nearest")
    return pixels.argmax(dim=1).cpu().numpy().astype(np.int64)


def _pairs(counts: np.ndarray) -> int:
    counts = counts.astype(np.int64)
    return int((counts * (counts - 1) // 2).sum())


def ari(pred: np.ndarray, truth: np.ndarray, objects_only: bool = False) -> float:
    """
    Adjusted Rand index between two labelings.

    Args:
        pred: Predicted labels
        truth: Ground-truth labels (0 is the background)
        objects_only: Restrict to pixels whose ground-truth label is not 0

    Returns:
        ARI in [-1, 1]; 1.0 when both labelings are trivially identical

    Raises:
        UndefinedMetricError: If no pixels remain after the restriction
    """
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    _check_same_shape(pred, truth)
    if objects_only:
        keep = truth != 0
        pred, truth = pred[keep], truth[keep]
    if pred.size == 0:
        raise UndefinedMetricError("ARI is undefined on an empty pixel set")

    _, pred_ids = np.unique(pred, return_inverse=True)
    _, truth_ids = np.unique(truth, return_inverse=True)
    contingency = np.zeros((pred_ids.max() + 1, truth_ids.max() + 1), dtype=np.int64)
    np.add.at(contingency, (pred_ids, truth_ids), 1)

    index = _pairs(contingency)
    pred_pairs = _pairs(contingency.sum(axis=1))
    truth_pairs = _pairs(contingency.sum(axis=0))
    total_pairs = pred.size * (pred.size - 1) // 2
    if total_pairs == 0:
        return 1.0

    expected = pred_pairs * truth_pairs / total_pairs
    maximum = (pred_pairs + truth_pairs) / 2
    if maximum == expected:
        return 1.0
    return float((index - expected) / (maximum - expected))


def masks_from_labels(labels: np.ndarray, count: int) -> np.ndarray:
    """One boolean mask per label value 0..count, (count+1)×H×W."""
    labels = np.asarray(labels)
    return labels[None] == np.arange(count + 1).reshape(-1, *([1] * labels.ndim))


def iou_matrix(pred_masks: np.ndarray, truth_masks: np.ndarray) -> np.ndarray:
    """Pairwise IoU of P×... and T×... boolean masks, P×T; empty unions score 0."""
    pred = np.asarray(pred_masks, dtype=bool).reshape(len(pred_masks), -1).astype(np.float64)
    truth = np.asarray(truth_masks, dtype=bool).reshape(len(truth_masks), -1).astype(np.float64)
    intersection = pred @ truth.T
    union = pred.sum(axis=1)[:, None] + truth.sum(axis=1)[None, :] - intersection
    return np.divide(intersection, union, out=np.zeros_like(intersection), where=union > 0)


def miou(pred: np.ndarray, truth: np.ndarray, include_background: bool = True) -> float:
    """
    Mean IoU of true segments under the best one-to-one segment matching.

    Unmatched true segments contribute 0.

    Args:
        pred: Predicted labels
        truth: Ground-truth labels
        include_background: Whether label 0 counts as a segment on both sides

    Returns:
        mIoU in [0, 1]
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    _check_same_shape(pred, truth)
    pred_labels = [v for v in np.unique(pred) if include_background or v != 0]
    truth_labels = [v for v in np.unique(truth) if include_background or v != 0]
    if not truth_labels:
        return 0.0 if pred_labels else 1.0
    if not pred_labels:
        return 0.0

    ious = iou_matrix(
        np.stack([pred == v for v in pred_labels]),
        np.stack([truth == v for v in truth_labels]),
    )
    rows, cols = linear_sum_assignment(ious, maximize=True)
    return float(ious[rows, cols].sum() / len(truth_labels))


@dataclass
class SlotPairing:
    """Object slots (1-based) paired to ground-truth objects (1-based)."""

    pairs: Dict[int, int] = field(default_factory=dict)
    ious: Dict[int, float] = field(default_factory=dict)
    assignment_score: float = 0.0
    num_slots: int = 0

    @property
    def unpaired(self) -> List[int]:
        return [slot for slot in range(1, self.num_slots + 1) if slot not in self.pairs]


def match_slots_to_objects(
    pred_masks: np.ndarray,
    truth_masks: np.ndarray,
    iou_threshold: float = 0.1,
    area_threshold: float = 0.01,
) -> SlotPairing:
    """
    Pair object slots with ground-truth objects by mask IoU.

    Channel 0 of both mask stacks is the background and never takes part.
    After the optimal assignment, slots whose IoU falls below
    ``iou_threshold`` or whose mask covers less than ``area_threshold`` of
    the image stay unpaired.

    Args:
        pred_masks: (K+1)×H×W boolean slot masks
        truth_masks: (K_gt+1)×H×W boolean object masks

    Returns:
        Injective slot-to-object pairing
    """
    pred = np.asarray(pred_masks, dtype=bool)
    truth = np.asarray(truth_masks, dtype=bool)
    if pred.shape[1:] != truth.shape[1:]:
        raise InvalidArgumentError(f"Mask sizes {pred.shape[1:]} and {truth.shape[1:]} disagree")
    num_slots = pred.shape[0] - 1
    pairing = SlotPairing(num_slots=num_slots)
    if num_slots < 1 or truth.shape[0] < 2:
        return pairing

    ious = iou_matrix(pred[1:], truth[1:])
    rows, cols = linear_sum_assignment(ious, maximize=True)
    pairing.assignment_score = float(ious[rows, cols].sum())

    pixels = float(np.prod(pred.shape[1:]))
    for row, col in zip(rows, cols):
        area = pred[row + 1].sum() / pixels
        if ious[row, col] < iou_threshold or area < area_threshold:
            continue
        pairing.pairs[int(row) + 1] = int(col) + 1
        pairing.ious[int(row) + 1] = float(ious[row, col])
    return pairing


@dataclass
class IdentityPrediction:
    """Predicted prototype of one object slot and the object it explains."""

    scene: int
    slot: int
    prototype: int  # argmax of the identity logits, 1-based
    area: float
    object: Optional[int] = None
    true_identity: Optional[int] = None

    @property
    def paired(self) -> bool:
        return self.object is not None and self.true_identity is not None


def _cooccurrence(predictions: Sequence[IdentityPrediction], shape: Tuple[int, int]) -> np.ndarray:
    counts = np.zeros(shape, dtype=np.int64)
    for p in predictions:
        counts[p.prototype - 1, p.true_identity - 1] += 1
    return counts


def _best_agreement(counts: np.ndarray) -> int:
    rows, cols = linear_sum_assignment(counts, maximize=True)
    return int(counts[rows, cols].sum())


def prototype_bijection(
    predictions: Sequence[IdentityPrediction],
    num_prototypes: Optional[int] = None,
    num_identities: Optional[int] = None,
) -> Dict[int, int]:
    """Learned prototype -> true identity mapping maximizing total agreement."""
    paired = [p for p in predictions if p.paired]
    if not paired:
        return {}
    shape = (
        num_prototypes or max(p.prototype for p in paired),
        num_identities or max(p.true_identity for p in paired),
    )
    rows, cols = linear_sum_assignment(_cooccurrence(paired, shape), maximize=True)
    return {int(r) + 1: int(c) + 1 for r, c in zip(rows, cols)}


def identity_accuracy(
    predictions: Iterable[IdentityPrediction],
    num_prototypes: Optional[int] = None,
    num_identities: Optional[int] = None,
    per_scene: bool = False,
) -> float:
    """
    Fraction of paired objects whose mapped prototype equals their identity.

    A single bijection between learned prototype indices and true identities
    is chosen over the whole set; with ``per_scene`` each scene gets its own.

    Args:
        predictions: Slot predictions; unpaired slots are ignored
        num_prototypes: Learned prototype count (defaults to the largest seen)
        num_identities: True identity count (defaults to the largest seen)
        per_scene: Match prototypes per scene instead of globally

    Returns:
        ACC in [0, 1]

    Raises:
        UndefinedMetricError: If no paired objects exist
    """
    paired = [p for p in predictions if p.paired]
    if not paired:
        raise UndefinedMetricError("Identity accuracy is undefined without paired objects")
    for p in paired:
        if p.prototype < 1 or p.true_identity < 1:
            raise InvalidArgumentError(f"Identity indices are 1-based, got {p}")
    shape = (
        num_prototypes or max(p.prototype for p in paired),
        num_identities or max(p.true_identity for p in paired),
    )

    if not per_scene:
        return _best_agreement(_cooccurrence(paired, shape)) / len(paired)

    by_scene: Dict[int, List[IdentityPrediction]] = defaultdict(list)
    for p in paired:
        by_scene[p.scene].append(p)
    agreed = sum(_best_agreement(_cooccurrence(group, shape)) for group in by_scene.values())
    return agreed / len(paired)


def _device_of(model: GoldModel) -> torch.device:
    return next(model.parameters()).device


@LoggingUtils.log_duration(logger)
def evaluate(
    model: GoldModel,
    samples: Sequence[SceneSample],
    config: GoldConfig,
    run: int = 0,
) -> Dict[str, float]:
    """
    Compute ARI-A, ARI-O, mIoU and ACC for one evaluation run.

    Slot initialization noise is drawn from a generator seeded with
    ``eval.seed + run``.

    Args:
        model: Trained (or untrained) model
        samples: Evaluation scenes
        config: Configuration supplying thresholds and the temperature
        run: Run index

    Returns:
        Mapping of metric name to value
    """
    if not samples:
        raise InvalidArgumentError("Evaluation needs a non-empty dataset")
    eval_config = config.eval
    tau = eval_config.tau or config.train.tau_end
    device = _device_of(model)
    generator = torch.Generator(device=device).manual_seed(eval_config.seed + run)
    image_shape = config.codec.image_shape
    grid_shape = config.codec.grid_shape

    loader = DataLoader(SceneDataset(samples), batch_size=eval_config.batch_size, shuffle=False, num_workers=0)
    ari_all: List[float] = []
    ari_obj: List[float] = []
    ious: List[float] = []
    identities: List[IdentityPrediction] = []

    model.eval()
    with torch.no_grad():
        for batch in loader:
            output = model(batch["image"].to(device), tau, generator).gocl
            predicted = segmentation_from_masks(output.components.masks_hat, grid_shape, image_shape)
            prototypes = output.dsa.gamma.argmax(dim=-1).cpu().numpy() + 1

            for row, index in enumerate(batch["index"].tolist()):
                sample = samples[index]
                truth = sample.labels
                labels = predicted[row]
                ari_all.append(ari(labels, truth))
                if sample.num_objects:
                    ari_obj.append(ari(labels, truth, objects_only=True))
                else:
                    logger.warning(f"Scene {index} has no objects; skipped for ARI-O")
                ious.append(miou(labels, truth, eval_config.miou_include_background))

                slot_masks = masks_from_labels(labels, model.num_slots)
                pairing = match_slots_to_objects(
                    slot_masks,
                    sample.masks,
                    eval_config.iou_threshold,
                    eval_config.area_threshold,
                )
                pixels = float(labels.size)
                for slot in range(1, model.num_slots + 1):
                    obj = pairing.pairs.get(slot)
                    identities.append(IdentityPrediction(
                        scene=index,
                        slot=slot,
                        prototype=int(prototypes[row, slot - 1]),
                        area=float(slot_masks[slot].sum() / pixels),
                        object=obj,
                        true_identity=int(sample.identities[obj - 1]) if obj else None,
                    ))

    try:
        acc = identity_accuracy(
            identities,
            num_prototypes=config.dsa.num_prototypes,
            num_identities=max(config.dsa.num_prototypes, config.scene.num_prototypes),
            per_scene=eval_config.per_scene_matching,
        )
    except UndefinedMetricError:
        logger.warning("No slot was paired with an object; ACC reported as 0")
        acc = 0.0

    results = {
        "ARI-A": float(np.mean(ari_all)),
        "ARI-O": float(np.mean(ari_obj)) if ari_obj else 0.0,
        "mIoU": float(np.mean(ious)),
        "ACC": float(acc),
    }
    logger.info(
        f"Run {run} on {len(samples)} scenes: "
        + " ".join(f"{name}={value:.4f}" for name, value in results.items())
    )
    return results


def evaluate_runs(
    model: GoldModel,
    samples: Sequence[SceneSample],
    config: GoldConfig,
    runs: Optional[int] = None,
) -> List[Dict[str, float]]:
    """Repeat ``evaluate`` for ``eval.runs`` runs with seeds ``eval.seed + run``."""
    runs = config.eval.runs if runs is None else runs
    return [evaluate(model, samples, config, run) for run in range(runs)]


def runs_to_csv(runs: Sequence[Dict[str, float]]) -> str:
    """Per-run metric table with one row per run."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["run", *METRIC_NAMES])
    for index, values in enumerate(runs):
        writer.writerow([index, *(repr(float(values[name])) for name in METRIC_NAMES)])
    return buffer.getvalue()


@dataclass
class Report:
    """Mean and spread of every metric per (variant, dataset)."""

    records: List[MetricRecord] = field(default_factory=list)

    @classmethod
    def from_runs(cls, variant: str, dataset: str, runs: Sequence[Dict[str, float]]) -> "Report":
        if not runs:
            raise InvalidArgumentError("A report needs at least one evaluation run")
        records = []
        for name in METRIC_NAMES:
            values = np.array([run[name] for run in runs], dtype=np.float64)
            records.append(MetricRecord(
                variant=variant,
                dataset=dataset,
                metric=name,
                mean=float(values.mean()),
                std=float(values.std()),
            ))
        return cls(records)

    def extend(self, other: "Report") -> "Report":
        self.records.extend(other.records)
        return self

    def groups(self) -> List[Tuple[str, str]]:
        seen: List[Tuple[str, str]] = []
        for record in self.records:
            key = (record.variant, record.dataset)
            if key not in seen:
                seen.append(key)
        return seen

    def lookup(self, variant: str, dataset: str, metric: str) -> Optional[MetricRecord]:
        for record in self.records:
            if (record.variant, record.dataset, record.metric) == (variant, dataset, metric):
                return record
        return None

    def to_text(self, precision: int = 4) -> str:
        """Fixed-width table, one row per (variant, dataset), cells ``mean ± std``."""
        header = ["variant", "dataset", *METRIC_NAMES]
        rows = []
        for variant, dataset in self.groups():
            cells = [variant, dataset]
            for metric in METRIC_NAMES:
                record = self.lookup(variant, dataset, metric)
                cells.append("-" if record is None else f"{record.mean:.{precision}f} ± {record.std:.{precision}f}")
            rows.append(cells)
        widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
        lines = ["  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip() for r in [header, *rows]]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(REPORT_FIELDS)
        for r in self.records:
            writer.writerow([r.variant, r.dataset, r.metric, repr(r.mean), repr(r.std)])
        return buffer.getvalue()

    def save(self, directory: Union[str, Path]) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "report.csv").write_text(self.to_csv(), encoding="utf-8")
        (directory / "report.txt").write_text(self.to_text(), encoding="utf-8")


def parse_report_csv(text: str) -> Report:
    """
    Read a report written by ``Report.to_csv``.

    Raises:
        InvalidArgumentError: If the header or a row is malformed
    """
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != REPORT_FIELDS:
        raise InvalidArgumentError(f"Unexpected report header: {reader.fieldnames}")
    try:
        return Report([MetricRecord(**row) for row in reader])
    except ValueError as e:
        raise InvalidArgumentError(f"Malformed report row: {e}")


def read_report(path: Union[str, Path]) -> Report:
    """Read ``report.csv`` from a file or an evaluation output directory."""
    path = Path(path)
    if path.is_dir():
        path = path / "report.csv"
    if not path.exists():
        raise LoadError("Report not found", path=path)
    return parse_report_csv(path.read_text(encoding="utf-8"))
