"""Dice metrics, ensemble inference, and the experiment harness.

Mean Dice always averages the foreground classes; background Dice is
reported separately in the per-class map. Aggregation over a dataset is
micro (global pixel counts) by default, with a per-sample macro option.
"""

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch

from .errors import ConfigError, InputError
from .networks import NetworkHandle, segment
from .phantoms import Dataset, LabeledSample
from .training import (
    SINGLE_SEGMENTOR_MODES,
    TrainerState,
    TrainingConfig,
    run_training,
)

MODEL_TAGS = ("syn", "real", "ensemble", "baseline", "fine_tune", "joint")

ABLATION_VARIANTS = ("no_iam", "kd_s2r_only", "kd_r2s_only", "full")

Predictor = Callable[[LabeledSample], np.ndarray]


@dataclass(frozen=True)
class DiceReport:
    """Per-class and foreground-mean Dice for one model on one dataset."""

    per_class: Dict[int, float]
    mean: float
    model_tag: str
    dataset_id: str
    aggregation: str = "micro"

    @classmethod
    def from_per_class(cls, per_class: Dict[int, float], model_tag: str,
                       dataset_id: str, aggregation: str = "micro") -> "DiceReport":
        foreground = [v for c, v in per_class.items() if c != 0]
        if not foreground:
            raise InputError("need at least one foreground class")
        return cls(per_class=dict(per_class), mean=float(np.mean(foreground)),
                   model_tag=model_tag, dataset_id=dataset_id,
                   aggregation=aggregation)


def dice_coefficient(pred_label: np.ndarray, true_label: np.ndarray,
                     class_id: int, num_classes: Optional[int] = None) -> float:
    """Overlap 2|P n G| / (|P| + |G|) for one class; 1.0 when both empty."""
    pred_label = np.asarray(pred_label)
    true_label = np.asarray(true_label)
    if pred_label.shape != true_label.shape:
        raise InputError(
            f"shape mismatch: {pred_label.shape} vs {true_label.shape}"
        )
    if class_id < 0 or (num_classes is not None and class_id >= num_classes):
        raise InputError(f"class_id {class_id} out of range")
    p = pred_label == class_id
    g = true_label == class_id
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


def _argmax_lowest(probs: np.ndarray, axis: int = 0) -> np.ndarray:
    # np.argmax picks the first maximum, i.e. the lowest class index on ties.
    return np.argmax(probs, axis=axis).astype(np.int64)


def ensemble_predict(s_syn: NetworkHandle, s_real: NetworkHandle,
                     x_t: torch.Tensor):
    """Average the two segmentors' probability maps, then argmax.

    Ties break toward the lowest class index. Returns (probability map,
    label map); the average of two per-pixel distributions is itself one.
    """
    if s_syn.spec.num_classes != s_real.spec.num_classes:
        raise ConfigError(
            f"segmentors disagree on num_classes: "
            f"{s_syn.spec.num_classes} vs {s_real.spec.num_classes}"
        )
    with torch.no_grad():
        probs = (segment(s_syn, x_t) + segment(s_real, x_t)) / 2.0
    class_axis = 0 if probs.dim() == 3 else 1
    label = _argmax_lowest(probs.cpu().numpy(), axis=class_axis)
    return probs, label


def segmentor_predictor(handle: NetworkHandle) -> Predictor:
    """Single-model per-sample label predictor."""
    dtype = handle.dtype

    def predict(sample: LabeledSample) -> np.ndarray:
        x = torch.from_numpy(sample.image).to(dtype)
        with torch.no_grad():
            probs = segment(handle, x)
        return _argmax_lowest(probs.cpu().numpy(), axis=0)

    return predict


def ensemble_predictor(s_syn: NetworkHandle, s_real: NetworkHandle) -> Predictor:
    dtype = s_syn.dtype

    def predict(sample: LabeledSample) -> np.ndarray:
        x = torch.from_numpy(sample.image).to(dtype)
        _, label = ensemble_predict(s_syn, s_real, x)
        return label

    return predict


def mode_predictor(state: TrainerState, mode: str) -> Predictor:
    """The test-time predictor a training mode is evaluated with."""
    if mode in SINGLE_SEGMENTOR_MODES:
        return segmentor_predictor(state.nets["s_real"])
    return ensemble_predictor(state.nets["s_syn"], state.nets["s_real"])


def evaluate_model(predict_fn: Predictor, ds: Dataset, model_tag: str = "real",
                   dataset_id: Optional[str] = None,
                   aggregation: str = "micro") -> DiceReport:
    """Per-class Dice of a predictor over a labeled dataset.

    micro pools pixel counts over the whole dataset before forming each
    class's Dice; macro averages per-sample Dice values instead.
    """
    if len(ds) == 0:
        raise InputError("cannot evaluate on an empty dataset")
    if aggregation not in ("micro", "macro"):
        raise InputError(f"aggregation must be micro or macro, got {aggregation!r}")
    ds.validate()
    num_classes = ds.num_classes
    dataset_id = dataset_id or f"{ds.modality}[{len(ds)}]"

    if aggregation == "micro":
        inter = np.zeros(num_classes, dtype=np.int64)
        sizes = np.zeros(num_classes, dtype=np.int64)
        for sample in ds.samples:
            pred = predict_fn(sample)
            for c in range(num_classes):
                p = pred == c
                g = sample.label == c
                inter[c] += int((p & g).sum())
                sizes[c] += int(p.sum()) + int(g.sum())
        per_class = {
            c: (1.0 if sizes[c] == 0 else 2.0 * inter[c] / sizes[c])
            for c in range(num_classes)
        }
    else:
        acc = np.zeros(num_classes, dtype=np.float64)
        for sample in ds.samples:
            pred = predict_fn(sample)
            for c in range(num_classes):
                acc[c] += dice_coefficient(pred, sample.label, c, num_classes)
        per_class = {c: acc[c] / len(ds) for c in range(num_classes)}

    return DiceReport.from_per_class(per_class, model_tag, dataset_id, aggregation)


@dataclass
class ExperimentData:
    """Train/test split shared by the comparison and ablation harnesses."""

    train_target: Dataset
    train_assistant: Dataset
    test_target: Dataset


def _subset(ds: Dataset, count: int) -> Dataset:
    return Dataset(samples=ds.samples[:count], modality=ds.modality,
                   num_classes=ds.num_classes)


def evaluate_trained(state: TrainerState, test_ds: Dataset,
                     dataset_id: Optional[str] = None) -> Dict[str, DiceReport]:
    """Dice of both segmentors and their ensemble on a test set."""
    s_syn, s_real = state.nets["s_syn"], state.nets["s_real"]
    return {
        "syn": evaluate_model(segmentor_predictor(s_syn), test_ds, "syn", dataset_id),
        "real": evaluate_model(segmentor_predictor(s_real), test_ds, "real", dataset_id),
        "ensemble": evaluate_model(ensemble_predictor(s_syn, s_real), test_ds,
                                   "ensemble", dataset_id),
    }


def run_ablation(suite: str, data: ExperimentData,
                 cfg: TrainingConfig) -> Dict[str, Dict[str, DiceReport]]:
    """Train ablation variants with shared seed/data; report syn/real/ensemble.

    ``suite='full'`` runs all four variants; any single variant name runs
    just that one. The 'full' variant row is the unablated scheme.
    """
    if suite == "full":
        variants: Sequence[str] = ABLATION_VARIANTS
    elif suite in ABLATION_VARIANTS:
        variants = (suite,)
    else:
        raise ConfigError(f"suite must be 'full' or one of {ABLATION_VARIANTS}")
    table: Dict[str, Dict[str, DiceReport]] = {}
    for variant in variants:
        mode = "mkd" if variant == "full" else variant
        state, _ = run_training(data.train_target, data.train_assistant,
                                replace(cfg, mode=mode))
        table[variant] = evaluate_trained(state, data.test_target)
    return table


def run_assistant_sweep(counts: Sequence[int], data: ExperimentData,
                        cfg: TrainingConfig) -> Dict[int, DiceReport]:
    """Full-scheme training per assistant-data amount; ensemble Dice per count."""
    for count in counts:
        if count > len(data.train_assistant):
            raise ConfigError(
                f"count {count} exceeds assistant dataset size "
                f"{len(data.train_assistant)}"
            )
        if count < 1:
            raise ConfigError(f"count must be >= 1, got {count}")
    table: Dict[int, DiceReport] = {}
    for count in counts:
        state, _ = run_training(data.train_target,
                                _subset(data.train_assistant, count),
                                replace(cfg, mode="mkd"))
        table[count] = evaluate_trained(state, data.test_target)["ensemble"]
    return table


def write_dice_csv(reports: Sequence[DiceReport], path: Path) -> None:
    """One row per model_tag x class, plus that tag's foreground mean."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model_tag", "dataset_id", "aggregation", "class", "dice"])
        for report in reports:
            for c in sorted(report.per_class):
                writer.writerow([report.model_tag, report.dataset_id,
                                 report.aggregation, c, f"{report.per_class[c]:.6f}"])
            writer.writerow([report.model_tag, report.dataset_id,
                             report.aggregation, "mean", f"{report.mean:.6f}"])


def write_summary(reports: Sequence[DiceReport], path: Path) -> None:
    lines = []
    for report in reports:
        per_class = " ".join(
            f"class{c}={report.per_class[c]:.4f}" for c in sorted(report.per_class)
        )
        lines.append(
            f"model={report.model_tag} dataset={report.dataset_id} "
            f"aggregation={report.aggregation} mean={report.mean:.4f} {per_class}"
        )
    Path(path).write_text("\n".join(lines) + "\n")
