import dataclasses

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mkdseg.errors import ConfigError, InputError
from mkdseg.evaluation import (
    DiceReport,
    ExperimentData,
    dice_coefficient,
    ensemble_predict,
    ensemble_predictor,
    evaluate_model,
    run_ablation,
    run_assistant_sweep,
    segmentor_predictor,
    write_dice_csv,
    write_summary,
)
from mkdseg.networks import NetworkSpec, build_network, segment
from mkdseg.phantoms import Dataset, LabeledSample, default_spec, make_dataset
from mkdseg.training import TrainingConfig


# ----------------------------------------------------------------------- dice

def test_dice_identical_masks():
    m = np.array([[0, 1], [1, 2]])
    for c in range(3):
        assert dice_coefficient(m, m, c) == 1.0


def test_dice_disjoint_masks():
    pred = np.array([[1, 1], [0, 0]])
    true = np.array([[0, 0], [1, 1]])
    assert dice_coefficient(pred, true, 1) == 0.0


def test_dice_hand_count_example():
    # |P| = 3, |G| = 4, |P n G| = 2 -> 2*2 / (3+4) = 4/7
    pred = np.array([[1, 1, 1, 0, 0, 0, 0]])
    true = np.array([[1, 1, 0, 1, 1, 0, 0]])
    assert dice_coefficient(pred, true, 1) == pytest.approx(4 / 7)


def test_dice_both_empty_is_one():
    z = np.zeros((4, 4), dtype=int)
    assert dice_coefficient(z, z, 3) == 1.0


def test_dice_rejects_bad_inputs():
    m = np.zeros((4, 4), dtype=int)
    with pytest.raises(InputError):
        dice_coefficient(m, np.zeros((3, 3), dtype=int), 0)
    with pytest.raises(InputError):
        dice_coefficient(m, m, -1)
    with pytest.raises(InputError):
        dice_coefficient(m, m, 4, num_classes=4)


def hand_dice(pred, true, c):
    p = int((pred == c).sum())
    g = int((true == c).sum())
    inter = int(((pred == c) & (true == c)).sum())
    return 1.0 if p + g == 0 else 2 * inter / (p + g)


def test_dice_matches_hand_count_on_random_masks():
    rng = np.random.default_rng(3)
    for _ in range(10):
        pred = rng.integers(0, 3, size=(9, 9))
        true = rng.integers(0, 3, size=(9, 9))
        for c in range(3):
            assert dice_coefficient(pred, true, c) == pytest.approx(
                hand_dice(pred, true, c))


@given(arrays(np.int64, (6, 6), elements=st.integers(0, 2)),
       arrays(np.int64, (6, 6), elements=st.integers(0, 2)))
@settings(max_examples=50, deadline=None)
def test_dice_symmetric_and_bounded(pred, true):
    for c in range(3):
        d = dice_coefficient(pred, true, c)
        assert 0.0 <= d <= 1.0
        assert d == dice_coefficient(true, pred, c)


# ------------------------------------------------------------------- ensemble

@pytest.fixture
def two_segmentors():
    spec = NetworkSpec("segmentor", 4, 1, num_classes=3)
    return build_network(spec, 21), build_network(spec, 22)


def test_ensemble_of_identical_segmentors_matches_single(two_segmentors):
    s, _ = two_segmentors
    x = torch.rand(16, 16, dtype=torch.float64) * 2 - 1
    probs, label = ensemble_predict(s, s, x)
    single = segment(s, x).detach().numpy().argmax(axis=0)
    assert np.array_equal(label, single)
    assert torch.allclose(probs, segment(s, x))


def test_ensemble_tie_breaks_to_lowest_class_index():
    from mkdseg.evaluation import _argmax_lowest

    # per-pixel average of (0.9, 0.1) and (0.1, 0.9) is (0.5, 0.5)
    avg = np.array([[[0.5]], [[0.5]]])
    assert _argmax_lowest(avg, axis=0)[0, 0] == 0
    three_way = np.array([[[0.2]], [[0.4]], [[0.4]]])
    assert _argmax_lowest(three_way, axis=0)[0, 0] == 1


def test_ensemble_swap_invariant_and_simplex(two_segmentors):
    s1, s2 = two_segmentors
    x = torch.rand(16, 16, dtype=torch.float64) * 2 - 1
    probs_a, label_a = ensemble_predict(s1, s2, x)
    probs_b, label_b = ensemble_predict(s2, s1, x)
    assert np.array_equal(label_a, label_b)
    assert torch.allclose(probs_a, probs_b)
    assert probs_a.min() >= 0.0
    assert (probs_a.sum(dim=0) - 1.0).abs().max() < 1e-5


def test_ensemble_rejects_class_count_mismatch(two_segmentors):
    s1, _ = two_segmentors
    other = build_network(NetworkSpec("segmentor", 4, 1, num_classes=4), 5)
    with pytest.raises(ConfigError):
        ensemble_predict(s1, other, torch.zeros(16, 16, dtype=torch.float64))


# ------------------------------------------------------------- evaluate_model

def label_dataset(labels, num_classes=3):
    samples = [
        LabeledSample(image=np.zeros_like(lab, dtype=np.float32),
                      label=lab.astype(np.uint8), modality="target")
        for lab in labels
    ]
    return Dataset(samples=samples, modality="target", num_classes=num_classes)


def test_perfect_predictor_scores_one():
    ds = make_dataset(default_spec("B", 16, 3), 3, "target")
    report = evaluate_model(lambda s: s.label.astype(np.int64), ds, "real")
    assert all(v == 1.0 for v in report.per_class.values())
    assert report.mean == 1.0


def test_constant_background_predictor_scores_zero_foreground():
    ds = make_dataset(default_spec("B", 16, 3), 3, "target")
    report = evaluate_model(lambda s: np.zeros_like(s.label, dtype=np.int64),
                            ds, "real")
    assert report.mean == 0.0
    assert report.per_class[1] == 0.0 and report.per_class[2] == 0.0


def test_micro_aggregation_matches_summed_count_oracle():
    rng = np.random.default_rng(5)
    labels = [rng.integers(0, 3, size=(6, 6)) for _ in range(3)]
    preds = [rng.integers(0, 3, size=(6, 6)) for _ in range(3)]
    ds = label_dataset(labels)
    lookup = {s.label.tobytes(): pred for s, pred in zip(ds.samples, preds)}
    report = evaluate_model(lambda s: lookup[s.label.tobytes()], ds, "real")
    for c in range(3):
        inter = sum(((p == c) & (l == c)).sum() for p, l in zip(preds, labels))
        sizes = sum((p == c).sum() + (l == c).sum() for p, l in zip(preds, labels))
        expected = 1.0 if sizes == 0 else 2 * inter / sizes
        assert report.per_class[c] == pytest.approx(expected)


def test_macro_aggregation_averages_per_sample():
    labels = [np.array([[1, 1], [0, 0]]), np.array([[0, 0], [0, 0]])]
    preds = [np.array([[1, 0], [0, 0]]), np.array([[0, 0], [0, 0]])]
    ds = label_dataset(labels, num_classes=2)
    lookup = {s.label.tobytes(): pred for s, pred in zip(ds.samples, preds)}
    report = evaluate_model(lambda s: lookup[s.label.tobytes()], ds, "real",
                            aggregation="macro")
    # sample 1: dice_1 = 2*1/(1+2) = 2/3; sample 2: both empty -> 1.0
    assert report.per_class[1] == pytest.approx((2 / 3 + 1.0) / 2)
    micro = evaluate_model(lambda s: lookup[s.label.tobytes()], ds, "real")
    assert micro.per_class[1] == pytest.approx(2 / 3)
    assert report.aggregation == "macro" and micro.aggregation == "micro"


def test_empty_dataset_rejected():
    ds = Dataset(samples=[], modality="target", num_classes=3)
    with pytest.raises(InputError):
        evaluate_model(lambda s: s.label, ds, "real")


def test_dice_report_mean_invariant():
    report = DiceReport.from_per_class({0: 0.99, 1: 0.8, 2: 0.6}, "real", "toy")
    assert report.mean == pytest.approx((0.8 + 0.6) / 2, abs=1e-9)


# -------------------------------------------------------------------- harness

def tiny_experiment():
    image, classes = 16, 3
    spec_a = default_spec("A", image, classes, geometry_seed=1)
    spec_b = default_spec("B", image, classes, geometry_seed=1)
    spec_b_test = default_spec("B", image, classes, geometry_seed=2)
    return ExperimentData(
        train_target=make_dataset(spec_b, 4, "target", first_sample_seed=100),
        train_assistant=make_dataset(spec_a, 4, "assistant"),
        test_target=make_dataset(spec_b_test, 3, "target", first_sample_seed=900),
    )


def tiny_cfg(**overrides):
    base = dict(epochs=1, batch_size=2, seed=1, dtype="float32", lr=1e-3,
                gen_width=4, gen_depth=1, disc_width=4, disc_depth=1,
                seg_width=4, seg_depth=1)
    base.update(overrides)
    return TrainingConfig(**base)


def test_ablation_full_suite_shape():
    table = run_ablation("full", tiny_experiment(), tiny_cfg())
    assert set(table) == {"no_iam", "kd_s2r_only", "kd_r2s_only", "full"}
    for by_tag in table.values():
        assert set(by_tag) == {"syn", "real", "ensemble"}
        for report in by_tag.values():
            assert 0.0 <= report.mean <= 1.0


def test_ablation_single_variant_and_config_audit():
    table = run_ablation("kd_s2r_only", tiny_experiment(), tiny_cfg())
    assert set(table) == {"kd_s2r_only"}
    cfg = dataclasses.replace(tiny_cfg(), mode="kd_s2r_only")
    assert cfg.effective_lambda_kd()[1] == 0.0


def test_ablation_rejects_unknown_suite():
    with pytest.raises(ConfigError):
        run_ablation("everything", tiny_experiment(), tiny_cfg())


def test_sweep_rows_and_bounds():
    data = tiny_experiment()
    table = run_assistant_sweep([2, 4], data, tiny_cfg())
    assert list(table) == [2, 4]
    for report in table.values():
        assert report.model_tag == "ensemble"
    single = run_assistant_sweep([len(data.train_assistant)], data, tiny_cfg())
    assert len(single) == 1
    with pytest.raises(ConfigError):
        run_assistant_sweep([5], data, tiny_cfg())
    with pytest.raises(ConfigError):
        run_assistant_sweep([0], data, tiny_cfg())


# -------------------------------------------------------------------- reports

def test_csv_and_summary_layout(tmp_path):
    reports = [DiceReport.from_per_class({0: 0.9, 1: 0.8, 2: 0.7}, tag, "toy")
               for tag in ("syn", "real", "ensemble")]
    csv_path = tmp_path / "dice.csv"
    write_dice_csv(reports, csv_path)
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "model_tag,dataset_id,aggregation,class,dice"
    assert len(lines) == 1 + 3 * 4  # per class rows + mean row, per tag
    write_summary(reports, tmp_path / "summary.txt")
    text = (tmp_path / "summary.txt").read_text()
    assert "model=ensemble" in text and "mean=0.7500" in text
