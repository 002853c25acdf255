import dataclasses

import numpy as np
import pytest
import torch

from mkdseg.errors import CheckpointError, ConfigError, TrainingDiverged
from mkdseg.phantoms import Dataset, default_spec, make_dataset
from mkdseg.training import (
    NET_NAMES,
    TrainingConfig,
    checkpoint_load,
    checkpoint_save,
    decay_segmentor_lr,
    init_trainer,
    run_training,
    train_iteration,
)

IMAGE = 16
CLASSES = 3


def tiny_cfg(**overrides):
    base = dict(
        epochs=2, batch_size=1, seed=5, dtype="float64", lr=1e-3,
        gen_width=4, gen_depth=1, disc_width=4, disc_depth=1,
        seg_width=4, seg_depth=1, replay_buffer_size=4,
    )
    base.update(overrides)
    return TrainingConfig(**base)


def tiny_data(n_target=4, n_assistant=4, seed=0, image=IMAGE, classes=CLASSES):
    spec_a = default_spec("A", image, classes, geometry_seed=seed)
    spec_b = default_spec("B", image, classes, geometry_seed=seed)
    assistant = make_dataset(spec_a, n_assistant, "assistant")
    target = make_dataset(spec_b, n_target, "target", first_sample_seed=500)
    return target, assistant


def batches(ds, size=1):
    return ds.samples[:size]


# ------------------------------------------------------------------ isolation

def test_each_substep_changes_exactly_one_network():
    target, assistant = tiny_data()
    cfg = tiny_cfg()
    state = init_trainer(cfg, IMAGE, CLASSES)
    snapshots = [("start", state.fingerprints())]

    def probe(step):
        snapshots.append((step, state.fingerprints()))

    train_iteration(state, batches(target), batches(assistant), cfg, probe=probe)
    expected_order = ["g_a2t", "d_t", "g_t2a", "d_a", "s_syn", "s_real"]
    assert [name for name, _ in snapshots[1:]] == expected_order
    for (_, before), (step, after) in zip(snapshots, snapshots[1:]):
        changed = {name for name in NET_NAMES if before[name] != after[name]}
        assert changed == {step}, f"step {step} changed {changed}"


def test_step1_uses_supervision_with_s_syn_frozen():
    target, assistant = tiny_data()
    cfg = tiny_cfg()
    state = init_trainer(cfg, IMAGE, CLASSES)
    grads_at_step1 = {}

    def probe(step):
        if step == "g_a2t":
            grads_at_step1["s_syn"] = [
                p.grad.clone() if p.grad is not None else None
                for p in state.nets["s_syn"].module.parameters()
            ]
            grads_at_step1["fp"] = state.nets["s_syn"].fingerprint()

    before = state.nets["s_syn"].fingerprint()
    train_iteration(state, batches(target), batches(assistant), cfg, probe=probe)
    # bitwise unchanged and zero gradient components on the synthetic segmentor
    assert grads_at_step1["fp"] == before
    assert all(g is None or not g.any() for g in grads_at_step1["s_syn"])

    # and yet the supervision term shapes the update: removing it changes
    # the generator produced by the very same step
    state_with = init_trainer(cfg, IMAGE, CLASSES)
    train_iteration(state_with, batches(target), batches(assistant), cfg)
    cfg_without = tiny_cfg(sup_in_gen_step=0.0)
    state_without = init_trainer(cfg_without, IMAGE, CLASSES)
    train_iteration(state_without, batches(target), batches(assistant), cfg_without)
    assert (state_with.nets["g_a2t"].fingerprint()
            != state_without.nets["g_a2t"].fingerprint())


def test_kd_contributes_zero_gradient_to_peer():
    target, assistant = tiny_data()
    cfg = tiny_cfg()
    state = init_trainer(cfg, IMAGE, CLASSES)
    observed = {}

    def probe(step):
        if step == "s_syn":
            # loss for the synthetic segmentor has been backpropagated:
            # the peer must have received nothing through the KD term
            observed["real_grads"] = [
                p.grad.clone() if p.grad is not None else None
                for p in state.nets["s_real"].module.parameters()
            ]
            observed["syn_grads"] = [
                p.grad.clone() for p in state.nets["s_syn"].module.parameters()
            ]
        if step == "s_real":
            observed["syn_after"] = [
                p.grad.clone() for p in state.nets["s_syn"].module.parameters()
            ]

    train_iteration(state, batches(target), batches(assistant), cfg, probe=probe)
    assert all(g is None or not g.any() for g in observed["real_grads"])
    # step (7)'s backward must not have touched the synthetic segmentor's grads
    for before, after in zip(observed["syn_grads"], observed["syn_after"]):
        assert torch.equal(before, after)


def test_no_iam_skips_gan_and_feeds_raw_assistant():
    target, assistant = tiny_data()
    cfg = tiny_cfg(mode="no_iam")
    state = init_trainer(cfg, IMAGE, CLASSES)
    before = state.fingerprints()
    _, report = train_iteration(state, batches(target), batches(assistant), cfg)
    after = state.fingerprints()
    for name in ("g_a2t", "g_t2a", "d_a", "d_t"):
        assert before[name] == after[name]
    for name in ("s_syn", "s_real"):
        assert before[name] != after[name]
    assert report.adv_t == report.adv_a == report.cyc == 0.0
    assert report.d_t == report.d_a == 0.0
    assert report.kd_s2r > 0.0 and report.kd_r2s > 0.0


def test_one_way_kd_modes_zero_the_removed_weight():
    assert tiny_cfg(mode="kd_r2s_only").effective_lambda_kd() == (0.0, 1.0)
    assert tiny_cfg(mode="kd_s2r_only").effective_lambda_kd() == (0.5, 0.0)
    cfg = tiny_cfg(mode="kd_r2s_only")
    target, assistant = tiny_data()
    state = init_trainer(cfg, IMAGE, CLASSES)
    _, report = train_iteration(state, batches(target), batches(assistant), cfg)
    assert report.kd_s2r == 0.0 and report.kd_r2s > 0.0
    assert report.seg_real == pytest.approx(report.sup_real, abs=1e-12)


# ---------------------------------------------------------------- determinism

def test_bitwise_deterministic_runs():
    target, assistant = tiny_data()
    cfg = tiny_cfg(epochs=3)
    state1, metrics1 = run_training(target, assistant, cfg)
    state2, metrics2 = run_training(target, assistant, cfg)
    assert metrics1 == metrics2  # float equality, i.e. bitwise in practice
    assert state1.fingerprints() == state2.fingerprints()


def test_checkpoint_resume_matches_direct_run(tmp_path):
    target, assistant = tiny_data()
    cfg = tiny_cfg(epochs=4)
    direct_state, direct_metrics = run_training(target, assistant, cfg)

    partial_state, _ = run_training(target, assistant, cfg,
                                    stop_after_iterations=6)
    path = tmp_path / "ckpt.pt"
    checkpoint_save(partial_state, path)
    resumed = checkpoint_load(path)
    assert resumed.iteration == 6
    final_state, final_metrics = run_training(target, assistant, cfg,
                                              initial_state=resumed)
    assert final_metrics == direct_metrics
    assert final_state.fingerprints() == direct_state.fingerprints()


def test_checkpoint_round_trip_fingerprints(tmp_path):
    target, assistant = tiny_data()
    cfg = tiny_cfg(epochs=1)
    state, _ = run_training(target, assistant, cfg)
    path = tmp_path / "ckpt.pt"
    checkpoint_save(state, path)
    loaded = checkpoint_load(path)
    assert loaded.fingerprints() == state.fingerprints()
    assert loaded.config == state.config


def test_truncated_checkpoint_rejected(tmp_path):
    target, assistant = tiny_data()
    cfg = tiny_cfg(epochs=1)
    state, _ = run_training(target, assistant, cfg)
    path = tmp_path / "ckpt.pt"
    checkpoint_save(state, path)
    path.write_bytes(path.read_bytes()[:200])
    with pytest.raises(CheckpointError):
        checkpoint_load(path)


# ------------------------------------------------------------------- schedule

def test_epochs_zero_returns_initial_networks():
    target, assistant = tiny_data()
    cfg = tiny_cfg(epochs=0)
    state, metrics = run_training(target, assistant, cfg)
    assert metrics == []
    assert state.fingerprints() == init_trainer(cfg, IMAGE, CLASSES).fingerprints()


def test_decay_segmentor_lr_formula():
    cfg = tiny_cfg(lr=2e-4, segmentor_decay=0.9)
    state = init_trainer(cfg, IMAGE, CLASSES)
    opt = state.optimizers["s_real"]
    for epoch, expected in [(0, 2e-4), (1, 2e-4), (2, 1.8e-4), (3, 1.8e-4),
                            (10, 2e-4 * 0.9 ** 5)]:
        decay_segmentor_lr(opt, epoch, cfg)
        assert opt.param_groups[0]["lr"] == pytest.approx(expected, rel=1e-12)


def test_segmentor_lr_decays_but_gan_lr_does_not():
    target, assistant = tiny_data()
    cfg = tiny_cfg(epochs=4, lr=2e-4)
    state, _ = run_training(target, assistant, cfg)
    seg_lr = state.optimizers["s_real"].param_groups[0]["lr"]
    gan_lr = state.optimizers["g_a2t"].param_groups[0]["lr"]
    assert seg_lr == pytest.approx(2e-4 * 0.9 ** 1, rel=1e-12)  # epoch 3
    assert gan_lr == pytest.approx(2e-4, rel=1e-12)


# ----------------------------------------------------------------------- modes

class _GuardedSamples(list):
    """List that records reads, to audit that a mode never touches a dataset."""

    def __init__(self, items):
        super().__init__(items)
        self.reads = 0

    def __getitem__(self, item):
        self.reads += 1
        return super().__getitem__(item)

    def __iter__(self):
        self.reads += 1
        return super().__iter__()


def test_baseline_never_reads_assistant_dataset():
    target, assistant = tiny_data()
    guarded = _GuardedSamples(assistant.samples)
    guarded_ds = Dataset(samples=guarded, modality="assistant",
                         num_classes=assistant.num_classes)
    cfg = tiny_cfg(mode="baseline", epochs=2)
    state, metrics = run_training(target, guarded_ds, cfg)
    assert guarded.reads == 0
    assert len(metrics) == 2 * len(target)
    before = init_trainer(cfg, IMAGE, CLASSES).fingerprints()
    after = state.fingerprints()
    assert before["s_real"] != after["s_real"]
    for name in ("g_a2t", "g_t2a", "d_a", "d_t", "s_syn"):
        assert before[name] == after[name]


def test_joint_training_uses_both_modalities():
    target, assistant = tiny_data()
    cfg = tiny_cfg(mode="joint_training", epochs=1)
    state, metrics = run_training(target, assistant, cfg)
    assert all(m["sup_syn"] > 0 and m["sup_real"] > 0 for m in metrics)


def test_fine_tune_runs_both_phases():
    target, assistant = tiny_data(n_target=4, n_assistant=6)
    cfg = tiny_cfg(mode="fine_tune", epochs=2)
    state, metrics = run_training(target, assistant, cfg)
    assert len(metrics) == 2 * 6 + 2 * 4


def test_incompatible_datasets_rejected():
    target, _ = tiny_data()
    bad_assistant = make_dataset(default_spec("A", IMAGE, CLASSES + 1), 4, "assistant")
    with pytest.raises(ConfigError):
        run_training(target, bad_assistant, tiny_cfg())
    with pytest.raises(ConfigError):
        run_training(target, target, tiny_cfg())  # wrong modality
    with pytest.raises(ConfigError):
        run_training(target, None, tiny_cfg(mode="mkd"))


def test_non_finite_loss_aborts_with_diagnostic():
    target, assistant = tiny_data()
    cfg = tiny_cfg(mode="no_iam")
    state = init_trainer(cfg, IMAGE, CLASSES)
    with torch.no_grad():
        next(state.nets["s_real"].module.parameters()).fill_(float("nan"))
    with pytest.raises(TrainingDiverged, match="sup_real.*iteration 0"):
        train_iteration(state, batches(target), batches(assistant), cfg)


# -------------------------------------------------------------- smoke property

@pytest.mark.slow
def test_supervised_loss_decreases_over_200_iterations():
    for seed in (0, 1, 2):
        spec_a = default_spec("A", 32, 3, geometry_seed=seed)
        spec_b = default_spec("B", 32, 3, geometry_seed=seed)
        assistant = make_dataset(spec_a, 8, "assistant")
        target = make_dataset(spec_b, 8, "target", first_sample_seed=500)
        cfg = TrainingConfig(epochs=25, batch_size=1, seed=seed, dtype="float32",
                             lr=1e-3, gen_width=6, gen_depth=1, disc_width=6,
                             disc_depth=1, seg_width=8, seg_depth=1)
        _, metrics = run_training(target, assistant, cfg)
        assert len(metrics) == 200
        sup = [m["sup_real"] for m in metrics]
        head = float(np.mean(sup[:20]))
        tail = float(np.mean(sup[-20:]))
        assert tail < head, f"seed {seed}: {tail:.4f} !< {head:.4f}"
