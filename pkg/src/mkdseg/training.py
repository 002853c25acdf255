"""Alternating online training of the six networks, plus reduced modes.

One iteration of the full scheme performs seven isolated sub-steps, in
order: (1) update the assistant-to-target generator with the cycle-weighted
adversarial objective plus the synthetic segmentor's supervision term, with
the synthetic segmentor's parameters frozen; (2) update the target
discriminator; (3) update the target-to-assistant generator; (4) update the
assistant discriminator; (5) compute both composite segmentor objectives with
peer outputs detached; (6) update the synthetic segmentor; (7) update the
real segmentor. Each sub-step changes exactly one network's parameters.

Reduced modes reuse the same loop: ``baseline`` trains one segmentor on
target data only (the assistant dataset is never touched), ``fine_tune``
pretrains on assistant data then continues on target, ``joint_training``
interleaves both modalities 1:1 into one segmentor, ``no_iam`` feeds raw
assistant images instead of translations and skips sub-steps (1)-(4), and
``kd_s2r_only`` / ``kd_r2s_only`` zero one distillation weight exactly.

All sampling (shuffling, augmentation, replay-buffer decisions) is derived
from the config seed, so runs are bitwise reproducible in a fixed numeric
mode and training can resume from a checkpoint without divergence.
"""

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .errors import CheckpointError, ConfigError, TrainingDiverged
from .losses import (
    LossReport,
    adversarial_loss,
    cycle_loss,
    generator_adversarial,
    generator_objective,
    kd_loss,
    segmentor_objective,
    supervised_loss,
)
from .networks import NetworkHandle, NetworkSpec, build_network, discriminate, segment, translate
from .phantoms import Dataset, LabeledSample, augment_sample
from .seeds import derive_seed

NET_NAMES = ("g_a2t", "g_t2a", "d_a", "d_t", "s_syn", "s_real")
SEGMENTOR_NAMES = ("s_syn", "s_real")

MODES = ("mkd", "baseline", "fine_tune", "joint_training", "no_iam",
         "kd_s2r_only", "kd_r2s_only")
GAN_MODES = ("mkd", "kd_s2r_only", "kd_r2s_only")
SINGLE_SEGMENTOR_MODES = ("baseline", "fine_tune", "joint_training")

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters and schedule knobs.

    Defaults: cycle weight 10, distillation weights 0.5 (synthetic-to-real)
    and 1 (real-to-synthetic), Adam at lr 2e-4, segmentor lr decayed by 0.9
    every two epochs. The translation networks use Adam betas (0.5, 0.999)
    following the usual image-translation convention; segmentors use the
    plain Adam defaults (0.9, 0.999).
    """

    lambda_cyc: float = 10.0
    lambda_kd1: float = 0.5
    lambda_kd2: float = 1.0
    lr: float = 2e-4
    segmentor_decay: float = 0.9
    epochs: int = 10
    batch_size: int = 1
    seed: int = 0
    gan_variant: str = "vanilla"
    replay_buffer_size: int = 50
    mode: str = "mkd"
    gen_width: int = 16
    gen_depth: int = 2
    disc_width: int = 16
    disc_depth: int = 2
    seg_width: int = 16
    seg_depth: int = 2
    gan_beta1: float = 0.5
    gan_beta2: float = 0.999
    seg_beta1: float = 0.9
    seg_beta2: float = 0.999
    sup_in_gen_step: float = 1.0
    augment: bool = True
    dtype: str = "float64"
    early_stop_patience: int = 0
    checkpoint_every: int = 0
    kd_warmup_epochs: int = 0

    def validate(self) -> None:
        if min(self.lambda_cyc, self.lambda_kd1, self.lambda_kd2) < 0:
            raise ConfigError("lambda weights must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if not 0 < self.segmentor_decay <= 1:
            raise ConfigError("segmentor_decay must lie in (0, 1]")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.gan_variant not in ("vanilla", "least_squares"):
            raise ConfigError(f"unknown gan_variant {self.gan_variant!r}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")
        if self.replay_buffer_size < 0:
            raise ConfigError("replay_buffer_size must be >= 0")
        if self.kd_warmup_epochs < 0:
            raise ConfigError("kd_warmup_epochs must be >= 0")

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32

    def effective_lambda_kd(self) -> Tuple[float, float]:
        """(lambda_kd1, lambda_kd2) after mode overrides; the one-way modes
        zero the removed direction exactly."""
        kd1, kd2 = self.lambda_kd1, self.lambda_kd2
        if self.mode == "kd_r2s_only":
            kd1 = 0.0
        if self.mode == "kd_s2r_only":
            kd2 = 0.0
        return kd1, kd2


class ReplayBuffer:
    """History of generated images shown to a discriminator.

    Per incoming image: while below capacity, store it and hand it through;
    afterwards, with probability 1/2 swap it against a random stored image
    and hand out the old one. Capacity 0 disables the buffer.
    """

    def __init__(self, capacity: int, rng: np.random.Generator):
        self.capacity = capacity
        self.rng = rng
        self.items: List[torch.Tensor] = []

    def push_and_sample(self, batch: torch.Tensor) -> torch.Tensor:
        if self.capacity == 0:
            return batch
        out = []
        for img in batch.detach():
            img = img.clone()
            if len(self.items) < self.capacity:
                self.items.append(img)
                out.append(img)
            elif self.rng.random() < 0.5:
                idx = int(self.rng.integers(0, self.capacity))
                out.append(self.items[idx])
                self.items[idx] = img
            else:
                out.append(img)
        return torch.stack(out)

    def state(self) -> dict:
        return {
            "capacity": self.capacity,
            "items": [t.numpy() for t in self.items],
            "rng_state": self.rng.bit_generator.state,
        }

    @classmethod
    def from_state(cls, state: dict) -> "ReplayBuffer":
        rng = np.random.default_rng()
        rng.bit_generator.state = state["rng_state"]
        buf = cls(state["capacity"], rng)
        buf.items = [torch.from_numpy(a.copy()) for a in state["items"]]
        return buf


@dataclass
class TrainerState:
    """Everything training mutates: networks, optimizers, buffers, counters."""

    nets: Dict[str, NetworkHandle]
    optimizers: Dict[str, torch.optim.Adam]
    buffers: Dict[str, ReplayBuffer]
    config: TrainingConfig
    iteration: int = 0
    metrics: List[dict] = field(default_factory=list)

    def fingerprints(self) -> Dict[str, str]:
        return {name: h.fingerprint() for name, h in self.nets.items()}


def init_trainer(cfg: TrainingConfig, image_size: int, num_classes: int) -> TrainerState:
    """Build the six networks, their optimizers, and the replay buffers."""
    cfg.validate()
    if image_size % 2 ** max(cfg.gen_depth, cfg.disc_depth, cfg.seg_depth) != 0:
        raise ConfigError(
            f"image_size {image_size} not divisible by the network strides"
        )
    dtype = cfg.torch_dtype
    specs = {
        "g_a2t": NetworkSpec("generator", cfg.gen_width, cfg.gen_depth),
        "g_t2a": NetworkSpec("generator", cfg.gen_width, cfg.gen_depth),
        "d_a": NetworkSpec("discriminator", cfg.disc_width, cfg.disc_depth),
        "d_t": NetworkSpec("discriminator", cfg.disc_width, cfg.disc_depth),
        "s_syn": NetworkSpec("segmentor", cfg.seg_width, cfg.seg_depth, num_classes),
        "s_real": NetworkSpec("segmentor", cfg.seg_width, cfg.seg_depth, num_classes),
    }
    nets = {
        name: build_network(spec, derive_seed(cfg.seed, "init", name), dtype)
        for name, spec in specs.items()
    }
    optimizers = {}
    for name, handle in nets.items():
        betas = ((cfg.seg_beta1, cfg.seg_beta2) if name in SEGMENTOR_NAMES
                 else (cfg.gan_beta1, cfg.gan_beta2))
        optimizers[name] = torch.optim.Adam(handle.module.parameters(),
                                            lr=cfg.lr, betas=betas)
    buffers = {
        name: ReplayBuffer(
            cfg.replay_buffer_size,
            np.random.default_rng(derive_seed(cfg.seed, "buffer", name)),
        )
        for name in ("fake_t", "fake_a")
    }
    return TrainerState(nets=nets, optimizers=optimizers, buffers=buffers, config=cfg)


def decay_segmentor_lr(opt: torch.optim.Adam, epoch: int, cfg: TrainingConfig) -> torch.optim.Adam:
    """Set the segmentor lr to lr0 * decay^(epoch // 2); idempotent per epoch."""
    lr = cfg.lr * cfg.segmentor_decay ** (epoch // 2)
    for group in opt.param_groups:
        group["lr"] = lr
    return opt


def _set_requires_grad(state: TrainerState, active: Sequence[str]) -> None:
    for name, handle in state.nets.items():
        flag = name in active
        for p in handle.module.parameters():
            p.requires_grad_(flag)


def _stack(batch: Sequence[LabeledSample], dtype: torch.dtype):
    x = torch.from_numpy(np.stack([s.image for s in batch])).to(dtype)[:, None]
    y = torch.from_numpy(np.stack([s.label.astype(np.int64) for s in batch]))
    return x, y


def _scalar(t: torch.Tensor) -> float:
    return float(t.detach())


def _check_finite(report: LossReport, iteration: int) -> None:
    for name, value in report.as_dict().items():
        if not math.isfinite(value):
            raise TrainingDiverged(
                f"non-finite loss term {name!r} at iteration {iteration}"
            )


def train_iteration(state: TrainerState, batch_t: Sequence[LabeledSample],
                    batch_a: Optional[Sequence[LabeledSample]],
                    cfg: TrainingConfig,
                    probe: Optional[Callable[[str], None]] = None
                    ) -> Tuple[TrainerState, LossReport]:
    """Run one iteration of the alternating schedule on one batch pair.

    Dispatches on cfg.mode; the full scheme executes the seven isolated
    sub-steps described in the module docstring. ``probe``, when given, is
    invoked with the sub-step name right after each parameter update, before
    gradients are disturbed; tests use it to audit the isolation contract.
    """
    dtype = cfg.torch_dtype
    x_t, y_t = _stack(batch_t, dtype)
    kd1, kd2 = cfg.effective_lambda_kd()
    variant = cfg.gan_variant

    if cfg.mode in SINGLE_SEGMENTOR_MODES:
        return _single_segmentor_iteration(state, x_t, y_t, batch_a, cfg)

    assert batch_a is not None
    x_a, y_a = _stack(batch_a, dtype)
    g_a2t, g_t2a = state.nets["g_a2t"], state.nets["g_t2a"]
    d_a, d_t = state.nets["d_a"], state.nets["d_t"]
    s_syn, s_real = state.nets["s_syn"], state.nets["s_real"]

    adv_t_val = adv_a_val = cyc_val = d_t_val = d_a_val = 0.0

    if cfg.mode in GAN_MODES:
        # (1) generator assistant->target, with the synthetic segmentor and
        # every other network frozen; its supervision term shapes the
        # translation without moving segmentor weights.
        _set_requires_grad(state, ["g_a2t"])
        x_at = translate(g_a2t, x_a)
        x_ata = translate(g_t2a, x_at)
        x_ta = translate(g_t2a, x_t)
        x_tat = translate(g_a2t, x_ta)
        cyc = cycle_loss(x_a, x_ata, x_t, x_tat)
        adv_g_t = generator_adversarial(discriminate(d_t, x_at, variant), variant)
        sup_syn_gen = supervised_loss(y_a, segment(s_syn, x_at))
        loss_g_a2t = (generator_objective(adv_g_t, cyc, cfg.lambda_cyc)
                      + cfg.sup_in_gen_step * sup_syn_gen)
        opt = state.optimizers["g_a2t"]
        opt.zero_grad()
        loss_g_a2t.backward()
        opt.step()
        adv_t_val, cyc_val = _scalar(adv_g_t), _scalar(cyc)
        if probe is not None:
            probe("g_a2t")

        # (2) target discriminator, on reals vs a replay of past fakes.
        _set_requires_grad(state, ["d_t"])
        fake_t = state.buffers["fake_t"].push_and_sample(x_at.detach())
        d_loss_t, _ = adversarial_loss(
            discriminate(d_t, x_t, variant), discriminate(d_t, fake_t, variant), variant
        )
        opt = state.optimizers["d_t"]
        opt.zero_grad()
        d_loss_t.backward()
        opt.step()
        d_t_val = _scalar(d_loss_t)
        if probe is not None:
            probe("d_t")

        # (3) generator target->assistant.
        _set_requires_grad(state, ["g_t2a"])
        x_ta2 = translate(g_t2a, x_t)
        x_tat2 = translate(g_a2t, x_ta2)
        x_at2 = translate(g_a2t, x_a)
        x_ata2 = translate(g_t2a, x_at2)
        cyc2 = cycle_loss(x_a, x_ata2, x_t, x_tat2)
        adv_g_a = generator_adversarial(discriminate(d_a, x_ta2, variant), variant)
        loss_g_t2a = generator_objective(adv_g_a, cyc2, cfg.lambda_cyc)
        opt = state.optimizers["g_t2a"]
        opt.zero_grad()
        loss_g_t2a.backward()
        opt.step()
        adv_a_val = _scalar(adv_g_a)
        if probe is not None:
            probe("g_t2a")

        # (4) assistant discriminator.
        _set_requires_grad(state, ["d_a"])
        fake_a = state.buffers["fake_a"].push_and_sample(x_ta2.detach())
        d_loss_a, _ = adversarial_loss(
            discriminate(d_a, x_a, variant), discriminate(d_a, fake_a, variant), variant
        )
        opt = state.optimizers["d_a"]
        opt.zero_grad()
        d_loss_a.backward()
        opt.step()
        d_a_val = _scalar(d_loss_a)
        if probe is not None:
            probe("d_a")

        # Segmentors see the freshest translation; x_at2 already reflects the
        # step-(1) update of the generator.
        x_syn = x_at2.detach()
    else:  # no_iam: raw assistant images stand in for translations.
        x_syn = x_a

    # (5) both composite segmentor objectives, peers detached inside kd_loss.
    _set_requires_grad(state, ["s_syn", "s_real"])
    p_syn_at = segment(s_syn, x_syn)
    p_real_t = segment(s_real, x_t)
    sup_syn = supervised_loss(y_a, p_syn_at)
    sup_real = supervised_loss(y_t, p_real_t)
    kd_s2r_val = kd_r2s_val = 0.0
    loss_s_syn = sup_syn
    loss_s_real = sup_real
    if kd1 > 0:
        p_real_at = segment(s_real, x_syn)
        kd_s2r = kd_loss(p_syn_at, p_real_at)
        loss_s_real = segmentor_objective(sup_real, kd_s2r, kd1)
        kd_s2r_val = _scalar(kd_s2r)
    if kd2 > 0:
        p_syn_t = segment(s_syn, x_t)
        kd_r2s = kd_loss(p_real_t, p_syn_t)
        loss_s_syn = segmentor_objective(sup_syn, kd_r2s, kd2)
        kd_r2s_val = _scalar(kd_r2s)

    # (6) synthetic segmentor, (7) real segmentor.
    opt = state.optimizers["s_syn"]
    opt.zero_grad()
    loss_s_syn.backward()
    opt.step()
    if probe is not None:
        probe("s_syn")
    opt = state.optimizers["s_real"]
    opt.zero_grad()
    loss_s_real.backward()
    opt.step()
    if probe is not None:
        probe("s_real")
    _set_requires_grad(state, NET_NAMES)

    report = LossReport.from_terms(
        adv_t=adv_t_val, adv_a=adv_a_val, cyc=cyc_val,
        sup_syn=_scalar(sup_syn), sup_real=_scalar(sup_real),
        kd_s2r=kd_s2r_val, kd_r2s=kd_r2s_val,
        d_t=d_t_val, d_a=d_a_val,
        lambda_cyc=cfg.lambda_cyc if cfg.mode in GAN_MODES else 0.0,
        lambda_kd1=kd1, lambda_kd2=kd2,
    )
    _check_finite(report, state.iteration)
    state.iteration += 1
    return state, report


def _single_segmentor_iteration(state: TrainerState, x_t, y_t,
                                batch_a: Optional[Sequence[LabeledSample]],
                                cfg: TrainingConfig) -> Tuple[TrainerState, LossReport]:
    """Supervised-only update(s) of the ``s_real`` slot for reduced modes.

    ``batch_t`` carries whichever modality the phase trains on; in
    joint_training mode an assistant batch is interleaved after the target
    update.
    """
    s_real = state.nets["s_real"]
    opt = state.optimizers["s_real"]
    _set_requires_grad(state, ["s_real"])

    sup = supervised_loss(y_t, segment(s_real, x_t))
    opt.zero_grad()
    sup.backward()
    opt.step()
    sup_real_val = _scalar(sup)

    sup_syn_val = 0.0
    if cfg.mode == "joint_training" and batch_a is not None:
        x_a, y_a = _stack(batch_a, cfg.torch_dtype)
        sup_a = supervised_loss(y_a, segment(s_real, x_a))
        opt.zero_grad()
        sup_a.backward()
        opt.step()
        sup_syn_val = _scalar(sup_a)

    _set_requires_grad(state, NET_NAMES)
    report = LossReport.from_terms(
        adv_t=0.0, adv_a=0.0, cyc=0.0,
        sup_syn=sup_syn_val, sup_real=sup_real_val,
        kd_s2r=0.0, kd_r2s=0.0, d_t=0.0, d_a=0.0,
        lambda_cyc=0.0, lambda_kd1=0.0, lambda_kd2=0.0,
    )
    _check_finite(report, state.iteration)
    state.iteration += 1
    return state, report


def _permutation(seed: int, *tags, n: int) -> np.ndarray:
    return np.random.default_rng(derive_seed(seed, *tags)).permutation(n)


def _epoch_batch(ds: Dataset, cfg: TrainingConfig, stream: str, epoch: int,
                 start: int, size: int) -> List[LabeledSample]:
    """``size`` samples of ``stream`` from flat offset ``start``, augmented
    if enabled.

    Index order reshuffles every epoch; offsets wrap cyclically with fresh
    shuffles, so streams shorter than the demand repeat without repetition
    inside one pass.
    """
    n = len(ds)
    picked = []
    for k in range(size):
        flat = start + k
        block, offset = divmod(flat, n)
        perm = _permutation(cfg.seed, "shuffle", stream, epoch, block, n=n)
        s = ds.samples[int(perm[offset])]
        if cfg.augment:
            s = augment_sample(s, derive_seed(cfg.seed, "aug", stream, epoch, flat))
        picked.append(s)
    return picked


def iterations_per_epoch(n_samples: int, batch_size: int) -> int:
    return math.ceil(n_samples / batch_size)


def run_training(target_ds: Dataset, assistant_ds: Optional[Dataset],
                 cfg: TrainingConfig, out_dir: Optional[Path] = None,
                 val_ds: Optional[Dataset] = None,
                 initial_state: Optional[TrainerState] = None,
                 stop_after_iterations: Optional[int] = None
                 ) -> Tuple[TrainerState, List[dict]]:
    """Train for the configured epoch budget over the target dataset.

    Per epoch the loop walks the shuffled target dataset; assistant batches
    are drawn cyclically with independent shuffling, so unequal dataset sizes
    are fine. Segmentor learning rates decay every two epochs. With
    ``out_dir`` set, an append-only metrics log and checkpoints are written.
    ``initial_state`` resumes a run; ``stop_after_iterations`` truncates it
    (both in global-iteration units, for checkpoint/resume equivalence).
    """
    cfg.validate()
    target_ds.validate()
    if target_ds.modality != "target":
        raise ConfigError(f"target dataset has modality {target_ds.modality!r}")
    needs_assistant = cfg.mode != "baseline"
    if needs_assistant:
        if assistant_ds is None:
            raise ConfigError(f"mode {cfg.mode!r} requires an assistant dataset")
        assistant_ds.validate()
        if assistant_ds.modality != "assistant":
            raise ConfigError(
                f"assistant dataset has modality {assistant_ds.modality!r}"
            )
        if assistant_ds.num_classes != target_ds.num_classes:
            raise ConfigError("datasets disagree on num_classes")
        if assistant_ds.image_size != target_ds.image_size:
            raise ConfigError("datasets disagree on image size")

    state = initial_state or init_trainer(cfg, target_ds.image_size,
                                          target_ds.num_classes)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.log"
    else:
        metrics_path = None

    # fine_tune prepends a full budget of assistant-only epochs.
    pre_epochs = cfg.epochs if cfg.mode == "fine_tune" else 0
    pre_ipe = iterations_per_epoch(len(assistant_ds), cfg.batch_size) if pre_epochs else 0
    ipe = iterations_per_epoch(len(target_ds), cfg.batch_size)
    total = pre_epochs * pre_ipe + cfg.epochs * ipe
    end = total if stop_after_iterations is None else min(total, stop_after_iterations)

    best_val = -1.0
    stale_epochs = 0
    for g in range(state.iteration, end):
        if g < pre_epochs * pre_ipe:
            epoch, pos = divmod(g, pre_ipe)
            ds, stream = assistant_ds, "pretrain"
        else:
            epoch, pos = divmod(g - pre_epochs * pre_ipe, ipe)
            ds, stream = target_ds, "target"
            epoch += pre_epochs
        for name in SEGMENTOR_NAMES:
            decay_segmentor_lr(state.optimizers[name], epoch, cfg)

        size = min(cfg.batch_size, len(ds) - pos * cfg.batch_size)
        batch_main = _epoch_batch(ds, cfg, stream, epoch, pos * cfg.batch_size, size)
        batch_a = None
        if needs_assistant and cfg.mode != "fine_tune":
            batch_a = _epoch_batch(assistant_ds, cfg, "assistant", 0,
                                   g * cfg.batch_size, size)

        # Peer outputs carry no signal until the segmentors have learned
        # something, so distillation can optionally wait a few epochs; a
        # fraction of a paper-scale run, but a large slice of a desk-scale one.
        step_cfg = cfg
        if cfg.kd_warmup_epochs > 0 and epoch < cfg.kd_warmup_epochs:
            step_cfg = replace(cfg, lambda_kd1=0.0, lambda_kd2=0.0)
        state, report = train_iteration(state, batch_main, batch_a, step_cfg)
        record = {"iteration": g, "epoch": epoch, **report.as_dict()}
        state.metrics.append(record)
        if metrics_path is not None:
            with metrics_path.open("a") as fh:
                fh.write(format_metrics_line(record) + "\n")

        end_of_epoch = pos == (pre_ipe if g < pre_epochs * pre_ipe else ipe) - 1
        if end_of_epoch and out_dir is not None and cfg.checkpoint_every > 0 \
                and (epoch + 1) % cfg.checkpoint_every == 0:
            checkpoint_save(state, out_dir / f"checkpoint_epoch_{epoch:04d}.pt")
        if end_of_epoch and val_ds is not None and cfg.early_stop_patience > 0:
            score = _validation_mean_dice(state, val_ds, cfg)
            if score > best_val + 1e-4:
                best_val, stale_epochs = score, 0
            else:
                stale_epochs += 1
                if stale_epochs >= cfg.early_stop_patience:
                    break

    if out_dir is not None:
        checkpoint_save(state, out_dir / "checkpoint_final.pt")
    return state, state.metrics


def _validation_mean_dice(state: TrainerState, val_ds: Dataset,
                          cfg: TrainingConfig) -> float:
    from .evaluation import evaluate_model, mode_predictor

    return evaluate_model(mode_predictor(state, cfg.mode), val_ds).mean


def format_metrics_line(record: dict) -> str:
    """Round-trippable key=value line; float repr keeps full precision."""
    parts = []
    for key, value in record.items():
        parts.append(f"{key}={value!r}" if isinstance(value, float) else f"{key}={value}")
    return " ".join(parts)


def parse_metrics_line(line: str) -> dict:
    record = {}
    for token in line.split():
        key, _, value = token.partition("=")
        record[key] = int(value) if key in ("iteration", "epoch") else float(value)
    return record


def checkpoint_save(state: TrainerState, path: Path) -> None:
    """Serialize networks, optimizers, buffers, counters, and metrics."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": asdict(state.config),
        "nets": {
            name: {
                "spec": {
                    "kind": h.spec.kind,
                    "width": h.spec.width,
                    "depth": h.spec.depth,
                    "num_classes": h.spec.num_classes,
                },
                "state_dict": h.module.state_dict(),
            }
            for name, h in state.nets.items()
        },
        "fingerprints": state.fingerprints(),
        "optimizers": {name: opt.state_dict() for name, opt in state.optimizers.items()},
        "buffers": {name: buf.state() for name, buf in state.buffers.items()},
        "iteration": state.iteration,
        "metrics": state.metrics,
    }
    torch.save(payload, path)


def checkpoint_load(path: Path) -> TrainerState:
    """Restore a TrainerState; verifies format version and fingerprints."""
    try:
        payload = torch.load(path, weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) \
            or payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format in {path}")
    cfg = TrainingConfig(**payload["config"])
    dtype = cfg.torch_dtype
    nets = {}
    for name, entry in payload["nets"].items():
        handle = build_network(NetworkSpec(**entry["spec"]), 0, dtype)
        handle.module.load_state_dict(entry["state_dict"])
        nets[name] = handle
        if handle.fingerprint() != payload["fingerprints"][name]:
            raise CheckpointError(f"fingerprint mismatch for {name} in {path}")
    optimizers = {}
    for name, handle in nets.items():
        betas = ((cfg.seg_beta1, cfg.seg_beta2) if name in SEGMENTOR_NAMES
                 else (cfg.gan_beta1, cfg.gan_beta2))
        opt = torch.optim.Adam(handle.module.parameters(), lr=cfg.lr, betas=betas)
        opt.load_state_dict(payload["optimizers"][name])
        optimizers[name] = opt
    buffers = {name: ReplayBuffer.from_state(s) for name, s in payload["buffers"].items()}
    return TrainerState(
        nets=nets, optimizers=optimizers, buffers=buffers, config=cfg,
        iteration=payload["iteration"], metrics=list(payload["metrics"]),
    )
