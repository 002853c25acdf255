"""Differentiable training objectives.

Probability maps are tensors shaped (C, H, W) or (N, C, H, W) whose class
axis sums to 1 per pixel; label maps are integer tensors of matching spatial
shape. All per-pixel losses are means (not sums), so the lambda weights are
image-size invariant. Probabilities are clamped at 1e-7 before any log.
"""

from dataclasses import dataclass, fields
from typing import Tuple, Union

import torch

from .errors import InputError

PROB_EPS = 1e-7
DICE_EPS = 1e-5

GAN_VARIANTS = ("vanilla", "least_squares")


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise InputError(f"{what}: shape {tuple(a.shape)} != {tuple(b.shape)}")


def _batched_probs(p: torch.Tensor) -> torch.Tensor:
    if p.dim() == 3:
        return p[None]
    if p.dim() == 4:
        return p
    raise InputError(f"probability map must be (C,H,W) or (N,C,H,W), got {tuple(p.shape)}")


def _batched_labels(y: torch.Tensor, probs: torch.Tensor) -> torch.Tensor:
    if y.dim() == 2:
        y = y[None]
    if y.dim() != 3 or y.shape[0] != probs.shape[0] or y.shape[1:] != probs.shape[2:]:
        raise InputError(
            f"label shape {tuple(y.shape)} incompatible with probs {tuple(probs.shape)}"
        )
    if y.min() < 0 or int(y.max()) >= probs.shape[1]:
        raise InputError(
            f"label values must lie in [0, {probs.shape[1]}), got "
            f"[{int(y.min())}, {int(y.max())}]"
        )
    return y.long()


def generator_adversarial(d_fake_out: torch.Tensor,
                          variant: str = "vanilla") -> torch.Tensor:
    """Generator-side adversarial term from the discriminator's fake outputs.

    vanilla uses the non-saturating -E[log d_fake] form; least_squares uses
    E[(d_fake - 1)^2].
    """
    if variant == "vanilla":
        if d_fake_out.min() <= 0.0 or d_fake_out.max() >= 1.0:
            raise InputError("vanilla adversarial loss needs d_fake_out in (0, 1)")
        return -torch.log(d_fake_out.clamp_min(PROB_EPS)).mean()
    if variant == "least_squares":
        return ((d_fake_out - 1.0) ** 2).mean()
    raise InputError(f"unknown gan variant {variant!r}")


def adversarial_loss(d_real_out: torch.Tensor, d_fake_out: torch.Tensor,
                     variant: str = "vanilla") -> Tuple[torch.Tensor, torch.Tensor]:
    """Discriminator and generator adversarial losses over realness maps.

    vanilla:        d = -E[log d_real] - E[log(1 - d_fake)],
                    g = -E[log d_fake]   (non-saturating form)
    least_squares:  d = E[(d_real - 1)^2] + E[d_fake^2],
                    g = E[(d_fake - 1)^2]
    """
    _check_same_shape(d_real_out, d_fake_out, "adversarial_loss")
    g_loss = generator_adversarial(d_fake_out, variant)
    if variant == "vanilla":
        if d_real_out.min() <= 0.0 or d_real_out.max() >= 1.0:
            raise InputError("vanilla adversarial loss needs d_real_out in (0, 1)")
        d_loss = (-torch.log(d_real_out.clamp_min(PROB_EPS)).mean()
                  - torch.log((1.0 - d_fake_out).clamp_min(PROB_EPS)).mean())
    else:
        d_loss = ((d_real_out - 1.0) ** 2).mean() + (d_fake_out ** 2).mean()
    return d_loss, g_loss


def cycle_loss(x_a: torch.Tensor, x_a_rec: torch.Tensor,
               x_t: torch.Tensor, x_t_rec: torch.Tensor) -> torch.Tensor:
    """L1 reconstruction penalty for both translation round trips."""
    _check_same_shape(x_a, x_a_rec, "cycle_loss assistant pair")
    _check_same_shape(x_t, x_t_rec, "cycle_loss target pair")
    return (x_a_rec - x_a).abs().mean() + (x_t_rec - x_t).abs().mean()


def generator_objective(adv_g: torch.Tensor, cyc: torch.Tensor,
                        lambda_cyc: float) -> torch.Tensor:
    """Full translation objective for one direction: adv_g + lambda_cyc * cyc."""
    if lambda_cyc < 0:
        raise InputError(f"lambda_cyc must be >= 0, got {lambda_cyc}")
    return adv_g + lambda_cyc * cyc


def cross_entropy(target: torch.Tensor, pred: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel cross-entropy of ``pred`` against hard or soft targets.

    Integer targets are treated as one-hot; floating targets are probability
    maps of the same shape as ``pred``.
    """
    pred = _batched_probs(pred)
    logp = torch.log(pred.clamp_min(PROB_EPS))
    if not torch.is_floating_point(target):
        y = _batched_labels(target, pred)
        picked = torch.gather(logp, 1, y[:, None]).squeeze(1)
        return -picked.mean()
    target = _batched_probs(target)
    _check_same_shape(target, pred, "cross_entropy")
    return -(target * logp).sum(dim=1).mean()


def soft_dice_per_class(target_label: torch.Tensor, pred: torch.Tensor) -> torch.Tensor:
    """Smoothed soft Dice per class, pooled over batch and pixels.

    dice_c = (2 * sum(p_c * g_c) + eps) / (sum(p_c) + sum(g_c) + eps)
    with one-hot g from the label map.
    """
    pred = _batched_probs(pred)
    y = _batched_labels(target_label, pred)
    num_classes = pred.shape[1]
    onehot = torch.nn.functional.one_hot(y, num_classes)
    onehot = onehot.permute(0, 3, 1, 2).to(pred.dtype)
    inter = (pred * onehot).sum(dim=(0, 2, 3))
    sizes = pred.sum(dim=(0, 2, 3)) + onehot.sum(dim=(0, 2, 3))
    return (2.0 * inter + DICE_EPS) / (sizes + DICE_EPS)


def soft_dice_loss(target_label: torch.Tensor, pred: torch.Tensor,
                   exclude_background: bool = False) -> torch.Tensor:
    """1 - mean per-class soft Dice (background included unless excluded)."""
    dice = soft_dice_per_class(target_label, pred)
    if exclude_background:
        dice = dice[1:]
    return 1.0 - dice.mean()


def supervised_loss(y: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
    """Segmentation supervision: cross-entropy plus soft Dice."""
    return cross_entropy(y, p) + soft_dice_loss(y, p)


def kd_loss(teacher: torch.Tensor, student: torch.Tensor) -> torch.Tensor:
    """Cross-entropy of the student against the detached teacher distribution.

    The teacher is a constant: no gradient ever reaches the network that
    produced it. Minimized over the student at student == teacher.
    """
    _check_same_shape(teacher, student, "kd_loss")
    return cross_entropy(teacher.detach(), student)


def segmentor_objective(sup: torch.Tensor, kd: torch.Tensor,
                        lambda_kd: float) -> torch.Tensor:
    """Composite segmentor objective: sup + lambda_kd * kd."""
    if lambda_kd < 0:
        raise InputError(f"lambda_kd must be >= 0, got {lambda_kd}")
    return sup + lambda_kd * kd


@dataclass(frozen=True)
class LossReport:
    """Per-iteration scalar losses; ``total`` follows the overall objective
    (both full translation objectives plus both composite segmentor
    objectives). ``d_t`` / ``d_a`` are the discriminator-side losses, logged
    for diagnostics and not part of ``total``.
    """

    adv_t: float
    adv_a: float
    cyc: float
    sup_syn: float
    sup_real: float
    kd_s2r: float
    kd_r2s: float
    seg_syn: float
    seg_real: float
    d_t: float
    d_a: float
    total: float

    @classmethod
    def from_terms(cls, *, adv_t: float, adv_a: float, cyc: float,
                   sup_syn: float, sup_real: float, kd_s2r: float,
                   kd_r2s: float, d_t: float, d_a: float, lambda_cyc: float,
                   lambda_kd1: float, lambda_kd2: float) -> "LossReport":
        seg_syn = sup_syn + lambda_kd2 * kd_r2s
        seg_real = sup_real + lambda_kd1 * kd_s2r
        gan_a2t = adv_t + lambda_cyc * cyc
        gan_t2a = adv_a + lambda_cyc * cyc
        return cls(
            adv_t=adv_t, adv_a=adv_a, cyc=cyc,
            sup_syn=sup_syn, sup_real=sup_real,
            kd_s2r=kd_s2r, kd_r2s=kd_r2s,
            seg_syn=seg_syn, seg_real=seg_real,
            d_t=d_t, d_a=d_a,
            total=gan_a2t + gan_t2a + seg_syn + seg_real,
        )

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}
