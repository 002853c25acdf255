"""Shared fixtures and the finite-difference gradient oracle."""

import numpy as np
import pytest
import torch

from mkdseg.networks import NetworkSpec, build_network


def fd_relative_error(loss_fn, module, h: float = 1e-6, n_coords: int = 120,
                      seed: int = 0) -> float:
    """Relative error between autograd and central finite differences.

    ``loss_fn`` must recompute the scalar loss from the module's current
    parameters on every call. A random subset of parameter coordinates is
    probed; the result is ||g_ad - g_fd|| / ||g_fd|| over that subset.
    """
    params = [p for p in module.parameters() if p.requires_grad]
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = torch.cat([
        (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1)
        for p in params
    ]).detach()

    total = analytic.numel()
    rng = np.random.default_rng(seed)
    coords = rng.choice(total, size=min(n_coords, total), replace=False)

    sizes = [p.numel() for p in params]
    offsets = np.cumsum([0] + sizes)
    fd = []
    with torch.no_grad():
        for flat in coords:
            pi = int(np.searchsorted(offsets, flat, side="right")) - 1
            off = int(flat - offsets[pi])
            view = params[pi].reshape(-1)
            orig = view[off].item()
            view[off] = orig + h
            plus = float(loss_fn())
            view[off] = orig - h
            minus = float(loss_fn())
            view[off] = orig
            fd.append((plus - minus) / (2.0 * h))
    fd = torch.tensor(fd, dtype=analytic.dtype)
    ad = analytic[torch.as_tensor(coords, dtype=torch.long)]
    denom = max(float(fd.norm()), 1e-12)
    return float((ad - fd).norm()) / denom


@pytest.fixture
def tiny_generator():
    return build_network(NetworkSpec("generator", width=4, depth=1), 11)


@pytest.fixture
def tiny_discriminator():
    return build_network(NetworkSpec("discriminator", width=4, depth=1), 12)


@pytest.fixture
def tiny_segmentor():
    return build_network(NetworkSpec("segmentor", width=4, depth=1, num_classes=3), 13)
