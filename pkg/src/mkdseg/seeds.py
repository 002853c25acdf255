"""Deterministic seed derivation.

Every random decision in the package (geometry, appearance, init, shuffling,
augmentation, replay buffer) draws from a seed derived here, so one root seed
fully determines a run and independent consumers never share streams.
"""

import hashlib


def derive_seed(root: int, *tags) -> int:
    """Derive a 63-bit child seed from a root seed and a tag path.

    Stable across processes and platforms (SHA-256 based, no hash
    randomization). Tags may be strings or integers.
    """
    h = hashlib.sha256()
    h.update(str(int(root)).encode())
    for tag in tags:
        h.update(b"/")
        h.update(str(tag).encode())
    return int.from_bytes(h.digest()[:8], "little") & (2**63 - 1)
