"""Deterministic seed derivation.

Every random stream in the package is derived from one master seed and a
string label, so adding a new randomized component never perturbs the
streams of existing ones.
"""

import hashlib


def derive_seed(master: int, label: str) -> int:
    """Return a stable 63-bit seed for (master, label)."""
    digest = hashlib.sha256(f"{master}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1
