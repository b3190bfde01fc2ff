"""FNV-1a hashing and deterministic seed derivation."""

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes, state: int = FNV_OFFSET) -> int:
    """64-bit FNV-1a over ``data``, optionally continuing from ``state``."""
    h = state
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK
    return h


def derive_seed(seed: int, tag: str) -> int:
    """Stable child seed for a named purpose under a root seed."""
    return fnv1a64(f"{seed}:{tag}".encode("utf-8"))
