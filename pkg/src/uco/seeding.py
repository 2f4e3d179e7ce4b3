"""Derive independent child seeds from one user seed by component name."""
import hashlib


def child_seed(seed: int, name: str) -> int:
    digest = hashlib.blake2b(f"{seed}:{name}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1
