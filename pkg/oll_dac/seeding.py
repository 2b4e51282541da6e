import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(master_seed: int, repetition: int, tag: str) -> int:
    """
    64-bit seed from (master_seed, repetition, tag).

    BLAKE2b with an 8-byte digest over "<master>:<repetition>:<tag>", read little-endian.
    """
    payload = f"{int(master_seed) & _MASK64}:{int(repetition)}:{tag}".encode("utf-8")
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed_list(master_seed: int, repetition: int, tag: str, count: int) -> list[int]:
    return [derive_seed(master_seed, repetition, f"{tag}/{i}") for i in range(count)]


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed) & _MASK64)))


def split_rngs(seed: int, count: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(int(seed) & _MASK64).spawn(count)
    return [np.random.Generator(np.random.PCG64(child)) for child in children]
