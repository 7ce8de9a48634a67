"""Seeded random streams and the worker-pool handle.

A stream is a master seed plus a path of integer keys. Sample i of a stream
lives in block i // BLOCK_SIZE, and every block owns a Philox generator keyed
by (seed, path, block). Work can therefore be spread over any number of
threads without changing a single drawn value.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, TypeVar

import numpy as np

from .errors import DomainError

BLOCK_SIZE = 4096
_U64 = 2**64

T = TypeVar("T")
R = TypeVar("R")


def _key_word(key: object) -> int:
    """Map a stream key to a 32-bit word; non-negative ints map to themselves."""
    if isinstance(key, (int, np.integer)) and not isinstance(key, bool) and 0 <= key < 2**32:
        return int(key)
    digest = hashlib.sha256(repr(key).encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass(frozen=True)
class RngStream:
    """Counter-addressed random stream: (master seed, key path)."""

    seed: int
    stream: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not 0 <= self.seed < _U64:
            raise DomainError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    def child(self, *keys: object) -> "RngStream":
        return RngStream(self.seed, self.stream + tuple(_key_word(k) for k in keys))

    def generator(self, block: int) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream + (block,))
        return np.random.Generator(np.random.Philox(seq))

    def blocks(self, count: int) -> list[tuple[int, int]]:
        """(block index, rows) pairs covering samples 0 … count-1."""
        full, rest = divmod(count, BLOCK_SIZE)
        out = [(b, BLOCK_SIZE) for b in range(full)]
        if rest:
            out.append((full, rest))
        return out

    def normals(self, count: int, width: int) -> np.ndarray:
        """Standard normals of shape (count, width); row i depends only on i."""
        parts = [self.generator(b).standard_normal((rows, width)) for b, rows in self.blocks(count)]
        return np.concatenate(parts) if parts else np.empty((0, width))


@dataclass(frozen=True)
class Parallelism:
    """Thread-pool handle; `map` always returns results in input order."""

    threads: int = 1

    def __post_init__(self) -> None:
        if self.threads < 1:
            raise DomainError(f"threads must be >= 1, got {self.threads}")

    def map(self, fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
        work = list(items)
        if self.threads == 1 or len(work) <= 1:
            return [fn(item) for item in work]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, work))


SERIAL = Parallelism(1)
