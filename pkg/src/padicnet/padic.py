"""Finite quotients G_l = Z_p / p^l Z_p of the p-adic integers.

An element of G_l is stored as its integer representative
``value = I_0 + I_1 p + ... + I_{l-1} p^{l-1}``.  Integer order of the
representatives is the canonical order of every coefficient vector in the
package, so truncation to a coarser level is ``value % p**m`` and the
children of a ball occupy the positions ``value + z * p**l``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import CapacityError, DomainError

DEFAULT_LEVEL_CAP = 2**24

_level_cap = DEFAULT_LEVEL_CAP


def set_level_cap(cap: int) -> None:
    """Set the largest admissible number of balls p**l at one level."""
    global _level_cap
    if cap < 1:
        raise ValueError("level cap must be positive")
    _level_cap = int(cap)


def get_level_cap() -> int:
    return _level_cap


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n < 4:
        return True
    if n % 2 == 0:
        return False
    d = 3
    while d * d <= n:
        if n % d == 0:
            return False
        d += 2
    return True


def next_prime(n: int) -> int:
    """Smallest prime strictly greater than ``n``."""
    c = max(n + 1, 2)
    while not is_prime(c):
        c += 1
    return c


def check_prime(p: int) -> int:
    if isinstance(p, bool) or int(p) != p:
        raise DomainError(f"p must be an integer, got {p!r}")
    p = int(p)
    if not is_prime(p):
        raise DomainError(f"p must be prime, got {p}")
    return p


def check_capacity(p: int, level: int, cap: int | None = None) -> int:
    """Return p**level, raising CapacityError if it exceeds the cap."""
    if level < 0:
        raise DomainError(f"level must be >= 0, got {level}")
    cap = _level_cap if cap is None else cap
    size = p**level
    if size > cap:
        raise CapacityError(
            f"p^l = {p}^{level} = {size} balls exceeds the level cap {cap}"
        )
    return size


@dataclass(frozen=True)
class PadicIndex:
    """A ball ``value + p^level Z_p``, i.e. an element of G_level."""

    p: int
    level: int
    value: int

    def __post_init__(self):
        if self.level < 0:
            raise DomainError(f"level must be >= 0, got {self.level}")
        if not 0 <= self.value < self.p**self.level:
            raise DomainError(
                f"value {self.value} outside [0, {self.p}^{self.level})"
            )

    def digit(self, j: int) -> int:
        if not 0 <= j < self.level:
            raise DomainError(f"digit position {j} outside [0, {self.level})")
        return (self.value // self.p**j) % self.p

    @property
    def digits(self) -> tuple[int, ...]:
        return tuple(self.digit(j) for j in range(self.level))


def project(i: PadicIndex, m: int) -> PadicIndex:
    """Truncate ``i`` to its first ``m`` digits (identity when m >= level)."""
    if m < 0:
        raise DomainError(f"projection level must be >= 0, got {m}")
    if m >= i.level:
        return i
    return PadicIndex(i.p, m, i.value % i.p**m)


def children(i: PadicIndex, cap: int | None = None) -> list[PadicIndex]:
    """The p balls of level ``i.level + 1`` contained in ``i``."""
    check_capacity(i.p, i.level + 1, cap)
    step = i.p**i.level
    return [PadicIndex(i.p, i.level + 1, i.value + z * step) for z in range(i.p)]


def descendants(i: PadicIndex, level: int, cap: int | None = None) -> list[PadicIndex]:
    """All balls at ``level`` contained in ``i``, by repeated child expansion."""
    if level < i.level:
        raise DomainError("descendant level must not be coarser than the ball")
    out = [i]
    for _ in range(level - i.level):
        out = [c for b in out for c in children(b, cap)]
    return out


def haar_weight(p: int, level: int) -> float:
    """Haar measure p**-level of one ball at ``level``."""
    if level < 0:
        raise DomainError(f"level must be >= 0, got {level}")
    return 1.0 / (p**level)


def enumerate_level(p: int, level: int, cap: int | None = None) -> Iterator[PadicIndex]:
    size = check_capacity(p, level, cap)
    for v in range(size):
        yield PadicIndex(p, level, v)


def projection_map(p: int, level: int, m: int) -> np.ndarray:
    """Array whose entry ``v`` is the value of the level-``m`` truncation of ``v``."""
    size = p**level
    if m >= level:
        return np.arange(size, dtype=np.int64)
    return np.arange(size, dtype=np.int64) % p**m
