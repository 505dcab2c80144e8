"""Stationary states of the edge-detector model

    h(z) = a phi(h(z)) + b(z),   b = W_in * x + xi,

with phi the piecewise-linear sigmoid ``clip(s, -1, 1)``.  For ``a <= 1``
the state is unique and given in closed form; for ``a > 1`` each index
independently admits up to three branches and the states form a finite
poset.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import _parallel
from .errors import CapacityError, DomainError, InfeasibleError, NumericError
from .padic import check_capacity, check_prime
from .tree import PWL_SIGMOID, TreeFunction, convolve, lift

DEFAULT_CAP = 10**6
RESIDUAL_TOL = 1e-12


class Label(enum.IntEnum):
    MINUS = -1
    MID = 0
    PLUS = 1


_LABEL_CHARS = {Label.MINUS: "-", Label.MID: "0", Label.PLUS: "+"}


@dataclass(frozen=True, eq=False)
class ToyParams:
    p: int
    level: int
    a: float
    W_in: TreeFunction | None = None
    xi: TreeFunction | None = None

    def __post_init__(self):
        check_prime(self.p)
        check_capacity(self.p, self.level)
        a = float(self.a)
        if not (math.isfinite(a) and a >= 0):
            raise DomainError(f"a must be finite and >= 0, got {self.a}")
        object.__setattr__(self, "a", a)
        for name in ("W_in", "xi"):
            f = getattr(self, name)
            if f is None:
                object.__setattr__(self, name, TreeFunction.zeros(self.p, self.level))
            elif f.p != self.p or f.level > self.level:
                raise DomainError(f"{name} must share p={self.p} and have level <= {self.level}")
            else:
                object.__setattr__(self, name, lift(f, self.level))


def drive(params: ToyParams, x: TreeFunction) -> TreeFunction:
    """``b = W_in * x + xi`` at the model level."""
    if x.p != params.p:
        raise DomainError(f"input prime {x.p} differs from {params.p}")
    if x.level > params.level:
        raise DomainError(f"input level {x.level} exceeds model level {params.level}")
    if not np.any(params.W_in.coeffs):
        return params.xi
    return convolve(params.W_in, lift(x, params.level)) + params.xi


def _coeffs(b) -> np.ndarray:
    return b.coeffs if isinstance(b, TreeFunction) else np.asarray(b, dtype=float)


def closed_form_state(params: ToyParams, b: TreeFunction) -> TreeFunction:
    """The unique state for ``a <= 1``."""
    a = params.a
    if a > 1:
        raise DomainError(f"a={a} > 1 has many states; use enumerate_states")
    bc = b.coeffs
    if a < 1:
        h = np.where(bc > 1 - a, a + bc, np.where(bc < a - 1, bc - a, bc / (1 - a)))
    else:
        h = np.where(bc > 0, 1 + bc, np.where(bc < 0, bc - 1, 0.0))
    return TreeFunction(b.p, b.level, h)


def residual(a: float, b, h) -> float:
    """``max |h - a phi(h) - b|`` over indices (and over states for 2-D ``h``)."""
    h = np.asarray(h, dtype=float)
    return float(np.max(np.abs(h - a * PWL_SIGMOID(h) - _coeffs(b)), initial=0.0))


def admissible_labels(a: float, b) -> list[tuple[Label, ...]]:
    """Branches allowed at each index, in the order PLUS, MINUS, MID."""
    out = []
    for v in _coeffs(b):
        s = []
        if v > 1 - a:
            s.append(Label.PLUS)
        if v < a - 1:
            s.append(Label.MINUS)
        if 1 - a < v < a - 1:
            s.append(Label.MID)
        out.append(tuple(s))
    return out


def state_values(a: float, b, labels: np.ndarray) -> np.ndarray:
    """Branchwise state values for one labeling or a stack of them."""
    bc = _coeffs(b)
    labels = np.asarray(labels)
    return np.where(labels == Label.PLUS, a + bc,
                    np.where(labels == Label.MINUS, bc - a, bc / (1 - a)))


@dataclass(frozen=True, eq=False)
class StateLabeling:
    labels: tuple[Label, ...]
    state: TreeFunction

    @property
    def union(self) -> frozenset[int]:
        return frozenset(i for i, lab in enumerate(self.labels) if lab != Label.MID)

    @property
    def bistable(self) -> bool:
        return all(lab != Label.MID for lab in self.labels)

    def code(self) -> str:
        return "".join(_LABEL_CHARS[lab] for lab in self.labels)


@dataclass(frozen=True, eq=False)
class StatePoset:
    """Enumerated (or sampled) states; row ``s`` of ``labels`` is one labeling."""

    a: float
    b: TreeFunction
    labels: np.ndarray  # int8, shape (n_states, p^l)
    values: np.ndarray  # shape (n_states, p^l)
    count: int  # exact number of states, possibly larger than n_states
    sampled: bool
    admissible: tuple[tuple[Label, ...], ...]

    @property
    def n_states(self) -> int:
        return self.labels.shape[0]

    def state(self, s: int) -> StateLabeling:
        return StateLabeling(tuple(Label(int(v)) for v in self.labels[s]),
                             TreeFunction(self.b.p, self.b.level, self.values[s]))

    def __iter__(self):
        return (self.state(s) for s in range(self.n_states))

    @property
    def union_masks(self) -> np.ndarray:
        return self.labels != Label.MID

    def bistable_indices(self) -> np.ndarray:
        return np.flatnonzero(np.all(self.union_masks, axis=1))

    def ranks(self) -> np.ndarray:
        return np.sum(self.union_masks, axis=1)

    def leq_matrix(self) -> np.ndarray:
        """``M[s, t]`` is True iff state ``s`` precedes state ``t``."""
        lab, U = self.labels, self.union_masks
        n = self.n_states

        def block(bounds):
            lo, hi = bounds
            # s <= t: U_t inside U_s and the labels agree on U_t
            Us, Ls = U[lo:hi, None, :], lab[lo:hi, None, :]
            Ut, Lt = U[None, :, :], lab[None, :, :]
            return np.all(~Ut | (Us & (Ls == Lt)), axis=2)

        step = max(1, 2**22 // max(1, n * lab.shape[1]))
        parts = _parallel.map_blocks(block, [(s, min(s + step, n)) for s in range(0, n, step)])
        return np.concatenate(parts, axis=0) if parts else np.zeros((0, 0), bool)


def _mixed_radix(sizes: list[int], idx: np.ndarray) -> np.ndarray:
    """Digits of ``idx`` in the mixed radix ``sizes`` (first position slowest)."""
    out = np.empty((idx.size, len(sizes)), dtype=np.int64)
    rem = idx.copy()
    for j in range(len(sizes) - 1, -1, -1):
        out[:, j] = rem % sizes[j]
        rem //= sizes[j]
    return out


def enumerate_states(params: ToyParams, b: TreeFunction, cap: int = DEFAULT_CAP,
                     seed: int = 0) -> StatePoset:
    """All states for ``a > 1`` (or a uniform sample of ``cap`` when there are more)."""
    a = params.a
    if a <= 1:
        raise DomainError(f"state enumeration needs a > 1, got a={a}; use closed_form_state")
    if cap < 0:
        raise DomainError("cap must be >= 0")
    adm = admissible_labels(a, b)
    if any(len(s) == 0 for s in adm):
        raise InfeasibleError("some index admits no branch")
    sizes = [len(s) for s in adm]
    count = math.prod(sizes)
    table = np.zeros((len(adm), 3), dtype=np.int8)
    for i, s in enumerate(adm):
        table[i, : len(s)] = s
    n = len(adm)
    if count <= cap:
        choice = _mixed_radix(sizes, np.arange(count, dtype=np.int64))
        sampled = False
    else:
        rng = np.random.default_rng(seed)
        choice = np.stack([rng.integers(0, k, size=cap) for k in sizes], axis=1).reshape(cap, n)
        sampled = True
    labels = table[np.arange(n)[None, :], choice].astype(np.int8).reshape(-1, n)
    values = state_values(a, b, labels).reshape(-1, n)
    if labels.shape[0] and residual(a, b, values) > RESIDUAL_TOL:
        raise NumericError(f"state residual {residual(a, b, values):g} exceeds {RESIDUAL_TOL}")
    return StatePoset(a, b, labels, values, count, sampled, tuple(adm))


class Comparison(enum.Enum):
    EQUAL = "equal"
    LESS = "less"
    GREATER = "greater"
    INCOMPARABLE = "incomparable"


def _leq(s: StateLabeling, t: StateLabeling) -> bool:
    return all(s.labels[i] == t.labels[i] for i in t.union)


def order_relation(s1: StateLabeling, s2: StateLabeling) -> Comparison:
    """Compare two states; ``LESS`` means ``s1`` precedes ``s2``.

    ``s1`` precedes ``s2`` when ``s1`` refines ``s2``: every index where
    ``s2`` saturates is saturated the same way in ``s1``.  Lower states have
    smaller bistability sets; the bistable states are at the bottom.
    """
    if len(s1.labels) != len(s2.labels):
        raise DomainError("states live on different index sets")
    le, ge = _leq(s1, s2), _leq(s2, s1)
    if le and ge:
        return Comparison.EQUAL
    if le:
        return Comparison.LESS
    if ge:
        return Comparison.GREATER
    return Comparison.INCOMPARABLE


def minimal_elements(poset: StatePoset) -> np.ndarray:
    """Indices of states with nothing strictly below them."""
    if poset.sampled:
        raise DomainError("minimal elements are undecidable on a sampled poset")
    M = poset.leq_matrix()
    strict_below = M & ~np.eye(poset.n_states, dtype=bool)
    return np.flatnonzero(~np.any(strict_below, axis=0))


@dataclass(frozen=True)
class PosetCheck:
    reflexive: bool
    antisymmetric: bool
    transitive: bool

    @property
    def ok(self) -> bool:
        return self.reflexive and self.antisymmetric and self.transitive


def check_partial_order(M: np.ndarray) -> PosetCheck:
    n = M.shape[0]
    refl = bool(np.all(np.diagonal(M)))
    anti = bool(not np.any(M & M.T & ~np.eye(n, dtype=bool)))
    Mi = M.astype(np.int64)
    trans = bool(not np.any((Mi @ Mi > 0) & ~M))
    return PosetCheck(refl, anti, trans)


def hasse_edges(poset: StatePoset) -> list[tuple[int, int]]:
    """Covering pairs ``(lower, upper)``; covers differ in exactly one saturated index."""
    if poset.sampled:
        raise DomainError("covering relations need the full poset")
    M = poset.leq_matrix()
    r = poset.ranks()
    cover = M & (r[:, None] - r[None, :] == 1)
    lo, hi = np.nonzero(cover)
    return list(zip(lo.tolist(), hi.tolist()))


@dataclass(frozen=True)
class LatticeReport:
    pairs: int
    pairs_with_meet: int
    pairs_with_join: int

    @property
    def is_lattice(self) -> bool:
        return self.pairs_with_meet == self.pairs == self.pairs_with_join


def lattice_report(poset: StatePoset, max_states: int = 400) -> LatticeReport | None:
    """Count pairs having a meet / join inside the enumerated set (brute force)."""
    if poset.sampled or poset.n_states > max_states:
        return None
    M = poset.leq_matrix()
    n = poset.n_states

    def has_extremum(bounds: np.ndarray, greatest: bool) -> bool:
        idx = np.flatnonzero(bounds)
        if idx.size == 0:
            return False
        sub = M[np.ix_(idx, idx)]
        # greatest lower bound: some z with w <= z for all w in the set
        return bool(np.any(np.all(sub, axis=0) if greatest else np.all(sub, axis=1)))

    meets = joins = pairs = 0
    for x in range(n):
        for y in range(x + 1, n):
            pairs += 1
            meets += has_extremum(M[:, x] & M[:, y], greatest=True)
            joins += has_extremum(M[x, :] & M[y, :], greatest=False)
    return LatticeReport(pairs, meets, joins)


# ---------------------------------------------------------------------------
# images


def laplacian_kernel(p: int, level: int, width: int, gain: float = 1.0) -> TreeFunction:
    """Zero-mean 5-point Laplacian on row-major pixels, scaled for :func:`convolve`."""
    n = check_capacity(p, level)
    k = np.zeros(n)
    s = float(gain) * n
    k[0] += 4 * s
    for off in (1, -1, width, -width):
        k[off % n] -= s
    return TreeFunction(p, level, k)


def level_for_pixels(p: int, n_pixels: int) -> int:
    lv = 0
    while p**lv < n_pixels:
        lv += 1
    return lv


def image_to_function(image: np.ndarray, p: int, level: int) -> TreeFunction:
    """Row-major pixels scaled to [-1, 1]; padding balls repeat the last pixel."""
    img = np.asarray(image, dtype=float)
    n = check_capacity(p, level)
    if img.size > n:
        raise CapacityError(f"{img.size} pixels do not fit in p^l = {n} balls")
    flat = img.reshape(-1) / 127.5 - 1.0
    c = np.full(n, flat[-1] if flat.size else 0.0)
    c[: flat.size] = flat
    return TreeFunction(p, level, c)


def edge_detect(image: np.ndarray, params: ToyParams) -> np.ndarray:
    """Stationary output ``phi(h)`` of the model driven by ``image``, as pixels."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise DomainError("edge detection expects a 2-D grayscale image")
    if params.a > 1:
        raise DomainError(f"a={params.a} > 1 has many states; use enumerate_states")
    x = image_to_function(img, params.p, params.level)
    h = closed_form_state(params, drive(params, x))
    # drop rounding noise so a vanishing drive maps to one gray level
    y = np.round(PWL_SIGMOID(h.coeffs[: img.size]), 12)
    pix = np.clip(np.rint((y + 1.0) * 127.5), 0, 255).astype(np.uint8)
    return pix.reshape(img.shape)
