"""Locally constant functions on Z_p and Z_p x Z_p at a finite level.

A :class:`TreeFunction` at level ``l`` holds one real coefficient per ball
``I + p^l Z_p``; a :class:`TreeKernel` holds a ``p^l x p^l`` matrix over pairs
of balls.  Integrals against the normalized Haar measure are exact finite sums
with weight ``p^-l`` per ball.  Binary operations on operands of different
levels first lift the coarser one; operands over different primes are
rejected.

Reductions go through numpy's pairwise summation along contiguous rows, and
row blocks are fixed independently of the worker count, so results do not
depend on threading.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import _parallel
from .errors import DomainError
from .padic import check_capacity, haar_weight

# rows per block in dense kernel products; fixed so reductions are reproducible
_ROW_BLOCK = 256


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _same_prime(a, b) -> None:
    if a.p != b.p:
        raise DomainError(f"prime mismatch: {a.p} vs {b.p}")


@dataclass(frozen=True, eq=False)
class TreeFunction:
    """Element of D^l(Z_p): ``coeffs[i]`` is the value on the ball with index value ``i``."""

    p: int
    level: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64, copy=True).reshape(-1)
        size = check_capacity(self.p, self.level)
        if c.shape[0] != size:
            raise DomainError(
                f"expected {size} coefficients for p={self.p}, level={self.level}; got {c.shape[0]}"
            )
        if not np.all(np.isfinite(c)):
            raise DomainError("coefficients must be finite")
        object.__setattr__(self, "coeffs", _readonly(c))

    @classmethod
    def zeros(cls, p: int, level: int) -> "TreeFunction":
        return cls(p, level, np.zeros(check_capacity(p, level)))

    @classmethod
    def constant(cls, p: int, level: int, value: float) -> "TreeFunction":
        return cls(p, level, np.full(check_capacity(p, level), float(value)))

    @classmethod
    def indicator(cls, p: int, level: int, value: int) -> "TreeFunction":
        c = np.zeros(check_capacity(p, level))
        c[value] = 1.0
        return cls(p, level, c)

    @property
    def size(self) -> int:
        return self.coeffs.shape[0]

    def lift(self, level: int) -> "TreeFunction":
        return lift(self, level)

    def with_coeffs(self, coeffs) -> "TreeFunction":
        return TreeFunction(self.p, self.level, coeffs)

    def _binary(self, other, op):
        if isinstance(other, TreeFunction):
            _same_prime(self, other)
            lv = max(self.level, other.level)
            return TreeFunction(self.p, lv, op(lift(self, lv).coeffs, lift(other, lv).coeffs))
        return TreeFunction(self.p, self.level, op(self.coeffs, float(other)))

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return TreeFunction(self.p, self.level, -self.coeffs)

    def __repr__(self):
        return f"TreeFunction(p={self.p}, level={self.level}, coeffs={self.coeffs!r})"

    def to_dict(self) -> dict:
        return {"p": self.p, "level": self.level, "coeffs": self.coeffs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TreeFunction":
        return cls(int(d["p"]), int(d["level"]), np.asarray(d["coeffs"], dtype=float))


@dataclass(frozen=True, eq=False)
class TreeKernel:
    """Element of D^l(Z_p x Z_p); row = first argument, column = second.

    ``coeffs`` may be a dense array or a scipy sparse matrix.  Sparse storage
    is used for recast networks, whose kernels are mostly zeros.
    """

    p: int
    level: int
    coeffs: np.ndarray | sp.csr_matrix

    def __post_init__(self):
        size = check_capacity(self.p, self.level)
        if sp.issparse(self.coeffs):
            c = sp.csr_matrix(self.coeffs, dtype=np.float64, copy=True)
            c.sum_duplicates()
            data = c.data
        else:
            c = np.array(self.coeffs, dtype=np.float64, copy=True)
            if c.ndim == 1 and c.shape[0] == size * size:
                c = c.reshape(size, size)
            data = c
            _readonly(c)
        if c.shape != (size, size):
            raise DomainError(f"kernel must be {size}x{size}, got {c.shape}")
        if not np.all(np.isfinite(data)):
            raise DomainError("kernel coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, p: int, level: int, sparse: bool = False) -> "TreeKernel":
        n = check_capacity(p, level)
        return cls(p, level, sp.csr_matrix((n, n)) if sparse else np.zeros((n, n)))

    @classmethod
    def constant(cls, p: int, level: int, value: float) -> "TreeKernel":
        n = check_capacity(p, level)
        return cls(p, level, np.full((n, n), float(value)))

    @classmethod
    def diagonal(cls, p: int, level: int, values) -> "TreeKernel":
        n = check_capacity(p, level)
        return cls(p, level, np.diag(np.broadcast_to(np.asarray(values, float), (n,))))

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.coeffs)

    @property
    def size(self) -> int:
        return self.coeffs.shape[0]

    def dense(self) -> np.ndarray:
        return self.coeffs.toarray() if self.is_sparse else np.array(self.coeffs)

    def nnz(self) -> int:
        if self.is_sparse:
            return int(np.count_nonzero(self.coeffs.data))
        return int(np.count_nonzero(self.coeffs))

    def lift(self, level: int) -> "TreeKernel":
        if level < self.level:
            raise DomainError(f"cannot lift level {self.level} kernel down to {level}")
        check_capacity(self.p, level)
        reps = self.p ** (level - self.level)
        if reps == 1:
            return self
        # entry (I', K') of the lift is W(I' mod p^l, K' mod p^l): a tiling
        if self.is_sparse:
            lifted = sp.kron(np.ones((reps, reps)), self.coeffs, format="csr")
        else:
            lifted = np.tile(self.coeffs, (reps, reps))
        return TreeKernel(self.p, level, lifted)

    def scaled(self, factor: float) -> "TreeKernel":
        return TreeKernel(self.p, self.level, self.coeffs * float(factor))

    def __repr__(self):
        kind = "sparse" if self.is_sparse else "dense"
        return f"TreeKernel(p={self.p}, level={self.level}, {kind})"

    def to_dict(self) -> dict:
        if self.is_sparse:
            coo = self.coeffs.tocoo()
            order = np.lexsort((coo.col, coo.row))
            entries = [[int(coo.row[k]), int(coo.col[k]), float(coo.data[k])] for k in order]
            return {"p": self.p, "level": self.level, "format": "sparse", "entries": entries}
        return {"p": self.p, "level": self.level, "coeffs": self.coeffs.reshape(-1).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TreeKernel":
        p, level = int(d["p"]), int(d["level"])
        if d.get("format") == "sparse":
            n = check_capacity(p, level)
            e = np.asarray(d["entries"], dtype=float).reshape(-1, 3)
            m = sp.coo_matrix((e[:, 2], (e[:, 0].astype(int), e[:, 1].astype(int))), shape=(n, n))
            return cls(p, level, m.tocsr())
        return cls(p, level, np.asarray(d["coeffs"], dtype=float))


# ---------------------------------------------------------------------------
# activations


@dataclass(frozen=True)
class Activation:
    """Scalar nonlinearity with declared Lipschitz constant and sup norm.

    ``sup_norm`` is ``math.inf`` for unbounded maps.
    """

    name: str
    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    lipschitz: float
    sup_norm: float

    def __call__(self, s):
        return self.fn(np.asarray(s, dtype=np.float64))

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.sup_norm)


def _pwl_sigmoid(s):
    # equals (|s+1| - |s-1|) / 2 everywhere; clip avoids cancellation
    return np.clip(s, -1.0, 1.0)


TANH = Activation("tanh", np.tanh, 1.0, 1.0)
PWL_SIGMOID = Activation("pwl_sigmoid", _pwl_sigmoid, 1.0, 1.0)
IDENTITY = Activation("identity", lambda s: np.array(s, dtype=np.float64), 1.0, math.inf)

_ACTIVATIONS: dict[str, Activation] = {a.name: a for a in (TANH, PWL_SIGMOID, IDENTITY)}


def spot_check_activation(act: Activation, n_pairs: int = 1000, seed: int = 0) -> None:
    """Check act(0) = 0 and the declared Lipschitz bound on random pairs."""
    if act.lipschitz <= 0 or not (act.sup_norm > 0):
        raise DomainError(f"activation {act.name!r}: L and M must be positive")
    if float(act(0.0)) != 0.0:
        raise DomainError(f"activation {act.name!r} must vanish at 0")
    rng = np.random.default_rng(seed)
    s = rng.normal(scale=3.0, size=n_pairs)
    t = rng.normal(scale=3.0, size=n_pairs)
    lhs = np.abs(act(s) - act(t))
    if np.any(lhs > act.lipschitz * np.abs(s - t) * (1 + 1e-12) + 1e-15):
        raise DomainError(f"activation {act.name!r} violates its declared Lipschitz constant")
    if act.bounded and np.any(np.abs(act(s)) > act.sup_norm * (1 + 1e-12)):
        raise DomainError(f"activation {act.name!r} exceeds its declared sup norm")


def register_activation(act: Activation) -> Activation:
    spot_check_activation(act)
    _ACTIVATIONS[act.name] = act
    return act


def get_activation(name: str | Activation) -> Activation:
    if isinstance(name, Activation):
        return name
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise DomainError(
            f"unknown activation {name!r}; known: {sorted(_ACTIVATIONS)}"
        ) from None


# ---------------------------------------------------------------------------
# operations


def lift(f: TreeFunction, level: int) -> TreeFunction:
    """Refine ``f`` to a finer level; each child ball keeps its parent's value."""
    if level < f.level:
        raise DomainError(f"cannot lift level {f.level} function down to {level}")
    check_capacity(f.p, level)
    reps = f.p ** (level - f.level)
    if reps == 1:
        return f
    # child value + z p^l has the same residue mod p^l: a plain tiling
    return TreeFunction(f.p, level, np.tile(f.coeffs, reps))


def integrate(f: TreeFunction) -> float:
    return float(np.sum(f.coeffs)) * haar_weight(f.p, f.level)


def inner(f: TreeFunction, g: TreeFunction) -> float:
    _same_prime(f, g)
    lv = max(f.level, g.level)
    a, b = lift(f, lv).coeffs, lift(g, lv).coeffs
    return float(np.sum(a * b)) * haar_weight(f.p, lv)


def l2_norm(f: TreeFunction) -> float:
    return math.sqrt(float(np.sum(f.coeffs * f.coeffs)) * haar_weight(f.p, f.level))


def kernel_l2_norm(W: TreeKernel) -> float:
    """L^2(Z_p x Z_p) norm (Hilbert-Schmidt norm of the integral operator)."""
    data = W.coeffs.data if W.is_sparse else W.coeffs
    return math.sqrt(float(np.sum(data * data))) * haar_weight(W.p, W.level)


def kernel_operator_norm(W: TreeKernel) -> float:
    """Norm of g -> int W(., y) g(y) dy as an operator on L^2(Z_p).

    The Haar weights cancel between domain and range norms, leaving the
    spectral norm of ``p^-l * coeffs``.  Never larger than :func:`kernel_l2_norm`.
    """
    n = float(W.p**W.level)
    m = W.coeffs
    if W.is_sparse:
        if m.nnz == 0:
            return 0.0
        off = m - sp.diags(m.diagonal())
        if off.count_nonzero() == 0:
            return float(np.max(np.abs(m.diagonal()))) / n
        if m.shape[0] <= 1024:
            return float(np.linalg.norm(m.toarray(), 2)) / n
        from scipy.sparse.linalg import svds

        s = svds(m, k=1, return_singular_vectors=False, random_state=0)
        return float(s[0]) / n
    diag = np.diagonal(m)
    if np.count_nonzero(m) == np.count_nonzero(diag):
        return float(np.max(np.abs(diag), initial=0.0)) / n
    return float(np.linalg.norm(m, 2)) / n


def _row_blocks(n: int):
    return [(s, min(s + _ROW_BLOCK, n)) for s in range(0, n, _ROW_BLOCK)]


def apply_kernel(W: TreeKernel, g: TreeFunction) -> TreeFunction:
    """``x -> int W(x, y) g(y) dy`` as a level-``W.level`` function.

    ``g`` at a coarser level is lifted first, which is exactly the sum over
    descendants in the pre-activation formula for piecewise-constant inputs.
    """
    _same_prime(W, g)
    if g.level > W.level:
        raise DomainError(
            f"function level {g.level} exceeds kernel level {W.level}; lift the kernel"
        )
    v = lift(g, W.level).coeffs
    w = haar_weight(W.p, W.level)
    if W.is_sparse:
        return TreeFunction(W.p, W.level, (W.coeffs @ v) * w)
    m = W.coeffs

    def block(bounds):
        s, e = bounds
        return np.sum(m[s:e] * v, axis=1)

    out = np.concatenate(_parallel.map_blocks(block, _row_blocks(W.size)))
    return TreeFunction(W.p, W.level, out * w)


def apply_activation(phi: Activation | str, f: TreeFunction) -> TreeFunction:
    phi = get_activation(phi)
    return TreeFunction(f.p, f.level, phi(f.coeffs))


def convolve(kernel: TreeFunction, x: TreeFunction) -> TreeFunction:
    """Group convolution on G_l: ``r[i] = p^-l sum_k kernel[(i - k) mod p^l] x[k]``."""
    _same_prime(kernel, x)
    lv = max(kernel.level, x.level)
    kc, xc = lift(kernel, lv).coeffs, lift(x, lv).coeffs
    n = kc.shape[0]
    k_idx = np.arange(n)

    def block(bounds):
        s, e = bounds
        idx = (np.arange(s, e)[:, None] - k_idx[None, :]) % n
        return np.sum(kc[idx] * xc, axis=1)

    out = np.concatenate(_parallel.map_blocks(block, _row_blocks(n)))
    return TreeFunction(kernel.p, lv, out * haar_weight(kernel.p, lv))


def convolution_kernel(kernel: TreeFunction, level: int | None = None) -> TreeKernel:
    """The kernel ``W(I, K) = kernel((I - K) mod p^l)`` realizing :func:`convolve`."""
    lv = kernel.level if level is None else level
    kc = lift(kernel, lv).coeffs
    n = kc.shape[0]
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return TreeKernel(kernel.p, lv, kc[idx])


def tree_sum(F: TreeFunction, L: int) -> float:
    """Sum of ``F`` over G_l computed layer by layer down to level ``L``.

    Peels the top digit off at each level: the outer sum runs over the top
    digit, the inner sum over the truncated index, until level ``L`` where the
    remaining p^L values are summed flat.
    """
    if not 0 <= L <= F.level:
        raise DomainError(f"tree_sum needs 0 <= L <= level, got L={L}, level={F.level}")

    def rec(values: np.ndarray, level: int) -> float:
        if level == L:
            return float(np.sum(values))
        # value = J + z p^(level-1): row z holds the slice with top digit z
        rows = values.reshape(F.p, -1)
        return sum(rec(rows[z], level - 1) for z in range(F.p))

    return rec(F.coeffs, F.level)
