"""Rewrite a layered feedforward (or weight-tied recurrent) network as a
p-adic discrete network whose neurons are balls of one finite level.

Layer ``j`` of the source network (``j = 0`` is the input layer) lives on
the balls of level ``j + 1`` whose top digit is nonzero: input neuron ``k``
(1-based) sits at ``k``, and neuron ``i`` of layer ``j >= 1`` sits at
``parent + i p^j``, where ``parent`` is the position of its chosen parent in
layer ``j - 1``.  All weights are stored in one sparse kernel at level
``depth + 1``; entries are scaled by ``p^level`` so the Haar weight applied
by :func:`~padicnet.tree.apply_kernel` cancels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import _parallel
from .errors import DomainError
from .padic import check_capacity, check_prime, next_prime
from .solver import NetworkParams, solve
from .tree import Activation, TreeFunction, TreeKernel, apply_activation, apply_kernel, get_activation


@dataclass(frozen=True, eq=False)
class LayeredNet:
    """``h_j = W_j phi(h_{j-1}) + b_j`` for ``j = 1..depth``, with ``h_0`` the input."""

    widths: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    phi: Activation | str = "tanh"
    tied: bool = False

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2 or min(widths) < 1:
            raise DomainError("need at least two layers, each of width >= 1")
        depth = len(widths) - 1
        weights = [np.array(w, dtype=float, ndmin=2) for w in self.weights]
        biases = [np.array(b, dtype=float).reshape(-1) for b in self.biases]
        if self.tied and len(weights) == 1:
            weights = weights * depth
        if self.tied and len(biases) == 1:
            biases = biases * depth
        if len(weights) != depth or len(biases) != depth:
            raise DomainError(f"expected {depth} weight matrices and bias vectors")
        for j in range(1, depth + 1):
            if weights[j - 1].shape != (widths[j], widths[j - 1]):
                raise DomainError(
                    f"weight {j} has shape {weights[j - 1].shape}, "
                    f"expected {(widths[j], widths[j - 1])}"
                )
            if biases[j - 1].shape != (widths[j],):
                raise DomainError(f"bias {j} has length {biases[j - 1].size}, expected {widths[j]}")
        if self.tied:
            if len(set(widths)) != 1:
                raise DomainError("a tied network needs equal widths")
            if any(not np.array_equal(w, weights[0]) for w in weights):
                raise DomainError("a tied network needs identical weight matrices")
            weights = [weights[0]] * depth
        for w in weights:
            w.setflags(write=False)
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "weights", tuple(weights))
        object.__setattr__(self, "biases", tuple(biases))
        object.__setattr__(self, "phi", get_activation(self.phi))

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    def nonzero_count(self) -> int:
        return int(sum(np.count_nonzero(w) for w in self.weights))

    def forward(self, x) -> list[np.ndarray]:
        """Pre-activations of every layer, input first."""
        h = np.asarray(x, dtype=float).reshape(-1)
        if h.shape != (self.widths[0],):
            raise DomainError(f"input must have length {self.widths[0]}, got {h.size}")
        out = [h]
        for W, b in zip(self.weights, self.biases):
            h = W @ self.phi(h) + b
            out.append(h)
        return out

    def to_dict(self) -> dict:
        return {
            "widths": list(self.widths),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "phi": self.phi.name,
            "tied": self.tied,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayeredNet":
        try:
            return cls(d["widths"], d["weights"], d["biases"], d.get("phi", "tanh"), bool(d.get("tied", False)))
        except KeyError as e:
            raise DomainError(f"layered network lacks field {e.args[0]!r}") from None


@dataclass(frozen=True, eq=False)
class NeuronMap:
    """Per-layer index arrays; ``maps[j][i]`` is the ball value of neuron ``i`` (0-based)."""

    p: int
    maps: tuple[np.ndarray, ...]
    parents: tuple[np.ndarray, ...]

    def to_dict(self) -> dict:
        return {str(j): m.tolist() for j, m in enumerate(self.maps)}


@dataclass(frozen=True, eq=False)
class RecastResult:
    params: NetworkParams
    neuron_map: NeuronMap
    block_matrix: np.ndarray
    nonzero_count: int

    @property
    def kernel(self) -> TreeKernel:
        return self.params.W


def direct_sum(matrices) -> np.ndarray:
    """Block-diagonal matrix with the blocks in the given order."""
    mats = [np.atleast_2d(np.asarray(m, dtype=float)) for m in matrices]
    if not mats:
        raise DomainError("direct sum of an empty list")
    return scipy.linalg.block_diag(*mats)


def minimal_prime(net: LayeredNet) -> int:
    return next_prime(max(net.widths))


def build_neuron_map(net: LayeredNet, p: int | None = None) -> NeuronMap:
    p = minimal_prime(net) if p is None else check_prime(p)
    if p <= max(net.widths):
        raise DomainError(
            f"p={p} is too small for width {max(net.widths)}; "
            f"smallest admissible prime is {minimal_prime(net)}"
        )
    maps = [np.arange(1, net.widths[0] + 1, dtype=np.int64)]
    parents = [np.zeros(net.widths[0], dtype=np.int64)]
    for j, W in enumerate(net.weights, start=1):
        # heaviest incoming connection; argmax breaks ties toward the smallest k
        par = np.argmax(np.abs(W), axis=1).astype(np.int64)
        digit = np.arange(1, net.widths[j] + 1, dtype=np.int64)
        maps.append(maps[-1][par] + digit * p**j)
        parents.append(par)
    return NeuronMap(p, tuple(maps), tuple(parents))


def recast(net: LayeredNet, p: int | None = None) -> RecastResult:
    nmap = build_neuron_map(net, p)
    p = nmap.p
    level = net.depth + 1
    n = check_capacity(p, level)
    scale = float(p**level)
    rows, cols, vals = [], [], []
    xi = np.zeros(n)
    for j, (W, b) in enumerate(zip(net.weights, net.biases), start=1):
        i_idx, k_idx = np.nonzero(W)
        rows.append(nmap.maps[j][i_idx])
        cols.append(nmap.maps[j - 1][k_idx])
        vals.append(W[i_idx, k_idx] * scale)
        xi[nmap.maps[j]] = b
    kernel = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    params = NetworkParams(
        p, 1, net.depth, net.phi, "identity",
        W=TreeKernel(p, level, kernel), xi=TreeFunction(p, level, xi),
    )
    blocks = direct_sum(list(reversed(net.weights)))
    return RecastResult(params, nmap, blocks, params.W.nnz())


def embed_input(result: RecastResult, x) -> TreeFunction:
    x = np.asarray(x, dtype=float).reshape(-1)
    m0 = result.neuron_map.maps[0]
    if x.shape != m0.shape:
        raise DomainError(f"input must have length {m0.size}, got {x.size}")
    c = np.zeros(result.params.W.size)
    c[m0] = x
    return TreeFunction(result.params.p, result.params.level, c)


def padic_forward(result: RecastResult, x) -> list[np.ndarray]:
    """Layer-by-layer pass of the recast network, read at the mapped indices.

    Step ``j`` applies the forward map and keeps only the entries of layer
    ``j``; the other entries of ``h`` stay as they were.
    """
    params, maps = result.params, result.neuron_map.maps
    h = embed_input(result, x)
    out = [h.coeffs[maps[0]].copy()]
    for j in range(1, len(maps)):
        z = apply_kernel(params.W, apply_activation(params.phi, h)) + params.xi
        c = h.coeffs.copy()
        c[maps[j]] = z.coeffs[maps[j]]
        h = h.with_coeffs(c)
        out.append(c[maps[j]].copy())
    return out


def padic_fixed_point(result: RecastResult, x) -> TreeFunction:
    """Unmasked fixed point with the input folded into the bias.

    The kernel is nilpotent (it only maps layer ``j-1`` to layer ``j``), so
    Picard iteration settles after ``depth + 1`` steps whatever ``q`` is.
    """
    params = result.params
    p2 = params.replace(xi=params.xi + embed_input(result, x))
    rep = solve(p2, None, tol=1e-300, max_iter=len(result.neuron_map.maps) + 2)
    return rep.state


@dataclass(frozen=True)
class EquivalenceReport:
    layer_deviation: tuple[float, ...]
    max_deviation: float
    nonzero_source: int
    nonzero_recast: int
    tied_blocks_identical: bool | None

    @property
    def counts_match(self) -> bool:
        return self.nonzero_source == self.nonzero_recast

    def to_dict(self) -> dict:
        return {
            "layer_deviation": list(self.layer_deviation),
            "max_deviation": self.max_deviation,
            "nonzero_source": self.nonzero_source,
            "nonzero_recast": self.nonzero_recast,
            "counts_match": self.counts_match,
            "tied_blocks_identical": self.tied_blocks_identical,
        }


def _diagonal_blocks(net: LayeredNet, blocks: np.ndarray) -> list[np.ndarray]:
    out = []
    r = c = 0
    for W in reversed(net.weights):
        h, w = W.shape
        out.append(blocks[r : r + h, c : c + w])
        r, c = r + h, c + w
    return out


def verify_equivalence(net: LayeredNet, result: RecastResult, inputs) -> EquivalenceReport:
    inputs = [np.asarray(x, dtype=float) for x in inputs]

    def dev(x):
        a, b = net.forward(x), padic_forward(result, x)
        return [float(np.max(np.abs(u - v), initial=0.0)) for u, v in zip(a, b)]

    per_input = _parallel.map_blocks(dev, inputs)
    layers = tuple(max(col) for col in zip(*per_input)) if per_input else (0.0,) * (net.depth + 1)
    tied = None
    if net.tied:
        bl = _diagonal_blocks(net, result.block_matrix)
        tied = all(np.array_equal(b, bl[0]) for b in bl)
    return EquivalenceReport(
        layer_deviation=layers,
        max_deviation=max(layers),
        nonzero_source=net.nonzero_count(),
        nonzero_recast=result.nonzero_count,
        tied_blocks_identical=tied,
    )


def random_layered_net(rng: np.random.Generator, widths, density: float = 0.7,
                       phi="tanh", tied: bool = False) -> LayeredNet:
    """Random net with Gaussian weights, some zeroed, for tests and CLI probes."""
    widths = [int(w) for w in widths]
    depth = len(widths) - 1
    if tied:
        W = rng.normal(size=(widths[1], widths[0])) * (rng.random((widths[1], widths[0])) < density)
        b = rng.normal(size=widths[1])
        return LayeredNet(widths, [W] * depth, [b] * depth, phi, True)
    Ws, bs = [], []
    for j in range(1, depth + 1):
        shape = (widths[j], widths[j - 1])
        Ws.append(rng.normal(size=shape) * (rng.random(shape) < density))
        bs.append(rng.normal(size=widths[j]))
    return LayeredNet(widths, Ws, bs, phi, False)
