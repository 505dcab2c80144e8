"""Hidden states of the p-adic continuous DNN

    h = int W(., y) phi(h(y)) dy + int W_in(., y) x(y) dy + xi,
    y_out = int W_out(., y) varphi(h(y)) dy + xi_out,

at a finite level, by Picard iteration, together with the stability
diagnostics and a trapezoid-rule solver on [0, 1] for comparison.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, NumericError
from .padic import check_prime
from .tree import (
    Activation,
    TreeFunction,
    TreeKernel,
    apply_activation,
    apply_kernel,
    get_activation,
    kernel_l2_norm,
    kernel_operator_norm,
    l2_norm,
    lift,
)

EPS = np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class NetworkParams:
    """Parameters of a network with input level ``L`` and depth ``Delta``.

    All kernels and biases live at level ``L + Delta``, except ``W_in``,
    which may sit at any level from ``L`` to ``L + Delta`` and is lifted on use.
    Components left as ``None`` are zero.
    """

    p: int
    L: int
    Delta: int
    phi: Activation | str = "tanh"
    varphi: Activation | str = "identity"
    W: TreeKernel | None = None
    W_in: TreeKernel | None = None
    W_out: TreeKernel | None = None
    xi: TreeFunction | None = None
    xi_out: TreeFunction | None = None

    def __post_init__(self):
        check_prime(self.p)
        if self.L < 0 or self.Delta < 1:
            raise DomainError(f"need L >= 0 and Delta >= 1, got L={self.L}, Delta={self.Delta}")
        lv = self.level
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("phi", get_activation(self.phi))
        set_("varphi", get_activation(self.varphi))
        for name in ("W", "W_out"):
            k = getattr(self, name)
            if k is None:
                set_(name, TreeKernel.zeros(self.p, lv, sparse=True))
            else:
                self._check(name, k, lv, lv)
        if self.W_in is None:
            set_("W_in", TreeKernel.zeros(self.p, self.L, sparse=True))
        else:
            self._check("W_in", self.W_in, self.L, lv)
        for name in ("xi", "xi_out"):
            f = getattr(self, name)
            if f is None:
                set_(name, TreeFunction.zeros(self.p, lv))
            else:
                self._check(name, f, lv, lv)

    def _check(self, name, obj, lo, hi):
        if obj.p != self.p:
            raise DomainError(f"{name}: prime {obj.p} differs from network prime {self.p}")
        if not lo <= obj.level <= hi:
            want = f"{lo}" if lo == hi else f"in [{lo}, {hi}]"
            raise DomainError(f"{name}: level {obj.level}, expected {want}")

    @property
    def level(self) -> int:
        return self.L + self.Delta

    def lift(self, level: int) -> "NetworkParams":
        """Same network with every level-``L+Delta`` component refined to ``level``."""
        if level < self.level:
            raise DomainError("cannot lift parameters to a coarser level")
        return NetworkParams(
            self.p, self.L, level - self.L, self.phi, self.varphi,
            self.W.lift(level), self.W_in, self.W_out.lift(level),
            lift(self.xi, level), lift(self.xi_out, level),
        )

    def replace(self, **changes) -> "NetworkParams":
        d = {k: getattr(self, k) for k in
             ("p", "L", "Delta", "phi", "varphi", "W", "W_in", "W_out", "xi", "xi_out")}
        d.update(changes)
        return NetworkParams(**d)

    def to_dict(self) -> dict:
        return {
            "p": self.p, "L": self.L, "Delta": self.Delta,
            "phi": self.phi.name, "varphi": self.varphi.name,
            "W": self.W.to_dict(), "W_in": self.W_in.to_dict(), "W_out": self.W_out.to_dict(),
            "xi": self.xi.to_dict(), "xi_out": self.xi_out.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkParams":
        try:
            p, L, Delta = int(d["p"]), int(d["L"]), int(d["Delta"])
        except KeyError as e:
            raise DomainError(f"network descriptor lacks field {e.args[0]!r}") from None
        k = lambda key: TreeKernel.from_dict(d[key]) if d.get(key) is not None else None  # noqa: E731
        f = lambda key: TreeFunction.from_dict(d[key]) if d.get(key) is not None else None  # noqa: E731
        return cls(p, L, Delta, d.get("phi", "tanh"), d.get("varphi", "identity"),
                   k("W"), k("W_in"), k("W_out"), f("xi"), f("xi_out"))


def self_coupling_kernel(p: int, level: int, a: float) -> TreeKernel:
    """Diagonal kernel ``a p^l delta_IK``, for which ``apply_kernel`` gives ``a g(I)``."""
    import scipy.sparse as sp

    n = p**level
    return TreeKernel(p, level, sp.identity(n, format="csr") * (float(a) * n))


def _input_drive(params: NetworkParams, x: TreeFunction | None) -> TreeFunction:
    lv = params.level
    drive = params.xi
    if x is not None:
        if x.p != params.p:
            raise DomainError(f"input prime {x.p} differs from network prime {params.p}")
        if x.level > params.W_in.level:
            raise DomainError(f"input level {x.level} exceeds W_in level {params.W_in.level}")
        if params.W_in.nnz():
            drive = drive + apply_kernel(params.W_in.lift(lv), x)
    return drive


def _recurrent(params: NetworkParams, h: TreeFunction) -> TreeFunction:
    return apply_kernel(params.W, apply_activation(params.phi, h))


def _as_state(params: NetworkParams, h: TreeFunction) -> TreeFunction:
    if h.p != params.p:
        raise DomainError(f"state prime {h.p} differs from network prime {params.p}")
    if h.level > params.level:
        raise DomainError(f"state level {h.level} exceeds network level {params.level}")
    return lift(h, params.level)


def forward_map(params: NetworkParams, x: TreeFunction | None, h: TreeFunction) -> TreeFunction:
    """``T h = int W phi(h) + int W_in x + xi`` at level ``L + Delta``."""
    return _recurrent(params, _as_state(params, h)) + _input_drive(params, x)


def output_map(params: NetworkParams, h: TreeFunction) -> TreeFunction:
    h = _as_state(params, h)
    return apply_kernel(params.W_out, apply_activation(params.varphi, h)) + params.xi_out


def contraction_constant(params: NetworkParams) -> float:
    """Lipschitz constant ``L_phi * ||W||_op`` of the forward map on L^2."""
    return params.phi.lipschitz * kernel_operator_norm(params.W)


def hs_contraction_constant(params: NetworkParams) -> float:
    """The cruder bound ``L_phi * ||W||_2`` using the kernel's L^2 norm."""
    return params.phi.lipschitz * kernel_l2_norm(params.W)


@dataclass(frozen=True, eq=False)
class SolveReport:
    state: TreeFunction
    output: TreeFunction
    iterations: int
    residual: float
    contraction_q: float
    q_hs: float
    stable: bool
    converged: bool
    norm_bound_ok: bool | None  # None when phi is unbounded
    history: tuple[float, ...] = field(repr=False, default=())

    def summary(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "contraction_q": self.contraction_q,
            "q_hs": self.q_hs,
            "stable": self.stable,
            "converged": self.converged,
            "norm_bound_ok": self.norm_bound_ok,
            "state_norm": l2_norm(self.state),
            "output_norm": l2_norm(self.output),
        }

    def to_dict(self) -> dict:
        d = self.summary()
        d["state"] = self.state.to_dict()
        d["output"] = self.output.to_dict()
        return d


def solve(
    params: NetworkParams,
    x: TreeFunction | None = None,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    h0: TreeFunction | None = None,
) -> SolveReport:
    """Picard iteration from ``h0`` (default 0).

    When ``q < 1`` the loop stops as soon as the a-posteriori bound
    ``q/(1-q) ||h_n - h_{n-1}||`` drops to ``tol``, so the returned state is
    within ``tol`` of the fixed point.  Otherwise it stops when successive
    iterates differ by less than ``tol`` or at ``max_iter``.
    """
    if not tol > 0:
        raise DomainError(f"tol must be positive, got {tol}")
    q = contraction_constant(params)
    stable = q < 1
    threshold = tol * (1 - q) / max(q, EPS) if stable else tol
    drive = _input_drive(params, x)
    h = TreeFunction.zeros(params.p, params.level) if h0 is None else _as_state(params, h0)
    history = []
    converged = False
    n = 0
    while n < max_iter:
        h_new = _recurrent(params, h) + drive
        n += 1
        d = l2_norm(h_new - h)
        history.append(d)
        h = h_new
        if d <= threshold:
            converged = True
            break
    residual = l2_norm(_recurrent(params, h) + drive - h)
    bound_ok = None
    if params.phi.bounded:
        xin = 0.0 if x is None else kernel_l2_norm(params.W_in) * l2_norm(x)
        bound = params.phi.sup_norm * kernel_l2_norm(params.W) + xin + l2_norm(params.xi)
        bound_ok = bool(l2_norm(h) <= bound + 1e-10)
    return SolveReport(
        state=h,
        output=output_map(params, h),
        iterations=n,
        residual=residual,
        contraction_q=q,
        q_hs=hs_contraction_constant(params),
        stable=stable,
        converged=converged,
        norm_bound_ok=bound_ok,
        history=tuple(history),
    )


def theoretical_iteration_budget(q: float, first_step: float, tol: float) -> int:
    """Smallest ``n`` with ``q^n * first_step / (1 - q) <= tol``."""
    if not 0 <= q < 1:
        raise DomainError(f"iteration budget needs 0 <= q < 1, got {q}")
    if first_step < 0 or not tol > 0:
        raise DomainError("need first_step >= 0 and tol > 0")
    if first_step / (1 - q) <= tol:
        return 0
    if q == 0:
        return 1
    n = max(1, math.ceil(math.log(tol * (1 - q) / first_step) / math.log(q)))
    # guard the log estimate against rounding on either side
    while n > 1 and q ** (n - 1) * first_step / (1 - q) <= tol:
        n -= 1
    while q**n * first_step / (1 - q) > tol:
        n += 1
    return n


# ---------------------------------------------------------------------------
# constant states


@dataclass(frozen=True, eq=False)
class ConstantStateQuery:
    """Data of the identity ``alpha = phi(alpha) rowsum(I) + drive(I)``."""

    alpha: float
    rowsum: TreeFunction
    drive: TreeFunction
    tolerance: float
    phi_alpha: float

    @property
    def deviation(self) -> float:
        rhs = self.phi_alpha * self.rowsum.coeffs + self.drive.coeffs
        return float(np.max(np.abs(self.alpha - rhs)))

    @property
    def holds(self) -> bool:
        return self.deviation <= self.tolerance


def constant_state_query(params: NetworkParams, x, alpha: float, tol: float) -> ConstantStateQuery:
    W = params.W
    ones = TreeFunction.constant(params.p, params.level, 1.0)
    rowsum = apply_kernel(W, ones)
    drive = _input_drive(params, x)
    phi_a = float(params.phi(float(alpha)))
    return ConstantStateQuery(float(alpha), rowsum, drive, float(tol), phi_a)


def check_constant_state(params: NetworkParams, x, alpha: float, tol: float = 1e-12) -> bool:
    """Whether the constant function ``alpha`` solves the state equation at every index."""
    query = constant_state_query(params, x, alpha, tol)
    ok = query.holds
    if ok:
        const = TreeFunction.constant(params.p, params.level, alpha)
        sub = float(np.max(np.abs(forward_map(params, x, const).coeffs - alpha)))
        if sub > tol + 64 * EPS * max(1.0, abs(alpha)):
            raise NumericError(f"constant state check disagrees with substitution ({sub:g})")
    return ok


def solve_constant_scalar(a: float, c: float, phi: Activation | str = "tanh") -> float:
    """A root of ``alpha = a phi(alpha) + c``."""
    phi = get_activation(phi)
    f = lambda s: float(phi(s))  # noqa: E731
    g = lambda s: s - a * f(s) - c  # noqa: E731
    if abs(a) * phi.lipschitz < 1:
        alpha = float(c)
        for _ in range(100_000):
            nxt = a * f(alpha) + c
            if nxt == alpha or abs(g(nxt)) < 1e-14:
                alpha = nxt
                break
            alpha = nxt
        if abs(g(alpha)) < 1e-13:
            return alpha
    lo, hi = -1e3, 1e3
    grid = np.linspace(lo, hi, 20_001)
    vals = grid - a * phi(grid) - c
    if np.any(vals == 0):
        return float(grid[np.flatnonzero(vals == 0)[0]])
    flips = np.flatnonzero(np.signbit(vals[:-1]) != np.signbit(vals[1:]))
    if flips.size == 0:
        raise NumericError(f"no sign change of alpha - a phi(alpha) - c in [{lo:g}, {hi:g}]")
    j = flips[np.argmin(np.abs(grid[flips] - c))]
    alpha = brentq(g, grid[j], grid[j + 1], xtol=1e-15, rtol=4 * EPS, maxiter=500)
    if not abs(g(alpha)) < 1e-13:
        raise NumericError(f"scalar root residual {abs(g(alpha)):g} above 1e-13")
    return float(alpha)


# ---------------------------------------------------------------------------
# interval contrast


@dataclass(frozen=True, eq=False)
class IntervalSolution:
    grid: np.ndarray
    values: np.ndarray
    iterations: int
    converged: bool


def solve_interval(
    W,
    phi: Activation | str,
    N: int,
    tol: float = 1e-12,
    max_iter: int = 10_000,
    c: float = 0.0,
) -> IntervalSolution:
    """Picard iteration for ``h(x) = int_0^1 W(x, y) phi(h(y)) dy + c`` on ``x_j = j/N``.

    ``W`` is a callable ``W(x, y)`` (vectorized) or an ``(N+1) x (N+1)``
    array of grid samples; the integral uses the trapezoid rule.
    """
    if N < 1:
        raise DomainError(f"N must be >= 1, got {N}")
    phi = get_activation(phi)
    x = np.arange(N + 1) / N
    Wm = np.asarray(W(x[:, None], x[None, :]) if callable(W) else W, dtype=float)
    Wm = np.broadcast_to(Wm, (N + 1, N + 1))
    w = np.full(N + 1, 1.0 / N)
    w[0] = w[-1] = 0.5 / N
    A = Wm * w
    q = phi.lipschitz * float(np.max(np.sum(np.abs(A), axis=1)))
    threshold = tol * (1 - q) / max(q, EPS) if q < 1 else tol
    h = np.zeros(N + 1)
    converged = False
    n = 0
    while n < max_iter:
        h_new = np.sum(A * phi(h), axis=1) + c
        n += 1
        d = float(np.max(np.abs(h_new - h)))
        h = h_new
        if d <= threshold:
            converged = True
            break
    return IntervalSolution(x, h, n, converged)
