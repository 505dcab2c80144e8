"""Gaussian parameter priors at a finite level and the induced covariances
of the hidden pre-activation and the output.

Conventions.  Coefficients of a random kernel satisfy
``Cov[W(I, K), W(J, L)] = K_W[I, K, J, L]`` and those of a random bias
``Cov[xi(I), xi(J)] = K_xi[I, J]``.  Since ``apply_kernel`` carries the
Haar weight ``p^-l``, the pre-activation ``h(u) = p^-l sum_K W(u, K) g(K)``
has covariance ``p^-2l sum g(u2) K_W[u, u2, x, y] g(y)``, which is what
:func:`c_phiphi` returns.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.random import Generator, Philox, SeedSequence

from . import _parallel
from .errors import DomainError, NumericError
from .padic import check_capacity, check_prime, haar_weight
from .solver import NetworkParams
from .tree import Activation, TreeFunction, TreeKernel, get_activation, lift

PSD_RTOL = 1e-10
JITTER = 1e-12
MC_BLOCK = 4096


def _psd_ok(m: np.ndarray) -> bool:
    ev = np.linalg.eigvalsh(m)
    scale = max(float(np.max(np.abs(ev), initial=0.0)), np.finfo(float).tiny)
    return bool(ev.min(initial=0.0) >= -PSD_RTOL * scale)


def _square(m, n: int, name: str) -> np.ndarray:
    m = np.array(m, dtype=float)
    if m.shape != (n, n):
        raise DomainError(f"{name} must be {n}x{n}, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DomainError(f"{name} has non-finite entries")
    return m


@dataclass(frozen=True, eq=False)
class BiasCovariance:
    p: int
    level: int
    kernel: np.ndarray

    def __post_init__(self):
        check_prime(self.p)
        n = check_capacity(self.p, self.level)
        k = _square(self.kernel, n, "bias covariance")
        if not np.array_equal(k, k.T):
            raise DomainError("bias covariance must be symmetric")
        if not _psd_ok(k):
            raise NumericError("bias covariance is not positive semidefinite")
        k.setflags(write=False)
        object.__setattr__(self, "kernel", k)

    @classmethod
    def iid(cls, p: int, level: int, sigma2: float) -> "BiasCovariance":
        return cls(p, level, float(sigma2) * np.eye(check_capacity(p, level)))

    @classmethod
    def zero(cls, p: int, level: int) -> "BiasCovariance":
        return cls.iid(p, level, 0.0)

    def to_dict(self) -> dict:
        return {"kernel": self.kernel.tolist()}

    @classmethod
    def from_dict(cls, p: int, level: int, d: dict) -> "BiasCovariance":
        if "kernel" in d:
            return cls(p, level, d["kernel"])
        if "sigma2" in d:
            return cls.iid(p, level, d["sigma2"])
        raise DomainError("bias covariance needs 'kernel' or 'sigma2'")


@dataclass(frozen=True, eq=False)
class WeightCovariance:
    """Covariance of a random kernel in one of three forms.

    ``iid``: ``sigma2 delta_IJ delta_KL``; ``separable``: ``A[I, J] B[K, L]``;
    ``dense``: an explicit array ``K[I, K, J, L]``.
    """

    p: int
    level: int
    form: str
    sigma2: float | None = None
    A: np.ndarray | None = None
    B: np.ndarray | None = None
    K: np.ndarray | None = None

    def __post_init__(self):
        check_prime(self.p)
        n = check_capacity(self.p, self.level)
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        if self.form == "iid":
            s = float(self.sigma2)
            if not (np.isfinite(s) and s >= 0):
                raise DomainError(f"sigma2 must be finite and >= 0, got {self.sigma2}")
            set_("sigma2", s)
        elif self.form == "separable":
            for name in ("A", "B"):
                m = _square(getattr(self, name), n, name)
                if not np.array_equal(m, m.T):
                    raise DomainError(f"{name} must be symmetric")
                if not _psd_ok(m):
                    raise NumericError(f"{name} is not positive semidefinite")
                m.setflags(write=False)
                set_(name, m)
        elif self.form == "dense":
            k = np.array(self.K, dtype=float)
            if k.size != n**4:
                raise DomainError(f"dense covariance needs {n**4} entries, got {k.size}")
            k = k.reshape(n, n, n, n)
            if not np.array_equal(k, k.transpose(2, 3, 0, 1)):
                raise DomainError("dense covariance must satisfy K[a,b,c,d] = K[c,d,a,b]")
            if n <= 8 and not _psd_ok(k.reshape(n * n, n * n)):
                raise NumericError("dense covariance is not positive semidefinite")
            k.setflags(write=False)
            set_("K", k)
        else:
            raise DomainError(f"unknown covariance form {self.form!r}")

    @classmethod
    def iid(cls, p: int, level: int, sigma2: float) -> "WeightCovariance":
        return cls(p, level, "iid", sigma2=sigma2)

    @classmethod
    def separable(cls, p: int, level: int, A, B) -> "WeightCovariance":
        return cls(p, level, "separable", A=A, B=B)

    @classmethod
    def dense(cls, p: int, level: int, K) -> "WeightCovariance":
        return cls(p, level, "dense", K=K)

    @property
    def size(self) -> int:
        return self.p**self.level

    def to_dense(self) -> np.ndarray:
        n = self.size
        if self.form == "dense":
            return np.array(self.K)
        if self.form == "separable":
            return np.einsum("ac,bd->abcd", self.A, self.B)
        eye = np.eye(n)
        return self.sigma2 * np.einsum("ac,bd->abcd", eye, eye)

    def l2_norm(self) -> float:
        """``sqrt(p^-4l sum K^2)``, the L^2 norm over four variables."""
        w2 = haar_weight(self.p, self.level) ** 2
        if self.form == "iid":
            return self.sigma2 * self.size * w2
        if self.form == "separable":
            return float(np.sqrt(np.sum(self.A**2) * np.sum(self.B**2))) * w2
        return float(np.sqrt(np.sum(self.K**2))) * w2

    def to_dict(self) -> dict:
        if self.form == "iid":
            return {"form": "iid", "sigma2": self.sigma2}
        if self.form == "separable":
            return {"form": "separable", "A": self.A.tolist(), "B": self.B.tolist()}
        return {"form": "dense", "shape": list(self.K.shape), "K": self.K.reshape(-1).tolist()}

    @classmethod
    def from_dict(cls, p: int, level: int, d: dict) -> "WeightCovariance":
        form = d.get("form")
        if form == "iid":
            return cls.iid(p, level, d["sigma2"])
        if form == "separable":
            return cls.separable(p, level, d["A"], d["B"])
        if form == "dense":
            return cls.dense(p, level, d["K"])
        raise DomainError(f"unknown covariance form {form!r}")


def _check_fn(cov, f: TreeFunction, name: str) -> np.ndarray:
    if f.p != cov.p:
        raise DomainError(f"{name}: prime {f.p} differs from {cov.p}")
    if f.level > cov.level:
        raise DomainError(f"{name}: level {f.level} exceeds covariance level {cov.level}")
    return lift(f, cov.level).coeffs


def _quadratic(cov: WeightCovariance, g: np.ndarray) -> np.ndarray:
    """``p^-2l sum g(u2) K[u1, u2, x, y] g(y)`` as a matrix in ``(u1, x)``."""
    w2 = haar_weight(cov.p, cov.level) ** 2
    if cov.form == "iid":
        return np.eye(cov.size) * (cov.sigma2 * float(np.sum(g * g)) * w2)
    if cov.form == "separable":
        return cov.A * (float(g @ cov.B @ g) * w2)
    return np.einsum("i,aibj,j->ab", g, cov.K, g) * w2


def c_phiphi(cov: WeightCovariance, h_prev: TreeFunction, phi: Activation | str) -> np.ndarray:
    phi = get_activation(phi)
    return _quadratic(cov, phi(_check_fn(cov, h_prev, "h")))


def c_xx(cov: WeightCovariance, x: TreeFunction) -> np.ndarray:
    return _quadratic(cov, _check_fn(cov, x, "x"))


def c_phiphi_norm_bound(cov: WeightCovariance, h: TreeFunction,
                        phi: Activation | str) -> tuple[float, float]:
    """``(L_phi^2 ||h||^2 ||K_W||, ||C_phiphi||)``; the second never exceeds the first."""
    phi = get_activation(phi)
    hc = _check_fn(cov, h, "h")
    w = haar_weight(cov.p, cov.level)
    bound = phi.lipschitz**2 * float(np.sum(hc * hc)) * w * cov.l2_norm()
    C = c_phiphi(cov, h, phi)
    actual = float(np.sqrt(np.sum(C * C))) * w
    return bound, actual


@dataclass(frozen=True, eq=False)
class Priors:
    """Priors for ``W, W_in, xi, W_out, xi_out``; ``None`` means the parameter is zero."""

    p: int
    level: int
    W: WeightCovariance | None = None
    W_in: WeightCovariance | None = None
    xi: BiasCovariance | None = None
    W_out: WeightCovariance | None = None
    xi_out: BiasCovariance | None = None

    def __post_init__(self):
        for name in ("W", "W_in", "xi", "W_out", "xi_out"):
            c = getattr(self, name)
            if c is not None and (c.p != self.p or c.level != self.level):
                raise DomainError(f"{name} prior is not at p={self.p}, level={self.level}")

    def bias(self, name: str) -> np.ndarray:
        c = getattr(self, name)
        return np.zeros((self.p**self.level,) * 2) if c is None else c.kernel

    def to_dict(self) -> dict:
        d = {"p": self.p, "level": self.level}
        for name in ("W", "W_in", "xi", "W_out", "xi_out"):
            c = getattr(self, name)
            d[name] = None if c is None else c.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Priors":
        p, level = int(d["p"]), int(d["level"])
        w = lambda k: WeightCovariance.from_dict(p, level, d[k]) if d.get(k) else None  # noqa: E731
        b = lambda k: BiasCovariance.from_dict(p, level, d[k]) if d.get(k) else None  # noqa: E731
        return cls(p, level, w("W"), w("W_in"), b("xi"), w("W_out"), b("xi_out"))


@dataclass(frozen=True, eq=False)
class PriorCovariance:
    hidden: np.ndarray
    output: np.ndarray


def _sym_psd(m: np.ndarray, name: str) -> np.ndarray:
    m = (m + m.T) / 2
    if not _psd_ok(m):
        raise NumericError(f"{name} covariance is not positive semidefinite")
    return m


def prior_covariance(priors: Priors, h_prev: TreeFunction, h_cur: TreeFunction,
                     x: TreeFunction | None, phi, varphi) -> PriorCovariance:
    n = priors.p**priors.level
    hidden = priors.bias("xi").copy()
    if priors.W_in is not None and x is not None:
        hidden = hidden + c_xx(priors.W_in, x)
    if priors.W is not None:
        hidden = hidden + c_phiphi(priors.W, h_prev, phi)
    output = priors.bias("xi_out").copy()
    if priors.W_out is not None:
        output = output + c_phiphi(priors.W_out, h_cur, varphi)
    assert hidden.shape == output.shape == (n, n)
    return PriorCovariance(_sym_psd(hidden, "hidden"), _sym_psd(output, "output"))


def _cholesky(m: np.ndarray, jitter: float = JITTER) -> np.ndarray:
    n = m.shape[0]
    tr = float(np.trace(m))
    if tr == 0.0:
        return np.zeros_like(m)
    try:
        return scipy.linalg.cholesky(m + np.eye(n) * (jitter * tr / n), lower=True)
    except np.linalg.LinAlgError:
        raise NumericError("covariance is not positive definite even after jitter") from None


def gaussian_logpdf(cov: np.ndarray, y, jitter: float = JITTER) -> float:
    """Log density of the coefficient vector ``y`` under ``N(0, cov)``."""
    cov = np.asarray(cov, dtype=float)
    yc = y.coeffs if isinstance(y, TreeFunction) else np.asarray(y, dtype=float).reshape(-1)
    n = cov.shape[0]
    if cov.shape != (n, n) or yc.shape != (n,):
        raise DomainError("covariance and vector sizes disagree")
    if float(np.trace(cov)) <= 0:
        raise NumericError("covariance is singular")
    Lc = _cholesky(cov, jitter)
    z = scipy.linalg.solve_triangular(Lc, yc, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diagonal(Lc))))
    return -0.5 * (n * np.log(2 * np.pi) + logdet + float(z @ z))


# ---------------------------------------------------------------------------
# sampling


class _Sampler:
    """Cholesky factors of every prior, computed once."""

    def __init__(self, priors: Priors):
        self.priors = priors
        self.n = priors.p**priors.level
        self.w = {}
        for name in ("W", "W_in", "W_out"):
            c = getattr(priors, name)
            if c is None:
                self.w[name] = None
            elif c.form == "iid":
                self.w[name] = ("iid", np.sqrt(c.sigma2))
            elif c.form == "separable":
                self.w[name] = ("separable", _cholesky(c.A), _cholesky(c.B))
            else:
                self.w[name] = ("dense", _cholesky(c.K.reshape(self.n**2, self.n**2)))
        self.b = {name: _cholesky(priors.bias(name)) for name in ("xi", "xi_out")}

    def weights(self, rng: Generator, name: str, m: int) -> np.ndarray:
        n, f = self.n, self.w[name]
        if f is None:
            return np.zeros((m, n, n))
        z = rng.standard_normal((m, n, n))
        if f[0] == "iid":
            return f[1] * z
        if f[0] == "separable":
            return np.einsum("ia,mab,jb->mij", f[1], z, f[2])
        return np.einsum("ij,mj->mi", f[1], z.reshape(m, n * n)).reshape(m, n, n)

    def bias(self, rng: Generator, name: str, m: int) -> np.ndarray:
        z = rng.standard_normal((m, self.n))
        return z @ self.b[name].T


def _block_rng(seed: int, block: int) -> Generator:
    return Generator(Philox(SeedSequence([int(seed), int(block)])))


def sample_parameters(priors: Priors, seed: int = 0, phi="tanh", varphi="identity") -> NetworkParams:
    """One draw of every parameter, as a network with ``L = 0`` and ``Delta = level``."""
    s = _Sampler(priors)
    rng = _block_rng(seed, 0)
    p, lv = priors.p, priors.level
    W, W_in, W_out = (s.weights(rng, k, 1)[0] for k in ("W", "W_in", "W_out"))
    xi, xi_out = (s.bias(rng, k, 1)[0] for k in ("xi", "xi_out"))
    return NetworkParams(
        p, 0, lv, phi, varphi,
        TreeKernel(p, lv, W), TreeKernel(p, lv, W_in), TreeKernel(p, lv, W_out),
        TreeFunction(p, lv, xi), TreeFunction(p, lv, xi_out),
    )


@dataclass(frozen=True, eq=False)
class MCReport:
    analytic: PriorCovariance
    empirical_hidden: np.ndarray
    empirical_output: np.ndarray
    z_hidden: np.ndarray
    z_output: np.ndarray
    max_abs_z: float
    frac_within_3se: float
    N: int
    seed: int

    def summary(self) -> dict:
        return {"max_abs_z": self.max_abs_z, "frac_within_3se": self.frac_within_3se,
                "N": self.N, "seed": self.seed}


def _zscores(emp: np.ndarray, ana: np.ndarray, N: int):
    d = np.diagonal(ana)
    se = np.sqrt((np.outer(d, d) + ana**2) / N)
    diff = emp - ana
    within_zero = np.abs(diff) < 1e-12
    safe = np.where(se > 0, se, 1.0)
    z = np.where(se > 0, diff / safe, np.where(within_zero, 0.0, np.inf))
    within = np.where(se > 0, np.abs(z) <= 3.0, within_zero)
    return z, within


def mc_validate(priors: Priors, h_fixed: TreeFunction, x: TreeFunction | None,
                phi="tanh", varphi="identity", N: int = 100_000, seed: int = 0) -> MCReport:
    """Empirical covariances of ``h_new`` and ``y`` over ``N`` parameter draws.

    Draws come in blocks of fixed size, block ``k`` using the stream
    ``(seed, k)``; block sums are combined in block order, so the result does
    not depend on the worker count.
    """
    if N < 2:
        raise DomainError(f"N must be >= 2, got {N}")
    phi, varphi = get_activation(phi), get_activation(varphi)
    p, lv = priors.p, priors.level
    w = haar_weight(p, lv)
    analytic = prior_covariance(priors, h_fixed, h_fixed, x, phi, varphi)
    s = _Sampler(priors)
    g = phi(lift(h_fixed, lv).coeffs)
    gv = varphi(lift(h_fixed, lv).coeffs)
    xc = None if x is None else lift(x, lv).coeffs

    def block(k: int):
        m = min(MC_BLOCK, N - k * MC_BLOCK)
        rng = _block_rng(seed, k)
        W, W_in, W_out = (s.weights(rng, name, m) for name in ("W", "W_in", "W_out"))
        xi, xi_out = s.bias(rng, "xi", m), s.bias(rng, "xi_out", m)
        h = np.einsum("mij,j->mi", W, g) * w + xi
        if xc is not None:
            h = h + np.einsum("mij,j->mi", W_in, xc) * w
        y = np.einsum("mij,j->mi", W_out, gv) * w + xi_out
        return np.einsum("mi,mj->ij", h, h), np.einsum("mi,mj->ij", y, y)

    n_blocks = -(-N // MC_BLOCK)
    parts = _parallel.map_blocks(block, range(n_blocks))
    Sh = np.zeros((p**lv,) * 2)
    Sy = np.zeros_like(Sh)
    for a, b in parts:
        Sh += a
        Sy += b
    emp_h, emp_y = Sh / N, Sy / N
    zh, wh = _zscores(emp_h, analytic.hidden, N)
    zy, wy = _zscores(emp_y, analytic.output, N)
    iu = np.triu_indices(p**lv)
    within = np.concatenate([wh[iu], wy[iu]])
    zs = np.concatenate([zh[iu], zy[iu]])
    return MCReport(
        analytic, emp_h, emp_y, zh, zy,
        max_abs_z=float(np.max(np.abs(zs))),
        frac_within_3se=float(np.mean(within)),
        N=int(N), seed=int(seed),
    )
