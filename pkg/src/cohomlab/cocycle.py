"""Equivariant density cocycle v_i, measures mu_i = v_i m_i and normalized
operators L_i phi = L_i(phi v_i) / v_{i+1}.

Densities come from the pullback v_i = lim_n L^{(n)}_{i-n} 1.  The rate of
convergence is measured from the successive pullback differences and fitted
to C e^{-lambda n}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDensity, FitFailed, HorizonExceeded, NonConvergence
from .fiberspace import FourierFunction, UlamFunction
from .transfer import FiberedSystem, compose

DEFAULT_DEPTH = {"fourier": 40, "ulam": 60, "cylinder": 40}
RHO_GRID = 4096
FLOOR = 1e-14


@dataclass
class ExpFit:
    """Least-squares fit log y_n = log C - lam * n."""

    C: float
    lam: float | None
    n: np.ndarray
    values: np.ndarray

    def bound(self, n) -> float:
        if self.lam is None:
            return 0.0
        return float(self.C * np.exp(-self.lam * n))

    def as_dict(self):
        return {"C": self.C, "lambda": self.lam}


def fit_exponential(n, y, floor: float = FLOOR, exact_ok: bool = True) -> ExpFit:
    """Fit y_n <= C e^{-lam n}.  Values below ``floor`` count as exact zeros.

    The returned C is raised so that the bound holds at every sample.  When
    fewer than two samples exceed the floor the decay is treated as exact
    (lam = None, C = max y).
    """
    n = np.asarray(n, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = y > floor
    if keep.sum() < 2:
        if not exact_ok:
            raise FitFailed("fewer than two samples above the floor")
        return ExpFit(float(y.max(initial=0.0)), None, n, y)
    slope, icept = np.polyfit(n[keep], np.log(y[keep]), 1)
    lam = -float(slope)
    C = float(np.max(y[keep] * np.exp(lam * n[keep])))
    return ExpFit(C, lam, n, y)


def inf_estimate(v) -> float:
    """Certified lower bound for ess-inf v (real part)."""
    if isinstance(v, FourierFunction):
        vals = np.real(v.grid_values(RHO_GRID))
        return float(vals.min() - v.derivative_sup_bound() / (2 * RHO_GRID))
    if isinstance(v, UlamFunction):
        return float(np.real(v.values).min())
    if v.depth == 0:
        return float(np.real(v.tensor))
    mask = v.domain.state.mask(v.domain.time, v.depth)
    return float(np.real(v.tensor[mask]).min())


class DensityCocycle:
    """Cached densities v_i of a fibered system.

    Parameters
    ----------
    system : FiberedSystem
    depth : int, optional
        Pullback depth N.  Defaults per backend.
    start : callable, optional
        i -> start function for the pullback (normalized to unit mass).
        Defaults to the constant 1.
    one_sided : bool
        Clip pullbacks at the first fiber instead of raising
        HorizonExceeded (sequential systems indexed from 0).
    """

    def __init__(self, system: FiberedSystem, depth: int | None = None, start=None,
                 one_sided: bool = False):
        self.system = system
        self.depth = int(depth if depth is not None else DEFAULT_DEPTH[system.backend])
        self.start = start
        self.one_sided = one_sided
        self._v = {}
        self._trivial = None
        self._fit = None

    # ------------------------------------------------------------------
    def _start(self, i):
        s = self.system.one(i) if self.start is None else self.start(i)
        return s / s.integral()

    def _pullback(self, i, n):
        lo = i - n
        if lo < self.system.lo:
            if not self.one_sided:
                raise HorizonExceeded(f"pullback depth {n} at fiber {i} leaves the window")
            lo = self.system.lo
        return compose(self.system, lo, i - lo)(self._start(lo))

    @property
    def trivial(self) -> bool:
        """True when the reference measures are already equivariant (v = 1)."""
        if self._trivial is None:
            s = self.system
            ok = self.start is None
            if ok:
                for i in range(s.lo, s.hi):
                    op = s.op(i)
                    if not op.apply(op.one_source()).is_constant(1.0, 1e-13):
                        ok = False
                        break
            self._trivial = ok
        return self._trivial

    def density(self, i: int):
        v = self._v.get(i)
        if v is None:
            if self.trivial:
                v = self.system.one(i)
            else:
                v = self._pullback(i, self.depth)
                v = v / v.integral()
            self._v[i] = v
        return v

    __call__ = density

    # ------------------------------------------------------------------
    def convergence(self, i: int, n_max: int | None = None) -> ExpFit:
        """Fit of ||v^{(n)}_i - v^{(n-1)}_i||_B over n = 1..n_max."""
        n_max = n_max or self.depth
        prev = self._pullback(i, 0)
        d = []
        for n in range(1, n_max + 1):
            cur = self._pullback(i, n)
            d.append((cur - prev).norm_B())
            prev = cur
        d = np.array(d)
        scale = max(self.density(i).norm_B(), 1.0)
        q = max(len(d) // 4, 1)
        if len(d) > q and d[-1] > FLOOR * scale and d[-1] >= d[-q - 1]:
            raise NonConvergence(
                f"pullback differences at fiber {i} did not decrease over the last {q} steps")
        return fit_exponential(np.arange(1, n_max + 1), d, floor=FLOOR * scale)

    def fit(self, i: int = 0) -> ExpFit:
        if self._fit is None:
            self._fit = self.convergence(i)
        return self._fit

    def residual(self, i: int) -> float:
        """||L_i v_i - v_{i+1}||_B."""
        return (self.system.op(i).apply(self.density(i)) - self.density(i + 1)).norm_B()

    def rho(self, indices) -> float:
        return min(inf_estimate(self.density(i)) for i in indices)

    def sup_norm_B(self, indices) -> float:
        return max(self.density(i).norm_B() for i in indices)

    # ------------------------------------------------------------------
    def normalized_apply(self, i: int, phi):
        """L_i phi = L_i(phi v_i) / v_{i+1}."""
        op = self.system.op(i)
        if self.trivial:
            return op.apply(phi)
        v0, v1 = self.density(i), self.density(i + 1)
        if inf_estimate(v1) <= 0:
            raise DegenerateDensity(f"density at fiber {i + 1} is not bounded away from 0")
        return op.apply(phi * v0) / v1

    def equivariant_integral(self, i: int, phi):
        """int phi d mu_i."""
        if self.trivial:
            return phi.integral()
        return (phi * self.density(i)).integral()

    def normalized_power(self, j: int, n: int, phi):
        for i in range(j, j + n):
            phi = self.normalized_apply(i, phi)
        return phi

    def invariance_residual(self, i: int, phi) -> float:
        """|int phi o T_i d mu_i - int phi d mu_{i+1}| for phi on fiber i+1."""
        a = self.equivariant_integral(i, self.system.op(i).koopman(phi))
        return abs(a - self.equivariant_integral(i + 1, phi))

    def report(self, indices) -> dict:
        idx = list(indices)
        fit = self.fit(idx[0])
        return {
            "depth": self.depth,
            "trivial": self.trivial,
            "fit": fit.as_dict(),
            "tail_bound": fit.bound(self.depth),
            "max_residual": max(self.residual(i) for i in idx),
            "rho": self.rho(idx),
            "sup_norm_B": self.sup_norm_B(idx),
        }


def density(system: FiberedSystem, i: int, depth: int | None = None):
    return DensityCocycle(system, depth).density(i)


def decay_probe(system: FiberedSystem, corpus, n_max: int, j: int = 0) -> ExpFit:
    """Fit max_phi ||L^{(n)}_j phi||_B / ||phi||_B <= C e^{-lam n}, n >= 1.

    The n = 0 point is excluded.  Raises FitFailed when fewer than two
    nonzero ratios are available.
    """
    corpus = [p for p in corpus if p.norm_B() > 0]
    if not corpus:
        raise FitFailed("empty corpus")
    ratios = np.zeros(n_max)
    norms = [p.norm_B() for p in corpus]
    cur = list(corpus)
    for n in range(1, n_max + 1):
        op = system.op(j + n - 1)
        cur = [op.apply(p) for p in cur]
        ratios[n - 1] = max(c.norm_B() / q for c, q in zip(cur, norms))
    return fit_exponential(np.arange(1, n_max + 1), ratios, exact_ok=False)


def random_corpus(backend: str, size: int, rng: np.random.Generator, K: int = 16,
                  N: int = 1024, mean_zero: bool = True, positive: bool = False):
    """Random test functions for the interval backends."""
    out = []
    for _ in range(size):
        if backend == "fourier":
            decay = 1.0 / (1.0 + np.abs(np.arange(-K, K + 1))) ** 1.5
            c = (rng.normal(size=2 * K + 1) + 1j * rng.normal(size=2 * K + 1)) * decay
            c = 0.5 * (c + np.conj(c[::-1]))
            f = FourierFunction(c)
        else:
            f = UlamFunction(np.cumsum(rng.normal(size=N)) / np.sqrt(N) + rng.normal(size=N) * 0.1)
        if mean_zero:
            f = f - f.integral()
        if positive:
            lo = inf_estimate(f)
            f = f - lo + 0.5
            f = f / f.integral()
        out.append(f)
    return out
