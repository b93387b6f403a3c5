"""Fiber transfer operators, their compositions and twisted versions.

A transfer operator is the pre-dual of composition with T:
    int (L phi) psi dm' = int phi (psi o T) dm.
Each operator therefore offers both ``apply`` (push densities forward) and
``koopman`` (compose with T).  Three realizations are provided:

* ``FourierLinearTransfer`` for T(x) = k x + b mod 1, acting exactly on
  Fourier modes: L e_m = exp(-2 pi i m b / k) e_{m/k} if k | m, else 0.
* ``UlamTransfer`` for piecewise expanding maps, via the cell matrix
  P_ij = m(I_i cap T^{-1} I_j) / m(I_i).
* ``CylinderTransfer`` for the shift on a symbolic fiber with a Markov
  (two-coordinate Gibbs) reference measure.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
from scipy import sparse

from .errors import DomainMismatch, HorizonExceeded, InvalidParameter
from .fiberspace import (
    DEFAULT_CELLS,
    CylinderDomain,
    CylinderFunction,
    FiberFunction,
    FourierFunction,
    UlamFunction,
)

QUADRATURE_POINTS = 32


# --------------------------------------------------------------------------
# branch maps


class BranchMap:
    """Piecewise monotone expanding map of [0, 1)."""

    expansion: float

    def forward(self, x):
        raise NotImplementedError

    def preimages(self, y):
        """List of (x, |T'(x)|) arrays, one pair per branch, for points y.

        Entries for branches whose image misses y are NaN.
        """
        raise NotImplementedError


class PiecewiseLinearMap(BranchMap):
    """Branches (a, b, slope, intercept): T(x) = slope*x + intercept on [a, b)."""

    def __init__(self, branches, name: str = ""):
        br = sorted((float(a), float(b), float(s), float(c)) for a, b, s, c in branches)
        if not br or abs(br[0][0]) > 1e-14 or abs(br[-1][1] - 1) > 1e-14:
            raise InvalidParameter("branch intervals must cover [0, 1)")
        for (a0, b0, *_), (a1, *_rest) in zip(br, br[1:]):
            if abs(b0 - a1) > 1e-14:
                raise InvalidParameter("branch intervals must partition [0, 1)")
        for a, b, s, c in br:
            lo, hi = sorted((s * a + c, s * b + c))
            if lo < -1e-12 or hi > 1 + 1e-12:
                raise InvalidParameter(f"branch on [{a}, {b}) leaves [0, 1]")
        self.branches = tuple(br)
        self.expansion = min(abs(s) for _, _, s, _ in br)
        if self.expansion <= 1:
            raise InvalidParameter(f"minimum expansion {self.expansion} must exceed 1")
        self.name = name

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        for a, b, s, c in self.branches:
            sel = (x >= a) & (x < b)
            out[sel] = s * x[sel] + c
        out[x >= 1] = self.branches[-1][2] * x[x >= 1] + self.branches[-1][3]
        return np.clip(out, 0.0, np.nextafter(1.0, 0.0))

    def preimages(self, y):
        y = np.asarray(y, dtype=float)
        res = []
        for a, b, s, c in self.branches:
            x = (y - c) / s
            ok = (x >= a) & (x < b)
            res.append((np.where(ok, x, np.nan), np.full_like(y, abs(s))))
        return res

    def ulam_matrix(self, N: int) -> sparse.csr_matrix:
        rows, cols, vals = [], [], []
        for a, b, s, c in self.branches:
            i0, i1 = int(math.floor(a * N)), min(int(math.ceil(b * N)), N)
            for i in range(i0, i1):
                x0, x1 = max(i / N, a), min((i + 1) / N, b)
                if x1 <= x0:
                    continue
                y0, y1 = sorted((s * x0 + c, s * x1 + c))
                y0, y1 = max(y0, 0.0), min(y1, 1.0)
                for j in range(max(int(math.floor(y0 * N)), 0), min(int(math.ceil(y1 * N)), N)):
                    ov = min(y1, (j + 1) / N) - max(y0, j / N)
                    if ov > 0:
                        rows.append(i)
                        cols.append(j)
                        vals.append(ov / abs(s) * N)
        P = sparse.csr_matrix((vals, (rows, cols)), shape=(N, N))
        P.sum_duplicates()
        return P


class LinearFullBranch(PiecewiseLinearMap):
    """T(x) = k x + b mod 1 with integer k >= 2."""

    def __init__(self, k: int, b: float = 0.0):
        if int(k) != k or k < 2:
            raise InvalidParameter(f"slope k must be an integer >= 2, got {k!r}")
        self.k = int(k)
        self.b = Fraction(b).limit_denominator(10**12) if not isinstance(b, Fraction) else b
        self.b = self.b - math.floor(self.b)
        bf = float(self.b)
        cuts = sorted({0.0, 1.0} | {(n - bf) / self.k for n in range(1, self.k + 1)
                                    if 0 < (n - bf) / self.k < 1})
        branches = []
        for a, e in zip(cuts, cuts[1:]):
            mid = 0.5 * (a + e)
            branches.append((a, e, float(self.k), bf - math.floor(self.k * mid + bf)))
        super().__init__(branches, name=f"{self.k}x+{bf} mod 1")

    def forward(self, x):
        return np.mod(self.k * np.asarray(x, dtype=float) + float(self.b), 1.0)

    def forward_exact(self, x: Fraction) -> Fraction:
        y = self.k * x + self.b
        return y - math.floor(y)

    def __repr__(self):
        return f"LinearFullBranch(k={self.k}, b={float(self.b)})"


class GeneralBranchMap(BranchMap):
    """Monotone C^2 branches given by callables.

    ``branches`` holds (a, b, f, df, finv) with f the branch on [a, b),
    df its derivative and finv the inverse on the branch image.
    """

    def __init__(self, branches, name: str = ""):
        self.branches = tuple(branches)
        xs = np.linspace(0, 1, 4097)[:-1]
        self.expansion = float(np.min(np.abs(self._deriv(xs))))
        if self.expansion <= 1:
            raise InvalidParameter("minimum expansion must exceed 1")
        self.name = name

    def _deriv(self, x):
        out = np.empty_like(x)
        for a, b, f, df, _ in self.branches:
            sel = (x >= a) & (x < b)
            out[sel] = df(x[sel])
        return out

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        for a, b, f, _, _ in self.branches:
            sel = (x >= a) & (x < b)
            out[sel] = f(x[sel])
        return np.clip(out, 0.0, np.nextafter(1.0, 0.0))

    def preimages(self, y):
        y = np.asarray(y, dtype=float)
        res = []
        for a, b, f, df, finv in self.branches:
            lo, hi = sorted((float(f(a)), float(f(np.nextafter(b, a)))))
            ok = (y >= lo) & (y <= hi)
            x = np.where(ok, finv(np.clip(y, lo, hi)), np.nan)
            res.append((x, np.abs(df(np.nan_to_num(x)))))
        return res

    def ulam_matrix(self, N: int) -> sparse.csr_matrix:
        t, w = np.polynomial.legendre.leggauss(QUADRATURE_POINTS)
        x = (np.arange(N)[:, None] + (t[None, :] + 1) / 2) / N
        y = self.forward(x.ravel()).reshape(x.shape)
        j = np.clip(np.floor(y * N).astype(int), 0, N - 1)
        i = np.repeat(np.arange(N), QUADRATURE_POINTS)
        P = sparse.csr_matrix((np.tile(w / 2, N), (i, j.ravel())), shape=(N, N))
        P.sum_duplicates()
        return P


# --------------------------------------------------------------------------
# operators


class TransferOperator:
    backend = ""

    def apply(self, phi: FiberFunction) -> FiberFunction:
        raise NotImplementedError

    def koopman(self, psi: FiberFunction) -> FiberFunction:
        raise NotImplementedError

    def one_source(self) -> FiberFunction:
        raise NotImplementedError

    def one_target(self) -> FiberFunction:
        raise NotImplementedError

    def _check_source(self, phi):
        if phi.backend != self.backend:
            raise DomainMismatch(f"{phi.backend} function given to {self.backend} operator")

    def apply_twisted(self, theta, F: FiberFunction, phi: FiberFunction, weight=None):
        """L(e^{theta F} phi).  ``weight`` may carry a precomputed e^{theta F}."""
        if theta == 0:
            return self.apply(phi)
        if weight is None:
            if F.is_constant():
                return self.apply(phi) * complex(np.exp(theta * F.integral()))
            weight = (F * theta).exp()
        return self.apply(weight * phi)


class FourierLinearTransfer(TransferOperator):
    """Exact mode action of the transfer operator of k x + b mod 1."""

    backend = "fourier"

    def __init__(self, tmap: LinearFullBranch):
        self.map = tmap
        self.k = tmap.k
        self.b = float(tmap.b)

    def apply(self, phi):
        self._check_source(phi)
        K, k = phi.K, self.k
        Kout = K // k
        n = np.arange(-Kout, Kout + 1)
        c = phi.coeffs[K + k * n]
        if self.b:
            c = c * np.exp(-2j * np.pi * n * self.b)
        return FourierFunction(c, phi.truncation_error)

    def koopman(self, psi):
        self._check_source(psi)
        K, k = psi.K, self.k
        out = np.zeros(2 * k * K + 1, dtype=complex)
        m = np.arange(-K, K + 1)
        c = psi.coeffs
        if self.b:
            c = c * np.exp(2j * np.pi * m * self.b)
        out[k * K + k * m] = c
        return FourierFunction(out, psi.truncation_error)

    def one_source(self):
        return FourierFunction.constant(1.0)

    one_target = one_source

    def __repr__(self):
        return f"FourierLinearTransfer(k={self.k}, b={self.b})"


class UlamTransfer(TransferOperator):
    """Ulam discretization: apply = P^T on cell averages, koopman = P."""

    backend = "ulam"

    def __init__(self, tmap: BranchMap, N: int = DEFAULT_CELLS):
        self.map = tmap
        self.N = int(N)
        self.P = tmap.ulam_matrix(self.N)
        self.PT = self.P.T.tocsr()

    def _check_source(self, phi):
        super()._check_source(phi)
        if phi.N != self.N:
            raise DomainMismatch(f"Ulam resolution {phi.N} != operator resolution {self.N}")

    def apply(self, phi):
        self._check_source(phi)
        return UlamFunction(self.PT @ phi.values)

    def koopman(self, psi):
        self._check_source(psi)
        return UlamFunction(self.P @ psi.values)

    def one_source(self):
        return UlamFunction.constant(1.0, self.N)

    one_target = one_source

    def __repr__(self):
        return f"UlamTransfer(N={self.N}, map={getattr(self.map, 'name', '')!r})"


class CylinderTransfer(TransferOperator):
    """Shift X_t -> X_{t+1} with the Markov reference measures of ``state``.

    (L phi)(y) = sum_a q_t(a | y_0) phi(a y), q_t the backward kernel.
    """

    backend = "cylinder"

    def __init__(self, state, time: int):
        self.state = state
        self.time = int(time)
        self.source = CylinderDomain(state, time)
        self.target = CylinderDomain(state, time + 1)
        self.q = state.backward_kernel(time)
        self.A = state.adjacency(time)

    def apply(self, phi):
        self._check_source(phi)
        if phi.domain != self.source:
            raise DomainMismatch(f"function on {phi.domain!r}, operator from {self.source!r}")
        t = phi.tensor
        if phi.depth == 0:
            return CylinderFunction(self.target, t)
        if phi.depth == 1:
            return CylinderFunction(self.target, np.einsum("a,ab->b", t, self.q))
        return CylinderFunction(self.target, np.einsum("ab...,ab->b...", t, self.q))

    def koopman(self, psi):
        self._check_source(psi)
        if psi.domain != self.target:
            raise DomainMismatch(f"function on {psi.domain!r}, expected {self.target!r}")
        t = psi.tensor
        if psi.depth == 0:
            return CylinderFunction(self.source, t)
        A = self.A.reshape(self.A.shape + (1,) * (psi.depth - 1))
        return CylinderFunction(self.source, A * t[None, ...])

    def one_source(self):
        return CylinderFunction.constant(self.source, 1.0)

    def one_target(self):
        return CylinderFunction.constant(self.target, 1.0)

    def __repr__(self):
        return f"CylinderTransfer(time={self.time})"


def apply(L: TransferOperator, phi):
    return L.apply(phi)


def apply_twisted(L: TransferOperator, theta, F, phi):
    return L.apply_twisted(theta, F, phi)


# --------------------------------------------------------------------------
# families and fibered systems


class MapFamily:
    """Label -> fiber map, realized with one backend.

    ``maps`` is a dict keyed by fiber label or a callable label -> map.
    Operators are built once per label and cached.
    """

    def __init__(self, maps, backend: str = "fourier", N: int = DEFAULT_CELLS):
        if backend not in ("fourier", "ulam"):
            raise InvalidParameter(f"unknown interval backend {backend!r}")
        self.maps = maps
        self.backend = backend
        self.N = int(N)
        self._ops = {}

    def map(self, label) -> BranchMap:
        m = self.maps(label) if callable(self.maps) else self.maps[label]
        return m

    def operator(self, label) -> TransferOperator:
        key = label
        op = self._ops.get(key)
        if op is None:
            m = self.map(label)
            if self.backend == "fourier":
                if not isinstance(m, LinearFullBranch):
                    raise InvalidParameter("the Fourier backend supports linear full-branch maps only")
                op = FourierLinearTransfer(m)
            else:
                op = UlamTransfer(m, self.N)
            self._ops[key] = op
        return op


class FiberedSystem:
    """Operators L_i : X_i -> X_{i+1} for fibers lo <= i <= hi.

    ``operator_at(i)`` is defined for lo <= i < hi.  Random systems come from
    a driving orbit and a map family; sequential systems are indexed from 0.
    """

    def __init__(self, operator_at, lo: int, hi: int, backend: str, orbit=None, family=None):
        self._operator_at = operator_at
        self.lo, self.hi = int(lo), int(hi)
        self.backend = backend
        self.orbit = orbit
        self.family = family
        self._cache = {}

    @classmethod
    def from_orbit(cls, orbit, family: MapFamily):
        return cls(lambda i: family.operator(orbit.label(i)), -orbit.N, orbit.N,
                   family.backend, orbit=orbit, family=family)

    @classmethod
    def sequential(cls, operators):
        ops = list(operators)
        if not ops:
            raise InvalidParameter("need at least one operator")
        return cls(lambda i: ops[i], 0, len(ops), ops[0].backend)

    def op(self, i: int) -> TransferOperator:
        if not self.lo <= i < self.hi:
            raise HorizonExceeded(f"no operator at fiber {i}; window is [{self.lo}, {self.hi})")
        op = self._cache.get(i)
        if op is None:
            op = self._cache[i] = self._operator_at(i)
        return op

    def one(self, i: int) -> FiberFunction:
        if i < self.hi:
            return self.op(i).one_source()
        return self.op(i - 1).one_target()

    def map(self, i: int) -> BranchMap:
        return self.op(i).map

    def label(self, i: int):
        return self.orbit.label(i) if self.orbit is not None else i

    def check_window(self, a: int, b: int):
        if a < self.lo or b > self.hi:
            raise HorizonExceeded(f"window [{a}, {b}] not inside [{self.lo}, {self.hi}]")


class OperatorProduct:
    """L_{j+n-1} o ... o L_j, optionally twisted by theta and F."""

    def __init__(self, system: FiberedSystem, j: int, n: int, theta=0, F=None):
        if n < 0:
            raise InvalidParameter("composition length must be >= 0")
        system.check_window(j, j + n)
        self.system, self.j, self.n, self.theta, self.F = system, j, n, theta, F
        if theta != 0 and F is None:
            raise InvalidParameter("twisted composition needs an observable F")

    def __call__(self, phi):
        for i in range(self.j, self.j + self.n):
            op = self.system.op(i)
            phi = op.apply(phi) if self.theta == 0 else op.apply_twisted(self.theta, self.F(i), phi)
        return phi


def compose(system: FiberedSystem, j: int, n: int, theta=0, F=None) -> OperatorProduct:
    """The cocycle L^{(n)}_j (or its twisted version) as a callable."""
    return OperatorProduct(system, j, n, theta, F)


def koopman_power(system: FiberedSystem, j: int, n: int, psi):
    """psi o T_j^{(n)} for psi on fiber j + n."""
    system.check_window(j, j + n)
    for i in range(j + n - 1, j - 1, -1):
        psi = system.op(i).koopman(psi)
    return psi


# --------------------------------------------------------------------------
# admissibility diagnostics


def operator_norm_bound(op: TransferOperator, corpus) -> float:
    """max ||L phi||_B / ||phi||_B over a test corpus."""
    return max(op.apply(p).norm_B() / p.norm_B() for p in corpus if p.norm_B() > 0)


def positivity_check(system: FiberedSystem, j: int, n: int, corpus) -> float:
    """min over the corpus of ess-inf(L^{(n)} phi) / ||phi||_L1 for phi >= 0."""
    P = compose(system, j, n)
    worst = np.inf
    for p in corpus:
        out = P(p)
        if isinstance(out, FourierFunction):
            vals = out.grid_values(4096).real
        elif isinstance(out, UlamFunction):
            vals = out.values.real
        else:
            vals = out.tensor[out.domain.state.mask(out.domain.time, out.depth)] if out.depth else out.tensor
        worst = min(worst, float(np.min(vals)) / p.l1())
    return worst
