"""Top triplets (lambda^theta, v^theta, phi^theta) of the twisted cocycle
L^theta_i phi = L_i(e^{theta F_i} phi), computed by power iteration.

* v^theta_i is the mass-normalized pullback of L^{theta,(n)}_{i-n} v_{i-n}.
* lambda^theta_i = int L^theta_i v^theta_i dm.
* phi^theta_i is stored as a density g_i against m_i, phi(psi) = int g_i psi dm,
  obtained from the adjoint recursion g_i = e^{theta F_i} (g_{i+1} o T_i)
  started at m_{i+n}.  On the Fourier backend the recursion is projected to
  the test cutoff, which is exact for test functions of that cutoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cocycle import fit_exponential
from .errors import NoSpectralGap
from .fiberspace import CylinderFunction, FourierFunction
from .livsic import CoboundaryProblem, default_test_corpus

DEFAULT_DEPTH = {"fourier": 48, "ulam": 80, "cylinder": 48}
TEST_CUTOFF = 64


def _project(g, like):
    """Restrict an adjoint density to the test space of ``like``."""
    if isinstance(g, FourierFunction):
        return g.truncate(max(like.K, TEST_CUTOFF)) if isinstance(like, FourierFunction) else g.truncate(TEST_CUTOFF)
    if isinstance(g, CylinderFunction):
        return g.condition(max(like.depth, 1))
    return g


@dataclass
class TwistedTriplet:
    theta: complex
    fiber: int
    lam: complex
    v: object
    phi: object
    eigen_residual: float
    adjoint_residual: float
    phi_v: complex
    cauchy: float

    def phi_apply(self, psi) -> complex:
        return complex((self.phi * psi).integral())

    def as_dict(self):
        return {
            "theta": [float(np.real(self.theta)), float(np.imag(self.theta))],
            "fiber": self.fiber,
            "lambda": [float(np.real(self.lam)), float(np.imag(self.lam))],
            "abs_lambda": float(abs(self.lam)),
            "eigen_residual": self.eigen_residual,
            "adjoint_residual": self.adjoint_residual,
            "phi_of_v": abs(self.phi_v),
            "norm_v": self.v.norm_B(),
            "cauchy": self.cauchy,
        }


class TwistedCocycle:
    """Power-iteration machinery for one theta.

    Parameters
    ----------
    problem : CoboundaryProblem
        Supplies the system, the observable F and the density cocycle.
    theta : complex
    depth : int, optional
    centered : bool
        Twist by F~ instead of F.
    gap_tol : float
        Cauchy tolerance between depth N and depth 3N/4 pullbacks.
    """

    def __init__(self, problem: CoboundaryProblem, theta, depth: int | None = None,
                 centered: bool = False, gap_tol: float = 1e-6):
        self.problem = problem
        self.system = problem.system
        self.theta = complex(theta) if np.iscomplexobj(theta) or isinstance(theta, complex) else float(theta)
        self.depth = int(depth or DEFAULT_DEPTH[problem.backend])
        self.centered = centered
        self.gap_tol = gap_tol
        self._w, self._v, self._g, self._cauchy = {}, {}, {}, {}

    def F(self, i):
        return self.problem.Ft(i) if self.centered else self.problem.F(i)

    def weight(self, i):
        w = self._w.get(i)
        if w is None:
            w = self._w[i] = (self.F(i) * self.theta).exp() if self.theta != 0 else None
        return w

    def apply(self, i, phi):
        return self.system.op(i).apply_twisted(self.theta, self.F(i), phi, weight=self.weight(i))

    # right eigenvectors ----------------------------------------------------
    def _pull(self, i, n):
        w = self.problem.cocycle.density(i - n)
        for k in range(i - n, i):
            w = self.apply(k, w)
            m = w.integral()
            if abs(m) < 1e-300 or not np.isfinite(abs(m)):
                raise NoSpectralGap(f"twisted iterate lost its mass at fiber {k + 1}")
            w = w / m
        return w

    def v(self, i):
        v = self._v.get(i)
        if v is None:
            v = self._pull(i, self.depth)
            if self.theta != 0:
                v_short = self._pull(i, max(self.depth * 3 // 4, 1))
                cauchy = (v - v_short).norm_B()
                if cauchy > self.gap_tol * max(1.0, v.norm_B()):
                    raise NoSpectralGap(
                        f"theta={self.theta}: pullbacks of depth {self.depth} and "
                        f"{self.depth * 3 // 4} differ by {cauchy:.2e}")
            else:
                cauchy = 0.0
            self._v[i], self._cauchy[i] = v, cauchy
        return v

    def lam(self, i) -> complex:
        return complex(self.apply(i, self.v(i)).integral())

    # adjoint ---------------------------------------------------------------
    def _adjoint_raw(self, i):
        """Unnormalized adjoint density at fiber i from m at fiber i + depth."""
        g = self.system.one(i + self.depth)
        like = self.v(i)
        for k in range(i + self.depth - 1, i - 1, -1):
            g = self.system.op(k).koopman(g)
            if self.theta != 0:
                g = self.weight(k) * g
            g = _project(g, like)
            s = abs(g.integral())
            if s > 0:
                g = g / s
        return g

    def phi(self, i):
        g = self._g.get(i)
        if g is None:
            g = self._adjoint_raw(i)
            g = g / complex((g * self.v(i)).integral())
            self._g[i] = g
        return g

    def phi_apply(self, i, psi) -> complex:
        return complex((self.phi(i) * psi).integral())

    # triplet ---------------------------------------------------------------
    def triplet(self, i, corpus=None) -> TwistedTriplet:
        v, lam = self.v(i), self.lam(i)
        eig = (self.apply(i, v) - self.v(i + 1) * lam).norm_B()
        if corpus is None:
            corpus = default_test_corpus(self.system.one(i), np.random.default_rng(7), size=6)
        adj = 0.0
        for psi in corpus:
            nb = psi.norm_B()
            if nb:
                adj = max(adj, abs(self.phi_apply(i + 1, self.apply(i, psi)) - lam * self.phi_apply(i, psi)) / nb)
        return TwistedTriplet(self.theta, i, lam, v, self.phi(i), float(eig), float(adj),
                              self.phi_apply(i, v), self._cauchy.get(i, 0.0))


def triplet(problem: CoboundaryProblem, i: int, theta, depth: int | None = None,
            centered: bool = False) -> TwistedTriplet:
    return TwistedCocycle(problem, theta, depth, centered).triplet(i)


def dlambda_dtheta(problem: CoboundaryProblem, i: int, h: float = 1e-4, depth=None) -> float:
    """Central difference of lambda^theta_i at theta = 0."""
    lp = TwistedCocycle(problem, h, depth).lam(i)
    lm = TwistedCocycle(problem, -h, depth).lam(i)
    return float(np.real(lp - lm) / (2 * h))


def decay_check(tc: TwistedCocycle, i: int, corpus, n_max: int):
    """Fit ||L^{theta,(n)} psi - (prod lambda) phi(psi) v_{i+n}||_B <= c r^n ||psi||_B.

    Returns (c, r, ratios).
    """
    corpus = [p for p in corpus if p.norm_B() > 0]
    lam_prod = 1.0 + 0j
    cur = list(corpus)
    coef = [tc.phi_apply(i, p) for p in corpus]
    norms = [p.norm_B() for p in corpus]
    ratios = []
    for n in range(1, n_max + 1):
        k = i + n - 1
        lam_prod *= tc.lam(k)
        cur = [tc.apply(k, p) for p in cur]
        vn = tc.v(i + n)
        ratios.append(max((c - vn * (lam_prod * a)).norm_B() / q for c, a, q in zip(cur, coef, norms)))
    ratios = np.array(ratios)
    fit = fit_exponential(np.arange(1, n_max + 1), ratios, floor=1e-13, exact_ok=False)
    return fit.C, math.exp(-fit.lam), ratios


def lambda_products(problem: CoboundaryProblem, t: float, i0: int, n_max: int, depth=None):
    """|prod_{k<n} lambda^{it}_{i0+k}| for n = 0..n_max."""
    tc = TwistedCocycle(problem, 1j * t, depth)
    mags = [1.0]
    for k in range(n_max):
        mags.append(mags[-1] * abs(tc.lam(i0 + k)))
    return np.array(mags)


def coboundary_signature(problem: CoboundaryProblem, t_grid, n_max: int = 100, i0: int = 0,
                         depth=None, sigma2: float | None = None, floor: float = 1e-12) -> dict:
    """Decay curves of the lambda products and fitted exponents kappa(t).

    kappa(t) is the least-squares slope of -log prod over n; the verdict is
    "bounded" when the products never fall below 1/2.
    """
    out = {"t": [], "kappa": [], "kappa_over_t2": [], "min_product": [], "curves": {}}
    for t in t_grid:
        mags = lambda_products(problem, t, i0, n_max, depth) if t != 0 else np.ones(n_max + 1)
        n = np.arange(n_max + 1)
        ok = mags > floor
        slope = np.polyfit(n[ok], np.log(mags[ok]), 1)[0] if ok.sum() > 2 else float("nan")
        kappa = float(-slope)
        out["t"].append(float(t))
        out["kappa"].append(kappa)
        out["kappa_over_t2"].append(kappa / t ** 2 if t else None)
        out["min_product"].append(float(mags.min()))
        out["curves"][float(t)] = mags
    out["verdict"] = "bounded" if min(out["min_product"]) >= 0.5 else "decaying"
    if sigma2 is not None and sigma2 > 0:
        out["kappa_over_t2_sigma2"] = [None if k is None else k / sigma2 for k in out["kappa_over_t2"]]
    return out


def chebyshev_check(problem: CoboundaryProblem, i: int, radius: float = 0.05, degree: int = 4,
                    n_test: int = 7, depth=None) -> float:
    """Max error of the degree-4 Chebyshev interpolant of lambda(theta) on [-r, r]."""
    nodes = radius * np.cos((2 * np.arange(degree + 1) + 1) * np.pi / (2 * degree + 2))
    vals = [np.real(TwistedCocycle(problem, th, depth).lam(i)) for th in nodes]
    cheb = np.polynomial.chebyshev.Chebyshev.fit(nodes, vals, degree, domain=[-radius, radius])
    test = np.linspace(-radius, radius, n_test)
    return float(max(abs(cheb(th) - np.real(TwistedCocycle(problem, th, depth).lam(i))) for th in test))
