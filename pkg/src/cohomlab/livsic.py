"""Coboundary engine for random (and window-indexed) fibered systems.

Given F on each fiber, the centered observable F~ = F - int F d mu splits as

    F~_i = pi_i + chi_{i+1} o T_i - chi_i,   L_i pi_i = 0,
    chi_i = sum_{n >= 1} L^{(n)}_{i-n} F~_{i-n},

with L the normalized operators.  F is a coboundary exactly when pi = 0,
and then H = chi solves F~ = H o tau - H.  The series starts at n = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .cocycle import DensityCocycle, fit_exponential
from .errors import InvalidParameter, NotACoboundary, TailNotConverged
from .fiberspace import CylinderFunction, FourierFunction, UlamFunction
from .transfer import FiberedSystem, FourierLinearTransfer

TOLERANCES = {
    "fourier": {"sigma": 1e-6, "pi": 1e-6, "c": 1e-9},
    "cylinder": {"sigma": 1e-6, "pi": 1e-6, "c": 1e-9},
    "ulam": {"sigma": 1e-3, "pi": 1e-3, "c": 1e-6},
}


class CoboundaryProblem:
    """F on the fibers of a fibered system.

    Parameters
    ----------
    system : FiberedSystem
    F : callable
        Fiber index -> FiberFunction.  Values are cached.
    eps_tail : float
        Series terms with norm_B below eps_tail * (1 + sup ||F||_B) end the sums.
    n_max : int
        Cap on the number of series terms.
    cocycle : DensityCocycle, optional
    """

    def __init__(self, system: FiberedSystem, F, eps_tail: float = 1e-14, n_max: int = 200,
                 cocycle: DensityCocycle | None = None, one_sided: bool = False):
        self.system = system
        self._F = F
        self.eps_tail = float(eps_tail)
        self.n_max = int(n_max)
        self.cocycle = cocycle or DensityCocycle(system, one_sided=one_sided)
        self.one_sided = one_sided
        self._cache = {}
        self._Fn = {}

    @property
    def backend(self):
        return self.system.backend

    def F(self, i):
        f = self._Fn.get(i)
        if f is None:
            f = self._Fn[i] = self._F(i)
        return f

    def _memo(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def c(self, i) -> float:
        return self._memo(("c", i), lambda: self.cocycle.equivariant_integral(i, self.F(i)))

    def Ft(self, i):
        return self._memo(("Ft", i), lambda: self.F(i) - self.c(i))

    def scale(self, indices) -> float:
        return 1.0 + max(self.F(i).norm_B() for i in indices)

    def L(self, i, phi):
        return self.cocycle.normalized_apply(i, phi)


# ----------------------------------------------------------------------------
# centering and the martingale decomposition


def center(problem: CoboundaryProblem, indices):
    """(F~_i, c_i) for the requested fibers."""
    return {i: problem.Ft(i) for i in indices}, {i: problem.c(i) for i in indices}


def chi_terms(problem: CoboundaryProblem, i: int):
    """Norms of the series terms L^{(n)}_{i-n} F~_{i-n}, n = 1, 2, ..."""
    return chi_with_terms(problem, i)[1]


def chi_with_terms(problem: CoboundaryProblem, i: int):
    def compute():
        tol = problem.eps_tail * problem.scale([i])
        total = None
        norms = []
        for n in range(1, problem.n_max + 1):
            j = i - n
            if j < problem.system.lo:
                if problem.one_sided:
                    break
                raise TailNotConverged(
                    f"series for chi at fiber {i} needs fibers before the window start "
                    f"{problem.system.lo} (term {n} norm {norms[-1] if norms else float('nan'):.2e})")
            g = problem.Ft(j)
            for k in range(j, i):
                g = problem.L(k, g)
            nb = g.norm_B()
            norms.append(nb)
            total = g if total is None else total + g
            if nb < tol:
                break
        else:
            raise TailNotConverged(f"chi series at fiber {i} not below {tol:.1e} after {problem.n_max} terms")
        if len(norms) >= 6:
            fit = fit_exponential(np.arange(1, len(norms) + 1), norms, floor=tol)
            if fit.lam is not None and fit.lam <= 0:
                raise TailNotConverged(f"chi terms at fiber {i} do not decay geometrically")
        if total is None:
            total = problem.Ft(i).zeros_like()
        return total, np.array(norms)

    return problem._memo(("chi", i), compute)


def chi(problem: CoboundaryProblem, i: int):
    return chi_with_terms(problem, i)[0]


def martingale_part(problem: CoboundaryProblem, i: int):
    """pi_i = F~_i + chi_i - chi_{i+1} o T_i."""
    return problem._memo(
        ("pi", i),
        lambda: problem.Ft(i) + chi(problem, i) - problem.system.op(i).koopman(chi(problem, i + 1)))


@dataclass
class MartingaleDecomposition:
    chi: dict
    pi: dict
    L_pi: dict
    recursion_residual: dict

    def as_dict(self):
        return {"max_L_pi": max(self.L_pi.values()),
                "max_recursion_residual": max(self.recursion_residual.values())}


def decompose(problem: CoboundaryProblem, indices) -> MartingaleDecomposition:
    ch, pi, lpi, rec = {}, {}, {}, {}
    for i in indices:
        ch[i] = chi(problem, i)
        pi[i] = martingale_part(problem, i)
        lpi[i] = problem.L(i, pi[i]).norm_B()
        rec[i] = (problem.L(i, ch[i] + problem.Ft(i)) - chi(problem, i + 1)).norm_B()
    return MartingaleDecomposition(ch, pi, lpi, rec)


# ----------------------------------------------------------------------------
# variance


def green_kubo(problem: CoboundaryProblem, i: int, n_max: int):
    """(Sigma^2_i, tail bound, autocovariances) at one fiber.

    Sigma^2_i = int F~_i^2 d mu_i + 2 sum_{n=1}^{n_max} int (L^{(n)} F~_i) F~_{i+n} d mu_{i+n}.
    """
    coc = problem.cocycle
    Fi = problem.Ft(i)
    acov = [np.real(coc.equivariant_integral(i, Fi * Fi.conj()))]
    norms = []
    g = Fi
    for n in range(1, n_max + 1):
        g = problem.L(i + n - 1, g)
        nb = g.norm_B()
        norms.append(nb)
        acov.append(np.real(coc.equivariant_integral(i + n, g * problem.Ft(i + n).conj())))
        if nb == 0.0:
            break
    acov = np.array(acov, dtype=float)
    s2 = float(acov[0] + 2 * acov[1:].sum())
    supF = max(problem.Ft(i + k).sup() for k in range(len(acov)))
    if norms[-1] == 0.0:
        tail = 0.0
    else:
        fit = fit_exponential(np.arange(1, len(norms) + 1), norms, floor=0.0)
        r = math.exp(-fit.lam) if fit.lam and fit.lam > 0 else 1.0
        tail = float("inf") if r >= 1 else 2 * supF * fit.bound(n_max + 1) / (1 - r)
    return s2, tail, acov


def _default_fibers(problem: CoboundaryProblem, count: int, lead: int = 0):
    s = problem.system
    start = 0 if s.lo <= 0 else s.lo
    stop = min(start + count, s.hi - lead)
    if stop <= start:
        raise InvalidParameter("window too short for the requested fiber sample")
    return list(range(start, stop))


def birkhoff_exact(problem: CoboundaryProblem, i: int, n: int) -> float:
    """(1/n) int (S_n F~)^2 dm by Parseval for linear full-branch Fourier systems.

    Uses the closed form T^{(k)}(x) = P_k x + beta_k mod 1, so the k-th term
    F~_{i+k} o T^{(k)} has modes m P_k with phases e^{2 pi i m beta_k}.
    Requires the reference measure to be invariant (v = 1).
    """
    s = problem.system
    if not problem.cocycle.trivial:
        raise InvalidParameter("exact Birkhoff route needs equivariant Lebesgue measures")
    acc: dict[int, complex] = {}
    P, beta = 1, Fraction(0)
    for k in range(n):
        op = s.op(i + k)
        if not isinstance(op, FourierLinearTransfer):
            raise InvalidParameter("exact Birkhoff route needs linear full-branch Fourier operators")
        f = problem.Ft(i + k)
        for m, cm in zip(range(-f.K, f.K + 1), f.coeffs):
            if cm == 0:
                continue
            ph = (m * beta) % 1
            key = m * P
            acc[key] = acc.get(key, 0j) + cm * complex(np.exp(2j * np.pi * float(ph)))
        P *= op.k
        beta = (op.k * beta + op.map.b) % 1
    return float(sum(abs(v) ** 2 for v in acc.values())) / n


def sample_density(v, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw points from the density v on [0, 1]."""
    if isinstance(v, FourierFunction) and v.is_constant(1.0, 1e-13):
        return rng.random(size)
    if isinstance(v, UlamFunction):
        p = np.clip(np.real(v.values), 0, None)
        cell = rng.choice(v.N, size=size, p=p / p.sum())
        return (cell + rng.random(size)) / v.N
    M = 4096
    vals = np.clip(np.real(v.grid_values(M)), 0, None)
    cell = rng.choice(M, size=size, p=vals / vals.sum())
    return (cell + rng.random(size)) / M


def backward_orbits(problem: CoboundaryProblem, i: int, n: int, samples: int,
                    rng: np.random.Generator) -> np.ndarray:
    """mu_i-distributed orbit segments x_0..x_{n-1}, drawn backwards.

    The end point x_n is drawn from mu_{i+n}; each x_k is a preimage of
    x_{k+1} chosen with probability v_k(x) / (|T'(x)| v_{k+1}(x_{k+1})).
    Contraction makes this stable in floating point.
    """
    coc = problem.cocycle
    s = problem.system
    x = sample_density(coc.density(i + n), samples, rng)
    path = np.empty((n, samples))
    for k in range(i + n - 1, i - 1, -1):
        pre = s.map(k).preimages(x)
        xs = np.stack([p for p, _ in pre])
        w = np.stack([np.where(np.isnan(p), 0.0, 1.0 / d) for p, d in pre])
        if not coc.trivial:
            vk = coc.density(k)
            w = w * np.real(vk.evaluate(np.nan_to_num(xs)))
        w = w / w.sum(axis=0)
        u = rng.random(samples)
        choice = (np.cumsum(w, axis=0) < u).sum(axis=0)
        choice = np.minimum(choice, xs.shape[0] - 1)
        x = xs[choice, np.arange(samples)]
        path[k - i] = x
    return path


def birkhoff_monte_carlo(problem: CoboundaryProblem, i: int, n: int, samples: int,
                         rng: np.random.Generator):
    """(1/n) int (S_n F~)^2 d mu_i by backward-sampled orbits; returns (mean, stderr)."""
    path = backward_orbits(problem, i, n, samples, rng)
    S = np.zeros(samples)
    for k in range(n):
        S += np.real(problem.Ft(i + k).evaluate(path[k]))
    y = S ** 2 / n
    return float(y.mean()), float(y.std(ddof=1) / math.sqrt(samples))


def sigma2(problem: CoboundaryProblem, n_max: int = 60, fibers=None, birkhoff: str = "auto",
           birkhoff_n: int | None = None, samples: int = 10_000, seed: int = 0) -> dict:
    """Green-Kubo Sigma^2 averaged over fibers, plus an independent Birkhoff estimate.

    ``birkhoff`` is "exact" (Parseval, linear Fourier systems), "monte_carlo",
    "none" or "auto" (exact when available).
    """
    fibers = fibers if fibers is not None else _default_fibers(problem, 8, lead=n_max + 1)
    vals, tails = [], []
    for i in fibers:
        s2, tail, _ = green_kubo(problem, i, n_max)
        vals.append(s2)
        tails.append(tail)
    out = {"gk": float(np.mean(vals)), "gk_tail": float(max(tails)), "fibers": list(fibers),
           "gk_per_fiber": [float(v) for v in vals]}
    pis = [martingale_part(problem, i) for i in fibers]
    out["martingale"] = float(np.mean([np.real(problem.cocycle.equivariant_integral(i, p * p.conj()))
                                       for i, p in zip(fibers, pis)]))
    mode = birkhoff
    if mode == "auto":
        ok = problem.backend == "fourier" and problem.cocycle.trivial
        mode = "exact" if ok else "none"
    i0 = fibers[0]
    if mode == "exact":
        nB = birkhoff_n or n_max
        problem.system.check_window(i0, i0 + nB)
        out["birkhoff"] = birkhoff_exact(problem, i0, nB)
        out["birkhoff_stderr"] = 0.0
        out["birkhoff_n"] = nB
    elif mode == "monte_carlo":
        nB = birkhoff_n or n_max
        problem.system.check_window(i0, i0 + nB)
        m, se = birkhoff_monte_carlo(problem, i0, nB, samples, np.random.default_rng(seed))
        out["birkhoff"], out["birkhoff_stderr"], out["birkhoff_n"] = m, se, nB
        out["samples"] = samples
    out["birkhoff_method"] = mode
    return out


# ----------------------------------------------------------------------------
# solver


@dataclass
class SolveResult:
    H: dict
    c: dict
    sigma2: dict
    L_pi: dict
    pi_norm: dict
    pi_norm_B: dict
    residual: dict
    tolerances: dict
    verdict: str
    failing: list = field(default_factory=list)
    series_terms: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "verdict": self.verdict,
            "failing": self.failing,
            "sigma2": self.sigma2,
            "max_pi_L1_mu": max(self.pi_norm.values()),
            "max_pi_norm_B": max(self.pi_norm_B.values()),
            "max_L_pi_norm_B": max(self.L_pi.values()),
            "max_abs_c": max(abs(v) for v in self.c.values()),
            "max_identity_residual": max(self.residual.values()),
            "tolerances": self.tolerances,
            "constants": "int H d mu fixed to 0 on every fiber",
            "series_terms": {str(k): int(v) for k, v in self.series_terms.items()},
        }


def solve(problem: CoboundaryProblem, fibers=None, n_var: int = 40, raise_on_failure: bool = True,
          birkhoff: str = "auto", tolerances: dict | None = None) -> SolveResult:
    """Solve F = H o tau - H + c on the requested fibers via H = chi."""
    fibers = list(fibers) if fibers is not None else _default_fibers(problem, 8, lead=n_var + 1)
    tol = dict(TOLERANCES[problem.backend])
    if tolerances:
        tol.update(tolerances)
    H = {i: chi(problem, i) for i in fibers}
    c = {i: problem.c(i) for i in fibers}
    pis = {i: martingale_part(problem, i) for i in fibers}
    L_pi = {i: problem.L(i, pis[i]).norm_B() for i in fibers}
    pi_norm = {i: (p * problem.cocycle.density(i)).l1() for i, p in pis.items()}
    pi_norm_B = {i: p.norm_B() for i, p in pis.items()}
    resid = {}
    for i in fibers:
        rhs = problem.system.op(i).koopman(chi(problem, i + 1)) + c[i] - H[i]
        resid[i] = (problem.F(i) - rhs).sup()
    s2 = sigma2(problem, n_var, fibers=[f for f in fibers if f + n_var + 1 <= problem.system.hi][:4]
                or fibers[:1], birkhoff=birkhoff)
    Fnorm = max(problem.F(i).norm_B() for i in fibers)
    sig_tol = tol["sigma"] * (1 + Fnorm ** 2)
    failing = []
    if s2["gk"] > sig_tol:
        failing.append(f"sigma2={s2['gk']:.3e} > {sig_tol:.1e}")
    if max(pi_norm.values()) > tol["pi"]:
        failing.append(f"max ||pi||_L1(mu)={max(pi_norm.values()):.3e} > {tol['pi']:.1e}")
    if max(abs(v) for v in c.values()) > tol["c"]:
        failing.append(f"max |c|={max(abs(v) for v in c.values()):.3e} > {tol['c']:.1e}")
    verdict = "Coboundary" if not failing else "NotACoboundary"
    res = SolveResult(H, c, s2, L_pi, pi_norm, pi_norm_B, resid,
                      {"sigma": sig_tol, "pi": tol["pi"], "c": tol["c"]}, verdict, failing,
                      {i: len(chi_with_terms(problem, i)[1]) for i in fibers})
    if failing and raise_on_failure:
        raise NotACoboundary("; ".join(failing), result=res, diagnostic=failing)
    return res


# ----------------------------------------------------------------------------
# detector functional and Birkhoff sums


def detector_functional(problem: CoboundaryProblem, H, t: float, i: int, n: int = 1,
                        corpus=None, centered: bool = True) -> dict:
    """Equivariance residual of l^t_i(phi) = int e^{-itH_i} phi dm_i.

    Returns the sup over the corpus of
    |l^t_i(phi) - l^t_{i+n}(L^{it,(n)}_i phi)| / ||phi||_B and the largest
    observed |l^t_i(phi)| / ||phi||_B.
    """
    if corpus is None:
        corpus = default_test_corpus(problem.system.one(i), np.random.default_rng(12345))
    Fo = problem.Ft if centered else problem.F
    w0 = (H(i) * (-1j * t)).exp()
    wn = (H(i + n) * (-1j * t)).exp()
    twist = {k: (Fo(k) * (1j * t)).exp() for k in range(i, i + n)}
    worst, lnorm = 0.0, 0.0
    for phi in corpus:
        nb = phi.norm_B()
        if nb == 0:
            continue
        g = phi
        for k in range(i, i + n):
            g = problem.system.op(k).apply_twisted(1j * t, Fo(k), g, weight=twist[k])
        lhs = (w0 * phi).integral()
        rhs = (wn * g).integral()
        worst = max(worst, abs(lhs - rhs) / nb)
        lnorm = max(lnorm, abs(lhs) / nb)
    return {"residual": worst, "functional_norm_estimate": lnorm, "t": t, "fiber": i, "n": n}


def default_test_corpus(one, rng, size: int = 12):
    """Constants, low modes and random smooth functions on the fiber of ``one``."""
    out = [one]
    if isinstance(one, FourierFunction):
        for k in (1, 2, 3, 5):
            out += [FourierFunction.cos(k), FourierFunction.sin(k)]
        for _ in range(size):
            K = 8
            c = (rng.normal(size=2 * K + 1) + 1j * rng.normal(size=2 * K + 1)) / (1 + np.abs(np.arange(-K, K + 1)))
            out.append(FourierFunction(c))
    elif isinstance(one, UlamFunction):
        x = (np.arange(one.N) + 0.5) / one.N
        for k in (1, 2, 3):
            out.append(UlamFunction(np.cos(2 * np.pi * k * x)))
        for _ in range(size):
            out.append(UlamFunction(np.cumsum(rng.normal(size=one.N)) / np.sqrt(one.N)))
    else:
        d = one.domain
        for m in (1, 2, 3):
            for _ in range(size // 3 + 1):
                out.append(CylinderFunction(d, rng.normal(size=d.shape(m))))
    return out


def birkhoff_sum(system: FiberedSystem, G, i: int, n: int):
    """S_n G at fiber i: sum_{k<n} G_{i+k} o T_i^{(k)}."""
    system.check_window(i, i + n)
    if n == 0:
        return system.one(i) * 0.0
    acc = G(i + n - 1)
    for k in range(i + n - 2, i - 1, -1):
        acc = G(k) + system.op(k).koopman(acc)
    return acc


def planted_observable(system: FiberedSystem, H):
    """F_i = H_{i+1} o T_i - H_i for a callable H: fiber index -> FiberFunction."""
    return lambda i: system.op(i).koopman(H(i + 1)) - H(i)
