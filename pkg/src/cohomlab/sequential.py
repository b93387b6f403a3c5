"""Sequential (one-sided, time-indexed) martingale-coboundary decomposition.

For maps T_j: X_j -> X_{j+1}, j >= 0, with equivariant reference measures,

    F_j = c_j + U_{j+1} o T_j - U_j + M_j,   L_j M_j = 0,
    U_0 = 0,  U_{j+1} = L_j (U_j + F~_j)  (= sum_{k=1}^{j+1} L^{(k)} F~_{j+1-k}),

and any solution of F~_j = H_{j+1} o T_j - H_j is recovered as
H_n = q_n + U_n - sum_{k >= n} M_k o T_n^{(k-n)}.

Sequences whose reference measures are not equivariant can be re-based on
the densities v_j = L^{(j)}_0 1 (``rebase=True``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .cocycle import DensityCocycle, fit_exponential
from .errors import InvalidParameter, NonEquivariantMeasure, TailNotConverged
from .fiberspace import CylinderFunction
from .transfer import FiberedSystem, koopman_power

CAUCHY_TOL = 1e-6
EQUIVARIANCE_TOL = 1e-10


class SequentialProblem:
    """Observables F_j on a sequential system over the horizon 0 <= j < J.

    Parameters
    ----------
    system : FiberedSystem
        Indexed from 0 (``FiberedSystem.sequential``).
    F : callable
        j -> FiberFunction on X_j.
    J : int, optional
        Horizon; defaults to the number of operators.
    rebase : bool
        Use the sequential densities instead of requiring equivariance.
    """

    def __init__(self, system: FiberedSystem, F, J: int | None = None, rebase: bool = False,
                 tol: float = 1e-8):
        if system.lo != 0:
            raise InvalidParameter("sequential systems are indexed from 0")
        self.system = system
        self._F = F
        self.J = int(J if J is not None else system.hi)
        if not 0 < self.J <= system.hi:
            raise InvalidParameter(f"horizon {self.J} outside [1, {system.hi}]")
        self.tol = tol
        self._cache = {}
        residual = self.equivariance_residual()
        if residual > EQUIVARIANCE_TOL and not rebase:
            raise NonEquivariantMeasure(
                f"(T_j)_* m_j differs from m_(j+1) by {residual:.2e}; pass rebase=True")
        self.rebased = residual > EQUIVARIANCE_TOL
        self.cocycle = DensityCocycle(system, depth=self.J + 1, one_sided=True)

    def equivariance_residual(self) -> float:
        s = self.system
        return max((s.op(j).apply(s.one(j)) - s.one(j + 1)).norm_B() for j in range(self.J))

    def F(self, j):
        f = self._cache.get(("F", j))
        if f is None:
            f = self._cache[("F", j)] = self._F(j)
        return f

    def c(self, j) -> float:
        key = ("c", j)
        if key not in self._cache:
            self._cache[key] = self.cocycle.equivariant_integral(j, self.F(j))
        return self._cache[key]

    def Ft(self, j):
        key = ("Ft", j)
        if key not in self._cache:
            self._cache[key] = self.F(j) - self.c(j)
        return self._cache[key]

    def L(self, j, phi):
        return self.cocycle.normalized_apply(j, phi)

    def mu_integral(self, j, phi):
        return self.cocycle.equivariant_integral(j, phi)

    def sup_norm_B(self) -> float:
        return max(self.F(j).norm_B() for j in range(self.J))


@dataclass
class SequentialDecomposition:
    c: dict
    U: dict
    M: dict
    L_M: dict
    int_U: dict
    identity_residual: dict
    direct_U_gap: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "J": len(self.M),
            "max_L_M": max(self.L_M.values(), default=0.0),
            "max_abs_int_U": max((abs(v) for v in self.int_U.values()), default=0.0),
            "max_identity_residual": max(self.identity_residual.values(), default=0.0),
            "max_direct_U_gap": max(self.direct_U_gap.values(), default=0.0),
        }


def direct_U(problem: SequentialProblem, j: int):
    """U_j from the explicit sum of pushed-forward observables."""
    total = problem.system.one(j) * 0.0
    for k in range(1, j + 1):
        g = problem.Ft(j - k)
        for i in range(j - k, j):
            g = problem.L(i, g)
        total = total + g
    return total


def decompose(problem: SequentialProblem, check_direct: int = 16) -> SequentialDecomposition:
    """Forward recursion for (c, U, M) over 0 <= j < J.

    The identity residual is measured against U computed by the explicit sum
    for j <= ``check_direct`` and against the recursion beyond.
    """
    J = problem.J
    U = {0: problem.system.one(0) * 0.0}
    M, LM, intU, resid, gap, c = {}, {}, {}, {}, {}, {}
    for j in range(J):
        Ft = problem.Ft(j)
        c[j] = problem.c(j)
        U[j + 1] = problem.L(j, U[j] + Ft)
        M[j] = Ft + U[j] - problem.system.op(j).koopman(U[j + 1])
        LM[j] = problem.L(j, M[j]).norm_B()
        intU[j] = complex(problem.mu_integral(j, U[j]))
        intU[j] = intU[j].real if intU[j].imag == 0 else intU[j]
    for j in range(J):
        if j + 1 <= check_direct:
            Uj = direct_U(problem, j) if j else U[0]
            Uj1 = direct_U(problem, j + 1)
            gap[j + 1] = (Uj1 - U[j + 1]).norm_B()
        else:
            Uj, Uj1 = U[j], U[j + 1]
        r = problem.F(j) - c[j] - problem.system.op(j).koopman(Uj1) + Uj - M[j]
        resid[j] = r.norm_B()
    return SequentialDecomposition(c, U, M, LM, intU, resid, gap)


def martingale_orthogonality(problem: SequentialProblem, dec: SequentialDecomposition,
                             max_gap: int = 3, fibers=None) -> float:
    """max |int (M_j o T_0^{(j)})(M_k o T_0^{(k)}) dm_0| over 0 < k - j <= max_gap.

    Computed on fiber j as int M_j (M_k o T_j^{(k-j)}) d mu_j with explicit
    Koopman composition, independent of the identity L M = 0.
    """
    fibers = range(problem.J) if fibers is None else fibers
    worst = 0.0
    for j in fibers:
        for k in range(j + 1, min(j + max_gap, problem.J - 1) + 1):
            pulled = koopman_power(problem.system, j, k - j, dec.M[k])
            worst = max(worst, abs(problem.mu_integral(j, dec.M[j] * pulled.conj())))
    return float(worst)


# ----------------------------------------------------------------------------
# variance of sequential Birkhoff sums


def variance_curve(problem: SequentialProblem, n_max: int, dec: SequentialDecomposition | None = None):
    """Var_{m_0}(S_{0,n} F) for n = 0..n_max from the recursion

    Var_{n+1} = Var_n + int F~_n^2 d mu_n + 2 int U_n F~_n d mu_n.
    """
    if n_max > problem.J:
        raise InvalidParameter("n_max exceeds the horizon")
    if dec is None or len(dec.M) < n_max:
        dec = decompose(problem, check_direct=0)
    var = [0.0]
    for n in range(n_max):
        Ft = problem.Ft(n)
        inc = problem.mu_integral(n, Ft * Ft.conj()) + 2 * problem.mu_integral(n, dec.U[n] * Ft.conj())
        var.append(var[-1] + float(np.real(inc)))
    return np.array(var)


def variance_direct(problem: SequentialProblem, n: int) -> float:
    """Var_{m_0}(S_{0,n} F) by pulling every term back to X_0 (small n only)."""
    s = problem.system
    S = s.one(0) * 0.0
    for j in range(n):
        S = S + koopman_power(s, 0, j, problem.Ft(j))
    return float(np.real(problem.mu_integral(0, S * S.conj())))


def variance_sup_probe(problem: SequentialProblem, n_max: int, slope_tol: float = 1e-3,
                       dec: SequentialDecomposition | None = None) -> dict:
    """Variance curve, running maximum and a Bounded/Unbounded verdict.

    The verdict uses the least-squares slope over the second half of the curve.
    """
    var = variance_curve(problem, n_max, dec)
    n = np.arange(n_max + 1)
    half = n_max // 2
    slope = float(np.polyfit(n[half:], var[half:], 1)[0]) if n_max >= 4 else float("nan")
    return {
        "n": n.tolist(),
        "variance": var.tolist(),
        "running_max": np.maximum.accumulate(var).tolist(),
        "slope": slope,
        "verdict": "Bounded" if abs(slope) <= slope_tol else "Unbounded",
    }


# ----------------------------------------------------------------------------
# reconstruction of H


@dataclass
class Reconstruction:
    """U_n - sum_{k=n}^{n+K} M_k o T_n^{(k-n)} at the requested points.

    H_n is only determined up to the free constant q_n.
    """

    n: int
    K: int
    points: object
    values: np.ndarray
    block_norms: list
    tail_L2: float
    tail_sup: float
    note: str = "H_n is recovered up to the free constant q_n"

    def as_dict(self):
        return {"n": self.n, "K": self.K, "tail_L2": self.tail_L2, "tail_sup": self.tail_sup,
                "block_norms": self.block_norms, "note": self.note}


def _orbit_points(problem: SequentialProblem, n: int, K: int, points):
    """Yield (k, x_k) along T_n^{(k-n)} for k = n..n+K."""
    s = problem.system
    if s.backend == "cylinder":
        words = np.asarray(points, dtype=np.int64)
        if words.shape[1] < K + 1:
            raise InvalidParameter("words are shorter than the reconstruction depth")
        for k in range(n, n + K + 1):
            yield k, words[:, k - n:]
        return
    x = [p if isinstance(p, Fraction) else Fraction(p) for p in np.atleast_1d(points)]
    for k in range(n, n + K + 1):
        yield k, np.array([float(v) for v in x])
        if k < n + K:
            m = s.map(k)
            if hasattr(m, "forward_exact"):
                x = [m.forward_exact(v) for v in x]
            else:
                x = [Fraction(float(m.forward(float(v)))) for v in x]


def _norm_L2(problem, j, g) -> float:
    return math.sqrt(max(float(np.real(problem.mu_integral(j, g * g.conj()))), 0.0))


def reconstruct_H(problem: SequentialProblem, dec: SequentialDecomposition, n: int, K: int,
                  points=None, cauchy_tol: float = CAUCHY_TOL) -> Reconstruction:
    """H_n - q_n from the decomposition, pointwise along exact orbits.

    Points are floats/Fractions on interval backends (orbits of linear
    full-branch maps are computed in exact rational arithmetic) or symbol
    words at time n on the cylinder backend.  On the Ulam backend the sum is
    formed with the Koopman matrices and evaluated at the points.

    Raises TailNotConverged when the L2 norm of the last dyadic block of the
    martingale sum exceeds ``cauchy_tol``.
    """
    if n + K >= len(dec.M):
        raise InvalidParameter(f"decomposition has {len(dec.M)} terms, need {n + K + 1}")
    norms = np.array([_norm_L2(problem, k, dec.M[k]) for k in range(n, len(dec.M))])
    sups = np.array([dec.M[k].sup() for k in range(n, len(dec.M))])
    # orthogonal increments: block norm = sqrt(sum of squared norms)
    blocks, a = [], 1
    while a <= K:
        b = min(2 * a, K + 1)
        blocks.append(float(np.sqrt(np.sum(norms[a:b] ** 2))))
        a = b
    if blocks and blocks[-1] > cauchy_tol:
        raise TailNotConverged(f"last dyadic block of sum M_k o T has L2 norm {blocks[-1]:.2e}")
    tail_L2, tail_sup = _tails(norms, sups, K)
    if points is None:
        points = (np.arange(256) + 0.5) / 256
    s = problem.system
    if s.backend == "ulam":
        acc = dec.U[n] * 1.0
        for k in range(n, n + K + 1):
            acc = acc - koopman_power(s, n, k - n, dec.M[k])
        vals = np.real(acc.evaluate(np.asarray(points, dtype=float)))
    else:
        first = True
        vals = None
        for k, xk in _orbit_points(problem, n, K, points):
            if first:
                vals = np.real(np.asarray(dec.U[n].evaluate(xk), dtype=complex))
                first = False
            vals = vals - np.real(np.asarray(dec.M[k].evaluate(xk), dtype=complex))
    return Reconstruction(n, K, points, np.asarray(vals, dtype=float), blocks, tail_L2, tail_sup)


def _tails(norms, sups, K):
    """Bounds for the omitted terms k > n + K from exponential fits."""
    idx = np.arange(len(norms))
    if len(norms) <= K + 1:
        rest_L2, rest_sup = 0.0, 0.0
    else:
        rest_L2 = float(np.sqrt(np.sum(norms[K + 1:] ** 2)))
        rest_sup = float(np.sum(sups[K + 1:]))
    out = []
    for y, rest in ((norms, rest_L2), (sups, rest_sup)):
        try:
            fit = fit_exponential(idx + 1, y, floor=1e-15)
        except Exception:
            out.append(float("inf"))
            continue
        if fit.lam is None:
            out.append(rest)
        elif fit.lam <= 0:
            out.append(float("inf"))
        else:
            r = math.exp(-fit.lam)
            beyond = fit.bound(len(y) + 1) / (1 - r)
            out.append(rest + beyond)
    return out[0], out[1]


def limexp_curve(problem: SequentialProblem, dec: SequentialDecomposition, H, ns) -> np.ndarray:
    """|| (H_n - U_n) o T_0^{(n)} - q_n ||_{L2(m_0)} = std of H_n - U_n under mu_n."""
    out = []
    for n in ns:
        g = H(n) - dec.U[n]
        g = g - problem.mu_integral(n, g)
        out.append(_norm_L2(problem, n, g))
    return np.array(out)


# ----------------------------------------------------------------------------
# the summable-but-not-B counterexample


def _sawtooth(p, q):
    return p / q - 0.5


def _doubling_orbit_sums(p: np.ndarray, q: int, n: int, weights) -> np.ndarray:
    """Partial sums sum_{k<m} w_k f(T^k x) for m = 1..n, x = p/q, exact orbits."""
    p = np.asarray(p, dtype=np.int64) % q
    out = np.empty((n, len(p)))
    acc = np.zeros(len(p))
    for k in range(n):
        acc = acc + weights[k] * _sawtooth(p, q)
        out[k] = acc
        p = (2 * p) % q
    return out


def tv_with_jumps(n: int) -> float:
    """Total variation of sum_{k<n} 2^{-k} f o T^k on [0, 1), jumps included.

    The sum is linear with slope n on dyadic cells of length 2^{-(n-1)}; jumps
    at the cell ends are measured from exact left and right values.
    """
    if n > 20:
        raise InvalidParameter("exact total variation limited to n <= 20")
    cells = 2 ** max(n - 1, 0)
    m = n + 6
    q = 2 ** m
    pts = np.arange(cells, dtype=np.int64) * (q // cells)
    w = 2.0 ** -np.arange(n)
    right = _doubling_orbit_sums(pts, q, n, w)[-1]
    left_eps = _doubling_orbit_sums(pts - 1, q, n, w)[-1]
    left = left_eps + n / q
    jumps = np.abs(right - left)
    return float(n + jumps.sum())


def ac_variation(n: int, x: np.ndarray, fprime=lambda y: np.ones_like(y), base: int = 2) -> float:
    """int |d/dx sum_{k<n} 2^{-k} f(T^k x)| over the absolutely continuous part.

    The derivative is sum_k 2^{-k} f'(T^k x) base^k, evaluated along orbits and
    averaged over the quadrature points ``x``.
    """
    xx = np.asarray(x, dtype=float)
    d = np.zeros_like(xx)
    y = xx.copy()
    for k in range(n):
        d += (base / 2.0) ** k * fprime(y)
        y = (base * y) % 1.0
    return float(np.mean(np.abs(d)))


def sawtooth_cylinder(domain, depth: int, scale: float = 1.0):
    """scale * (x - 1/2) with x read from the first ``depth`` binary digits."""
    w = 2.0 ** -(np.arange(depth) + 1)
    return CylinderFunction.from_words(domain, depth, lambda words: scale * (words @ w - 0.5))


def binary_digits(p: np.ndarray, q: int, L: int) -> np.ndarray:
    """First L binary digits of p/q (exact integer arithmetic)."""
    p = np.asarray(p, dtype=np.int64) % q
    out = np.empty((len(p), L), dtype=np.int64)
    for k in range(L):
        p = 2 * p
        out[:, k] = p >= q
        p = p - q * out[:, k]
    return out


def counterexample_scenario(n: int = 200, depth: int = 16, n_rec=(0, 1, 2), K: int = 48,
                            grid: int = 256, seed: int = 0, var_truncations=(4, 8, 16, 32, 64)) -> dict:
    """F_j = 2^{-j} f, f(x) = x - 1/2, under the doubling map.

    (i) sup of partial sums on exact rational orbits, (ii) variation growth,
    (iii) decomposition and reconstruction on the binary coding, where H_j
    has unbounded variation.
    """
    from .symbolic import SftSpec, gibbs
    from .transfer import CylinderTransfer

    rng = np.random.default_rng(seed)
    w = 2.0 ** -np.arange(n)
    # (i) sup norm of the partial sums on dyadic and odd-denominator rationals
    q_dyadic = 2 * grid
    p_dyadic = 2 * np.arange(grid) + 1
    q_odd = 1_000_003
    p_odd = rng.integers(0, q_odd, size=4096)
    sums = np.concatenate([_doubling_orbit_sums(p_dyadic, q_dyadic, n, w),
                           _doubling_orbit_sums(np.r_[0, p_odd], q_odd, n, w)], axis=1)
    sup_curve = np.max(np.abs(sums), axis=1)
    # (ii) variation of the partial sums (absolutely continuous part)
    xq = (np.arange(4096) + 0.5) / 4096
    ns = np.arange(1, n + 1)
    var_curve = np.array([ac_variation(m, xq) for m in ns])
    slope = float(np.polyfit(ns, var_curve, 1)[0])
    tv_small = {m: tv_with_jumps(m) for m in (1, 2, 4, 8, 12)}
    # (iii) decomposition on the binary coding
    J = max(n_rec) + K + 2
    st = gibbs(SftSpec.full_shift(2), np.zeros((2, 2)), 0, J + depth + 2, burn=0)
    system = FiberedSystem.sequential([CylinderTransfer(st, t) for t in range(J + 1)])
    prob = SequentialProblem(system, lambda j: sawtooth_cylinder(st.domain(j), depth, 2.0 ** -j), J=J)
    dec = decompose(prob, check_direct=8)
    p_grid = 2 * np.arange(grid) + 1
    words = binary_digits(p_grid, 2 * grid, K + depth + 2)
    rec_err = {}
    for j in n_rec:
        rec = reconstruct_H(prob, dec, j, K, words)
        orbit = _doubling_orbit_sums(p_grid, 2 * grid, 200, 2.0 ** -(j + np.arange(200)))[-1]
        oracle = -orbit - 2.0 ** -(j + 200) * (-0.5) * 2  # closed-form tail: orbit ends at 0
        d = rec.values - oracle
        rec_err[j] = float(np.max(np.abs(d - d.mean())))
    h_var = {Kt: ac_variation_truncated_H(0, Kt, xq) for Kt in var_truncations}
    out = {
        "n": n,
        "sup_partial_sums": float(sup_curve.max()),
        "sup_curve": sup_curve.tolist(),
        "variation_curve": var_curve.tolist(),
        "variation_over_n": float(var_curve[-1] / n),
        "variation_slope": slope,
        "tv_with_jumps": {str(k): v for k, v in tv_small.items()},
        "decomposition": dec.as_dict(),
        "reconstruction_error": {str(k): v for k, v in rec_err.items()},
        "H_variation_by_truncation": {str(k): v for k, v in h_var.items()},
        "verdict": "UnboundedVariation" if 0.5 < slope else "BoundedVariation",
        "sup_bounded": bool(sup_curve.max() <= 1.0),
    }
    return out


def ac_variation_truncated_H(j: int, K: int, x) -> float:
    """Variation (a.c. part) of the truncation -sum_{k=j}^{j+K} 2^{-k} f o T^{k-j}."""
    return 2.0 ** -j * ac_variation(K + 1, x)
