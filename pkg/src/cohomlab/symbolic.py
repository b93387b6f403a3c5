"""Sequential and random subshifts of finite type.

Symbols at absolute time t live in {0, ..., d_t - 1}; the 0-1 matrix A^{(t)}
of shape (d_t, d_{t+1}) says which pairs may follow each other.  A point of
the fiber X_j is a sequence x with x_k the symbol at absolute time j + k, so
the shift S_j: X_j -> X_{j+1} only changes the time index.

Gibbs states for potentials of two coordinates are inhomogeneous Markov
measures built from the positive matrix cocycle B^{(t)} = A^{(t)} e^{phi_t}.
A ``GibbsState`` doubles as the ``state`` of a ``CylinderDomain``, so the
cylinder backend of ``fiberspace``/``transfer`` runs on top of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import (HorizonExceeded, InvalidParameter, NotACoboundary, NotBracketable,
                     NotPrimitive, TailNotConverged)
from .fiberspace import CylinderDomain, CylinderFunction
from .transfer import CylinderTransfer, FiberedSystem

CERTIFICATE_TOL = 1e-16
MAX_BURN = 4000


# ----------------------------------------------------------------------------
# specification


class SftSpec:
    """Adjacency matrices A^{(t)} indexed by absolute time.

    Parameters
    ----------
    matrix_at : callable
        t -> 0-1 array of shape (d_t, d_{t+1}).
    lo, hi : int or None
        Matrices exist for lo <= t < hi (None means unbounded).
    M : int
        Aperiodicity window: products of M consecutive matrices are positive.
    """

    def __init__(self, matrix_at, lo: int | None = None, hi: int | None = None, M: int = 1):
        if M < 1:
            raise InvalidParameter("aperiodicity window must be >= 1")
        self._matrix_at = matrix_at
        self.lo, self.hi, self.M = lo, hi, int(M)
        self._cache = {}

    @classmethod
    def stationary(cls, A, M: int = 1):
        A = np.asarray(A, dtype=np.int8)
        return cls(lambda t: A, None, None, M)

    @classmethod
    def full_shift(cls, d: int = 2):
        return cls.stationary(np.ones((d, d), dtype=np.int8), 1)

    @classmethod
    def from_sequence(cls, matrices, start: int = 0, M: int = 1):
        mats = [np.asarray(a, dtype=np.int8) for a in matrices]
        return cls(lambda t: mats[t - start], start, start + len(mats), M)

    @classmethod
    def from_orbit(cls, orbit, matrices: dict, M: int = 1):
        """Matrix at time t keyed by the driving label at t (window [-N, N))."""
        mats = {k: np.asarray(v, dtype=np.int8) for k, v in matrices.items()}
        return cls(lambda t: mats[orbit.label(t)], -orbit.N, orbit.N, M)

    def matrix(self, t: int) -> np.ndarray:
        A = self._cache.get(t)
        if A is None:
            if (self.lo is not None and t < self.lo) or (self.hi is not None and t >= self.hi):
                raise HorizonExceeded(f"no adjacency matrix at time {t}")
            A = np.asarray(self._matrix_at(t), dtype=np.int8)
            if A.ndim != 2 or not np.isin(A, (0, 1)).all():
                raise InvalidParameter(f"adjacency at time {t} must be a 0-1 matrix")
            self._cache[t] = A
        return A

    def size(self, t: int) -> int:
        try:
            return self.matrix(t).shape[0]
        except HorizonExceeded:
            return self.matrix(t - 1).shape[1]

    def validate(self, lo: int, hi: int):
        """Check shapes, nonempty rows/columns and M-window positivity on [lo, hi)."""
        for t in range(lo, hi):
            A = self.matrix(t)
            if t + 1 < hi and A.shape[1] != self.matrix(t + 1).shape[0]:
                raise InvalidParameter(f"alphabet sizes disagree between times {t} and {t + 1}")
            if not (A.any(axis=1).all() and A.any(axis=0).all()):
                raise InvalidParameter(f"adjacency at time {t} has an empty row or column")
        for t in range(lo, hi - self.M + 1):
            P = np.eye(self.matrix(t).shape[0], dtype=np.int64)
            for s in range(t, t + self.M):
                P = np.minimum(P @ self.matrix(s), 1)
            if not (P > 0).all():
                raise NotPrimitive(f"product of {self.M} matrices from time {t} has a zero entry")

    # greedy extensions (lexicographically minimal) --------------------------
    def canonical_past(self, t: int, a: int, length: int) -> np.ndarray:
        """Symbols at times t-1, t-2, ..., t-length preceding symbol a at time t."""
        out = np.empty(length, dtype=np.int64)
        cur = a
        for k in range(length):
            col = self.matrix(t - k - 1)[:, cur]
            cur = int(np.flatnonzero(col)[0])
            out[k] = cur
        return out

    def canonical_future(self, t: int, a: int, length: int) -> np.ndarray:
        """Symbols at times t+1, ..., t+length following symbol a at time t."""
        out = np.empty(length, dtype=np.int64)
        cur = a
        for k in range(length):
            cur = int(np.flatnonzero(self.matrix(t + k)[cur])[0])
            out[k] = cur
        return out


# ----------------------------------------------------------------------------
# Gibbs states


def _proj_diameter(B: np.ndarray) -> float:
    """Hilbert projective diameter of the image of the positive cone."""
    if not (B > 0).all():
        return math.inf
    L = np.log(B)
    # max over i,j,k,l of L_ik + L_jl - L_il - L_jk
    d = L[:, None, :, None] + L[None, :, None, :] - L[:, None, None, :] - L[None, :, :, None]
    return float(d.max())


class GibbsState:
    """Markov measures m_t on the fibers, from a potential of two coordinates.

    Attributes
    ----------
    h, ell : dict
        Right and left vectors, B_t h_{t+1} = lam_t h_t and ell_t B_t = kappa_t ell_{t+1}.
    p, P : dict
        One-point marginals and transition matrices of m_t.
    lo, hi : int
        Window of times where everything is defined (P_t for lo <= t < hi).
    certificate : float
        Birkhoff contraction of the boundary influence at the edges of the
        requested window (an upper bound for the projective error).
    """

    beta = 1.0

    def __init__(self, spec: SftSpec, potential, lo: int, hi: int, burn: int | None = None):
        if hi <= lo:
            raise InvalidParameter("empty Gibbs window")
        self.spec = spec
        self.req_lo, self.req_hi = int(lo), int(hi)
        self._potential = potential
        blo, bhi = self._burn_window(lo, hi, burn)
        spec.validate(blo, bhi)
        self.lo, self.hi = blo, bhi
        self.B = {t: spec.matrix(t) * np.exp(self.potential(t)) for t in range(blo, bhi)}
        h = {bhi: np.ones(spec.size(bhi))}
        lam = {}
        for t in range(bhi - 1, blo - 1, -1):
            w = self.B[t] @ h[t + 1]
            lam[t] = float(w.sum())
            h[t] = w / lam[t]
        ell = {blo: np.ones(spec.size(blo))}
        kappa = {}
        for t in range(blo, bhi):
            w = ell[t] @ self.B[t]
            kappa[t] = float(w.sum())
            ell[t + 1] = w / kappa[t]
        self.h, self.ell, self.lam, self.kappa = h, ell, lam, kappa
        self.p = {}
        for t in range(blo, bhi + 1):
            w = ell[t] * h[t]
            self.p[t] = w / w.sum()
        self.P = {t: self.B[t] * h[t + 1][None, :] / (lam[t] * h[t][:, None]) for t in range(blo, bhi)}
        self._q = {}

    def potential(self, t):
        phi = self._potential(t) if callable(self._potential) else self._potential
        phi = np.asarray(phi, dtype=float)
        A = self.spec.matrix(t)
        if phi.shape != A.shape:
            raise InvalidParameter(f"potential at time {t} has shape {phi.shape}, expected {A.shape}")
        return np.where(A > 0, phi, 0.0)

    def _burn_window(self, lo, hi, burn):
        s = self.spec
        if burn is not None:
            blo, bhi = lo - burn, hi + burn
        else:
            blo = self._extend(lo, -1)
            bhi = self._extend(hi, +1)
        if s.lo is not None:
            blo = max(blo, s.lo)
        if s.hi is not None:
            bhi = min(bhi, s.hi)
        return blo, bhi

    def _extend(self, t0, step):
        """Walk away from t0 until the Birkhoff contraction drops below tolerance."""
        s, M = self.spec, self.spec.M
        contraction, t = 1.0, t0
        while contraction > CERTIFICATE_TOL and abs(t - t0) < MAX_BURN:
            a, b = (t, t + M) if step > 0 else (t - M, t)
            if (s.lo is not None and a < s.lo) or (s.hi is not None and b > s.hi):
                break
            prod = np.eye(s.size(a))
            for u in range(a, b):
                prod = prod @ (s.matrix(u) * np.exp(self.potential(u)))
            contraction *= math.tanh(_proj_diameter(prod) / 4)
            t += step * M
        return t

    def contraction(self, a: int, b: int) -> float:
        """Product of tanh(Delta/4) over consecutive M-blocks in [a, b)."""
        M, out = self.spec.M, 1.0
        for t in range(a, b - M + 1, M):
            prod = np.eye(self.size(t))
            for u in range(t, t + M):
                prod = prod @ self.B[u]
            out *= math.tanh(_proj_diameter(prod) / 4)
        return out

    @property
    def certificate(self) -> float:
        return max(self.contraction(self.lo, self.req_lo), self.contraction(self.req_hi, self.hi))

    # cylinder-state protocol ------------------------------------------------
    def _check(self, t, m=1):
        if t < self.lo or t + max(m, 1) - 1 > self.hi:
            raise HorizonExceeded(f"times [{t}, {t + m - 1}] outside the Gibbs window [{self.lo}, {self.hi}]")

    def size(self, t: int) -> int:
        return self.spec.size(t)

    def adjacency(self, t: int) -> np.ndarray:
        self._check(t, 2)
        return self.spec.matrix(t)

    def mask(self, t: int, m: int) -> np.ndarray:
        return _mask(self, t, m)

    def measure(self, t: int, m: int) -> np.ndarray:
        return _measure(self, t, m)

    def backward_kernel(self, t: int) -> np.ndarray:
        """q_t(a | b) = p_t(a) P_t(a, b) / p_{t+1}(b), columns sum to 1."""
        q = self._q.get(t)
        if q is None:
            self._check(t, 2)
            num = self.p[t][:, None] * self.P[t]
            q = self._q[t] = num / self.p[t + 1][None, :]
        return q

    # diagnostics ------------------------------------------------------------
    def eigen_residual(self, t: int) -> float:
        """max |B_t h_{t+1} - lam_t h_t| relative to h_t."""
        r = self.B[t] @ self.h[t + 1] - self.lam[t] * self.h[t]
        return float(np.max(np.abs(r) / (self.lam[t] * self.h[t])))

    def domain(self, t: int) -> CylinderDomain:
        return CylinderDomain(self, t)

    def system(self, lo: int | None = None, hi: int | None = None) -> FiberedSystem:
        """Shift maps on the cylinder backend for lo <= t < hi."""
        lo = self.lo if lo is None else lo
        hi = self.hi if hi is None else hi
        if lo < self.lo or hi > self.hi:
            raise HorizonExceeded("system window exceeds the Gibbs window")
        return FiberedSystem(lambda t: CylinderTransfer(self, t), lo, hi, "cylinder")

    # sampling ---------------------------------------------------------------
    def sample(self, n: int, t0: int, length: int, rng: np.random.Generator) -> np.ndarray:
        """n Markov paths over absolute times t0, ..., t0 + length - 1."""
        self._check(t0, length)
        out = np.empty((n, length), dtype=np.int64)
        out[:, 0] = _draw(self.p[t0], n, rng)
        for k in range(1, length):
            out[:, k] = _draw_rows(self.P[t0 + k - 1], out[:, k - 1], rng)
        return out

    def sample_past(self, current: np.ndarray, t: int, length: int, rng) -> np.ndarray:
        """Backward samples at times t-1, ..., t-length given symbols at time t."""
        out = np.empty((len(current), length), dtype=np.int64)
        cur = np.asarray(current)
        for k in range(length):
            q = self.backward_kernel(t - k - 1)
            cur = _draw_rows(q.T, cur, rng)
            out[:, k] = cur
        return out


def _draw(p, n, rng):
    return np.minimum(np.searchsorted(np.cumsum(p), rng.random(n) * np.sum(p)), len(p) - 1)


def _draw_rows(P, rows, rng):
    c = np.cumsum(P[rows], axis=1)
    u = rng.random(len(rows))[:, None] * c[:, -1:]
    return np.minimum((c < u).sum(axis=1), P.shape[1] - 1)


@lru_cache(maxsize=256)
def _mask(state, t, m):
    if m == 0:
        return np.ones((), dtype=bool)
    state._check(t, m)
    mask = np.ones(state.size(t), dtype=bool)
    for i in range(1, m):
        A = state.spec.matrix(t + i - 1) > 0
        mask = mask[..., None] & A.reshape((1,) * (i - 1) + A.shape)
    mask.setflags(write=False)
    return mask


@lru_cache(maxsize=64)
def _measure(state, t, m):
    if m == 0:
        return np.ones(())
    state._check(t, m)
    w = state.p[t].copy()
    for i in range(1, m):
        P = state.P[t + i - 1]
        w = w[..., None] * P.reshape((1,) * (i - 1) + P.shape)
    w.setflags(write=False)
    return w


def gibbs(spec: SftSpec, potential, lo: int, hi: int, burn: int | None = None) -> GibbsState:
    """Gibbs state of ``potential`` (t -> array d_t x d_{t+1}, or one array).

    The window [lo, hi] is padded on both sides until the Birkhoff
    contraction certificate drops below 1e-16, unless ``burn`` is given or
    the specification itself ends.
    """
    return GibbsState(spec, potential, lo, hi, burn)


def cylinder_mass(state: GibbsState, t: int, word) -> float:
    """m_t([w_0 ... w_{m-1}])."""
    word = list(word)
    if not word:
        return 1.0
    mass = state.p[t][word[0]]
    for i in range(1, len(word)):
        mass *= state.P[t + i - 1][word[i - 1], word[i]]
    return float(mass)


# ----------------------------------------------------------------------------
# points


@dataclass
class SymbolicPoints:
    """A batch of two-sided points of the fiber at time ``time``.

    ``symbols[:, c]`` holds the coordinate at absolute time ``origin + c``, so
    x_k = symbols[:, time + k - origin].
    """

    symbols: np.ndarray
    origin: int
    time: int

    def __post_init__(self):
        self.symbols = np.atleast_2d(np.asarray(self.symbols, dtype=np.int64))

    @property
    def n(self) -> int:
        return self.symbols.shape[0]

    @property
    def span(self):
        """Available relative coordinates [first, last)."""
        return self.origin - self.time, self.origin + self.symbols.shape[1] - self.time

    def coords(self, a: int, b: int) -> np.ndarray:
        """Relative coordinates a <= k < b as an (n, b - a) array."""
        lo, hi = self.span
        if a < lo or b > hi:
            raise HorizonExceeded(f"coordinates [{a}, {b}) outside the stored window [{lo}, {hi})")
        c = self.time - self.origin
        return self.symbols[:, c + a:c + b]

    def shift(self, k: int = 1) -> "SymbolicPoints":
        return SymbolicPoints(self.symbols, self.origin, self.time + k)

    def future(self, m: int) -> np.ndarray:
        return self.coords(0, m)

    def with_columns(self, a: int, values) -> "SymbolicPoints":
        """Copy with relative coordinates a, a+1, ... replaced by ``values``."""
        s = self.symbols.copy()
        c = self.time - self.origin + a
        s[:, c:c + np.shape(values)[1]] = values
        return SymbolicPoints(s, self.origin, self.time)

    def __getitem__(self, idx):
        return SymbolicPoints(self.symbols[idx], self.origin, self.time)


def sample_points(state: GibbsState, n: int, time: int, past: int, future: int,
                  rng: np.random.Generator) -> SymbolicPoints:
    """Gibbs-distributed points at fiber ``time`` with coordinates [-past, future)."""
    return SymbolicPoints(state.sample(n, time - past, past + future, rng), time - past, time)


def is_admissible(spec: SftSpec, pts: SymbolicPoints) -> np.ndarray:
    s = pts.symbols
    ok = np.ones(pts.n, dtype=bool)
    for c in range(s.shape[1] - 1):
        A = spec.matrix(pts.origin + c)
        ok &= A[s[:, c], s[:, c + 1]] > 0
    return ok


def canonical_past_table(spec: SftSpec, t: int, length: int) -> np.ndarray:
    """Row a: canonical past of symbol a at time t, ordered from time t-length to t-1."""
    return np.stack([spec.canonical_past(t, a, length)[::-1] for a in range(spec.size(t))])


def with_canonical_past(spec: SftSpec, pts: SymbolicPoints, length: int) -> SymbolicPoints:
    """psi_j(x): keep x_k for k >= 0, replace x_{-length..-1} by the canonical past of x_0."""
    tab = canonical_past_table(spec, pts.time, length)
    return pts.with_columns(-length, tab[pts.coords(0, 1)[:, 0]])


def distance(x: SymbolicPoints, y: SymbolicPoints, two_sided: bool = True) -> np.ndarray:
    """2^{-inf{|k| : x_k != y_k}} over the common stored window (0 if equal there)."""
    lo = max(x.span[0], y.span[0]) if two_sided else 0
    hi = min(x.span[1], y.span[1])
    diff = x.coords(lo, hi) != y.coords(lo, hi)
    ks = np.abs(np.arange(lo, hi))
    first = np.where(diff, ks[None, :], np.iinfo(np.int64).max).min(axis=1)
    return np.where(first == np.iinfo(np.int64).max, 0.0, 2.0 ** (-first.astype(float)))


def bracket(x: SymbolicPoints, y: SymbolicPoints) -> SymbolicPoints:
    """[x, y]: future (k >= 0) of x and past (k < 0) of y."""
    if x.time != y.time:
        raise InvalidParameter("bracket needs points of the same fiber")
    x0, y0 = x.coords(0, 1)[:, 0], y.coords(0, 1)[:, 0]
    if np.any(x0 != y0):
        raise NotBracketable(f"{int(np.sum(x0 != y0))} pairs have different zeroth symbols")
    lo, hi = y.span[0], x.span[1]
    out = np.concatenate([y.coords(lo, 0), x.coords(0, hi)], axis=1)
    return SymbolicPoints(out, x.time + lo, x.time)


# ----------------------------------------------------------------------------
# two-sided observables


@dataclass
class TwoSidedObservable:
    """f_t(x) = fn(t, W) with W = (x_{-R}, ..., x_R) of shape (n, 2R+1).

    ``holder`` is a constant C with |f(x) - f(y)| <= C d(x, y)^beta and
    ``sup`` a bound for |f|.
    """

    fn: object
    R: int
    holder: float
    sup: float
    beta: float = 1.0

    @property
    def norm(self) -> float:
        return self.sup + self.holder

    def __call__(self, pts: SymbolicPoints) -> np.ndarray:
        return np.asarray(self.fn(pts.time, pts.coords(-self.R, self.R + 1)), dtype=float)


def weighted_symbol_observable(weights_by_offset: dict, centre=0.5, name: str = "") -> TwoSidedObservable:
    """f(x) = sum_k w_k (x_k - centre) with explicit Hoelder data."""
    R = max(abs(k) for k in weights_by_offset)
    w = np.zeros(2 * R + 1)
    for k, v in weights_by_offset.items():
        w[k + R] = v
    amp = max(abs(centre), 1 - abs(centre))
    holder = max(float(np.sum(np.abs(w)[np.abs(np.arange(-R, R + 1)) >= m])) * 2.0 ** m
                 for m in range(R + 1))
    return TwoSidedObservable(lambda t, W: (W - centre) @ w, R, holder, amp * float(np.abs(w).sum()))


def holder_test_observable(R: int = 40) -> TwoSidedObservable:
    """(1/4) sum_{|k| <= R} 2^{-|k|} (x_k - 1/2) on binary alphabets; Hoelder constant 1."""
    return weighted_symbol_observable({k: 0.25 * 2.0 ** (-abs(k)) for k in range(-R, R + 1)})


def _as_family(f):
    return f if callable(f) and not isinstance(f, TwoSidedObservable) else (lambda t: f)


# ----------------------------------------------------------------------------
# Sinai reduction


class SinaiReduction:
    """f_j = F_j o pi_j + u_{j+1} o S_j - u_j with F_j depending on x_{>=0} only.

    u_j(x) = sum_{k>=0} [f_{j+k}(S^k psi_j x) - f_{j+k}(S^k x)]
    F_j(x) = f_j(psi_j x) + sum_{k>=1} [f_{j+k}(S^k psi_j x) - f_{j+k}(S^{k-1} psi_{j+1} S x)]

    psi_j replaces the past by the canonical (lexicographically minimal) one.
    Both series are cut after K terms, K = ceil((2/beta) log2(2||f|| / tol)),
    using the envelope |term_k| <= 2 ||f|| 2^{-k beta/2}.
    """

    def __init__(self, spec: SftSpec, f, tol: float = 1e-9):
        self.spec = spec
        self.f = _as_family(f)
        probe = self.f(0)
        self.R, self.beta, self.fnorm = probe.R, probe.beta, probe.norm
        self.tol = float(tol)
        self.K = max(1, math.ceil((2 / self.beta) * math.log2(2 * self.fnorm / self.tol)))
        self.exponent = self.beta / 2

    def envelope(self, k) -> float:
        return 2 * self.fnorm * 2.0 ** (-k * self.beta / 2)

    @property
    def certified_bound(self) -> float:
        """Tail of the envelope after the last retained term."""
        return self.envelope(self.K + 1) / (1 - 2.0 ** (-self.beta / 2))

    @property
    def future_needed(self) -> int:
        return self.K + self.R + 2

    def _terms_u(self, pts):
        y = with_canonical_past(self.spec, pts, self.R)
        out = []
        for k in range(self.K + 1):
            fk = self.f(pts.time + k)
            out.append(fk(y.shift(k)) - fk(pts.shift(k)))
        return np.array(out)

    def u(self, pts: SymbolicPoints, check: bool = True) -> np.ndarray:
        terms = self._terms_u(pts)
        if check:
            self._check_envelope(terms, 1)
        return terms.sum(axis=0)

    def F(self, pts: SymbolicPoints, check: bool = True) -> np.ndarray:
        """F_j at the one-sided part of ``pts`` (pasts are never read)."""
        j = pts.time
        fut = pts.coords(0, self.future_needed)
        tab0 = canonical_past_table(self.spec, j, self.R)
        y = SymbolicPoints(np.concatenate([tab0[fut[:, 0]], fut], axis=1), j - self.R, j)
        tab1 = canonical_past_table(self.spec, j + 1, self.R + 1)
        z = SymbolicPoints(np.concatenate([tab1[fut[:, 1]], fut[:, 1:]], axis=1), j - self.R, j + 1)
        total = self.f(j)(y)
        terms = []
        for k in range(1, self.K + 1):
            fk = self.f(j + k)
            terms.append(fk(y.shift(k)) - fk(z.shift(k - 1)))
        terms = np.array(terms)
        if check:
            self._check_envelope(terms, 1)
        return total + terms.sum(axis=0)

    def _check_envelope(self, terms, offset):
        for k, row in enumerate(terms):
            bound = self.envelope(k + offset - 1) * (1 + 1e-9) + 1e-15
            if np.max(np.abs(row)) > bound:
                raise TailNotConverged(
                    f"term {k} has size {np.max(np.abs(row)):.3e} above its envelope {bound:.3e}; "
                    "the Hoelder data of f is too small")

    def residual(self, pts: SymbolicPoints) -> np.ndarray:
        """|f_j(x) - F_j(x) - u_{j+1}(Sx) + u_j(x)|."""
        return np.abs(self.f(pts.time)(pts) - self.F(pts) - self.u(pts.shift(1)) + self.u(pts))

    def F_cylinder(self, t: int, depth: int, state: GibbsState) -> CylinderFunction:
        """F_t tabulated on words of length ``depth``, continued by the canonical future."""
        dom = CylinderDomain(state, t)
        spec = self.spec

        def fn(words):
            extra = self.future_needed - depth
            if extra > 0:
                tails = np.stack([spec.canonical_future(t + depth - 1, a, extra)
                                  for a in range(spec.size(t + depth - 1))])
                words = np.concatenate([words, tails[words[:, -1]]], axis=1)
            return self.F(SymbolicPoints(words, t, t), check=False)

        return CylinderFunction.from_words(dom, depth, fn)

    def report(self) -> dict:
        return {"K": self.K, "certified_bound": self.certified_bound, "exponent": self.exponent,
                "holder_norm": self.fnorm, "canonical_past": "lexicographically minimal"}


def sinai_reduce(spec: SftSpec, f, tol: float = 1e-9) -> SinaiReduction:
    return SinaiReduction(spec, f, tol)


def past_independence(red: SinaiReduction, state: GibbsState, pts: SymbolicPoints,
                      resamples: int, rng: np.random.Generator) -> float:
    """max |F(x) - F(x')| over pasts x' resampled from the Gibbs measure."""
    ref = red.F(pts)
    lo = -pts.span[0]
    rep = pts[np.repeat(np.arange(pts.n), resamples)]
    past = state.sample_past(rep.coords(0, 1)[:, 0], pts.time, lo, rng)[:, ::-1]
    alt = rep.with_columns(-lo, past)
    worst = float(np.max(np.abs(red.F(alt) - np.repeat(ref, resamples))))
    return worst


# ----------------------------------------------------------------------------
# two-sided reconstruction


def two_sided_difference(F, x: SymbolicPoints, y: SymbolicPoints, n: int):
    """Estimate H_j(x) - H_j(y) for F = H o S - H, with z = [x, y].

    H(x) - H(y) = -sum_{k>=0} [F(S^k x) - F(S^k z)] + sum_{i>=1} [F(S^{-i} z) - F(S^{-i} y)].

    Both sums are cut after n terms.  S^k x and S^k z agree on coordinates
    >= -k, and S^{-i} z and S^{-i} y agree on coordinates < i, so the tail is
    certified by the Hoelder data of F.  Returns (estimate, tail bound).
    """
    Ff = _as_family(F)
    z = bracket(x, y)
    j = x.time
    fwd = np.zeros(x.n)
    for k in range(n):
        Fk = Ff(j + k)
        fwd += Fk(x.shift(k)) - Fk(z.shift(k))
    bwd = np.zeros(x.n)
    for i in range(1, n + 1):
        Fi = Ff(j - i)
        bwd += Fi(z.shift(-i)) - Fi(y.shift(-i))
    probe = Ff(j)
    C, b = probe.holder, probe.beta
    tail = C * (2.0 ** (-(n + 1) * b) + 2.0 ** (-(n + 1) * b)) / (1 - 2.0 ** (-b))
    return -fwd + bwd, tail


def planted_two_sided(H: TwoSidedObservable) -> TwoSidedObservable:
    """F = H o S - H for a time-independent H of finitely many coordinates."""
    R = H.R + 1
    w = H.fn

    def fn(t, W):
        return np.asarray(w(t + 1, W[:, 2:])) - np.asarray(w(t, W[:, 1:-1]))

    return TwoSidedObservable(fn, R, holder=H.holder * 3, sup=2 * H.sup, beta=H.beta)


# ----------------------------------------------------------------------------
# full pipeline


@dataclass
class SftSolution:
    reduction: SinaiReduction
    state: GibbsState
    depth: int
    G: dict
    c: dict
    solve_result: object
    residual: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    def H(self, pts: SymbolicPoints) -> np.ndarray:
        """H_j = G_j o pi + u_j, up to one global constant."""
        G = self.G[pts.time]
        return G.evaluate(pts.coords(0, self.depth)) + self.reduction.u(pts)


def solve_sft(state: GibbsState, f, tol: float = 1e-9, fibers=None, depth: int = 14,
              samples: int = 200, seed: int = 0, n_var: int = 20) -> SftSolution:
    """Sinai reduction, then the one-sided solve on the cylinder backend.

    The constants c_j returned by the one-sided solver are absorbed into
    G_j = H^{one-sided}_j + sum_{i<j} c_i, so F_j = G_{j+1} o S - G_j exactly.
    """
    from .livsic import CoboundaryProblem, solve

    spec = state.spec
    red = sinai_reduce(spec, f, tol)
    margin = depth + red.future_needed + red.R + 2
    lo_sys, hi_sys = state.lo, state.hi - margin
    system = state.system(lo_sys, hi_sys)
    problem = CoboundaryProblem(system, lambda t: red.F_cylinder(t, depth, state))
    if fibers is None:
        mid = (state.req_lo + state.req_hi) // 2
        fibers = range(mid - 4, mid + 4)
    fibers = list(fibers)
    # the constants are absorbed below, so the |c| rule of the random solver is off
    res = solve(problem, fibers=fibers + [fibers[-1] + 1], n_var=n_var, raise_on_failure=False,
                tolerances={"c": math.inf})
    G, acc = {}, 0.0
    for t in fibers + [fibers[-1] + 1]:
        G[t] = res.H[t] + acc
        acc += res.c[t]
    sol = SftSolution(red, state, depth, G, dict(res.c), res)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in fibers:
        pts = sample_points(state, samples, t, red.R + 2, red.future_needed + depth + 2, rng)
        lhs = red.f(t)(pts)
        rhs = sol.H(pts.shift(1)) - sol.H(pts)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    sol.residual = worst
    sol.diagnostics = {"reduction": red.report(), "solve": res.as_dict(), "residual": worst}
    if res.verdict != "Coboundary":
        raise NotACoboundary("; ".join(res.failing), result=sol, diagnostic=res.failing)
    return sol
