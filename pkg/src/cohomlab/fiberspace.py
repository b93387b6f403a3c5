"""Elements of the fiber spaces B = {phi : |phi|_L1 + var(phi) < inf}.

Three backends share one interface:

* ``FourierFunction``: complex coefficients c_{-K..K} on the circle [0, 1).
* ``UlamFunction``: averages over N equal cells of [0, 1].
* ``CylinderFunction``: a value per admissible word of length m on a
  one-sided (sequential or random) subshift of finite type, stored as a dense
  tensor of shape (d_j, ..., d_{j+m-1}) that vanishes off admissible words.

Norms of interval functions use the interval convention for total
variation.  Fourier norms are evaluated on a uniform grid of
``norm_grid(K)`` points, which is recorded in reports.
"""

from __future__ import annotations

import warnings

import numpy as np

from .errors import BackendMismatch, DomainMismatch, InvalidParameter, TruncationWarning

DEFAULT_CUTOFF = 64
DEFAULT_CELLS = 1024
GRID_FACTOR = 16
MIN_GRID = 1024
TRUNCATION_BUDGET = 1e-12


def norm_grid(K: int) -> int:
    """Number of uniform points used for Fourier sup/L1/variation."""
    return max(GRID_FACTOR * max(int(K), 1), MIN_GRID)


def _next_pow2(n: int) -> int:
    return 1 << max(int(n) - 1, 1).bit_length()


# --------------------------------------------------------------------------
# domains and reference measures


class IntervalDomain:
    """[0, 1] with Lebesgue measure.  One instance is shared by all fibers."""

    kind = "interval"

    def __repr__(self):
        return "IntervalDomain()"


INTERVAL = IntervalDomain()


class CylinderDomain:
    """Fiber X_j of a symbolic system, with its reference (Gibbs) measure.

    ``state`` must provide ``size(t)``, ``adjacency(t)``, ``mask(t, m)``,
    ``measure(t, m)`` and an attribute ``beta`` (Hoelder exponent used by the
    variation surrogate).
    """

    kind = "cylinder"

    def __init__(self, state, time: int):
        self.state = state
        self.time = int(time)

    def __eq__(self, other):
        return (isinstance(other, CylinderDomain) and other.state is self.state
                and other.time == self.time)

    def __hash__(self):
        return hash((id(self.state), self.time))

    def __repr__(self):
        return f"CylinderDomain(time={self.time})"

    def shape(self, m: int) -> tuple:
        return tuple(self.state.size(self.time + i) for i in range(m))

    def next(self) -> "CylinderDomain":
        return CylinderDomain(self.state, self.time + 1)


class ReferenceMeasure:
    """Lebesgue measure on [0,1] or cylinder weights on a symbolic fiber."""

    def __init__(self, domain=INTERVAL):
        self.domain = domain

    @property
    def kind(self):
        return "Lebesgue" if self.domain is INTERVAL else "CylinderWeights"

    def weights(self, m: int) -> np.ndarray:
        if self.domain is INTERVAL:
            raise InvalidParameter("Lebesgue measure has no cylinder weights")
        return self.domain.state.measure(self.domain.time, m)

    def total_mass(self) -> float:
        if self.domain is INTERVAL:
            return 1.0
        return float(self.weights(1).sum())


LEBESGUE = ReferenceMeasure(INTERVAL)


# --------------------------------------------------------------------------
# base class


class FiberFunction:
    """Immutable element of a fiber space; arithmetic returns new objects."""

    backend = ""
    truncation_error = 0.0
    __array_ufunc__ = None

    # subclasses implement: _binary, _scaled, multiply, exp, integral,
    # l1, variation, sup, evaluate, conj, zeros_like

    def _check_compat(self, other):
        if not isinstance(other, FiberFunction):
            raise TypeError(f"cannot combine with {type(other).__name__}")
        if other.backend != self.backend:
            raise BackendMismatch(f"{self.backend} vs {other.backend}")
        if other.domain != self.domain:
            raise DomainMismatch(f"{self.domain!r} vs {other.domain!r}")

    def __add__(self, other):
        if np.isscalar(other):
            return self._binary(self.constant_like(other), np.add)
        self._check_compat(other)
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        if np.isscalar(other):
            return self._binary(self.constant_like(other), np.subtract)
        self._check_compat(other)
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return self._scaled(-1.0)

    def __mul__(self, other):
        if np.isscalar(other):
            return self._scaled(other)
        self._check_compat(other)
        return self.multiply(other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if np.isscalar(other):
            return self._scaled(1.0 / other)
        self._check_compat(other)
        return self.divide(other)

    def norm_B(self) -> float:
        return self.l1() + self.variation()

    @property
    def is_real(self) -> bool:
        return True

    @property
    def real(self):
        return self._map_values(np.real)

    def is_constant(self, value=None, tol=0.0) -> bool:
        raise NotImplementedError


# --------------------------------------------------------------------------
# Fourier backend


class FourierFunction(FiberFunction):
    """Trigonometric polynomial sum_{|k|<=K} c_k e^{2 pi i k x}."""

    backend = "fourier"
    domain = INTERVAL

    def __init__(self, coeffs, truncation_error: float = 0.0):
        c = np.asarray(coeffs, dtype=complex)
        if c.ndim != 1 or c.size % 2 != 1:
            raise InvalidParameter("Fourier coefficient array must have odd length 2K+1")
        c.setflags(write=False)
        self.coeffs = c
        self.K = (c.size - 1) // 2
        self.truncation_error = float(truncation_error)

    # construction --------------------------------------------------------
    @classmethod
    def from_modes(cls, modes: dict, K: int | None = None):
        """Build from {k: c_k}."""
        Kmax = max([abs(int(k)) for k in modes] + [0])
        K = Kmax if K is None else max(K, Kmax)
        c = np.zeros(2 * K + 1, dtype=complex)
        for k, v in modes.items():
            c[int(k) + K] += v
        return cls(c)

    @classmethod
    def constant(cls, value=1.0):
        return cls([value])

    @classmethod
    def cos(cls, k: int, amplitude=1.0):
        return cls.from_modes({k: amplitude / 2, -k: amplitude / 2})

    @classmethod
    def sin(cls, k: int, amplitude=1.0):
        return cls.from_modes({k: amplitude / 2j, -k: -amplitude / 2j})

    @classmethod
    def from_function(cls, f, K: int = DEFAULT_CUTOFF, oversample: int = 8):
        """Interpolate a periodic callable by FFT on an oversampled grid."""
        M = _next_pow2(oversample * (2 * K + 1))
        x = np.arange(M) / M
        F = np.fft.fft(np.asarray(f(x), dtype=complex)) / M
        k = np.arange(-K, K + 1)
        c = F[k % M]
        tail = np.abs(F).sum() - np.abs(c).sum()
        return cls(c, truncation_error=max(float(tail), 0.0))

    @classmethod
    def from_grid_values(cls, values, K: int):
        M = len(values)
        F = np.fft.fft(np.asarray(values, dtype=complex)) / M
        k = np.arange(-K, K + 1)
        c = F[k % M]
        return cls(c), max(float(np.abs(F).sum() - np.abs(c).sum()), 0.0)

    def constant_like(self, value):
        return FourierFunction([value])

    def zeros_like(self):
        return FourierFunction([0.0])

    # coefficient access --------------------------------------------------
    def coeff(self, k: int) -> complex:
        return complex(self.coeffs[k + self.K]) if abs(k) <= self.K else 0j

    def padded(self, K: int) -> np.ndarray:
        if K < self.K:
            raise InvalidParameter("use truncate() to lower the cutoff")
        out = np.zeros(2 * K + 1, dtype=complex)
        out[K - self.K:K + self.K + 1] = self.coeffs
        return out

    def truncate(self, K: int) -> "FourierFunction":
        if K >= self.K:
            return self
        dropped = np.abs(self.coeffs).sum() - np.abs(self.coeffs[self.K - K:self.K + K + 1]).sum()
        return FourierFunction(self.coeffs[self.K - K:self.K + K + 1],
                               self.truncation_error + max(float(dropped), 0.0))

    def trimmed(self, tol: float = 0.0) -> "FourierFunction":
        """Drop leading/trailing coefficients with modulus <= tol."""
        nz = np.nonzero(np.abs(self.coeffs) > tol)[0]
        if nz.size == 0:
            return FourierFunction([0.0], self.truncation_error)
        K = int(max(abs(nz[0] - self.K), abs(nz[-1] - self.K)))
        return self.truncate(K)

    # algebra -------------------------------------------------------------
    def _binary(self, other, op):
        K = max(self.K, other.K)
        return FourierFunction(op(self.padded(K), other.padded(K)),
                               self.truncation_error + other.truncation_error)

    def _scaled(self, a):
        return FourierFunction(self.coeffs * a, abs(a) * self.truncation_error)

    def _map_values(self, fn):
        if fn is np.real:
            c = 0.5 * (self.coeffs + np.conj(self.coeffs[::-1]))
            return FourierFunction(c, self.truncation_error)
        raise NotImplementedError

    def conj(self):
        return FourierFunction(np.conj(self.coeffs[::-1]), self.truncation_error)

    def multiply(self, other, K: int | None = None):
        """Exact product (cutoff K1 + K2), optionally truncated to K."""
        c = np.convolve(self.coeffs, other.coeffs)
        out = FourierFunction(c, self.truncation_error + other.truncation_error)
        return out if K is None else out.truncate(K)

    def _pointwise(self, fn, K: int, others=()):
        Kin = max([self.K] + [o.K for o in others])
        M = _next_pow2(max(8 * (2 * K + 1), 4 * (2 * Kin + 1)))
        vals = fn(self.grid_values(M), *[o.grid_values(M) for o in others])
        out, err = FourierFunction.from_grid_values(vals, K)
        err += self.truncation_error
        if err > TRUNCATION_BUDGET:
            warnings.warn(f"Fourier truncation error {err:.2e} exceeds budget", TruncationWarning,
                          stacklevel=3)
        return FourierFunction(out.coeffs, err)

    def exp(self, K: int | None = None):
        """Pointwise exponential truncated to cutoff K (default max(K, 64))."""
        if self.K == 0:
            return FourierFunction([np.exp(self.coeffs[0])], self.truncation_error)
        K = max(self.K, DEFAULT_CUTOFF) if K is None else K
        return self._pointwise(np.exp, K)

    def divide(self, other, K: int | None = None):
        if other.K == 0:
            return self._scaled(1.0 / other.coeffs[0])
        K = max(self.K, other.K, DEFAULT_CUTOFF) if K is None else K
        return self._pointwise(lambda a, b: a / b, K, (other,))

    # evaluation ----------------------------------------------------------
    @property
    def is_real(self) -> bool:
        c = self.coeffs
        return bool(np.max(np.abs(c - np.conj(c[::-1])), initial=0.0)
                    <= 1e-12 * max(1.0, np.max(np.abs(c))))

    def is_constant(self, value=None, tol=0.0) -> bool:
        rest = np.delete(self.coeffs, self.K)
        if rest.size and np.max(np.abs(rest)) > tol:
            return False
        return value is None or abs(self.coeffs[self.K] - value) <= tol

    def grid_values(self, M: int) -> np.ndarray:
        """Values at x_i = i/M, i < M (exact for any M via folding)."""
        buf = np.zeros(M, dtype=complex)
        np.add.at(buf, np.arange(-self.K, self.K + 1) % M, self.coeffs)
        vals = np.fft.ifft(buf) * M
        return vals.real if self.is_real else vals

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        k = np.arange(-self.K, self.K + 1)
        out = np.empty(flat.size, dtype=complex)
        for s in range(0, flat.size, 4096):
            out[s:s + 4096] = np.exp(2j * np.pi * np.outer(flat[s:s + 4096], k)) @ self.coeffs
        out = out.reshape(x.shape)
        return out.real if self.is_real else out

    __call__ = evaluate

    def integral(self) -> complex | float:
        c0 = self.coeffs[self.K]
        return float(c0.real) if self.is_real else complex(c0)

    def _norm_values(self):
        return self.grid_values(norm_grid(self.K))

    def l1(self) -> float:
        return float(np.mean(np.abs(self._norm_values())))

    def sup(self) -> float:
        return float(np.max(np.abs(self._norm_values())))

    def variation(self) -> float:
        v = self._norm_values()
        return float(np.sum(np.abs(np.diff(np.append(v, v[0])))))

    def derivative_sup_bound(self) -> float:
        k = np.arange(-self.K, self.K + 1)
        return float(np.sum(2 * np.pi * np.abs(k) * np.abs(self.coeffs)))

    def __repr__(self):
        return f"FourierFunction(K={self.K})"


# --------------------------------------------------------------------------
# Ulam backend


class UlamFunction(FiberFunction):
    """Cell averages over N equal subintervals of [0, 1]."""

    backend = "ulam"
    domain = INTERVAL

    def __init__(self, values):
        v = np.array(values)
        if v.ndim != 1 or v.size < 1:
            raise InvalidParameter("Ulam function needs N >= 1 cell values")
        if not np.iscomplexobj(v):
            v = v.astype(float)
        v.setflags(write=False)
        self.values = v
        self.N = v.size

    @classmethod
    def constant(cls, value=1.0, N: int = DEFAULT_CELLS):
        return cls(np.full(N, value))

    @classmethod
    def from_function(cls, f, N: int = DEFAULT_CELLS, order: int = 8):
        """Cell averages of a callable by Gauss-Legendre quadrature per cell."""
        t, w = np.polynomial.legendre.leggauss(order)
        left = np.arange(N)[:, None] / N
        x = left + (t[None, :] + 1) / (2 * N)
        return cls(np.asarray(f(x)) @ (w / 2))

    def constant_like(self, value):
        return UlamFunction(np.full(self.N, value))

    def zeros_like(self):
        return UlamFunction(np.zeros(self.N))

    def _check_compat(self, other):
        super()._check_compat(other)
        if other.N != self.N:
            raise BackendMismatch(f"Ulam resolutions differ: {self.N} vs {other.N}")

    def _binary(self, other, op):
        return UlamFunction(op(self.values, other.values))

    def _scaled(self, a):
        return UlamFunction(self.values * a)

    def _map_values(self, fn):
        return UlamFunction(fn(self.values))

    def conj(self):
        return UlamFunction(np.conj(self.values))

    def multiply(self, other):
        return UlamFunction(self.values * other.values)

    def divide(self, other):
        return UlamFunction(self.values / other.values)

    def exp(self, K=None):
        return UlamFunction(np.exp(self.values))

    @property
    def is_real(self):
        return not np.iscomplexobj(self.values) or bool(np.all(self.values.imag == 0))

    def is_constant(self, value=None, tol=0.0):
        v = self.values
        if np.max(np.abs(v - v[0])) > tol:
            return False
        return value is None or abs(v[0] - value) <= tol

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.floor(x * self.N).astype(int), 0, self.N - 1)
        return self.values[idx]

    __call__ = evaluate

    def integral(self):
        m = self.values.mean()
        return float(m.real) if self.is_real else complex(m)

    def l1(self):
        return float(np.mean(np.abs(self.values)))

    def sup(self):
        return float(np.max(np.abs(self.values)))

    def variation(self):
        return float(np.sum(np.abs(np.diff(self.values))))

    def __repr__(self):
        return f"UlamFunction(N={self.N})"


# --------------------------------------------------------------------------
# cylinder backend


class CylinderFunction(FiberFunction):
    """Function of the first m symbols of a one-sided symbolic fiber."""

    backend = "cylinder"

    def __init__(self, domain: CylinderDomain, tensor):
        t = np.asarray(tensor)
        if not np.iscomplexobj(t):
            t = t.astype(float)
        m = t.ndim
        if t.shape != domain.shape(m):
            raise InvalidParameter(f"tensor shape {t.shape} != alphabet sizes {domain.shape(m)}")
        if m:
            t = np.where(domain.state.mask(domain.time, m), t, 0)
        t.setflags(write=False)
        self.domain = domain
        self.tensor = t

    @property
    def depth(self) -> int:
        return self.tensor.ndim

    @classmethod
    def constant(cls, domain, value=1.0):
        return cls(domain, np.asarray(value))

    @classmethod
    def from_words(cls, domain, depth: int, fn):
        """Tabulate ``fn(words)`` where ``words`` has shape (n, depth)."""
        shape = domain.shape(depth)
        if depth == 0:
            return cls(domain, np.asarray(fn(np.zeros((1, 0), dtype=int))[0]))
        words = np.indices(shape).reshape(depth, -1).T
        return cls(domain, np.asarray(fn(words)).reshape(shape))

    def constant_like(self, value):
        return CylinderFunction(self.domain, np.asarray(value))

    def zeros_like(self):
        return CylinderFunction(self.domain, np.asarray(0.0))

    def extended(self, m: int) -> np.ndarray:
        """Tensor broadcast to depth m >= self.depth."""
        if m < self.depth:
            raise InvalidParameter("cannot extend to a smaller depth")
        t = self.tensor.reshape(self.tensor.shape + (1,) * (m - self.depth))
        shape = self.domain.shape(m)
        t = np.broadcast_to(t, shape)
        return np.where(self.domain.state.mask(self.domain.time, m), t, 0) if m else t

    def _binary(self, other, op):
        m = max(self.depth, other.depth)
        return CylinderFunction(self.domain, op(self.extended(m), other.extended(m)))

    def _scaled(self, a):
        return CylinderFunction(self.domain, self.tensor * a)

    def _map_values(self, fn):
        return CylinderFunction(self.domain, fn(self.tensor))

    def conj(self):
        return self._map_values(np.conj)

    def multiply(self, other):
        return self._binary(other, np.multiply)

    def divide(self, other):
        m = max(self.depth, other.depth)
        den = other.extended(m)
        safe = np.where(den == 0, 1.0, den)
        return CylinderFunction(self.domain, self.extended(m) / safe)

    def exp(self, K=None):
        return self._map_values(np.exp)

    def condition(self, m: int) -> "CylinderFunction":
        """Conditional expectation onto the first m coordinates."""
        if m >= self.depth:
            return self
        w = self.domain.state.measure(self.domain.time, self.depth)
        axes = tuple(range(m, self.depth))
        num = (self.tensor * w).sum(axis=axes)
        den = w.sum(axis=axes)
        return CylinderFunction(self.domain, np.where(den > 0, num / np.where(den > 0, den, 1), 0))

    @property
    def is_real(self):
        return not np.iscomplexobj(self.tensor) or bool(np.all(self.tensor.imag == 0))

    def is_constant(self, value=None, tol=0.0):
        if self.depth == 0:
            return value is None or abs(self.tensor - value) <= tol
        mask = self.domain.state.mask(self.domain.time, self.depth)
        vals = self.tensor[mask]
        if np.max(np.abs(vals - vals[0])) > tol:
            return False
        return value is None or abs(vals[0] - value) <= tol

    def evaluate(self, words):
        """Values at points given by their first coordinates, shape (n, >= depth)."""
        words = np.asarray(words, dtype=int)
        if self.depth == 0:
            return np.full(words.shape[0], self.tensor[()])
        return self.tensor[tuple(words[:, :self.depth].T)]

    __call__ = evaluate

    def _weights(self):
        return self.domain.state.measure(self.domain.time, self.depth)

    def integral(self):
        val = np.sum(self.tensor * self._weights())
        return float(np.real(val)) if self.is_real else complex(val)

    def l1(self):
        return float(np.sum(np.abs(self.tensor) * self._weights()))

    def sup(self):
        if self.depth == 0:
            return float(abs(self.tensor))
        mask = self.domain.state.mask(self.domain.time, self.depth)
        return float(np.max(np.abs(self.tensor[mask])))

    def variation(self):
        """Hoelder seminorm surrogate max |phi(a)-phi(b)| / d(a,b)^beta.

        Words whose first difference is at index k are at distance 2^{-k}.
        For complex values the group diameter is bounded by the diagonal of
        the real/imaginary bounding box.
        """
        m = self.depth
        if m == 0:
            return 0.0
        beta = getattr(self.domain.state, "beta", 1.0)
        mask = self.domain.state.mask(self.domain.time, m)
        parts = [self.tensor.real, self.tensor.imag] if not self.is_real else [np.real(self.tensor)]
        best = 0.0
        for k in range(m):
            axes = tuple(range(k, m))
            rng2 = 0.0
            for p in parts:
                hi = np.max(p, axis=axes, initial=-np.inf, where=mask)
                lo = np.min(p, axis=axes, initial=np.inf, where=mask)
                r = np.where(np.isfinite(hi) & np.isfinite(lo), hi - lo, 0.0)
                rng2 = rng2 + r ** 2
            best = max(best, float(np.max(np.sqrt(rng2))) * 2.0 ** (k * beta))
        return best

    def __repr__(self):
        return f"CylinderFunction(time={self.domain.time}, depth={self.depth})"


# --------------------------------------------------------------------------
# functional interface


def variation(phi: FiberFunction) -> float:
    return phi.variation()


def integrate(phi: FiberFunction, m: ReferenceMeasure | None = None):
    """Integral of phi against the reference measure of its domain."""
    if m is not None and m.domain != phi.domain:
        raise DomainMismatch(f"measure on {m.domain!r} but function on {phi.domain!r}")
    return phi.integral()


def norm_B(phi: FiberFunction) -> float:
    return phi.norm_B()


def lp_norm(phi: FiberFunction, p: float = 1.0, m: ReferenceMeasure | None = None) -> float:
    if m is not None and m.domain != phi.domain:
        raise DomainMismatch("measure and function live on different fibers")
    if np.isinf(p):
        return phi.sup()
    if isinstance(phi, FourierFunction):
        vals = phi._norm_values()
        return float(np.mean(np.abs(vals) ** p) ** (1 / p))
    if isinstance(phi, UlamFunction):
        return float(np.mean(np.abs(phi.values) ** p) ** (1 / p))
    return float(np.sum(np.abs(phi.tensor) ** p * phi._weights()) ** (1 / p))


def add(phi, psi):
    return phi + psi


def scale(phi, c):
    return phi * c


def multiply(phi, psi):
    return phi * psi


def pointwise_exp(phi):
    return phi.exp()
