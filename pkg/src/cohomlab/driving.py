"""Base systems (Omega, P, sigma) realized as reproducible two-sided orbits.

Deterministic bases use the fiber label itself as the point of Omega.
Stochastic bases draw a finite two-sided symbol stream once from the seed;
their points are integer stream positions and their labels are the symbols
found there, so sigma^{-1} is well defined on the whole stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import HorizonExceeded, InvalidParameter

DEFAULT_STREAM_HORIZON = 10_000


class BaseSystem:
    """Common interface of the four base kinds."""

    kind: str = ""
    stochastic: bool = False

    def step(self, omega, k: int):
        raise NotImplementedError

    def label_of(self, omega):
        """Fiber label carried by the point ``omega``."""
        return omega

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class FiniteCycle(BaseSystem):
    p: int
    kind = "FiniteCycle"

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 1:
            raise InvalidParameter(f"FiniteCycle period must be an integer >= 1, got {self.p!r}")

    def step(self, omega, k: int):
        return (int(omega) + int(k)) % self.p

    def to_config(self):
        return {"kind": self.kind, "p": int(self.p)}


@dataclass(frozen=True)
class CircleRotation(BaseSystem):
    alpha: float
    kind = "CircleRotation"

    def __post_init__(self):
        if not (0.0 <= float(self.alpha) < 1.0):
            raise InvalidParameter(f"rotation angle must lie in [0, 1), got {self.alpha!r}")

    def step(self, omega, k: int):
        return float((float(omega) + int(k) * self.alpha) % 1.0)

    def to_config(self):
        return {"kind": self.kind, "alpha": float(self.alpha)}


@dataclass(frozen=True)
class _StreamBase(BaseSystem):
    stochastic = True

    def _draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    @cached_property
    def stream(self) -> np.ndarray:
        """Symbols at positions -horizon..horizon (index shifted by horizon)."""
        rng = np.random.default_rng(self.seed)
        return self._draw(rng, 2 * self.horizon + 1)

    def _check(self, pos: int):
        if abs(pos) > self.horizon:
            raise HorizonExceeded(
                f"stream position {pos} outside the materialized horizon {self.horizon}"
            )

    def step(self, omega, k: int):
        pos = int(omega) + int(k)
        self._check(int(omega))
        self._check(pos)
        return pos

    def label_of(self, omega):
        self._check(int(omega))
        return int(self.stream[int(omega) + self.horizon])


@dataclass(frozen=True)
class IidSymbols(_StreamBase):
    s: int
    seed: int
    probabilities: tuple | None = None
    horizon: int = DEFAULT_STREAM_HORIZON
    kind = "IidSymbols"

    def __post_init__(self):
        if int(self.s) != self.s or self.s < 1:
            raise InvalidParameter(f"alphabet size must be >= 1, got {self.s!r}")
        if self.horizon < 0:
            raise InvalidParameter("horizon must be >= 0")
        if self.probabilities is not None:
            p = np.asarray(self.probabilities, dtype=float)
            if p.shape != (self.s,) or np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
                raise InvalidParameter("probabilities must be a probability vector of length s")
            object.__setattr__(self, "probabilities", tuple(float(x) for x in p))

    def _draw(self, rng, size):
        p = None if self.probabilities is None else np.asarray(self.probabilities)
        return rng.choice(self.s, size=size, p=p).astype(np.int64)

    def to_config(self):
        cfg = {"kind": self.kind, "s": int(self.s), "seed": int(self.seed), "horizon": self.horizon}
        if self.probabilities is not None:
            cfg["probabilities"] = list(self.probabilities)
        return cfg


@dataclass(frozen=True)
class MarkovSymbols(_StreamBase):
    matrix: tuple
    seed: int
    start: int | None = None
    horizon: int = DEFAULT_STREAM_HORIZON
    kind = "MarkovSymbols"

    def __post_init__(self):
        P = np.asarray(self.matrix, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 1:
            raise InvalidParameter("Markov matrix must be square and nonempty")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=1) - 1)) > 1e-12:
            raise InvalidParameter("Markov matrix rows must be probability vectors (1e-12)")
        if self.start is not None and not (0 <= self.start < P.shape[0]):
            raise InvalidParameter("start state out of range")
        object.__setattr__(self, "matrix", tuple(tuple(float(x) for x in row) for row in P))

    @property
    def s(self) -> int:
        return len(self.matrix)

    def stationary(self) -> np.ndarray:
        P = np.asarray(self.matrix)
        w, V = np.linalg.eig(P.T)
        v = np.real(V[:, np.argmin(np.abs(w - 1))])
        return v / v.sum()

    def _draw(self, rng, size):
        P = np.asarray(self.matrix)
        cum = np.cumsum(P, axis=1)
        u = rng.random(size)
        out = np.empty(size, dtype=np.int64)
        if self.start is None:
            out[0] = int(np.searchsorted(np.cumsum(self.stationary()), u[0], side="right"))
            out[0] = min(out[0], self.s - 1)
        else:
            out[0] = self.start
        for i in range(1, size):
            out[i] = min(int(np.searchsorted(cum[out[i - 1]], u[i], side="right")), self.s - 1)
        return out

    def to_config(self):
        cfg = {"kind": self.kind, "matrix": [list(r) for r in self.matrix],
               "seed": int(self.seed), "horizon": self.horizon}
        if self.start is not None:
            cfg["start"] = int(self.start)
        return cfg


def step(base: BaseSystem, omega, k: int):
    """sigma^k(omega)."""
    return base.step(omega, k)


@dataclass(frozen=True)
class DrivingOrbit:
    """Cached two-sided window of a base orbit, indices k in [-N, N]."""

    base: BaseSystem
    anchor: object
    N: int
    points: tuple = field(repr=False)
    labels: tuple = field(repr=False)

    def _idx(self, k: int) -> int:
        if not -self.N <= k <= self.N:
            raise HorizonExceeded(f"index {k} outside orbit window [-{self.N}, {self.N}]")
        return k + self.N

    def label(self, k: int):
        return self.labels[self._idx(k)]

    def point(self, k: int):
        return self.points[self._idx(k)]

    @property
    def indices(self) -> range:
        return range(-self.N, self.N + 1)

    def __len__(self):
        return 2 * self.N + 1


def materialize(base: BaseSystem, anchor=0, N: int = 0) -> DrivingOrbit:
    """Cache the orbit of ``anchor`` on the window [-N, N]."""
    if not isinstance(base, BaseSystem):
        raise InvalidParameter(f"not a base system: {base!r}")
    if int(N) != N or N < 0:
        raise InvalidParameter(f"horizon N must be a nonnegative integer, got {N!r}")
    pts = tuple(base.step(anchor, k) for k in range(-N, N + 1))
    labels = tuple(base.label_of(p) for p in pts)
    return DrivingOrbit(base, pts[N], int(N), pts, labels)


def base_from_config(cfg: dict) -> BaseSystem:
    """Build a base system from its JSON configuration block."""
    try:
        kind = cfg["kind"]
        if kind == "FiniteCycle":
            return FiniteCycle(int(cfg["p"]))
        if kind == "CircleRotation":
            return CircleRotation(float(cfg["alpha"]))
        if kind == "IidSymbols":
            probs = cfg.get("probabilities")
            return IidSymbols(int(cfg["s"]), int(cfg["seed"]),
                              None if probs is None else tuple(probs),
                              int(cfg.get("horizon", DEFAULT_STREAM_HORIZON)))
        if kind == "MarkovSymbols":
            return MarkovSymbols(tuple(map(tuple, cfg["matrix"])), int(cfg["seed"]),
                                 cfg.get("start"), int(cfg.get("horizon", DEFAULT_STREAM_HORIZON)))
    except (KeyError, TypeError) as exc:
        raise InvalidParameter(f"malformed base config {cfg!r}: {exc}") from exc
    raise InvalidParameter(f"unknown base kind {cfg.get('kind')!r}")
