"""Random active-set generation simulating unreliable agent transmission.

Each iteration, agent ``i`` reports in with probability ``p``,
independently of the other agents. Reproducibility matters more here
than raw speed, so inclusion decisions come from a stateless SplitMix64
hash of ``(seed, k, i)``: the same triple gives the same decision on
every platform, regardless of execution order or parallelism, and a
trace prefix is unchanged by extending the run.

Decision rule: ``u = (mix(mix(mix(seed) ^ k) ^ i) >> 11) * 2**-53`` and
agent ``i`` is active iff ``u < p``. Agents are indexed 0..N-1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PollingConfig",
    "ActiveSet",
    "draw_active_set",
    "verify_coverage",
    "inclusion_uniform",
]

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
# domain separation for the fixed-size sampler's shuffle stream: keys must
# not collide with agent indices, which stay far below 2**32
_SHUFFLE_BASE = 1 << 32


def _mix64(z: int) -> int:
    """SplitMix64 output function on a 64-bit state (one golden-ratio step)."""
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def inclusion_uniform(seed: int, k: int, i: int) -> float:
    """The 53-bit uniform in [0, 1) addressed by (seed, k, i)."""
    z = _mix64(_mix64(_mix64(seed & _MASK64) ^ (k & _MASK64)) ^ (i & _MASK64))
    return (z >> 11) * 2.0**-53


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z + np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def inclusion_uniform_array(seed: int, ks, idx) -> np.ndarray:
    """Vectorized `inclusion_uniform` over broadcastable k and i arrays."""
    ks = np.asarray(ks, dtype=np.uint64)
    idx = np.asarray(idx, dtype=np.uint64)
    base = np.uint64(_mix64(seed & _MASK64))
    z = _mix64_array(_mix64_array(base ^ ks) ^ idx)
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53


@dataclass(frozen=True)
class PollingConfig:
    """How active sets are drawn.

    p : inclusion probability in (0, 1]
    seed : 64-bit key of the polling stream
    force_full_first_round : poll everyone at k=1 so that every slate is
        populated before stale values can enter a coordination
    mode : "bernoulli" (default), "fixed_size" (exactly `size` agents),
        or "full" (everyone, every iteration)
    """

    p: float = 1.0
    seed: int = 0
    force_full_first_round: bool = True
    mode: str = "bernoulli"
    size: int | None = None

    def __post_init__(self):
        if not (0.0 < self.p <= 1.0):
            raise ValueError(f"p must lie in (0, 1], got {self.p}")
        if self.mode not in ("bernoulli", "fixed_size", "full"):
            raise ValueError(f"unknown polling mode {self.mode!r}")
        if self.mode == "fixed_size":
            if self.size is None or self.size < 1:
                raise ValueError(f"fixed_size mode needs size >= 1, got {self.size}")
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)

    def describe(self) -> dict:
        d = {
            "p": self.p,
            "seed": self.seed,
            "force_full_first_round": self.force_full_first_round,
            "mode": self.mode,
        }
        if self.size is not None:
            d["size"] = self.size
        return d


@dataclass(frozen=True)
class ActiveSet:
    """The agents polled at iteration k (sorted, duplicate-free, 0-based)."""

    k: int
    members: tuple[int, ...] = field(default_factory=tuple)

    def __contains__(self, i: int) -> bool:
        return i in self.members

    def __iter__(self):
        return iter(self.members)

    def __len__(self) -> int:
        return len(self.members)


def draw_active_set(cfg: PollingConfig, N: int, k: int) -> ActiveSet:
    """Draw the iteration-k active set for N agents.

    Empty sets are legitimate outcomes in bernoulli mode: the
    coordination step is well-defined (and a fixed point) on fully
    stale slates, so nothing is redrawn.
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if k < 1:
        raise ValueError(f"iteration index must be >= 1, got {k}")
    if cfg.mode == "full" or (k == 1 and cfg.force_full_first_round):
        return ActiveSet(k=k, members=tuple(range(N)))
    if cfg.mode == "bernoulli":
        u = inclusion_uniform_array(cfg.seed, np.full(N, k, dtype=np.uint64), np.arange(N))
        members = tuple(int(i) for i in np.nonzero(u < cfg.p)[0])
        return ActiveSet(k=k, members=members)
    # fixed_size: partial Fisher-Yates over 0..N-1 driven by the shuffle stream
    if cfg.size > N:
        raise ValueError(f"fixed_size size={cfg.size} exceeds N={N}")
    idx = list(range(N))
    for j in range(cfg.size):
        u = inclusion_uniform(cfg.seed, k, _SHUFFLE_BASE + j)
        r = j + int(u * (N - j))
        idx[j], idx[r] = idx[r], idx[j]
    return ActiveSet(k=k, members=tuple(sorted(idx[: cfg.size])))


def verify_coverage(sets: list[ActiveSet], N: int) -> list[int]:
    """Agents that never appeared in any of the given active sets.

    An empty return value certifies the coverage condition: every agent
    was updated at least once over the horizon.
    """
    if not sets:
        raise ValueError("need at least one active set")
    seen: set[int] = set()
    for s in sets:
        seen.update(s.members)
    return [i for i in range(N) if i not in seen]
