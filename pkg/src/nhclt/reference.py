"""Canonical fixtures: the parity counterexample and seeded random instances."""

from dataclasses import dataclass

import numpy as np

from .decomposition import ChainLaw, RewardFunctionArray
from .kernels import KernelSequence, StateGrid, StochasticKernel, sequence_from_dict, sequence_to_dict

KERNEL_FLOOR = 0.05


@dataclass(frozen=True)
class InstanceBundle:
    law: ChainLaw
    rewards: RewardFunctionArray
    provenance: str

    def __post_init__(self):
        if self.law.n != self.rewards.n or self.law.m != self.rewards.m:
            raise ValueError("law and rewards disagree on horizon or look-ahead")
        if self.rewards.tensors[0].shape[0] != len(self.law.grid):
            raise ValueError("reward tensors do not match the grid")

    def to_dict(self):
        doc = sequence_to_dict(self.law.seq)
        doc["initial"] = self.law.initial.tolist()
        doc["rewards"] = [t.tolist() for t in self.rewards.tensors]
        doc["provenance"] = self.provenance
        return doc

    @classmethod
    def from_dict(cls, doc):
        """Inverse of ``to_dict``; ``provenance`` defaults to "explicit"."""
        seq = sequence_from_dict(doc)
        tensors = tuple(np.asarray(t, dtype=float) for t in doc["rewards"])
        expected = (len(seq.grid),) * (1 + seq.lookahead)
        if len(tensors) != seq.horizon or any(t.shape != expected for t in tensors):
            raise ValueError(f"need {seq.horizon} reward tensors of shape {expected}")
        law = ChainLaw(np.asarray(doc["initial"], dtype=float), seq)
        rewards = RewardFunctionArray(tensors, seq.horizon, seq.lookahead)
        return cls(law, rewards, doc.get("provenance", "explicit"))


def parity_counterexample(n, grid=(0.0, 1.0), weights=None):
    """i.i.d. chain with Z_i = X_i for even i and -X_{i+1} for odd i.

    Consecutive rewards cancel, so S_n is 0 for even n and -X_{n+1} for odd
    n although every single reward has variance Var[X].
    """
    grid = grid if isinstance(grid, StateGrid) else StateGrid(grid)
    s = len(grid)
    if s < 2:
        raise ValueError("parity counterexample needs at least two grid points")
    p = np.full(s, 1.0 / s) if weights is None else np.asarray(weights, dtype=float)
    if p.shape != (s,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError("weights must be a probability vector on the grid")
    x = grid.points
    if p @ (x - p @ x) ** 2 <= 0:
        raise ValueError("the state distribution must have positive variance")
    K = StochasticKernel(grid, np.tile(p, (s, 1)))
    seq = KernelSequence(grid, (K,) * n, n, 1)
    plus = np.repeat(x[:, None], s, axis=1)
    minus = -np.repeat(x[None, :], s, axis=0)
    tensors = tuple(plus if i % 2 == 0 else minus for i in range(1, n + 1))
    return InstanceBundle(ChainLaw(p, seq), RewardFunctionArray(tensors, n, 1), "counterexample")


def random_instance(seed, states=3, n=5, m=0, reward_scale=1.0):
    """Seeded instance with kernel entries bounded below by ``KERNEL_FLOOR``."""
    if states < 2:
        raise ValueError("need at least two states")
    if m not in (0, 1):
        raise ValueError("random instances use m in {0, 1}")
    if states * KERNEL_FLOOR >= 1:
        raise ValueError(f"at most {int(1 / KERNEL_FLOOR) - 1} states fit the kernel floor")
    rng = np.random.default_rng(seed)
    grid = StateGrid(np.arange(states, dtype=float))
    free = 1.0 - states * KERNEL_FLOOR
    kernels = tuple(
        StochasticKernel(grid, KERNEL_FLOOR + free * rng.dirichlet(np.ones(states), size=states))
        for _ in range(n + m - 1)
    )
    initial = rng.dirichlet(np.ones(states))
    shape = (states,) * (1 + m)
    tensors = tuple(rng.uniform(-reward_scale, reward_scale, size=shape) for _ in range(n))
    law = ChainLaw(initial, KernelSequence(grid, kernels, n, m))
    return InstanceBundle(law, RewardFunctionArray(tensors, n, m), f"random({seed})")
