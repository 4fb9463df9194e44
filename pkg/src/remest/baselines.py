"""Closed-form decentralized transmission policies used as comparison anchors.

Both policies are oblivious: they read only queue occupancy, cached ages and
the local neighborhood, never the monitored values or estimates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envsim import Action, Observation


class PolicyError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ActionDistribution:
    """Probabilities over an agent's action cells.

    transmit[j, l] is the probability of sending the packet cached for source
    l to receiver j; ``silent`` is the probability of not transmitting.
    Invalid cells (non-neighbors, empty queues, j == agent) carry zero mass
    and the total sums to one.
    """

    agent: int
    transmit: np.ndarray  # (M, M)
    silent: float

    def __post_init__(self):
        total = float(self.transmit.sum()) + self.silent
        if abs(total - 1.0) > 1e-9:
            raise PolicyError(f"probabilities sum to {total}, expected 1")
        if self.silent < 0 or np.any(self.transmit < 0):
            raise PolicyError("negative probability")

    @property
    def num_nodes(self) -> int:
        return self.transmit.shape[0]

    def prob(self, action: Action) -> float:
        if action.receiver == self.agent:
            return self.silent
        return float(self.transmit[action.receiver, action.queue])

    def sample(self, rng: np.random.Generator) -> Action:
        u = rng.random()
        if u < self.silent:
            return Action.silent(self.agent)
        u -= self.silent
        flat = self.transmit.ravel()
        cum = np.cumsum(flat)
        idx = int(np.searchsorted(cum, u, side="right"))
        idx = min(idx, flat.size - 1)
        j, ell = divmod(idx, self.num_nodes)
        return Action(receiver=j, queue=ell)


def uniform_policy(obs: Observation) -> ActionDistribution:
    """Equal probability over silence and every (cached packet, neighbor) pair."""
    m = obs.num_nodes
    neighbors = obs.neighbor_row.astype(float)
    occupancy = obs.occupancy_row.astype(float)
    n_r = neighbors.sum()
    n_q = occupancy.sum()
    denom = 1.0 + n_q * n_r
    transmit = np.outer(neighbors, occupancy) / denom
    transmit[obs.agent, :] = 0.0  # receiver must differ from the agent
    return ActionDistribution(agent=obs.agent, transmit=transmit,
                              silent=1.0 / denom)


def uniform_actions(state, rng: np.random.Generator) -> list[Action]:
    """Draw one uniform-policy action per agent straight from the state.

    Distributionally identical to sampling ``uniform_policy`` per agent
    (silence with probability 1/(1 + n_q * n_r), every (packet, receiver)
    pair equally likely otherwise), but avoids building M observation
    objects; used by long Monte-Carlo runs.
    """
    m = state.num_nodes
    neighbor_lists = state.graph.neighbor_lists
    draws = rng.random((m, 3))
    actions = []
    for i in range(m):
        nbrs = neighbor_lists[i]
        packs = np.flatnonzero(state.occupied[i])
        denom = 1.0 + packs.size * nbrs.size
        if draws[i, 0] < 1.0 / denom:
            actions.append(Action.silent(i))
            continue
        j = int(nbrs[min(int(draws[i, 1] * nbrs.size), nbrs.size - 1)])
        ell = int(packs[min(int(draws[i, 2] * packs.size), packs.size - 1)])
        actions.append(Action(receiver=j, queue=ell))
    return actions


def adaptive_age_policy(obs: Observation, epsilon: float = 1.0) -> ActionDistribution:
    """Favor fresher packets: packet weight exp(1/(age+1)), receiver uniform.

    Silence competes with weight exp(epsilon); ages are shifted by one so the
    weight stays finite at age zero.
    """
    if epsilon <= 0:
        raise PolicyError(f"epsilon must be positive, got {epsilon}")
    m = obs.num_nodes
    neighbors = obs.neighbor_row.astype(float)
    occupancy = obs.occupancy_row.astype(float)
    n_r = neighbors.sum()
    if n_r == 0:
        return ActionDistribution(agent=obs.agent, transmit=np.zeros((m, m)),
                                  silent=1.0)
    weights = occupancy * np.exp(1.0 / (obs.age_row.astype(float) + 1.0))
    denom = np.exp(epsilon) + weights.sum()
    transmit = np.outer(neighbors / n_r, weights) / denom
    transmit[obs.agent, :] = 0.0
    return ActionDistribution(agent=obs.agent, transmit=transmit,
                              silent=float(np.exp(epsilon) / denom))
