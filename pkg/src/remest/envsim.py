"""Synchronous collision-network simulator for remote estimation of random walks.

Every agent observes a Gauss-Markov source and caches the freshest known
sample of every other source in per-source virtual queues of size one. In
each slot an agent either stays silent or transmits one cached packet to one
neighbor; simultaneous transmissions into a receiver's neighborhood collide.
State, observation, action and reward surfaces follow the Dec-POMDP framing
used by the learning code.

Slot convention: the state at time k is the post-sampling snapshot of slot k
(agent i's own queue holds the slot-k sample at age 0). ``step`` resolves one
slot of synchronous transmissions against that snapshot, advances the sources
and returns the snapshot at time k+1. A packet accepted by a receiver
therefore arrives with the sender's age plus one (one-slot delivery delay),
and the age of every cached packet equals current time minus generation time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from .topology import Graph, LocalAdjacency, local_adjacency

NOISE_BLOCK = 1024

# Stream tags for the counter-based per-node noise.
_PURPOSE_SOURCE = 1


class EnvError(ValueError):
    """Raised for malformed actions or inconsistent simulator inputs."""


class GaussianIncrements:
    """Counter-based per-node noise: draw (node, slot) is a pure function of
    (seed, node_key, slot), so trajectories replay exactly and relabeling
    nodes (with their keys) permutes the noise stream."""

    def __init__(self, seed: int, node_keys: np.ndarray, sigma: float):
        self.seed = int(seed)
        self.node_keys = np.asarray(node_keys, dtype=np.int64)
        self.sigma = float(sigma)
        self._blocks: dict[int, np.ndarray] = {}

    def _block(self, block: int) -> np.ndarray:
        cached = self._blocks.get(block)
        if cached is None:
            rows = [self._node_block(int(k), block) for k in self.node_keys]
            cached = np.stack(rows, axis=0)
            self._blocks[block] = cached
        return cached

    def _node_block(self, node_key: int, block: int) -> np.ndarray:
        mask = (1 << 64) - 1
        hi = (self.seed ^ (_PURPOSE_SOURCE << 48)) & mask
        lo = (((node_key & 0xFFFFFFFF) << 32) | (block & 0xFFFFFFFF)) & mask
        gen = np.random.Generator(
            np.random.Philox(key=np.array([hi, lo], dtype=np.uint64)))
        return gen.standard_normal(NOISE_BLOCK) * self.sigma

    def at(self, slot: int) -> np.ndarray:
        """Increment vector applied when advancing to time ``slot``."""
        if slot < 1:
            raise EnvError("noise is indexed from slot 1")
        return self._block(slot // NOISE_BLOCK)[:, slot % NOISE_BLOCK]


@dataclass(frozen=True, eq=False)
class SourceProcess:
    """Random-walk sources: X[i] at the current slot, plus the noise stream."""

    values: np.ndarray
    sigma: float
    noise: GaussianIncrements

    @property
    def num_nodes(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class Action:
    """Decision pair: send the packet cached for source ``queue`` to node
    ``receiver``; receiver == agent means stay silent (queue must equal the
    agent index too)."""

    receiver: int
    queue: int

    @staticmethod
    def silent(agent: int) -> "Action":
        return Action(receiver=agent, queue=agent)


@dataclass(frozen=True, eq=False)
class EnvState:
    """Full simulator snapshot at time k (see module docstring).

    estimates[i, j] is agent i's reconstruction of source j; age[i, j] the
    slots since that packet's generation; gen_time/cached_value describe the
    packet in agent i's queue for source j. collision/delivered/accepted are
    the indicator slices of the slot that produced this state.
    """

    k: int
    sources: SourceProcess
    estimates: np.ndarray      # (M, M) float
    age: np.ndarray            # (M, M) int64
    gen_time: np.ndarray       # (M, M) int64
    cached_value: np.ndarray   # (M, M) float
    occupied: np.ndarray       # (M, M) int8
    collision: np.ndarray      # (M, M) int8
    delivered: np.ndarray      # (M, M, M) int8, [i, j, l]: i sent queue l to j
    accepted: np.ndarray       # (M, M) int8, delivery i->j strictly refreshed j
    graph: Graph

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes


@dataclass(frozen=True, eq=False)
class Observation:
    """The agent-indexed slices of the state available for local decisions.

    err_row carries the instantaneous squared estimation error of every
    source; it is the extra signal non-oblivious policies are allowed to use
    and is ignored by oblivious ones.
    """

    agent: int
    own_value: float
    est_row: np.ndarray        # (M,)
    age_row: np.ndarray        # (M,)
    collision_row: np.ndarray  # (M,)
    occupancy_row: np.ndarray  # (M,)
    delivery_slice: np.ndarray  # (M, M)
    local_adj: LocalAdjacency
    fresh_row: np.ndarray      # (M,) e-indicator: delivery was strictly fresher
    err_row: np.ndarray        # (M,)

    @property
    def num_nodes(self) -> int:
        return self.age_row.shape[0]

    @property
    def neighbor_row(self) -> np.ndarray:
        return self.local_adj.matrix[self.agent]


def reset(graph: Graph, sigma: float, seed: int,
          node_keys: Sequence[int] | None = None) -> EnvState:
    """Initial state: all sources, estimates and ages zero; every agent's own
    queue holds its (zero) time-0 sample."""
    if sigma <= 0:
        raise EnvError(f"sigma must be positive, got {sigma}")
    if not graph.is_connected():
        raise EnvError("environment requires a connected graph")
    m = graph.num_nodes
    keys = np.arange(m, dtype=np.int64) if node_keys is None \
        else np.asarray(node_keys, dtype=np.int64)
    if keys.shape != (m,):
        raise EnvError("node_keys must have one entry per node")
    noise = GaussianIncrements(seed, keys, sigma)
    sources = SourceProcess(values=np.zeros(m), sigma=float(sigma), noise=noise)
    occupied = np.eye(m, dtype=np.int8)
    return EnvState(
        k=0,
        sources=sources,
        estimates=np.zeros((m, m)),
        age=np.zeros((m, m), dtype=np.int64),
        gen_time=np.zeros((m, m), dtype=np.int64),
        cached_value=np.zeros((m, m)),
        occupied=occupied,
        collision=np.zeros((m, m), dtype=np.int8),
        delivered=np.zeros((m, m, m), dtype=np.int8),
        accepted=np.zeros((m, m), dtype=np.int8),
        graph=graph,
    )


def validate_actions(state: EnvState, actions: Sequence[Action]) -> None:
    m = state.num_nodes
    if len(actions) != m:
        raise EnvError(f"expected {m} actions, got {len(actions)}")
    adj = state.graph.adjacency
    for i, act in enumerate(actions):
        mu, nu = act.receiver, act.queue
        if not (0 <= mu < m and 0 <= nu < m):
            raise EnvError(f"agent {i}: action ({mu}, {nu}) out of range")
        if mu == i:
            if nu != i:
                raise EnvError(f"agent {i}: silent action must use queue {i}, got {nu}")
        else:
            if adj[i, mu] != 1:
                raise EnvError(f"agent {i}: receiver {mu} is not a neighbor")
            if state.occupied[i, nu] != 1:
                raise EnvError(f"agent {i}: queue {nu} is empty")


def step(state: EnvState, actions: Sequence[Action], reward_mode: str = "error",
         validate: bool = True) -> tuple[EnvState, float]:
    """Execute one slot of synchronous transmissions.

    A transmission i->j succeeds iff no other transmitter sits in j's closed
    neighborhood (receiver-centric protocol interference; a transmitting j
    cannot receive). A successful delivery replaces the receiver's cached
    packet only if strictly fresher (smaller age); otherwise it is discarded.
    Reward is the negated mean squared estimation error in "error" mode, the
    negated mean age in "age" mode, both over all M^2 (agent, source) pairs.
    ``validate=False`` skips the action-invariant checks on hot paths whose
    actions are valid by construction.
    """
    if reward_mode not in ("error", "age"):
        raise EnvError(f"unknown reward mode {reward_mode!r}")
    if validate:
        validate_actions(state, actions)
    m = state.num_nodes

    receivers = np.fromiter((a.receiver for a in actions), dtype=np.int64,
                            count=m)
    transmitting = receivers != np.arange(m)

    # interference[j]: transmitters inside j's closed neighborhood.
    interference = state.graph.closed_neighborhood @ transmitting

    collision = np.zeros((m, m), dtype=np.int8)
    delivered = np.zeros((m, m, m), dtype=np.int8)
    accepted = np.zeros((m, m), dtype=np.int8)

    new_age = state.age + 1
    gen_time = state.gen_time.copy()
    cached = state.cached_value.copy()
    estimates = state.estimates.copy()
    occupied = state.occupied.copy()

    # Resolve deliveries against the slot-k snapshot. The collision rule
    # admits at most one successful transmission per receiver, so the
    # acceptance comparisons below never race.
    old_age = state.age
    for i in np.flatnonzero(transmitting):
        j, ell = int(receivers[i]), actions[i].queue
        if interference[j] == 1:  # only transmitter i itself in range
            delivered[i, j, ell] = 1
            if old_age[i, ell] < old_age[j, ell]:
                accepted[i, j] = 1
                new_age[j, ell] = old_age[i, ell] + 1
                gen_time[j, ell] = state.gen_time[i, ell]
                cached[j, ell] = state.cached_value[i, ell]
                estimates[j, ell] = state.cached_value[i, ell]
                occupied[j, ell] = 1
        else:
            collision[i, j] = 1

    # Advance the sources and refresh every agent's own queue with the new
    # sample (generation time = new slot, age 0).
    k_new = state.k + 1
    values = state.sources.values + state.sources.noise.at(k_new)
    diag = np.arange(m)
    new_age[diag, diag] = 0
    gen_time[diag, diag] = k_new
    cached[diag, diag] = values
    estimates[diag, diag] = values
    occupied[diag, diag] = 1

    new_state = EnvState(
        k=k_new,
        sources=SourceProcess(values=values, sigma=state.sources.sigma,
                              noise=state.sources.noise),
        estimates=estimates,
        age=new_age,
        gen_time=gen_time,
        cached_value=cached,
        occupied=occupied,
        collision=collision,
        delivered=delivered,
        accepted=accepted,
        graph=state.graph,
    )

    if reward_mode == "error":
        reward = -float(np.mean((values[None, :] - estimates) ** 2))
    else:
        reward = -float(np.mean(new_age))
    return new_state, reward


def observe(state: EnvState, agent: int) -> Observation:
    m = state.num_nodes
    if not 0 <= agent < m:
        raise EnvError(f"agent index {agent} out of range for M={m}")
    err = (state.sources.values - state.estimates[agent]) ** 2
    return Observation(
        agent=agent,
        own_value=float(state.sources.values[agent]),
        est_row=state.estimates[agent].copy(),
        age_row=state.age[agent].copy(),
        collision_row=state.collision[agent].copy(),
        occupancy_row=state.occupied[agent].copy(),
        delivery_slice=state.delivered[agent].copy(),
        local_adj=local_adjacency(state.graph, agent),
        fresh_row=state.accepted[agent].copy(),
        err_row=err,
    )


@dataclass(frozen=True, eq=False)
class MetricsAccumulator:
    """Running ASEE and age sums, normalized by M^2 * horizon."""

    horizon: int
    num_nodes: int
    err_sum: float = 0.0
    age_sum: float = 0.0
    slots_seen: int = 0

    @property
    def asee_partial(self) -> float:
        return self.err_sum / (self.num_nodes ** 2 * self.horizon)

    @property
    def age_partial(self) -> float:
        return self.age_sum / (self.num_nodes ** 2 * self.horizon)


def accumulate_metrics(acc: MetricsAccumulator, state: EnvState) -> MetricsAccumulator:
    values = state.sources.values
    err = float(np.sum((values[None, :] - state.estimates) ** 2))
    return MetricsAccumulator(
        horizon=acc.horizon,
        num_nodes=acc.num_nodes,
        err_sum=acc.err_sum + err,
        age_sum=acc.age_sum + float(np.sum(state.age)),
        slots_seen=acc.slots_seen + 1,
    )


# --- trajectory trace export ------------------------------------------------
#
# JSON-lines schema, one record per line:
#   header: {"type": "header", "m": int, "edges": [[u, v], ...],
#            "sigma": float, "seed": int, "reward_mode": str}
#   slot:   {"slot": int, "actions": [[mu, nu], ...],
#            "deliveries": [[i, j, l], ...], "collisions": [[i, j], ...],
#            "reward": float}


def trace_header(state: EnvState, reward_mode: str, seed: int) -> dict:
    return {
        "type": "header",
        "m": state.num_nodes,
        "edges": [[int(u), int(v)] for u, v in state.graph.edges],
        "sigma": state.sources.sigma,
        "seed": int(seed),
        "reward_mode": reward_mode,
    }


def trace_record(slot: int, actions: Sequence[Action], state_after: EnvState,
                 reward: float) -> dict:
    deliveries = [[int(i), int(j), int(l)]
                  for i, j, l in zip(*np.nonzero(state_after.delivered))]
    collisions = [[int(i), int(j)]
                  for i, j in zip(*np.nonzero(state_after.collision))]
    return {
        "slot": int(slot),
        "actions": [[int(a.receiver), int(a.queue)] for a in actions],
        "deliveries": deliveries,
        "collisions": collisions,
        "reward": float(reward),
    }


def write_trace(handle: IO[str], records: Iterable[dict]) -> None:
    for rec in records:
        handle.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_trace(handle: IO[str]) -> list[dict]:
    return [json.loads(line) for line in handle if line.strip()]
