"""Actor inputs, shared GRNN actor with bilinear action head, IPPO/MAPPO critics.

All forward paths are batched: signals (..., M, F), shift operators
(..., M, M), and they accept autodiff Vars for parameters during training.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .envsim import Action, EnvState, Observation
from .neuralcore import (FilterBank, GRNNLayerParams, NeuralError, filter_apply,
                         grnn_forward, init_filter_bank, init_grnn_layers,
                         layers_from_named, layers_to_named)

NONOBLIVIOUS_FEATURES = 5
OBLIVIOUS_FEATURES = 4


@dataclass(frozen=True, eq=False)
class ActorInput:
    """Graph-signal input for one agent: one feature row per node, plus the
    agent's star-shaped local adjacency as shift operator."""

    agent: int
    features: np.ndarray  # (M, F0)
    gso: np.ndarray       # (M, M)


def build_actor_input(obs: Observation, oblivious: bool) -> ActorInput:
    """Node features per source j: [squared error,] age, collision flag,
    neighbor flag, fresh-delivery flag. The error column is dropped for
    oblivious policies so they cannot read process values."""
    cols = [
        obs.age_row.astype(float),
        obs.collision_row.astype(float),
        obs.local_adj.matrix[:, obs.agent].astype(float),
        obs.fresh_row.astype(float),
    ]
    if not oblivious:
        cols.insert(0, obs.err_row.astype(float))
    features = np.stack(cols, axis=1)
    return ActorInput(agent=obs.agent,
                      features=features,
                      gso=obs.local_adj.matrix.astype(float))


def actor_features_all(state: EnvState, oblivious: bool) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``build_actor_input`` over all agents.

    Returns (features, gsos) with shapes (M, M, F0) and (M, M, M); slice i
    matches build_actor_input(observe(state, i), oblivious).
    """
    m = state.num_nodes
    adj = state.graph.adjacency.astype(float)
    cols = [
        state.age.astype(float),
        state.collision.astype(float),
        np.broadcast_to(adj, (m, m)).copy(),  # row i == neighbor flags of agent i
        state.accepted.astype(float),
    ]
    if not oblivious:
        err = (state.sources.values[None, :] - state.estimates) ** 2
        cols.insert(0, err)
    features = np.stack(cols, axis=2)
    gsos = np.zeros((m, m, m))
    idx = np.arange(m)
    gsos[idx, idx, :] = adj
    gsos[idx, :, idx] = adj
    return features, gsos


def action_mask(neighbor_row: np.ndarray, occupancy_row: np.ndarray,
                agent: int) -> np.ndarray:
    """Valid-cell predicate over the (receiver, queue) grid. Cell (j, l) is a
    transmission of queue l to neighbor j; the diagonal cell (agent, agent)
    is the always-valid silent action."""
    valid = np.outer(neighbor_row.astype(bool), occupancy_row.astype(bool))
    valid[agent, :] = False
    valid[agent, agent] = True
    return valid


def action_masks_all(state: EnvState) -> np.ndarray:
    """(M, M, M) stack of per-agent action masks."""
    m = state.num_nodes
    adj = state.graph.adjacency.astype(bool)
    occ = state.occupied.astype(bool)
    masks = adj[:, :, None] & occ[:, None, :]
    idx = np.arange(m)
    masks[idx, idx, :] = False
    masks[idx, idx, idx] = True
    return masks


def obs_action_mask(obs: Observation) -> np.ndarray:
    return action_mask(obs.neighbor_row, obs.occupancy_row, obs.agent)


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """Shared actor parameters: GRNN layer stack plus the bilinear head."""

    layers: tuple
    delta: np.ndarray  # (F_L, F_L)

    @property
    def embed_dim(self) -> int:
        return ad.value_of(self.delta).shape[0]


def init_policy_params(rng: np.random.Generator, oblivious: bool,
                       width: int = 64, num_layers: int = 2, rounds: int = 2,
                       order: int = 2, embed_dim: int | None = None,
                       dtype=np.float64) -> PolicyParams:
    f0 = OBLIVIOUS_FEATURES if oblivious else NONOBLIVIOUS_FEATURES
    fl = width if embed_dim is None else embed_dim
    dims = [f0] + [width] * (num_layers - 1) + [fl]
    layers = init_grnn_layers(rng, dims, width, rounds=rounds, order=order,
                              dtype=dtype)
    delta = (rng.standard_normal((fl, fl)) / np.sqrt(fl)).astype(dtype)
    return PolicyParams(layers=tuple(layers), delta=delta)


def actor_embedding(params: PolicyParams, gso, x):
    return grnn_forward(params.layers, gso, x)


def action_logits(embedding, delta, mask: np.ndarray | None = None):
    """Bilinear head V Delta V^T over node embeddings; invalid cells are
    masked downstream (kept finite here so gradients stay clean)."""
    logits = ad.matmul(ad.matmul(embedding, delta), ad.transpose_last2(embedding))
    if mask is not None and ad.value_of(logits).shape != mask.shape:
        raise NeuralError("mask shape does not match logits")
    return logits


def masked_log_probs(logits, mask: np.ndarray):
    """Log-probabilities over flattened valid cells: (..., M, M) -> (..., M*M)."""
    shape = ad.value_of(logits).shape
    flat = ad.reshape(logits, shape[:-2] + (shape[-2] * shape[-1],))
    flat_mask = mask.reshape(shape[:-2] + (shape[-2] * shape[-1],))
    return ad.masked_log_softmax(flat, flat_mask, axis=-1)


def sample_action(logits: np.ndarray, mask: np.ndarray, rng: np.random.Generator,
                  agent: int) -> tuple[Action, float]:
    """Draw one action from the masked softmax; returns its exact log-prob."""
    if not np.all(np.isfinite(logits[mask])):
        raise NeuralError("non-finite logits at valid cells")
    m = logits.shape[-1]
    logp = masked_log_probs(logits, mask)
    probs = np.exp(logp)
    cum = np.cumsum(probs)
    idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    idx = min(idx, probs.size - 1)
    while not mask.ravel()[idx]:  # guard against roundoff landing on a masked cell
        idx -= 1
    j, ell = divmod(idx, m)
    return Action(receiver=int(j), queue=int(ell)), float(logp[idx])


def policy_to_named(params: PolicyParams) -> dict[str, np.ndarray]:
    named = layers_to_named(params.layers, prefix="actor.layer")
    named["actor.delta"] = params.delta
    return named


def policy_from_named(named: dict, template: PolicyParams) -> PolicyParams:
    layers = layers_from_named(named, template.layers, prefix="actor.layer")
    return PolicyParams(layers=tuple(layers), delta=named["actor.delta"])


# --- IPPO critic ---------------------------------------------------------------

def init_ippo_critic(rng: np.random.Generator, oblivious: bool, width: int = 64,
                     num_layers: int = 2, order: int = 2,
                     dtype=np.float64) -> tuple:
    """Actor-shaped GRNN stack with recurrence removed (one round) and a
    scalar output feature."""
    f0 = OBLIVIOUS_FEATURES if oblivious else NONOBLIVIOUS_FEATURES
    dims = [f0] + [width] * (num_layers - 1) + [1]
    return tuple(init_grnn_layers(rng, dims, width, rounds=1, order=order,
                                  dtype=dtype))


def critic_value_ippo(layers: Sequence[GRNNLayerParams], gso, x):
    """Mean-pooled scalar value from the agent's local observation signal.
    The final layer output is linear so values are unconstrained in sign."""
    out = grnn_forward(layers, gso, x, act_out="identity")
    return ad.reduce_mean(out, axis=(-2, -1))


def layers_to_named_critic(layers: Sequence[GRNNLayerParams],
                           agent: int) -> dict[str, np.ndarray]:
    return layers_to_named(layers, prefix=f"critic{agent}.layer")


# --- MAPPO critic ----------------------------------------------------------------

MAPPO_ROUNDS = 2


@dataclass(frozen=True, eq=False)
class MappoCriticParams:
    """Edge-featured message passing over the complete 'general edge' graph:
    real and virtual edges are distinguished only by the adjacency flag inside
    the edge features."""

    w_node: np.ndarray   # (1, H)
    b_node: np.ndarray   # (H,)
    w_edge: np.ndarray   # (Fe, H)
    b_edge: np.ndarray   # (H,)
    w_rounds: tuple      # MAPPO_ROUNDS x (H, H)
    b_rounds: tuple      # MAPPO_ROUNDS x (H,)
    w_out: np.ndarray    # (H, 1)
    b_out: np.ndarray    # (1,)


def init_mappo_critic(rng: np.random.Generator, oblivious: bool,
                      width: int = 64, dtype=np.float64) -> MappoCriticParams:
    fe = OBLIVIOUS_FEATURES if oblivious else NONOBLIVIOUS_FEATURES
    h = width

    def mat(f_in, f_out, scale):
        return (rng.standard_normal((f_in, f_out)) * scale).astype(dtype)

    return MappoCriticParams(
        w_node=mat(1, h, 1.0),
        b_node=np.zeros(h, dtype=dtype),
        w_edge=mat(fe, h, 1.0 / np.sqrt(fe)),
        b_edge=np.zeros(h, dtype=dtype),
        w_rounds=tuple(mat(h, h, 1.0 / np.sqrt(h)) for _ in range(MAPPO_ROUNDS)),
        b_rounds=tuple(np.zeros(h, dtype=dtype) for _ in range(MAPPO_ROUNDS)),
        w_out=mat(h, 1, 1.0 / np.sqrt(h)),
        b_out=np.zeros(1, dtype=dtype),
    )


def mappo_features(state: EnvState, oblivious: bool) -> tuple[np.ndarray, np.ndarray]:
    """Training-time critic inputs from the full state: node feature = degree,
    edge feature (i, j) = the same descriptor the actor sees for source j,
    with the full-graph adjacency flag marking real versus virtual edges."""
    m = state.num_nodes
    adj = state.graph.adjacency.astype(float)
    node = adj.sum(axis=1, keepdims=True)
    cols = [
        state.age.astype(float),
        state.collision.astype(float),
        adj,
        state.accepted.astype(float),
    ]
    if not oblivious:
        err = (state.sources.values[None, :] - state.estimates) ** 2
        cols.insert(0, err)
    edge = np.stack(cols, axis=2)
    return node, edge


def critic_value_mappo(params: MappoCriticParams, node, edge):
    """Two rounds of sum-aggregated messages (neighbor embedding + encoded
    edge feature), then a mean-pooled scalar readout.

    node: (..., M, 1), edge: (..., M, M, Fe).
    """
    node_v = ad.value_of(node)
    m = node_v.shape[-2]
    not_self = (1.0 - np.eye(m)).reshape((1,) * (node_v.ndim - 2) + (m, m, 1))

    x = ad.relu(ad.add(ad.matmul(node, params.w_node), params.b_node))
    edge_enc = ad.add(ad.matmul(edge, params.w_edge), params.b_edge)
    for w_r, b_r in zip(params.w_rounds, params.b_rounds):
        # x[..., j, :] broadcast against receiver axis i of the edge tensor
        neighbor = ad.reshape(x, node_v.shape[:-2] + (1, m, -1))
        msg = ad.mul(ad.relu(ad.add(neighbor, edge_enc)), not_self)
        agg = ad.reduce_sum(msg, axis=-2)
        x = ad.relu(ad.add(ad.matmul(ad.add(x, agg), w_r), b_r))
    out = ad.add(ad.matmul(x, params.w_out), params.b_out)
    return ad.reduce_mean(out, axis=(-2, -1))


def mappo_to_named(params: MappoCriticParams) -> dict[str, np.ndarray]:
    named = {
        "critic.node.w": params.w_node,
        "critic.node.b": params.b_node,
        "critic.edge.w": params.w_edge,
        "critic.edge.b": params.b_edge,
        "critic.out.w": params.w_out,
        "critic.out.b": params.b_out,
    }
    for r, (w, b) in enumerate(zip(params.w_rounds, params.b_rounds)):
        named[f"critic.round{r}.w"] = w
        named[f"critic.round{r}.b"] = b
    return named


def mappo_from_named(named: dict, template: MappoCriticParams) -> MappoCriticParams:
    return MappoCriticParams(
        w_node=named["critic.node.w"],
        b_node=named["critic.node.b"],
        w_edge=named["critic.edge.w"],
        b_edge=named["critic.edge.b"],
        w_rounds=tuple(named[f"critic.round{r}.w"]
                       for r in range(len(template.w_rounds))),
        b_rounds=tuple(named[f"critic.round{r}.b"]
                       for r in range(len(template.b_rounds))),
        w_out=named["critic.out.w"],
        b_out=named["critic.out.b"],
    )
