"""IPPO / MAPPO training: rollouts, advantage estimation, clipped updates.

The actor is parameter-shared across agents. IPPO gives every agent a
distinct local critic; MAPPO trains one centralized critic on the full state.
Everything is deterministic given (config, seed): all randomness flows from
SeedSequence-derived streams keyed by purpose tags.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import envsim, policy as pol
from .baselines import adaptive_age_policy, uniform_policy
from .envsim import Action, EnvState, MetricsAccumulator, accumulate_metrics
from .neuralcore import Adam, SGD, clip_grad_norm, layers_from_named
from .topology import Graph, gen_watts_strogatz

# purpose tags for derived seed streams
_TAG_GRAPH, _TAG_ENV, _TAG_ACT, _TAG_INIT, _TAG_SHUFFLE = 11, 12, 13, 17, 18
_TAG_EVAL_GRAPH, _TAG_EVAL_ENV, _TAG_EVAL_ACT = 14, 15, 16


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0])


def derive_rng(*parts: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(parts)))


class TrainError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    algo: str = "mappo"               # "ippo" | "mappo"
    oblivious: bool = False
    gamma: float = 0.99
    learning_rate: float = 3e-4
    batch_episodes: int = 10
    horizon: int = 1024
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs_per_update: int = 4
    eval_every: int = 10
    eval_graphs: int = 30
    episodes: int = 300
    sigma: float = 1.0
    seed: int = 0
    # architecture (width/layers/rounds per the reference hyperparameters)
    width: int = 64
    num_layers: int = 2
    rounds: int = 2
    filter_order: int = 2
    # PPO specifics not fixed by the reference tables
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    grad_clip: float = 0.5
    normalize_advantages: bool = True
    minibatch_size: int = 2048
    optimizer: str = "adam"           # "adam" | "sgd"
    dtype: str = "float32"            # training arithmetic; tests use float64

    def __post_init__(self):
        if self.algo not in ("ippo", "mappo"):
            raise TrainError(f"unknown algo {self.algo!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise TrainError("gamma must be in [0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise TrainError("gae_lambda must be in [0, 1]")
        if self.clip_eps <= 0:
            raise TrainError("clip_eps must be positive")

    @property
    def reward_mode(self) -> str:
        return "age" if self.oblivious else "error"

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass(eq=False)
class RolloutBuffer:
    """One episode of agent records; rewards are shared across agents."""

    features: np.ndarray      # (T, M, M, F0)
    gsos: np.ndarray          # (M, M, M) static within the episode
    masks: np.ndarray         # (T, M, M*M) bool
    action_idx: np.ndarray    # (T, M) flat cell index
    log_probs: np.ndarray     # (T, M)
    rewards: np.ndarray       # (T,)
    values_agents: np.ndarray | None = None   # (T, M) for IPPO
    values_slots: np.ndarray | None = None    # (T,) for MAPPO
    critic_node: np.ndarray | None = None     # (T, M, 1)
    critic_edge: np.ndarray | None = None     # (T, M, M, Fe)

    @property
    def horizon(self) -> int:
        return self.features.shape[0]

    @property
    def num_agents(self) -> int:
        return self.features.shape[1]


@dataclass(eq=False)
class TrainState:
    """Mutable parameter bundle for one run."""

    cfg: TrainConfig
    policy: pol.PolicyParams
    ippo_critics: tuple | None            # per-agent GRNN layer stacks
    mappo_critic: pol.MappoCriticParams | None
    actor_named: dict
    critic_named: dict
    actor_opt: object
    critic_opt: object


def init_train_state(cfg: TrainConfig, num_agents: int) -> TrainState:
    dtype = cfg.np_dtype
    rng = derive_rng(cfg.seed, _TAG_INIT)
    params = pol.init_policy_params(
        rng, cfg.oblivious, width=cfg.width, num_layers=cfg.num_layers,
        rounds=cfg.rounds, order=cfg.filter_order, dtype=dtype)
    actor_named = pol.policy_to_named(params)

    ippo_critics = None
    mappo_critic = None
    critic_named: dict = {}
    if cfg.algo == "ippo":
        critics = []
        for i in range(num_agents):
            layers = pol.init_ippo_critic(
                rng, cfg.oblivious, width=cfg.width, num_layers=cfg.num_layers,
                order=cfg.filter_order, dtype=dtype)
            critics.append(layers)
            for name, arr in pol.layers_to_named_critic(layers, i).items():
                critic_named[name] = arr
        ippo_critics = tuple(critics)
    else:
        mappo_critic = pol.init_mappo_critic(rng, cfg.oblivious,
                                             width=cfg.width, dtype=dtype)
        critic_named = pol.mappo_to_named(mappo_critic)

    opt_cls = Adam if cfg.optimizer == "adam" else SGD
    return TrainState(
        cfg=cfg, policy=params, ippo_critics=ippo_critics,
        mappo_critic=mappo_critic, actor_named=actor_named,
        critic_named=critic_named,
        actor_opt=opt_cls(actor_named, cfg.learning_rate),
        critic_opt=opt_cls(critic_named, cfg.learning_rate),
    )


def collect_rollout(state0: EnvState, ts: TrainState, horizon: int,
                    action_rng: np.random.Generator,
                    trace: list | None = None) -> tuple[RolloutBuffer, EnvState]:
    """Run one synchronous episode; every agent acts from its own observation
    slice only. Critic values are filled in afterwards in one batched pass."""
    cfg = ts.cfg
    m = state0.num_nodes
    dtype = cfg.np_dtype
    f0 = pol.OBLIVIOUS_FEATURES if cfg.oblivious else pol.NONOBLIVIOUS_FEATURES
    fe = f0

    features = np.empty((horizon, m, m, f0), dtype=dtype)
    masks = np.empty((horizon, m, m * m), dtype=bool)
    action_idx = np.empty((horizon, m), dtype=np.int64)
    log_probs = np.empty((horizon, m), dtype=np.float64)
    rewards = np.empty(horizon, dtype=np.float64)
    critic_node = critic_edge = None
    if cfg.algo == "mappo":
        critic_node = np.empty((horizon, m, 1), dtype=dtype)
        critic_edge = np.empty((horizon, m, m, fe), dtype=dtype)

    state = state0
    gsos = None
    for t in range(horizon):
        feats, gso_stack = pol.actor_features_all(state, cfg.oblivious)
        if gsos is None:
            gsos = gso_stack.astype(dtype)
        feats = feats.astype(dtype)
        mask = pol.action_masks_all(state).reshape(m, m * m)
        emb = pol.actor_embedding(ts.policy, gsos, feats)
        logits = pol.action_logits(emb, ts.policy.delta)
        logp = pol.masked_log_probs(logits.astype(np.float64), mask)

        actions = []
        for i in range(m):
            probs = np.exp(logp[i])
            cum = np.cumsum(probs)
            idx = int(np.searchsorted(cum, action_rng.random() * cum[-1],
                                      side="right"))
            idx = min(idx, probs.size - 1)
            while not mask[i, idx]:
                idx -= 1
            action_idx[t, i] = idx
            log_probs[t, i] = logp[i, idx]
            actions.append(Action(receiver=idx // m, queue=idx % m))

        features[t] = feats
        masks[t] = mask
        if cfg.algo == "mappo":
            node, edge = pol.mappo_features(state, cfg.oblivious)
            critic_node[t] = node.astype(dtype)
            critic_edge[t] = edge.astype(dtype)

        state, reward = envsim.step(state, actions, reward_mode=cfg.reward_mode)
        rewards[t] = reward
        if trace is not None:
            trace.append(envsim.trace_record(state.k, actions, state, reward))

    buf = RolloutBuffer(features=features, gsos=gsos, masks=masks,
                        action_idx=action_idx, log_probs=log_probs,
                        rewards=rewards, critic_node=critic_node,
                        critic_edge=critic_edge)
    fill_values(buf, ts)
    return buf, state


def fill_values(buf: RolloutBuffer, ts: TrainState) -> None:
    if ts.cfg.algo == "ippo":
        values = np.empty((buf.horizon, buf.num_agents))
        for i in range(buf.num_agents):
            v = pol.critic_value_ippo(ts.ippo_critics[i], buf.gsos[i],
                                      buf.features[:, i])
            values[:, i] = np.asarray(v, dtype=np.float64)
        buf.values_agents = values
    else:
        v = pol.critic_value_mappo(ts.mappo_critic, buf.critic_node,
                                   buf.critic_edge)
        buf.values_slots = np.asarray(v, dtype=np.float64)


def gae_advantages(rewards: np.ndarray, values: np.ndarray, gamma: float,
                   lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation with terminal bootstrap 0 at the
    episode end. Returns (advantages, returns); returns = advantages + values.
    """
    horizon = rewards.shape[0]
    adv = np.zeros(horizon, dtype=np.float64)
    last = 0.0
    for t in range(horizon - 1, -1, -1):
        next_value = values[t + 1] if t + 1 < horizon else 0.0
        delta = rewards[t] + gamma * next_value - values[t]
        last = delta + gamma * lam * last
        adv[t] = last
    return adv, adv + values


@dataclass
class UpdateDiagnostics:
    policy_loss: float = math.nan
    value_loss: float = math.nan
    entropy: float = math.nan
    clip_fraction: float = math.nan
    grad_norm_actor: float = math.nan
    grad_norm_critic: float = math.nan
    nan_aborted: bool = False


def ppo_update(ts: TrainState, buffers: Sequence[RolloutBuffer],
               update_index: int = 0) -> UpdateDiagnostics:
    """Clipped-surrogate update over a batch of episodes. Parameter sharing
    means one actor gradient accumulates across every agent's records. A
    non-finite loss aborts the update and restores the previous parameters.
    """
    cfg = ts.cfg
    m = buffers[0].num_agents
    dtype = cfg.np_dtype

    # flatten agent records: (N, ...) with N = sum_episodes T * M
    feats, gsos, masks, idxs, logp_old, advs, rets_agent = [], [], [], [], [], [], []
    slot_returns = []
    for buf in buffers:
        horizon = buf.horizon
        if cfg.algo == "ippo":
            adv_ag = np.empty((horizon, m))
            ret_ag = np.empty((horizon, m))
            for i in range(m):
                adv_ag[:, i], ret_ag[:, i] = gae_advantages(
                    buf.rewards, buf.values_agents[:, i], cfg.gamma,
                    cfg.gae_lambda)
        else:
            adv_slot, ret_slot = gae_advantages(buf.rewards, buf.values_slots,
                                                cfg.gamma, cfg.gae_lambda)
            adv_ag = np.repeat(adv_slot[:, None], m, axis=1)
            ret_ag = np.repeat(ret_slot[:, None], m, axis=1)
            slot_returns.append(ret_slot)
        feats.append(buf.features.reshape(horizon * m, m, -1))
        gsos.append(np.broadcast_to(buf.gsos[None], (horizon, m, m, m))
                    .reshape(horizon * m, m, m))
        masks.append(buf.masks.reshape(horizon * m, m * m))
        idxs.append(buf.action_idx.reshape(horizon * m))
        logp_old.append(buf.log_probs.reshape(horizon * m))
        advs.append(adv_ag.reshape(horizon * m))
        rets_agent.append(ret_ag.reshape(horizon * m))

    feats = np.concatenate(feats).astype(dtype)
    gsos = np.concatenate(gsos).astype(dtype)
    masks = np.concatenate(masks)
    idxs = np.concatenate(idxs)
    logp_old = np.concatenate(logp_old)
    advs = np.concatenate(advs)
    rets_agent = np.concatenate(rets_agent)
    n_records = feats.shape[0]

    if cfg.normalize_advantages:
        advs = (advs - advs.mean()) / (advs.std() + 1e-8)

    snapshot_actor = {k: v.copy() for k, v in ts.actor_named.items()}
    snapshot_critic = {k: v.copy() for k, v in ts.critic_named.items()}
    shuffle_rng = derive_rng(cfg.seed, _TAG_SHUFFLE, update_index)

    # MAPPO critic trains on per-slot records, not per-agent ones.
    if cfg.algo == "mappo":
        critic_node = np.concatenate([b.critic_node for b in buffers]).astype(dtype)
        critic_edge = np.concatenate([b.critic_edge for b in buffers]).astype(dtype)
        slot_rets = np.concatenate(slot_returns)
        n_slots = slot_rets.shape[0]
    agent_of = np.tile(np.arange(m), n_records // m)

    diag = UpdateDiagnostics()
    mb = max(1, min(cfg.minibatch_size, n_records))
    for _ in range(cfg.epochs_per_update):
        order = shuffle_rng.permutation(n_records)
        for start in range(0, n_records, mb):
            sel = order[start:start + mb]
            ok = _actor_minibatch_step(ts, feats[sel], gsos[sel], masks[sel],
                                       idxs[sel], logp_old[sel], advs[sel], diag)
            if ok and cfg.algo == "ippo":
                ok = _ippo_critic_step(ts, feats[sel], gsos[sel],
                                       rets_agent[sel], agent_of[sel], diag)
            if not ok:
                _restore(ts, snapshot_actor, snapshot_critic)
                diag.nan_aborted = True
                return diag
        if cfg.algo == "mappo":
            slot_order = shuffle_rng.permutation(n_slots)
            slot_mb = max(1, min(cfg.minibatch_size // max(1, m), n_slots))
            for start in range(0, n_slots, slot_mb):
                sel = slot_order[start:start + slot_mb]
                ok = _mappo_critic_step(ts, critic_node[sel], critic_edge[sel],
                                        slot_rets[sel], diag)
                if not ok:
                    _restore(ts, snapshot_actor, snapshot_critic)
                    diag.nan_aborted = True
                    return diag
    _rebuild_models(ts)
    return diag


def _actor_minibatch_step(ts: TrainState, feats, gsos, masks, idxs, logp_old,
                          advs, diag: UpdateDiagnostics) -> bool:
    cfg = ts.cfg
    tape = ad.Tape()
    wrapped = ad.wrap_params(tape, ts.actor_named)
    var_policy = pol.policy_from_named(wrapped, ts.policy)

    emb = pol.actor_embedding(var_policy, gsos, feats)
    logits = pol.action_logits(emb, var_policy.delta)
    logp_all = pol.masked_log_probs(logits, masks)
    logp_new = ad.take_per_row(logp_all, idxs)
    ratio = ad.exp(ad.sub(logp_new, logp_old))
    surr1 = ad.mul(ratio, advs)
    surr2 = ad.mul(ad.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), advs)
    loss = ad.mul(ad.reduce_mean(ad.minimum(surr1, surr2)), -1.0)
    if cfg.entropy_coef > 0.0:
        probs = ad.exp(logp_all)
        plogp = ad.mul(ad.mul(probs, logp_all), masks.astype(feats.dtype))
        entropy = ad.mul(ad.reduce_mean(ad.reduce_sum(plogp, axis=-1)), -1.0)
        diag.entropy = float(ad.value_of(entropy))
        loss = ad.sub(loss, ad.mul(entropy, cfg.entropy_coef))

    loss_val = float(ad.value_of(loss))
    if not np.isfinite(loss_val):
        return False
    diag.policy_loss = loss_val
    ratio_v = ad.value_of(ratio)
    diag.clip_fraction = float(np.mean(
        (ratio_v < 1.0 - cfg.clip_eps) | (ratio_v > 1.0 + cfg.clip_eps)))

    tape.backward(loss)
    grads = ad.grads_of(wrapped)
    diag.grad_norm_actor = clip_grad_norm(grads, cfg.grad_clip)
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        return False
    ts.actor_opt.step(grads)
    return True


def _ippo_critic_step(ts: TrainState, feats, gsos, rets, agent_of,
                      diag: UpdateDiagnostics) -> bool:
    cfg = ts.cfg
    tape = ad.Tape()
    wrapped = ad.wrap_params(tape, ts.critic_named)
    total = None
    for i in range(len(ts.ippo_critics)):
        sel = np.nonzero(agent_of == i)[0]
        if sel.size == 0:
            continue
        layers = layers_from_named(wrapped, ts.ippo_critics[i],
                                   prefix=f"critic{i}.layer")
        pred = pol.critic_value_ippo(layers, gsos[sel], feats[sel])
        term = ad.reduce_sum(ad.square(ad.sub(pred, rets[sel])))
        total = term if total is None else ad.add(total, term)
    loss = ad.mul(total, cfg.value_coef / feats.shape[0])
    return _finish_critic_step(ts, tape, wrapped, loss, diag)


def _mappo_critic_step(ts: TrainState, node, edge, rets,
                       diag: UpdateDiagnostics) -> bool:
    cfg = ts.cfg
    tape = ad.Tape()
    wrapped = ad.wrap_params(tape, ts.critic_named)
    critic = pol.mappo_from_named(wrapped, ts.mappo_critic)
    pred = pol.critic_value_mappo(critic, node, edge)
    loss = ad.mul(ad.reduce_mean(ad.square(ad.sub(pred, rets))), cfg.value_coef)
    return _finish_critic_step(ts, tape, wrapped, loss, diag)


def _finish_critic_step(ts: TrainState, tape, wrapped, loss,
                        diag: UpdateDiagnostics) -> bool:
    loss_val = float(ad.value_of(loss))
    if not np.isfinite(loss_val):
        return False
    diag.value_loss = loss_val
    tape.backward(loss)
    grads = ad.grads_of(wrapped)
    diag.grad_norm_critic = clip_grad_norm(grads, ts.cfg.grad_clip)
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        return False
    ts.critic_opt.step(grads)
    return True


def _restore(ts: TrainState, actor_snap: dict, critic_snap: dict) -> None:
    for k, v in actor_snap.items():
        ts.actor_named[k][...] = v
    for k, v in critic_snap.items():
        ts.critic_named[k][...] = v
    _rebuild_models(ts)


def _rebuild_models(ts: TrainState) -> None:
    """Adam updates arrays in place, so the dataclass views stay current;
    this re-derives them defensively after restores."""
    ts.policy = pol.policy_from_named(ts.actor_named, ts.policy)
    if ts.cfg.algo == "ippo":
        ts.ippo_critics = tuple(
            layers_from_named(ts.critic_named, ts.ippo_critics[i],
                              prefix=f"critic{i}.layer")
            for i in range(len(ts.ippo_critics)))
    else:
        ts.mappo_critic = pol.mappo_from_named(ts.critic_named, ts.mappo_critic)


# --- evaluation ----------------------------------------------------------------

def policy_action_fn(params: pol.PolicyParams, oblivious: bool) -> Callable:
    """Decentralized-execution wrapper: actions computed from observation
    slices only (the vectorized feature builder reproduces them exactly)."""
    def act(state: EnvState, rng: np.random.Generator) -> list[Action]:
        m = state.num_nodes
        feats, gsos = pol.actor_features_all(state, oblivious)
        mask = pol.action_masks_all(state).reshape(m, m * m)
        emb = pol.actor_embedding(params, gsos, feats)
        logits = pol.action_logits(emb, params.delta)
        logp = pol.masked_log_probs(np.asarray(logits, dtype=np.float64), mask)
        actions = []
        for i in range(m):
            probs = np.exp(logp[i])
            cum = np.cumsum(probs)
            idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
            idx = min(idx, probs.size - 1)
            while not mask[i, idx]:
                idx -= 1
            actions.append(Action(receiver=idx // m, queue=idx % m))
        return actions
    return act


def baseline_action_fn(name: str, epsilon: float = 1.0) -> Callable:
    def act(state: EnvState, rng: np.random.Generator) -> list[Action]:
        actions = []
        for i in range(state.num_nodes):
            obs = envsim.observe(state, i)
            dist = (uniform_policy(obs) if name == "uniform"
                    else adaptive_age_policy(obs, epsilon))
            actions.append(dist.sample(rng))
        return actions
    return act


def run_episode(graph: Graph, action_fn: Callable, horizon: int, sigma: float,
                env_seed: int, act_seed: int,
                reward_mode: str = "error") -> MetricsAccumulator:
    state = envsim.reset(graph, sigma, env_seed)
    rng = derive_rng(act_seed, _TAG_EVAL_ACT)
    acc = MetricsAccumulator(horizon=horizon, num_nodes=graph.num_nodes)
    for _ in range(horizon):
        actions = action_fn(state, rng)
        state, _ = envsim.step(state, actions, reward_mode=reward_mode)
        acc = accumulate_metrics(acc, state)
    return acc


def evaluate(action_fn: Callable, graphs: Sequence[Graph], horizon: int,
             sigma: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """ASEE and age metric per evaluation graph/episode."""
    asee = np.empty(len(graphs))
    age = np.empty(len(graphs))
    for g_idx, graph in enumerate(graphs):
        acc = run_episode(graph, action_fn, horizon, sigma,
                          env_seed=derive_seed(seed, _TAG_EVAL_ENV, g_idx),
                          act_seed=derive_seed(seed, _TAG_EVAL_ACT, g_idx))
        asee[g_idx] = acc.asee_partial
        age[g_idx] = acc.age_partial
    return asee, age


# --- topology sources and the training loop --------------------------------------

@dataclass(frozen=True)
class TopologySpec:
    kind: str                     # "watts_strogatz" | "edge_list" | "aus_simple"
    num_nodes: int = 10
    k_ring: int = 4
    p_rewire: float = 0.5
    edge_list_text: str | None = None

    def fixed_graph(self) -> Graph | None:
        from . import topology
        if self.kind == "edge_list":
            return topology.load_edge_list(self.edge_list_text)
        if self.kind == "aus_simple":
            return topology.aus_simple_graph()
        return None

    def graph_for(self, seed: int, index: int, tag: int) -> Graph:
        fixed = self.fixed_graph()
        if fixed is not None:
            return fixed
        return gen_watts_strogatz(self.num_nodes, self.k_ring, self.p_rewire,
                                  seed=derive_seed(seed, tag, index))


@dataclass
class EvalRow:
    episode: int
    mode: str
    num_nodes: int
    asee_mean: float
    asee_std: float
    age_mean: float


@dataclass
class TrainResult:
    rows: list
    state: TrainState
    diagnostics: list


def train(cfg: TrainConfig, topo: TopologySpec,
          checkpoint_cb: Callable[[int, TrainState], None] | None = None,
          log_cb: Callable[[str], None] | None = None) -> TrainResult:
    """Full training run: fresh synthetic graph per episode (fixed topologies
    reuse the same graph), policy updates every batch_episodes episodes, and
    a frozen-parameter evaluation on held-out graphs every eval_every
    episodes, starting with the untrained parameters at episode 0. A final
    checkpoint (without a metrics row) is emitted after the last episode.
    """
    probe = topo.graph_for(cfg.seed, 0, _TAG_GRAPH)
    ts = init_train_state(cfg, probe.num_nodes)
    eval_set = [topo.graph_for(cfg.seed, i, _TAG_EVAL_GRAPH)
                for i in range(cfg.eval_graphs)]
    mode = f"{cfg.algo}-{'oblivious' if cfg.oblivious else 'error'}"

    rows: list[EvalRow] = []
    diags: list[UpdateDiagnostics] = []

    def run_eval(episode: int) -> None:
        fn = policy_action_fn(ts.policy, cfg.oblivious)
        asee, age = evaluate(fn, eval_set, cfg.horizon, cfg.sigma, cfg.seed)
        row = EvalRow(episode=episode, mode=mode, num_nodes=probe.num_nodes,
                      asee_mean=float(asee.mean()), asee_std=float(asee.std()),
                      age_mean=float(age.mean()))
        rows.append(row)
        if log_cb:
            log_cb(f"episode {episode}: ASEE {row.asee_mean:.4f} "
                   f"(+/- {row.asee_std:.4f}), age {row.age_mean:.4f}")
        if checkpoint_cb:
            checkpoint_cb(episode, ts)

    batch: list[RolloutBuffer] = []
    update_index = 0
    for episode in range(cfg.episodes):
        if episode % cfg.eval_every == 0:
            run_eval(episode)
        graph = topo.graph_for(cfg.seed, episode, _TAG_GRAPH)
        env0 = envsim.reset(graph, cfg.sigma,
                            derive_seed(cfg.seed, _TAG_ENV, episode))
        act_rng = derive_rng(cfg.seed, _TAG_ACT, episode)
        buf, _ = collect_rollout(env0, ts, cfg.horizon, act_rng)
        batch.append(buf)
        if len(batch) >= cfg.batch_episodes:
            diags.append(ppo_update(ts, batch, update_index))
            update_index += 1
            batch.clear()
    if checkpoint_cb:
        checkpoint_cb(cfg.episodes, ts)
    return TrainResult(rows=rows, state=ts, diagnostics=diags)
