import numpy as np
import pytest

from remest import envsim
from remest.envsim import (Action, EnvError, MetricsAccumulator,
                           accumulate_metrics, observe, reset, step)
from remest.topology import gen_watts_strogatz, load_edge_list

PATH3 = load_edge_list("3\n0 1\n1 2")


def silent_actions(m):
    return [Action.silent(i) for i in range(m)]


def random_valid_actions(state, rng):
    """Uniform choice over each agent's valid action cells (test helper)."""
    actions = []
    adj = state.graph.adjacency
    for i in range(state.num_nodes):
        nbrs = np.nonzero(adj[i])[0]
        packs = np.nonzero(state.occupied[i])[0]
        cells = [(i, i)] + [(int(j), int(l)) for j in nbrs for l in packs]
        mu, nu = cells[rng.integers(len(cells))]
        actions.append(Action(receiver=mu, queue=nu))
    return actions


def test_reset_all_zero():
    s = reset(PATH3, sigma=1.0, seed=0)
    assert np.all(s.age == 0)
    assert np.all(s.estimates == 0)
    assert np.all(s.sources.values == 0)
    assert np.array_equal(s.occupied, np.eye(3, dtype=np.int8))


def test_reset_deterministic():
    g = gen_watts_strogatz(6, 4, 0.4, seed=9)
    a = reset(g, 1.0, seed=5)
    b = reset(g, 1.0, seed=5)
    a1, _ = step(a, silent_actions(6))
    b1, _ = step(b, silent_actions(6))
    assert np.array_equal(a1.sources.values, b1.sources.values)


def test_lone_transmitter_delivers_with_age_one():
    s = reset(PATH3, 1.0, seed=1)
    actions = [Action(receiver=1, queue=0), Action.silent(1), Action.silent(2)]
    s1, _ = step(s, actions)
    assert s1.delivered[0, 1, 0] == 1
    assert s1.age[1, 0] == 1
    assert s1.collision.sum() == 0
    # at slot 0 the delivered sample ties with the zero-state convention
    # packet (same age, same zero payload), so it is discarded; one slot
    # later the fresh sample is strictly newer and replaces it.
    assert s1.accepted[0, 1] == 0
    s2, _ = step(s1, actions)
    assert s2.accepted[0, 1] == 1
    assert s2.age[1, 0] == 1
    assert s2.estimates[1, 0] == s1.sources.values[0]  # payload sampled at slot 1
    assert s2.gen_time[1, 0] == 1
    assert s2.occupied[1, 0] == 1


def test_two_transmitters_to_same_receiver_collide():
    s = reset(PATH3, 1.0, seed=1)
    actions = [Action(receiver=1, queue=0), Action.silent(1),
               Action(receiver=1, queue=2)]
    s1, _ = step(s, actions)
    assert s1.delivered.sum() == 0
    assert s1.collision[0, 1] == 1 and s1.collision[2, 1] == 1
    assert np.all(s1.age[np.eye(3, dtype=bool) == False] == 1)


def test_half_duplex_receiver_transmitting_blocks_delivery():
    s = reset(PATH3, 1.0, seed=1)
    # 0 -> 1 while 1 -> 2: receiver 1 is itself transmitting, so 0's packet
    # dies; 1 -> 2 succeeds because only 1 is in 2's closed neighborhood.
    actions = [Action(receiver=1, queue=0), Action(receiver=2, queue=1),
               Action.silent(2)]
    s1, _ = step(s, actions)
    assert s1.collision[0, 1] == 1
    assert s1.delivered[1, 2, 1] == 1


def test_hidden_neighbor_interferes():
    # star: 1 is the hub; 0 transmits to 1 while 2 (also adjacent to 1)
    # transmits to 3: 2 is in 1's neighborhood, so 0 -> 1 fails.
    g = load_edge_list("4\n0 1\n1 2\n2 3")
    s = reset(g, 1.0, seed=1)
    actions = [Action(receiver=1, queue=0), Action.silent(1),
               Action(receiver=3, queue=2), Action.silent(3)]
    s1, _ = step(s, actions)
    assert s1.collision[0, 1] == 1
    assert s1.delivered[2, 3, 2] == 1


def test_stale_packet_discarded():
    s = reset(PATH3, 1.0, seed=2)
    send_0_to_1 = [Action(receiver=1, queue=0), Action.silent(1), Action.silent(2)]
    s, _ = step(s, send_0_to_1)   # slot-0 tie, discarded
    s, _ = step(s, send_0_to_1)   # accepted: node 1 caches source 0 at age 1
    assert s.occupied[1, 0] == 1
    # node 1 sends 0's own sample back: 0's own age is always 0, so the
    # delivery must be discarded and 0's state left untouched.
    before = s.estimates[0, 0]
    s3, _ = step(s, [Action.silent(0), Action(receiver=0, queue=0), Action.silent(2)])
    assert s3.delivered[1, 0, 0] == 1
    assert s3.accepted[1, 0] == 0
    assert s3.age[0, 0] == 0
    assert s3.gen_time[0, 0] == s3.k


def test_fresher_packet_replaces_and_equal_age_discarded():
    g = load_edge_list("3\n0 1\n1 2")
    s = reset(g, 1.0, seed=3)
    send_0_to_1 = [Action(receiver=1, queue=0), Action.silent(1), Action.silent(2)]
    s, _ = step(s, send_0_to_1)   # slot-0 tie, discarded
    s, _ = step(s, send_0_to_1)   # node 1 caches source 0 at age 1
    # 1 forwards source 0 to 2 (age 1 -> 2 at node 2)
    fwd = [Action.silent(0), Action(receiver=2, queue=0), Action.silent(2)]
    s2, _ = step(s, fwd)
    assert s2.accepted[1, 2] == 1
    assert s2.age[2, 0] == 2
    assert s2.estimates[2, 0] == s.estimates[1, 0]
    # forwarding the same cached packet again ties on age -> discarded
    s3, _ = step(s2, fwd)
    assert s3.delivered[1, 2, 0] == 1
    assert s3.accepted[1, 2] == 0
    assert s3.age[2, 0] == 3


def test_observation_slices_and_privacy():
    s = reset(PATH3, 1.0, seed=4)
    send = [Action(receiver=1, queue=0), Action.silent(1), Action.silent(2)]
    s, _ = step(s, send)
    s1, _ = step(s, send)  # second delivery is strictly fresher -> accepted
    obs = observe(s1, 1)
    assert obs.age_row[0] == 1
    assert obs.fresh_row.sum() == 0  # agent 1 sent nothing
    sender_obs = observe(s1, 0)
    assert sender_obs.fresh_row[1] == 1
    assert sender_obs.delivery_slice[1, 0] == 1
    # decentralization: nothing in the observation exposes another source's
    # raw value; est_row holds the cached estimates only.
    assert obs.own_value == s1.sources.values[1]
    assert np.array_equal(obs.est_row, s1.estimates[1])
    fields = (obs.est_row, obs.age_row, obs.collision_row, obs.occupancy_row,
              obs.fresh_row, obs.err_row)
    flat = np.concatenate([np.ravel(f).astype(float) for f in fields])
    assert s1.sources.values[0] not in flat.tolist()


def test_fresh_reset_observation():
    s = reset(PATH3, 1.0, seed=0)
    obs = observe(s, 0)
    assert np.all(obs.age_row == 0)
    assert np.all(obs.fresh_row == 0)
    with pytest.raises(EnvError):
        observe(s, 7)


def test_action_validation():
    s = reset(PATH3, 1.0, seed=0)
    with pytest.raises(EnvError, match="queue"):
        step(s, [Action(receiver=0, queue=1), Action.silent(1), Action.silent(2)])
    with pytest.raises(EnvError, match="neighbor"):
        step(s, [Action(receiver=2, queue=0), Action.silent(1), Action.silent(2)])
    with pytest.raises(EnvError, match="empty"):
        step(s, [Action(receiver=1, queue=2), Action.silent(1), Action.silent(2)])
    with pytest.raises(EnvError, match="expected 3 actions"):
        step(s, silent_actions(2))


def test_estimate_identity_cached_value():
    """estimates[i][j] always equals the cached payload X_{j, gen_time}."""
    g = gen_watts_strogatz(6, 4, 0.5, seed=11)
    s = reset(g, 1.0, seed=11)
    rng = np.random.default_rng(0)
    history = [s.sources.values.copy()]
    for _ in range(60):
        s, _ = step(s, random_valid_actions(s, rng))
        history.append(s.sources.values.copy())
        hist = np.stack(history)
        m = s.num_nodes
        for i in range(m):
            for j in range(m):
                assert s.estimates[i, j] == s.cached_value[i, j]
                if s.occupied[i, j]:
                    assert s.age[i, j] == s.k - s.gen_time[i, j]
                    assert s.cached_value[i, j] == hist[s.gen_time[i, j], j]


def test_age_recursion_oracle_replay():
    """Replay: ages must satisfy the freshness recursion exactly, computed
    from the delivery indicators alone."""
    g = gen_watts_strogatz(7, 4, 0.5, seed=23)
    s = reset(g, 1.0, seed=23)
    rng = np.random.default_rng(1)
    m = s.num_nodes
    oracle = np.zeros((m, m), dtype=np.int64)
    for _ in range(400):
        prev_age = s.age.copy()
        s, _ = step(s, random_valid_actions(s, rng))
        new = prev_age + 1
        for i, j, l in zip(*np.nonzero(s.delivered)):
            if prev_age[i, l] < prev_age[j, l]:
                new[j, l] = prev_age[i, l] + 1
        np.fill_diagonal(new, 0)
        assert np.array_equal(new, s.age)
        oracle = new


def test_delivery_never_increases_receiver_age():
    g = gen_watts_strogatz(6, 4, 0.5, seed=5)
    s = reset(g, 1.0, seed=6)
    rng = np.random.default_rng(2)
    for _ in range(200):
        before = s.age.copy()
        s, _ = step(s, random_valid_actions(s, rng))
        assert np.all(s.age <= before + 1)


def test_permutation_covariance():
    """Relabeling nodes (carrying their noise keys) and permuting the joint
    action produces the permuted trajectory exactly."""
    from remest.topology import relabel
    g = gen_watts_strogatz(6, 4, 0.5, seed=31)
    perm = np.array([3, 0, 5, 1, 2, 4])
    gp = relabel(g, perm)
    inv = np.argsort(perm)
    s = reset(g, 1.0, seed=31)
    sp = reset(gp, 1.0, seed=31, node_keys=inv)  # node perm[i] keeps key i
    rng = np.random.default_rng(3)
    for _ in range(40):
        acts = random_valid_actions(s, rng)
        acts_p = [Action(receiver=int(perm[acts[int(inv[i])].receiver]),
                         queue=int(perm[acts[int(inv[i])].queue]))
                  for i in range(6)]
        s, r = step(s, acts)
        sp, rp = step(sp, acts_p)
        assert np.allclose(sp.sources.values[perm], s.sources.values)
        assert np.array_equal(sp.age[np.ix_(perm, perm)], s.age)
        assert np.allclose(sp.estimates[np.ix_(perm, perm)], s.estimates)
        assert r == pytest.approx(rp, rel=1e-12)


def test_all_silent_age_metric_closed_form():
    # two-node path, K silent slots: both off-diagonal ages grow 1/slot,
    # so the age metric is sum_{k=1..K} 2k / (4K) = (K+1)/4.
    g = load_edge_list("2\n0 1")
    s = reset(g, 1.0, seed=0)
    k_slots = 25
    acc = MetricsAccumulator(horizon=k_slots, num_nodes=2)
    for _ in range(k_slots):
        s, _ = step(s, silent_actions(2))
        acc = accumulate_metrics(acc, s)
    assert acc.age_partial == pytest.approx((k_slots + 1) / 4.0)


def test_metrics_zero_on_reset_only():
    acc = MetricsAccumulator(horizon=10, num_nodes=3)
    assert acc.asee_partial == 0.0
    assert acc.age_partial == 0.0


def test_reward_modes():
    g = load_edge_list("2\n0 1")
    s = reset(g, 1.0, seed=8)
    s1, r_err = step(s, silent_actions(2), reward_mode="error")
    expected = -np.mean((s1.sources.values[None, :] - s1.estimates) ** 2)
    assert r_err == pytest.approx(expected)
    s2, r_age = step(s1, silent_actions(2), reward_mode="age")
    assert r_age == pytest.approx(-np.mean(s2.age))
    assert r_err <= 0 and r_age <= 0


def test_trace_round_trip(tmp_path):
    g = PATH3
    s = reset(g, 1.0, seed=5)
    records = [envsim.trace_header(s, "age", seed=5)]
    rng = np.random.default_rng(4)
    for t in range(20):
        acts = random_valid_actions(s, rng)
        s, r = step(s, acts, reward_mode="age")
        records.append(envsim.trace_record(s.k, acts, s, r))
    path = tmp_path / "trace.jsonl"
    with open(path, "w") as fh:
        envsim.write_trace(fh, records)
    with open(path) as fh:
        back = envsim.read_trace(fh)
    assert back == records
