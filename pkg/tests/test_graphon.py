import numpy as np
import pytest

from remest import graphon as gl
from remest.graphon import (GraphonError, GraphonSignal, StepGraphon,
                            StepKernel, bilinear_field, constant_graphon,
                            diffuse, discretize_kernel, discretize_signal,
                            field_distance, field_softmax, filter_lipschitz,
                            filter_transfer_distance, graphon_filter, induce,
                            kernel_difference, kernel_eigenvalues,
                            kernel_from_head, node_samples, operator_norm,
                            random_contractive_taps, sample_graph,
                            signal_distance, smooth_cosine_graphon,
                            spectral_summary, theta_bound, uniform_partition,
                            wnn_forward, wrnn_forward)
from remest.neuralcore import FilterBank, GRNNLayerParams, filter_apply, grnn_forward
from remest.topology import Graph


def test_constant_one_gives_complete_graph():
    g, _ = sample_graph(constant_graphon(1.0), 6, labeling="grid", seed=0)
    assert g.adjacency.sum() == 6 * 5


def test_constant_zero_gives_empty_graph():
    g, _ = sample_graph(constant_graphon(0.0), 6, labeling="uniform", seed=0)
    assert g.adjacency.sum() == 0


def test_edge_density_binomial_concentration():
    p, n = 0.3, 200
    g, _ = sample_graph(constant_graphon(p), n, labeling="uniform", seed=5)
    edges = g.adjacency.sum() / 2
    trials = n * (n - 1) / 2
    sigma = np.sqrt(trials * p * (1 - p))
    assert abs(edges - trials * p) < 3 * sigma


def test_induce_two_node_grid():
    adj = np.array([[0, 1], [1, 0]], dtype=np.int8)
    w, x = induce(Graph(adj), np.array([0.0, 0.5]), np.array([2.0, -1.0]))
    assert np.allclose(w.breakpoints, [0.0, 0.5, 1.0])
    assert np.allclose(w.values, [[0, 1], [1, 0]])
    assert np.allclose(x.values.ravel(), [2.0, -1.0])


def test_induce_complete_graph_all_ones_off_diagonal():
    n = 4
    adj = (np.ones((n, n)) - np.eye(n)).astype(np.int8)
    labels = np.arange(n) / n
    w, _ = induce(Graph(adj), labels, np.zeros(n))
    off = w.values[~np.eye(n, dtype=bool)]
    assert np.all(off == 1.0)
    assert np.all(np.diag(w.values) == 0.0)


def test_induced_signal_norm_formula():
    labels = np.array([0.0, 0.2, 0.7])
    x = np.array([1.0, -2.0, 3.0])
    adj = np.zeros((3, 3), dtype=np.int8)
    adj[0, 1] = adj[1, 0] = adj[1, 2] = adj[2, 1] = 1
    _, sig = induce(Graph(adj), labels, x)
    lengths = np.array([0.2, 0.5, 0.3])
    assert sig.norm() == pytest.approx(np.sqrt(np.sum(lengths * x ** 2)))


def test_induce_wrap_around_interval():
    labels = np.array([0.25, 0.5])  # node 1 owns [0.5, 1] and [0, 0.25)
    adj = np.array([[0, 1], [1, 0]], dtype=np.int8)
    w, sig = induce(Graph(adj), labels, np.array([1.0, 4.0]))
    assert np.allclose(w.breakpoints, [0.0, 0.25, 0.5, 1.0])
    assert np.allclose(sig.values.ravel(), [4.0, 1.0, 4.0])
    assert sig.norm() == pytest.approx(np.sqrt(0.25 * 16 + 0.25 * 1 + 0.5 * 16))


def test_induce_rejects_duplicates_and_unsorted():
    adj = np.array([[0, 1], [1, 0]], dtype=np.int8)
    with pytest.raises(GraphonError, match="duplicate"):
        induce(Graph(adj), np.array([0.3, 0.3]), np.zeros(2))
    with pytest.raises(GraphonError, match="sorted"):
        induce(Graph(adj), np.array([0.5, 0.3]), np.zeros(2))


def test_diffuse_zero_kernel():
    x = discretize_signal(lambda u: np.sin(2 * np.pi * u), 64)
    y = diffuse(constant_graphon(0.0), x)
    assert np.allclose(y.values, 0.0)


def test_diffuse_constant_kernel_integrates():
    x = GraphonSignal(np.array([0.0, 1.0]), np.array([[3.0]]))
    y = diffuse(constant_graphon(1.0), x)
    assert np.allclose(y.values, 3.0)


def test_diffuse_block_integral_by_hand():
    # two-node K2 with grid labels: X = indicator of the first half
    w = StepGraphon(np.array([0.0, 0.5, 1.0]),
                    np.array([[0.0, 1.0], [1.0, 0.0]]))
    x = GraphonSignal(np.array([0.0, 0.5, 1.0]), np.array([1.0, 0.0]))
    y = diffuse(w, x)
    assert np.allclose(y.values.ravel(), [0.0, 0.5])  # |I_1| = 0.5 on I_2


def test_graphon_filter_identity_and_single_diffusion():
    x = discretize_signal(lambda u: u, 32)
    w = smooth_cosine_graphon(32)
    same = graphon_filter([1.0], w, x)
    assert signal_distance(same, x) == pytest.approx(0.0, abs=1e-14)
    diff = graphon_filter([0.0, 1.0], w, x)
    assert signal_distance(diff, diffuse(w, x)) == pytest.approx(0.0, abs=1e-14)


def test_discrete_continuous_filter_consistency():
    """Inducing then filtering equals graph filtering (with the size-scaled
    shift operator) then inducing, for grid-labeled step objects."""
    rng = np.random.default_rng(3)
    n = 12
    w0 = smooth_cosine_graphon(96)
    g, labels = sample_graph(w0, n, labeling="grid", seed=4)
    x_n = rng.standard_normal(n)
    w_ind, x_ind = induce(g, labels, x_n)
    taps = [0.4, 0.3, -0.2]
    cont = graphon_filter(taps, w_ind, x_ind)
    disc = filter_apply([np.array([[t]]) for t in taps],
                        g.adjacency.astype(float) / n, x_n[:, None])
    _, disc_ind = induce(g, labels, np.asarray(disc).ravel())
    assert signal_distance(cont, disc_ind) < 1e-8


def test_wnn_zero_banks_and_single_layer_reduction():
    w = smooth_cosine_graphon(64)
    x = discretize_signal(lambda u: np.cos(2 * np.pi * u), 64)
    zero = wnn_forward([np.zeros((3, 1, 2)), np.zeros((2, 2, 1))], w, x)
    assert np.allclose(zero.values, 0.0)
    taps = np.array([0.5, -0.3, 0.1]).reshape(3, 1, 1)
    one_layer = wnn_forward([taps], w, x)
    direct = graphon_filter([0.5, -0.3, 0.1], w, x)
    assert signal_distance(one_layer,
                           GraphonSignal(direct.breakpoints,
                                         np.maximum(direct.values, 0))) < 1e-12


def test_wrnn_matches_discrete_grnn_after_induction():
    """Graphon recurrent forward on induced objects equals the discrete GRNN
    on the sampled graph with shift operator adjacency / n, then induced."""
    rng = np.random.default_rng(9)
    n, f0, h, fo = 10, 2, 3, 2
    b1 = random_contractive_taps(rng, 3, f0, h)
    b2 = random_contractive_taps(rng, 3, h, h)
    b3 = random_contractive_taps(rng, 3, h, fo)
    g, labels = sample_graph(smooth_cosine_graphon(80), n, labeling="grid",
                             seed=2)
    x_n = rng.standard_normal((n, f0))
    w_ind, x_ind = induce(g, labels, x_n)
    cont = wrnn_forward(b1, b2, b3, w_ind, x_ind, rounds=2)

    layer = GRNNLayerParams(
        input_bank=FilterBank(taps=tuple(b1)),
        hidden_bank=FilterBank(taps=tuple(b2)),
        output_bank=FilterBank(taps=tuple(b3)),
        rounds=2)
    disc = grnn_forward([layer], g.adjacency.astype(float) / n, x_n)
    _, disc_ind = induce(g, labels, np.asarray(disc))
    assert signal_distance(cont, disc_ind) < 1e-8


def test_constant_kernel_spectrum_rank_one():
    for p in (0.25, 0.6):
        eigs = kernel_eigenvalues(constant_graphon(p))
        assert eigs.size == 1
        assert eigs[0] == pytest.approx(p)
        summary = spectral_summary(constant_graphon(p), constant_graphon(p), 0.1)
        assert summary.kappa == (1 if p >= 0.1 else 0)


def test_kappa_monotone_in_eps():
    w = smooth_cosine_graphon(128)
    kappas = [spectral_summary(w, w, e).kappa for e in (0.05, 0.1, 0.3, 0.6)]
    assert all(a >= b for a, b in zip(kappas, kappas[1:]))


def test_zero_kernel_kappa_zero():
    z = constant_graphon(0.0)
    assert spectral_summary(z, z, 0.2).kappa == 0


def test_smooth_kernel_known_spectrum():
    # 0.5 + 0.25 e^{i 2 pi (u-v)} + 0.25 e^{-i 2 pi (u-v)}: eigenvalues
    # 0.5 (constant mode) and 0.25 twice (the two first harmonics).
    w = smooth_cosine_graphon(512)
    eigs = np.sort(kernel_eigenvalues(w))[::-1]
    assert eigs[0] == pytest.approx(0.5, abs=1e-3)
    assert eigs[1] == pytest.approx(0.25, abs=1e-3)
    assert eigs[2] == pytest.approx(0.25, abs=1e-3)
    assert abs(eigs[3]) < 1e-3


def test_operator_norm_of_difference():
    a = constant_graphon(0.8)
    b = constant_graphon(0.5)
    assert operator_norm(kernel_difference(a, b)) == pytest.approx(0.3)


def test_theta_bound_zero_difference():
    w = constant_graphon(0.5)
    w2 = StepGraphon(w.breakpoints.copy(), w.values.copy())
    assert theta_bound(1.0, 0.0, 0.2, w, w2) == pytest.approx(0.0)
    assert theta_bound(2.0, 0.5, 0.2, w, w2) == pytest.approx(2 * 0.5 * 0.2)


def test_theta_bound_rejects_bad_eps():
    w = constant_graphon(0.5)
    with pytest.raises(GraphonError):
        theta_bound(1.0, 0.1, 0.0, w, w)
    with pytest.raises(GraphonError):
        theta_bound(1.0, 0.1, 1.5, w, w)


def test_filter_lipschitz_linear_polynomial():
    # b(lambda) = 0.9 lambda: slope 0.9 everywhere, max response 0.9
    est = filter_lipschitz([0.0, 0.9], eps=0.2)
    assert est.omega_big == pytest.approx(0.9, rel=1e-6)
    assert est.omega_small == pytest.approx(0.9, rel=1e-6)
    assert est.response_max == pytest.approx(0.9, rel=1e-6)
    assert est.contractive


def test_contractive_taps_satisfy_assumption():
    rng = np.random.default_rng(0)
    for _ in range(20):
        taps = random_contractive_taps(rng, 4, 3, 2)
        est = filter_lipschitz(list(taps), eps=0.1)
        assert est.contractive


def test_filter_transfer_reports_bound_holds():
    rng = np.random.default_rng(1)
    w = constant_graphon(0.4)
    x = discretize_signal(lambda u: np.sin(2 * np.pi * u) + 0.3, 256)
    taps = [0.3, 0.25, -0.2]
    rep = filter_transfer_distance(taps, w, x, n=80, seed=3, eps=0.1)
    assert rep.distance <= rep.bound
    assert rep.distance >= 0
    assert rep.lipschitz.contractive


def test_filter_transfer_rejects_noncontractive():
    w = constant_graphon(0.4)
    x = discretize_signal(lambda u: u, 64)
    with pytest.raises(GraphonError, match="Assumption"):
        filter_transfer_distance([1.5, 0.4], w, x, n=20, seed=0)


def test_wrnn_transfer_zero_signal():
    rng = np.random.default_rng(2)
    b1 = random_contractive_taps(rng, 2, 1, 2)
    b2 = random_contractive_taps(rng, 2, 2, 2)
    b3 = random_contractive_taps(rng, 2, 2, 1)
    w = smooth_cosine_graphon(64)
    x = GraphonSignal(uniform_partition(64), np.zeros((64, 1)))
    rep = gl.wrnn_transfer_distance(b1, b2, b3, w, x, n=30, seed=1,
                                    with_bounds=False)
    assert rep.distance == pytest.approx(0.0, abs=1e-14)


def test_wrnn_transfer_deterministic():
    rng = np.random.default_rng(3)
    b1 = random_contractive_taps(rng, 2, 1, 2)
    b2 = random_contractive_taps(rng, 2, 2, 2)
    b3 = random_contractive_taps(rng, 2, 2, 1)
    w = smooth_cosine_graphon(64)
    x = discretize_signal(lambda u: np.cos(2 * np.pi * u), 64)
    r1 = gl.wrnn_transfer_distance(b1, b2, b3, w, x, n=40, seed=7,
                                   with_bounds=False)
    r2 = gl.wrnn_transfer_distance(b1, b2, b3, w, x, n=40, seed=7,
                                   with_bounds=False)
    assert r1.distance == r2.distance


def test_bilinear_field_and_softmax_flat_for_zero_head():
    y1 = GraphonSignal(uniform_partition(8), np.random.default_rng(0)
                       .standard_normal((8, 3)))
    y2 = GraphonSignal(uniform_partition(8), np.random.default_rng(1)
                       .standard_normal((8, 3)))
    field = bilinear_field(y1, y2, np.zeros((3, 3)))
    assert np.allclose(field.values, 0.0)
    dens = field_softmax(field)
    assert np.allclose(dens.values, 1.0)  # uniform density integrates to one


def test_action_distribution_distance_trivial_cases():
    rng = np.random.default_rng(4)
    b1 = random_contractive_taps(rng, 2, 1, 2)
    b2 = random_contractive_taps(rng, 2, 2, 2)
    b3 = random_contractive_taps(rng, 2, 2, 2)
    w = smooth_cosine_graphon(64)
    zero = GraphonSignal(uniform_partition(64), np.zeros((64, 1)))
    rep = gl.action_distribution_distance(b1, b2, b3, np.zeros((2, 2)), w,
                                          zero, zero, n=20, seed=0)
    assert rep.logit_distance == pytest.approx(0.0, abs=1e-14)
    assert rep.distribution_distance == pytest.approx(0.0, abs=1e-12)
    # x1 = x2 = 0 with nonzero head: embeddings vanish, distances vanish
    rep2 = gl.action_distribution_distance(
        b1, b2, b3, rng.standard_normal((2, 2)), w, zero, zero, n=20, seed=0)
    assert rep2.logit_distance == pytest.approx(0.0, abs=1e-14)


def test_field_distance_refines_partitions():
    f1 = gl.StepField(np.array([0.0, 0.5, 1.0]), np.array([0.0, 1.0]),
                      np.array([[1.0], [0.0]]))
    f2 = gl.StepField(np.array([0.0, 1.0]), np.array([0.0, 0.25, 1.0]),
                      np.array([[0.0, 0.0]]))
    # difference is 1 on [0, .5] x [0, 1]
    assert field_distance(f1, f2) == pytest.approx(np.sqrt(0.5))


def test_kernel_from_head_partition():
    k = kernel_from_head(np.arange(9.0).reshape(3, 3))
    assert np.allclose(k.breakpoints, [0, 1 / 3, 2 / 3, 1.0])


def test_step_graphon_validation():
    with pytest.raises(GraphonError):
        StepGraphon(np.array([0.0, 1.0]), np.array([[1.7]]))
    with pytest.raises(GraphonError):
        StepGraphon(np.array([0.0, 0.5, 1.0]),
                    np.array([[0.1, 0.2], [0.3, 0.4]]))
    StepKernel(np.array([0.0, 1.0]), np.array([[1.7]]))  # kernels may exceed 1
