"""Graphon laboratory: kernel/signal step representations, graph sampling,
diffusion operators and filters, WNN/WRNN limits, spectral summaries, and the
numerical transfer-distance experiments.

Everything is computed on piecewise-constant (step) representations with
exact block integrals; closed-form kernels and signals are discretized on a
uniform grid first (default 2048 cells), and that step object is the ground
truth for all sampling and bound computations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .topology import Graph

N_GRID_DEFAULT = 2048
LIPSCHITZ_GRID = 10_000


class GraphonError(ValueError):
    pass


# --- step representations -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StepKernel:
    """Piecewise-constant kernel on [0, 1]^2: values[i, j] on I_i x I_j."""

    breakpoints: np.ndarray  # (n+1,) increasing, first 0.0, last 1.0
    values: np.ndarray       # (n, n)

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=np.float64)
        vals = np.asarray(self.values, dtype=np.float64)
        if bp.ndim != 1 or bp.size < 2:
            raise GraphonError("breakpoints must be a 1-d array of >= 2 points")
        if abs(bp[0]) > 1e-12 or abs(bp[-1] - 1.0) > 1e-12:
            raise GraphonError("partition must span [0, 1]")
        if np.any(np.diff(bp) <= 0):
            raise GraphonError("breakpoints must be strictly increasing")
        n = bp.size - 1
        if vals.shape != (n, n):
            raise GraphonError(f"values must be ({n}, {n}), got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise GraphonError("kernel values must be finite")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @property
    def num_cells(self) -> int:
        return self.breakpoints.size - 1

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    @property
    def is_symmetric(self) -> bool:
        return bool(np.allclose(self.values, self.values.T, atol=1e-12))

    def at(self, u, v) -> np.ndarray:
        iu = _cell_index(self.breakpoints, np.asarray(u, dtype=np.float64))
        iv = _cell_index(self.breakpoints, np.asarray(v, dtype=np.float64))
        return self.values[np.ix_(np.atleast_1d(iu), np.atleast_1d(iv))].squeeze()


class StepGraphon(StepKernel):
    """A StepKernel that is a genuine graphon: symmetric with values in [0, 1]."""

    def __post_init__(self):
        super().__post_init__()
        if not np.allclose(self.values, self.values.T, atol=1e-12):
            raise GraphonError("a graphon must be symmetric")
        if np.any(self.values < -1e-12) or np.any(self.values > 1 + 1e-12):
            raise GraphonError("graphon values must lie in [0, 1]")
        object.__setattr__(self, "values",
                           np.clip((self.values + self.values.T) / 2.0, 0.0, 1.0))


@dataclass(frozen=True, eq=False)
class GraphonSignal:
    """Piecewise-constant signal(s) on [0, 1]; values[i, f] on cell I_i."""

    breakpoints: np.ndarray  # (n+1,)
    values: np.ndarray       # (n, F)

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=np.float64)
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        if bp.ndim != 1 or np.any(np.diff(bp) <= 0):
            raise GraphonError("breakpoints must be strictly increasing")
        if abs(bp[0]) > 1e-12 or abs(bp[-1] - 1.0) > 1e-12:
            raise GraphonError("partition must span [0, 1]")
        if vals.shape[0] != bp.size - 1:
            raise GraphonError("one value row per cell required")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @property
    def num_cells(self) -> int:
        return self.breakpoints.size - 1

    @property
    def num_features(self) -> int:
        return self.values.shape[1]

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    def norm(self) -> float:
        """L2 norm, summed over features: sqrt(sum_f int X_f(u)^2 du)."""
        return float(np.sqrt(np.sum(self.lengths[:, None] * self.values ** 2)))


def _cell_index(breakpoints: np.ndarray, u: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(breakpoints, u, side="right") - 1
    return np.clip(idx, 0, breakpoints.size - 2)


def uniform_partition(n: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, n + 1)


def discretize_kernel(fn: Callable, n_grid: int = N_GRID_DEFAULT) -> StepGraphon:
    """Step-graphon approximation of a closed-form kernel at cell centers."""
    centers = (np.arange(n_grid) + 0.5) / n_grid
    uu, vv = np.meshgrid(centers, centers, indexing="ij")
    vals = np.asarray(fn(uu, vv), dtype=np.float64)
    return StepGraphon(uniform_partition(n_grid), (vals + vals.T) / 2.0)


def discretize_signal(fn: Callable, n_grid: int = N_GRID_DEFAULT) -> GraphonSignal:
    centers = (np.arange(n_grid) + 0.5) / n_grid
    vals = np.asarray(fn(centers), dtype=np.float64)
    return GraphonSignal(uniform_partition(n_grid), vals)


def constant_graphon(p: float) -> StepGraphon:
    return StepGraphon(np.array([0.0, 1.0]), np.array([[float(p)]]))


def smooth_cosine_graphon(n_grid: int = N_GRID_DEFAULT) -> StepGraphon:
    """The smooth benchmark kernel 0.5 * (1 + cos(2 pi (u - v)))."""
    return discretize_kernel(
        lambda u, v: 0.5 * (1.0 + np.cos(2.0 * np.pi * (u - v))), n_grid)


# --- sampling and induction ------------------------------------------------------

def sample_graph(w: StepKernel | Callable, n: int, labeling: str = "uniform",
                 seed: int = 0,
                 n_grid: int = N_GRID_DEFAULT) -> tuple[Graph, np.ndarray]:
    """Bernoulli graph sample: edge (i, j) with probability W(u_i, u_j).

    Labels are returned sorted ascending; node i carries label labels[i].
    Closed-form kernels are discretized first so the step object is the
    single source of truth.
    """
    if n < 2:
        raise GraphonError("need at least 2 nodes")
    if callable(w) and not isinstance(w, StepKernel):
        w = discretize_kernel(w, n_grid)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6A61]))
    if labeling == "grid":
        labels = np.arange(n) / n
    elif labeling == "uniform":
        labels = np.sort(rng.random(n))
    else:
        raise GraphonError(f"unknown labeling {labeling!r}")
    probs = np.asarray(w.at(labels, labels), dtype=np.float64).reshape(n, n)
    draws = rng.random((n, n))
    upper = np.triu(draws < probs, k=1)
    adj = (upper | upper.T).astype(np.int8)
    return Graph(adj), labels


def induce(graph: Graph, labels: np.ndarray,
           x_n: np.ndarray) -> tuple[StepGraphon, GraphonSignal]:
    """Step graphon/signal induced by a labeled graph and graph signal.

    Node i owns the interval [u_i, u_{i+1}); the last node also owns the
    wrap-around piece [0, u_1) so the partition covers [0, 1].
    """
    labels = np.asarray(labels, dtype=np.float64)
    n = labels.size
    if graph.num_nodes != n:
        raise GraphonError("labels must match the number of nodes")
    if np.any(np.diff(labels) < 0):
        raise GraphonError("labels must be sorted ascending")
    if np.any(np.diff(labels) == 0):
        raise GraphonError("duplicate labels")
    if labels[0] < 0 or labels[-1] >= 1.0:
        raise GraphonError("labels must lie in [0, 1)")
    x_n = np.asarray(x_n, dtype=np.float64)
    if x_n.ndim == 1:
        x_n = x_n[:, None]
    if x_n.shape[0] != n:
        raise GraphonError("signal must have one row per node")

    bp = np.concatenate([[0.0], labels, [1.0]])
    owners = np.concatenate([[n - 1], np.arange(n)]).astype(np.int64)
    keep = np.diff(bp) > 0
    bp = np.append(bp[:-1][keep], 1.0)
    owners = owners[keep]
    adj = graph.adjacency.astype(np.float64)
    w_vals = adj[np.ix_(owners, owners)]
    return (StepGraphon(bp, w_vals),
            GraphonSignal(bp, x_n[owners]))


# --- refinement and block arithmetic ----------------------------------------------

def common_refinement(*partitions: np.ndarray) -> np.ndarray:
    merged = np.unique(np.concatenate(partitions))
    merged[0], merged[-1] = 0.0, 1.0
    return merged


def kernel_on(kernel: StepKernel, bp: np.ndarray) -> np.ndarray:
    centers = (bp[:-1] + bp[1:]) / 2.0
    idx = _cell_index(kernel.breakpoints, centers)
    return kernel.values[np.ix_(idx, idx)]


def signal_on(signal: GraphonSignal, bp: np.ndarray) -> np.ndarray:
    centers = (bp[:-1] + bp[1:]) / 2.0
    idx = _cell_index(signal.breakpoints, centers)
    return signal.values[idx]


def _diffuse_values(w_vals: np.ndarray, lengths: np.ndarray,
                    x_vals: np.ndarray) -> np.ndarray:
    """(T_W X)(v) = int W(u, v) X(u) du as an exact block integral."""
    return w_vals.T @ (lengths[:, None] * x_vals)


def diffuse(w: StepKernel, x: GraphonSignal) -> GraphonSignal:
    bp = common_refinement(w.breakpoints, x.breakpoints)
    wv = kernel_on(w, bp)
    xv = signal_on(x, bp)
    return GraphonSignal(bp, _diffuse_values(wv, np.diff(bp), xv))


def _filter_values(taps, w_vals: np.ndarray, lengths: np.ndarray,
                   x_vals: np.ndarray) -> np.ndarray:
    """sum_k (T_W^(k) X) B_k with scalar or (F_in, F_out) matrix taps."""
    taps = [np.atleast_2d(np.asarray(t, dtype=np.float64)) for t in taps]
    acc = x_vals @ taps[0]
    shifted = x_vals
    for tap in taps[1:]:
        shifted = _diffuse_values(w_vals, lengths, shifted)
        acc = acc + shifted @ tap
    return acc


def graphon_filter(taps: Sequence, w: StepKernel, x: GraphonSignal) -> GraphonSignal:
    """Graphon convolutional filter sum_k b_k T_W^(k) X (T_W^(0) = identity)."""
    if len(taps) < 1:
        raise GraphonError("need at least one tap")
    bp = common_refinement(w.breakpoints, x.breakpoints)
    wv = kernel_on(w, bp)
    xv = signal_on(x, bp)
    scalar = np.isscalar(taps[0]) or np.asarray(taps[0]).ndim == 0
    tap_mats = [np.array([[float(t)]]) if scalar else np.asarray(t) for t in taps]
    return GraphonSignal(bp, _filter_values(tap_mats, wv, np.diff(bp), xv))


_ACT = {
    "relu": lambda z: np.maximum(z, 0.0),
    "tanh": np.tanh,
    "identity": lambda z: z,
}


def wnn_forward(layer_banks: Sequence, w: StepKernel, x: GraphonSignal,
                activation: str = "relu") -> GraphonSignal:
    """Layered graphon neural network: X_l = rho(sum_g T_{B_l, W} X_{l-1}).

    layer_banks[l] is a (K, F_in, F_out) tap tensor for layer l.
    """
    rho = _ACT[activation]
    bp = common_refinement(w.breakpoints, x.breakpoints)
    wv = kernel_on(w, bp)
    lengths = np.diff(bp)
    vals = signal_on(x, bp)
    for banks in layer_banks:
        vals = rho(_filter_values(list(banks), wv, lengths, vals))
    return GraphonSignal(bp, vals)


def wrnn_forward(input_bank, hidden_bank, output_bank, w: StepKernel,
                 x: GraphonSignal, rounds: int = 2,
                 act_hidden: str = "relu", act_out: str = "relu") -> GraphonSignal:
    """Graphon recurrent block mirroring the discrete GRNN layer: the input
    signal is re-fed for ``rounds`` rounds with hidden state starting at zero.
    Banks are (K, F_in, H), (K, H, H), (K, H, F_out) tap tensors.
    """
    rho1, rho2 = _ACT[act_hidden], _ACT[act_out]
    bp = common_refinement(w.breakpoints, x.breakpoints)
    wv = kernel_on(w, bp)
    lengths = np.diff(bp)
    xv = signal_on(x, bp)
    bx = _filter_values(list(input_bank), wv, lengths, xv)
    z = rho1(bx)
    for _ in range(rounds - 1):
        z = rho1(bx + _filter_values(list(hidden_bank), wv, lengths, z))
    return GraphonSignal(bp, rho2(_filter_values(list(output_bank), wv, lengths, z)))


def signal_distance(a: GraphonSignal, b: GraphonSignal) -> float:
    if a.num_features != b.num_features:
        raise GraphonError("feature counts differ")
    bp = common_refinement(a.breakpoints, b.breakpoints)
    diff = signal_on(a, bp) - signal_on(b, bp)
    return float(np.sqrt(np.sum(np.diff(bp)[:, None] * diff ** 2)))


# --- spectral quantities -----------------------------------------------------------

@lru_cache(maxsize=64)
def _eigs_cached(kernel: StepKernel) -> np.ndarray:
    lengths = kernel.lengths
    root = np.sqrt(lengths)
    sym = root[:, None] * kernel.values * root[None, :]
    if not np.allclose(sym, sym.T, atol=1e-10):
        raise GraphonError("eigenvalues require a symmetric kernel")
    return np.linalg.eigvalsh((sym + sym.T) / 2.0)


def kernel_eigenvalues(kernel: StepKernel) -> np.ndarray:
    """Real spectrum of the diffusion operator (block operator weighted by
    interval lengths), ascending. The operator also always has 0 in its
    spectrum; callers that compare spectra must append it themselves if the
    discrete list lacks one."""
    return _eigs_cached(kernel)


def kernel_difference(a: StepKernel, b: StepKernel) -> StepKernel:
    bp = common_refinement(a.breakpoints, b.breakpoints)
    return StepKernel(bp, kernel_on(a, bp) - kernel_on(b, bp))


def operator_norm(kernel: StepKernel) -> float:
    """L2 operator norm = spectral radius for symmetric kernels."""
    eigs = kernel_eigenvalues(kernel)
    return float(np.max(np.abs(eigs))) if eigs.size else 0.0


@dataclass(frozen=True)
class SpectralSummary:
    """Spectral facts entering the transfer bound: eigenvalues of the sampled
    operator sorted by |lambda| descending, the count kappa of eigenvalues
    with |lambda| >= eps, and the eps-eigenvalue margin delta against the
    reference operator."""

    eigenvalues: np.ndarray
    kappa: int
    delta: float
    epsilon: float


def _signed_rank(eigs: np.ndarray) -> dict[int, tuple[str, int]]:
    """Index eigenvalues by (sign, rank): positive ones ranked descending,
    negative ones ranked by magnitude descending."""
    order = {}
    pos = sorted([i for i, e in enumerate(eigs) if e > 0],
                 key=lambda i: -eigs[i])
    neg = sorted([i for i, e in enumerate(eigs) if e < 0],
                 key=lambda i: eigs[i])
    for rank, i in enumerate(pos):
        order[i] = ("+", rank)
    for rank, i in enumerate(neg):
        order[i] = ("-", rank)
    return order


def spectral_summary(w: StepKernel, w_prime: StepKernel,
                     eps: float) -> SpectralSummary:
    """kappa of w_prime and the eps-eigenvalue margin between w and w_prime.

    Matching eigenvalues are paired by signed rank (largest positive with
    largest positive, and so on); the margin for a retained eigenvalue of
    w_prime is its distance to every *other* eigenvalue of w. An empty
    eps-band yields delta = +inf.
    """
    if not 0.0 < eps <= 1.0:
        raise GraphonError("eps must lie in (0, 1]")
    eigs_w = np.append(kernel_eigenvalues(w), 0.0)       # 0 is always in the
    eigs_p = np.append(kernel_eigenvalues(w_prime), 0.0)  # operator spectrum
    rank_w = {v: k for k, v in _signed_rank(eigs_w).items()}
    rank_p = _signed_rank(eigs_p)

    kappa = int(np.sum(np.abs(eigs_p) >= eps))
    delta = math.inf
    for i, lam in enumerate(eigs_p):
        if abs(lam) < eps:
            continue
        matched = rank_w.get(rank_p.get(i))
        gaps = [abs(lam - mu) for j, mu in enumerate(eigs_w) if j != matched]
        if gaps:
            delta = min(delta, min(gaps))
    order = np.argsort(-np.abs(eigs_p))
    return SpectralSummary(eigenvalues=eigs_p[order], kappa=kappa,
                           delta=float(delta), epsilon=float(eps))


def theta_bound(omega_big: float, omega_small: float, eps: float,
                w: StepKernel, w_n: StepKernel) -> float:
    """Transfer-bound prefactor (Omega + pi kappa / delta) ||W - W_n|| + 2 omega eps."""
    summary = spectral_summary(w, w_n, eps)
    if summary.delta <= 0.0:
        raise GraphonError("eps-eigenvalue margin is zero; bound undefined")
    norm_diff = operator_norm(kernel_difference(w, w_n))
    band = 0.0 if math.isinf(summary.delta) else math.pi * summary.kappa / summary.delta
    return (omega_big + band) * norm_diff + 2.0 * omega_small * eps


# --- Lipschitz estimates (Assumption 1) ---------------------------------------------

@dataclass(frozen=True)
class LipschitzEstimate:
    """Grid estimates of the filter's spectral response b(lambda): slope
    Omega outside (-eps, eps), slope omega inside, and max |b|."""

    omega_big: float
    omega_small: float
    response_max: float

    @property
    def contractive(self) -> bool:
        return self.response_max < 1.0


def filter_lipschitz(taps, eps: float,
                     grid_points: int = LIPSCHITZ_GRID) -> LipschitzEstimate:
    """Evaluate b(lambda) = sum_k b_k lambda^k and its derivative on a grid
    over [-1, 1] split at +/- eps. Matrix taps are treated per scalar
    (input, output) polynomial and aggregated by max."""
    taps = [np.atleast_2d(np.asarray(t, dtype=np.float64)) for t in taps]
    coeffs = np.stack([t.ravel() for t in taps], axis=0)  # (K, F_in*F_out)
    k = coeffs.shape[0]
    lam = np.linspace(-1.0, 1.0, grid_points)
    powers = np.vander(lam, k, increasing=True)            # lambda^0..lambda^{k-1}
    response = powers @ coeffs                              # (grid, pairs)
    dcoeffs = coeffs[1:] * np.arange(1, k)[:, None]
    slope = (powers[:, :k - 1] @ dcoeffs) if k > 1 else np.zeros_like(response)
    inner = np.abs(lam) < eps
    outer = ~inner
    omega_big = float(np.max(np.abs(slope[outer]))) if outer.any() else 0.0
    omega_small = float(np.max(np.abs(slope[inner]))) if inner.any() else 0.0
    return LipschitzEstimate(omega_big=omega_big, omega_small=omega_small,
                             response_max=float(np.max(np.abs(response))))


def random_contractive_taps(rng: np.random.Generator, order: int, f_in: int,
                            f_out: int, margin: float = 0.9) -> np.ndarray:
    """Random (K, F_in, F_out) taps with sum_k |b_k| < margin per scalar
    polynomial, which guarantees |b(lambda)| < 1 on [-1, 1]."""
    taps = rng.standard_normal((order, f_in, f_out))
    scale = np.sum(np.abs(taps), axis=0, keepdims=True)
    return taps / scale * margin * rng.uniform(0.5, 1.0, size=(1, f_in, f_out))


# --- transfer experiments -------------------------------------------------------------

@dataclass(frozen=True)
class FilterTransferReport:
    n: int
    seed: int
    distance: float
    bound: float
    theta: float
    signal_gap: float
    signal_norm: float
    lipschitz: LipschitzEstimate


def filter_transfer_distance(taps, w: StepKernel, x: GraphonSignal, n: int,
                             seed: int, eps: float = 0.1,
                             labeling: str = "grid") -> FilterTransferReport:
    """Single-filter transfer check: sample a graph from W, induce the step
    pair, and compare the filter output on both sides against the bound
    Theta(Omega, omega) ||X|| + (Omega eps + 2) ||X - X_n||."""
    lip = filter_lipschitz(taps, eps)
    if not lip.contractive:
        raise GraphonError(
            f"Assumption violated: max |b(lambda)| = {lip.response_max:.3f} >= 1")
    graph, labels = sample_graph(w, n, labeling=labeling, seed=seed)
    w_n, x_n = induce(graph, labels, node_samples(x, labels))
    y = graphon_filter(taps, w, x)
    y_n = graphon_filter(taps, w_n, x_n)
    distance = signal_distance(y, y_n)
    theta = theta_bound(lip.omega_big, lip.omega_small, eps, w, w_n)
    gap = signal_distance(x, x_n)
    bound = theta * x.norm() + (lip.omega_big * eps + 2.0) * gap
    return FilterTransferReport(n=n, seed=seed, distance=distance, bound=bound,
                                theta=theta, signal_gap=gap,
                                signal_norm=x.norm(), lipschitz=lip)


def node_samples(x: GraphonSignal, labels: np.ndarray) -> np.ndarray:
    """Pointwise samples [x_n]_i = X(u_i)."""
    idx = _cell_index(x.breakpoints, np.asarray(labels))
    return x.values[idx]


@dataclass(frozen=True)
class WrnnTransferReport:
    n: int
    seed: int
    distance: float
    signal_gap: float
    signal_norm: float
    thetas: tuple
    lipschitz: tuple
    assumption_ok: bool


def wrnn_transfer_distance(input_bank, hidden_bank, output_bank, w: StepKernel,
                           x: GraphonSignal, n: int, seed: int,
                           eps: float = 0.1, rounds: int = 2,
                           labeling: str = "uniform",
                           with_bounds: bool = True) -> WrnnTransferReport:
    """Recurrent-network transfer distance ||Y - Y_n|| plus the computable
    bound ingredients (per-bank Theta terms and the signal gap). The
    existential constants of the limit theorems are not computed; experiments
    check the shrinking-distance trend instead. ``with_bounds=False`` skips
    the eigensolves and reports only distances."""
    lips = tuple(filter_lipschitz(b, eps) for b in (input_bank, hidden_bank,
                                                    output_bank))
    ok = all(l.contractive for l in lips)
    graph, labels = sample_graph(w, n, labeling=labeling, seed=seed)
    w_n, x_n = induce(graph, labels, node_samples(x, labels))
    y = wrnn_forward(input_bank, hidden_bank, output_bank, w, x, rounds=rounds)
    y_n = wrnn_forward(input_bank, hidden_bank, output_bank, w_n, x_n,
                       rounds=rounds)
    thetas = ()
    if with_bounds:
        summary = spectral_summary(w, w_n, eps)
        norm_diff = operator_norm(kernel_difference(w, w_n))
        band = (0.0 if math.isinf(summary.delta)
                else math.pi * summary.kappa / summary.delta)
        thetas = tuple((l.omega_big + band) * norm_diff + 2.0 * l.omega_small * eps
                       for l in lips)
    return WrnnTransferReport(
        n=n, seed=seed, distance=signal_distance(y, y_n),
        signal_gap=signal_distance(x, x_n), signal_norm=x.norm(),
        thetas=thetas, lipschitz=lips, assumption_ok=ok)


# --- action-distribution limit ---------------------------------------------------------

@dataclass(frozen=True)
class StepField:
    """Piecewise-constant bivariate field on [0, 1]^2 with independent row
    and column partitions (rows follow the first signal, columns the second)."""

    row_breakpoints: np.ndarray
    col_breakpoints: np.ndarray
    values: np.ndarray


def kernel_from_head(delta: np.ndarray) -> StepKernel:
    """Step kernel induced by the bilinear head matrix on the uniform
    feature-label partition f_i = (i-1)/F."""
    delta = np.asarray(delta, dtype=np.float64)
    if delta.ndim != 2 or delta.shape[0] != delta.shape[1]:
        raise GraphonError("head matrix must be square")
    return StepKernel(uniform_partition(delta.shape[0]), delta)


def bilinear_field(y1: GraphonSignal, y2: GraphonSignal,
                   delta: np.ndarray) -> StepField:
    """Continuum analog of the bilinear logit head: the field
    X(u, v) = <Y1(u, .), T_{W_Delta} Y2(v, .)> with the feature axis embedded
    in [0, 1] on the uniform partition."""
    if y1.num_features != y2.num_features:
        raise GraphonError("embeddings must share the feature count")
    f = y1.num_features
    w_delta = kernel_from_head(delta)
    # T_{W_Delta} g over the feature axis: (1/F) Delta^T g; inner product
    # carries another 1/F.
    vals = y1.values @ w_delta.values.T @ y2.values.T / (f * f)
    return StepField(y1.breakpoints, y2.breakpoints, vals)


def field_softmax(field: StepField) -> StepField:
    """Continuous softmax density over the bivariate field."""
    vals = field.values
    if not np.any(np.isfinite(vals)):
        raise GraphonError("degenerate softmax: no finite logits")
    lr = np.diff(field.row_breakpoints)
    lc = np.diff(field.col_breakpoints)
    shifted = vals - vals.max()
    ev = np.exp(shifted)
    total = float(np.sum(lr[:, None] * ev * lc[None, :]))
    return StepField(field.row_breakpoints, field.col_breakpoints, ev / total)


def field_distance(a: StepField, b: StepField) -> float:
    """L2([0,1]^2) distance between two step fields."""
    rows = common_refinement(a.row_breakpoints, b.row_breakpoints)
    cols = common_refinement(a.col_breakpoints, b.col_breakpoints)

    def lift(f: StepField) -> np.ndarray:
        r_idx = _cell_index(f.row_breakpoints, (rows[:-1] + rows[1:]) / 2.0)
        c_idx = _cell_index(f.col_breakpoints, (cols[:-1] + cols[1:]) / 2.0)
        return f.values[np.ix_(r_idx, c_idx)]

    diff = lift(a) - lift(b)
    lr, lc = np.diff(rows), np.diff(cols)
    return float(np.sqrt(np.sum(lr[:, None] * diff ** 2 * lc[None, :])))


@dataclass(frozen=True)
class ActionDistReport:
    n: int
    seed: int
    logit_distance: float
    distribution_distance: float


def action_distribution_distance(input_bank, hidden_bank, output_bank,
                                 delta: np.ndarray, w: StepKernel,
                                 x1: GraphonSignal, x2: GraphonSignal, n: int,
                                 seed: int, rounds: int = 2,
                                 labeling: str = "uniform") -> ActionDistReport:
    """Distance between the continuum action distribution and the one induced
    by an n-node sample: builds the bilinear logit fields from the WRNN
    outputs on both sides and compares them and their continuous softmaxes."""
    graph, labels = sample_graph(w, n, labeling=labeling, seed=seed)
    w_n, xn1 = induce(graph, labels, node_samples(x1, labels))
    _, xn2 = induce(graph, labels, node_samples(x2, labels))

    def embed(kernel, sig):
        return wrnn_forward(input_bank, hidden_bank, output_bank, kernel, sig,
                            rounds=rounds)

    logits = bilinear_field(embed(w, x1), embed(w, x2), delta)
    logits_n = bilinear_field(embed(w_n, xn1), embed(w_n, xn2), delta)
    return ActionDistReport(
        n=n, seed=seed,
        logit_distance=field_distance(logits, logits_n),
        distribution_distance=field_distance(field_softmax(logits),
                                             field_softmax(logits_n)))
