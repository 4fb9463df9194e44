"""Graph-filter linear algebra, GRNN forward pass, checkpoints, optimizers.

Forward functions accept plain arrays or autodiff ``Var`` objects and work on
arbitrary leading batch dimensions: signals are (..., M, F) and graph shift
operators (..., M, M).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad


class NeuralError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FilterBank:
    """K filter-tap matrices; tap k has shape (F_in, F_out)."""

    taps: tuple

    def __post_init__(self):
        if len(self.taps) < 1:
            raise NeuralError("a filter bank needs at least one tap")
        shape = np.shape(ad.value_of(self.taps[0]))
        for t in self.taps:
            tv = ad.value_of(t)
            if tv.ndim != 2 or tv.shape != shape:
                raise NeuralError("filter taps must share one (F_in, F_out) shape")
            if isinstance(t, np.ndarray) and not np.all(np.isfinite(tv)):
                raise NeuralError("filter taps must be finite")
        object.__setattr__(self, "taps", tuple(self.taps))

    @property
    def order(self) -> int:
        return len(self.taps)

    @property
    def in_features(self) -> int:
        return ad.value_of(self.taps[0]).shape[0]

    @property
    def out_features(self) -> int:
        return ad.value_of(self.taps[0]).shape[1]


@dataclass(frozen=True, eq=False)
class GRNNLayerParams:
    """One graph-recurrent layer: input/hidden/output banks plus the number
    of recurrent rounds the (fixed) input is re-fed."""

    input_bank: FilterBank
    hidden_bank: FilterBank
    output_bank: FilterBank
    rounds: int = 2

    def __post_init__(self):
        h = self.input_bank.out_features
        if self.hidden_bank.in_features != h or self.hidden_bank.out_features != h:
            raise NeuralError("hidden bank must map the hidden width to itself")
        if self.output_bank.in_features != h:
            raise NeuralError("output bank must consume the hidden width")
        if self.rounds < 1:
            raise NeuralError("rounds must be >= 1")


_ACTIVATIONS = {
    "relu": ad.relu,
    "tanh": ad.tanh,
    "identity": lambda x: x,
}


def activation(name: str):
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise NeuralError(f"unknown activation {name!r}") from None


def filter_apply(bank, gso, x):
    """Polynomial graph filter sum_k (Xi^k x) B_k by repeated shifting.

    ``bank`` is a FilterBank or a sequence of tap matrices. Never forms
    matrix powers of the shift operator.
    """
    taps = bank.taps if isinstance(bank, FilterBank) else tuple(bank)
    gso_v = ad.value_of(gso)
    x_v = ad.value_of(x)
    if gso_v.shape[-1] != gso_v.shape[-2]:
        raise NeuralError("graph shift operator must be square")
    if x_v.shape[-2] != gso_v.shape[-1]:
        raise NeuralError(
            f"signal has {x_v.shape[-2]} nodes, gso has {gso_v.shape[-1]}")
    if ad.value_of(taps[0]).shape[0] != x_v.shape[-1]:
        raise NeuralError(
            f"signal has {x_v.shape[-1]} features, taps expect "
            f"{ad.value_of(taps[0]).shape[0]}")
    shifted = x
    out = ad.matmul(x, taps[0])
    for tap in taps[1:]:
        shifted = ad.matmul(gso, shifted)
        out = ad.add(out, ad.matmul(shifted, tap))
    return out


def grnn_forward(layers: Sequence[GRNNLayerParams], gso, x,
                 act_hidden: str = "relu", act_out: str = "relu"):
    """Stacked graph-recurrent layers.

    Per layer: Z_0 = 0, Z_t = rho1(B(Xi) X + C(Xi) Z_{t-1}) for T rounds with
    the layer input X held fixed, then output rho2(D(Xi) Z_T).
    """
    rho1 = activation(act_hidden)
    rho2 = activation(act_out)
    signal = x
    for layer in layers:
        bx = filter_apply(layer.input_bank, gso, signal)
        z = rho1(bx)  # round 1: Z_0 = 0 makes the hidden term vanish
        for _ in range(layer.rounds - 1):
            z = rho1(ad.add(bx, filter_apply(layer.hidden_bank, gso, z)))
        signal = rho2(filter_apply(layer.output_bank, gso, z))
    return signal


def init_filter_bank(rng: np.random.Generator, order: int, f_in: int,
                     f_out: int, scale: float | None = None,
                     dtype=np.float64) -> FilterBank:
    """Random taps scaled so stacked filters neither explode nor vanish."""
    if scale is None:
        scale = 1.0 / np.sqrt(max(1, order * f_in))
    taps = tuple(
        (rng.standard_normal((f_in, f_out)) * scale).astype(dtype)
        for _ in range(order))
    return FilterBank(taps=taps)


def init_grnn_layers(rng: np.random.Generator, feature_dims: Sequence[int],
                     width: int, rounds: int = 2, order: int = 2,
                     dtype=np.float64) -> list[GRNNLayerParams]:
    """Layer stack mapping feature_dims[0] -> ... -> feature_dims[-1] through
    hidden width ``width`` per layer."""
    layers = []
    for f_in, f_out in zip(feature_dims[:-1], feature_dims[1:]):
        layers.append(GRNNLayerParams(
            input_bank=init_filter_bank(rng, order, f_in, width, dtype=dtype),
            hidden_bank=init_filter_bank(rng, order, width, width,
                                         scale=0.5 / np.sqrt(order * width),
                                         dtype=dtype),
            output_bank=init_filter_bank(rng, order, width, f_out, dtype=dtype),
            rounds=rounds,
        ))
    return layers


# --- named parameter trees ---------------------------------------------------

def layers_to_named(layers: Sequence[GRNNLayerParams],
                    prefix: str = "layer") -> dict[str, np.ndarray]:
    named: dict[str, np.ndarray] = {}
    for i, layer in enumerate(layers):
        for bank_name, bank in (("input", layer.input_bank),
                                ("hidden", layer.hidden_bank),
                                ("output", layer.output_bank)):
            for k, tap in enumerate(bank.taps):
                named[f"{prefix}{i}.{bank_name}.tap{k}"] = tap
    return named


def layers_from_named(named: dict, layers_template: Sequence[GRNNLayerParams],
                      prefix: str = "layer") -> list[GRNNLayerParams]:
    """Rebuild a layer stack (possibly of Vars) shaped like the template."""
    rebuilt = []
    for i, layer in enumerate(layers_template):
        banks = {}
        for bank_name, bank in (("input", layer.input_bank),
                                ("hidden", layer.hidden_bank),
                                ("output", layer.output_bank)):
            taps = tuple(named[f"{prefix}{i}.{bank_name}.tap{k}"]
                         for k in range(bank.order))
            banks[bank_name] = FilterBank(taps=taps)
        rebuilt.append(GRNNLayerParams(
            input_bank=banks["input"], hidden_bank=banks["hidden"],
            output_bank=banks["output"], rounds=layer.rounds))
    return rebuilt


# --- checkpoint format --------------------------------------------------------
#
# Flat binary, little-endian, byte-stable for a given parameter dict:
#   magic "RMST" | u32 version | u32 count |
#   per entry (sorted by name): u32 name_len | name utf-8 | u8 dtype code
#   (0 = float64, 1 = float32) | u8 ndim | u32 * ndim shape | raw data

CHECKPOINT_MAGIC = b"RMST"
CHECKPOINT_VERSION = 1
_DTYPE_CODES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}


class CheckpointError(IOError):
    pass


def save_checkpoint(path, named: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(named)))
        for name in sorted(named):
            arr = np.asarray(named[name])
            if arr.dtype == np.float64:
                code = 0
            elif arr.dtype == np.float32:
                code = 1
            else:
                raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code]).tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        version, count = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        named: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            code, ndim = struct.unpack("<BB", fh.read(2))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            dtype = _DTYPE_CODES.get(code)
            if dtype is None:
                raise CheckpointError(f"{path}: unknown dtype code {code}")
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            data = fh.read(n_bytes)
            if len(data) != n_bytes:
                raise CheckpointError(f"{path}: truncated entry {name}")
            named[name] = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
        return named


# --- optimizers ----------------------------------------------------------------

class Adam:
    """Adaptive-moment first-order optimizer over a named parameter dict.
    Updates are in place so existing references stay valid."""

    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (self.lr / corr1) * m / (np.sqrt(v / corr2) + self.eps)


class SGD:
    """Plain gradient descent; used by gradient-check style tests."""

    def __init__(self, params: dict[str, np.ndarray], lr: float):
        self.params = params
        self.lr = lr

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            p -= self.lr * grads[name]


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place to a global L2 norm cap; returns the norm."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale
    return total
