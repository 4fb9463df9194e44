"""Experiment configuration: a single JSON file drives every CLI command.

A run is a pure function of its resolved configuration plus the seed; every
output file carries the hash of the resolved configuration so artifacts can
be traced back.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .training import TopologySpec, TrainConfig


class ConfigError(ValueError):
    """Invalid or missing configuration; messages name the offending field."""


_TOPOLOGY_KINDS = ("watts_strogatz", "edge_list", "aus_simple")
_GRAPHON_EXPERIMENTS = ("filter_bound", "wrnn_trend", "action_trend", "all")
_GRAPHON_KERNELS = ("smooth_cosine", "constant")


@dataclass
class BaselineConfig:
    policy: str = "both"              # "uniform" | "adaptive_age" | "both"
    epsilon: float = 1.0


@dataclass
class TransferConfig:
    sizes: tuple = (10, 20, 30)
    episodes_per_size: int = 30


@dataclass
class GraphonConfig:
    experiment: str = "all"
    kernel: str = "smooth_cosine"
    constant_p: float = 0.4
    sizes: tuple = (50, 100, 200, 400)
    num_seeds: int = 20
    eps: float = 0.1
    rounds: int = 2
    hidden_features: int = 4
    filter_order: int = 3
    taps_seed: int = 0
    labeling: str = "grid"
    n_grid: int = 2048
    bound_cases: int = 50


@dataclass
class ExperimentConfig:
    output_dir: str
    topology: TopologySpec
    train: TrainConfig
    baseline: BaselineConfig
    transfer: TransferConfig
    graphon: GraphonConfig
    seed: int = 0
    sigma: float = 1.0

    def resolved(self) -> dict:
        out = {
            "output_dir": self.output_dir,
            "seed": self.seed,
            "sigma": self.sigma,
            "topology": asdict(self.topology),
            "train": asdict(self.train),
            "baseline": asdict(self.baseline),
            "transfer": {**asdict(self.transfer),
                         "sizes": list(self.transfer.sizes)},
            "graphon": {**asdict(self.graphon),
                        "sizes": list(self.graphon.sizes)},
        }
        return out

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.resolved(), sort_keys=True,
                           separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _expect_mapping(raw, path):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object")
    return raw


def _take(raw: dict, key: str, path: str, required: bool = False,
          default=None):
    if key not in raw:
        if required:
            raise ConfigError(f"missing config field: {path}{key}")
        return default
    return raw.pop(key)


def _reject_unknown(raw: dict, path: str):
    if raw:
        name = next(iter(raw))
        raise ConfigError(f"unknown config field: {path}{name}")


def _parse_topology(raw, path="topology.") -> TopologySpec:
    raw = dict(_expect_mapping(raw, path[:-1]))
    kind = _take(raw, "kind", path, required=True)
    if kind not in _TOPOLOGY_KINDS:
        raise ConfigError(f"{path}kind: must be one of {_TOPOLOGY_KINDS}")
    if kind == "watts_strogatz":
        spec = TopologySpec(
            kind=kind,
            num_nodes=int(_take(raw, "num_nodes", path, default=10)),
            k_ring=int(_take(raw, "k_ring", path, default=4)),
            p_rewire=float(_take(raw, "p_rewire", path, default=0.5)),
        )
    elif kind == "edge_list":
        text = _take(raw, "text", path)
        file_path = _take(raw, "path", path)
        if text is None and file_path is None:
            raise ConfigError(f"missing config field: {path}path (or {path}text)")
        if text is None:
            try:
                text = Path(file_path).read_text()
            except OSError as exc:
                raise ConfigError(f"{path}path: cannot read {file_path}: {exc}")
        spec = TopologySpec(kind=kind, edge_list_text=text)
    else:
        spec = TopologySpec(kind="aus_simple")
    _reject_unknown(raw, path)
    return spec


def _parse_train(raw, seed: int, sigma: float, mode: dict,
                 path="train.") -> TrainConfig:
    raw = dict(_expect_mapping(raw, path[:-1])) if raw is not None else {}
    mode = dict(_expect_mapping(mode, "mode")) if mode is not None else {}
    algo = _take(mode, "algo", "mode.", default="mappo")
    oblivious = bool(_take(mode, "oblivious", "mode.", default=False))
    _reject_unknown(mode, "mode.")
    if algo not in ("ippo", "mappo"):
        raise ConfigError("mode.algo: must be 'ippo' or 'mappo'")

    kwargs = dict(algo=algo, oblivious=oblivious, seed=seed, sigma=sigma)
    numeric_fields = {
        "gamma": float, "learning_rate": float, "batch_episodes": int,
        "horizon": int, "gae_lambda": float, "clip_eps": float,
        "epochs_per_update": int, "eval_every": int, "eval_graphs": int,
        "episodes": int, "width": int, "num_layers": int, "rounds": int,
        "filter_order": int, "value_coef": float, "entropy_coef": float,
        "grad_clip": float, "minibatch_size": int,
    }
    for name, cast in numeric_fields.items():
        if name in raw:
            kwargs[name] = cast(raw.pop(name))
    if "normalize_advantages" in raw:
        kwargs["normalize_advantages"] = bool(raw.pop("normalize_advantages"))
    if "optimizer" in raw:
        kwargs["optimizer"] = str(raw.pop("optimizer"))
    if "dtype" in raw:
        kwargs["dtype"] = str(raw.pop("dtype"))
    _reject_unknown(raw, path)
    try:
        return TrainConfig(**kwargs)
    except Exception as exc:
        raise ConfigError(f"train: {exc}")


def _parse_baseline(raw, path="baseline.") -> BaselineConfig:
    raw = dict(_expect_mapping(raw, path[:-1])) if raw is not None else {}
    cfg = BaselineConfig(
        policy=str(_take(raw, "policy", path, default="both")),
        epsilon=float(_take(raw, "epsilon", path, default=1.0)),
    )
    if cfg.policy not in ("uniform", "adaptive_age", "both"):
        raise ConfigError(f"{path}policy: must be uniform, adaptive_age or both")
    if cfg.epsilon <= 0:
        raise ConfigError(f"{path}epsilon: must be positive")
    _reject_unknown(raw, path)
    return cfg


def _parse_transfer(raw, path="transfer.") -> TransferConfig:
    raw = dict(_expect_mapping(raw, path[:-1])) if raw is not None else {}
    sizes = _take(raw, "sizes", path, default=[10, 20, 30])
    cfg = TransferConfig(
        sizes=tuple(int(s) for s in sizes),
        episodes_per_size=int(_take(raw, "episodes_per_size", path, default=30)),
    )
    if not cfg.sizes:
        raise ConfigError(f"{path}sizes: must be a non-empty list")
    _reject_unknown(raw, path)
    return cfg


def _parse_graphon(raw, path="graphon.") -> GraphonConfig:
    raw = dict(_expect_mapping(raw, path[:-1])) if raw is not None else {}
    cfg = GraphonConfig(
        experiment=str(_take(raw, "experiment", path, default="all")),
        kernel=str(_take(raw, "kernel", path, default="smooth_cosine")),
        constant_p=float(_take(raw, "constant_p", path, default=0.4)),
        sizes=tuple(int(s) for s in _take(raw, "sizes", path,
                                          default=[50, 100, 200, 400])),
        num_seeds=int(_take(raw, "num_seeds", path, default=20)),
        eps=float(_take(raw, "eps", path, default=0.1)),
        rounds=int(_take(raw, "rounds", path, default=2)),
        hidden_features=int(_take(raw, "hidden_features", path, default=4)),
        filter_order=int(_take(raw, "filter_order", path, default=3)),
        taps_seed=int(_take(raw, "taps_seed", path, default=0)),
        labeling=str(_take(raw, "labeling", path, default="grid")),
        n_grid=int(_take(raw, "n_grid", path, default=2048)),
        bound_cases=int(_take(raw, "bound_cases", path, default=50)),
    )
    if cfg.experiment not in _GRAPHON_EXPERIMENTS:
        raise ConfigError(f"{path}experiment: must be one of {_GRAPHON_EXPERIMENTS}")
    if cfg.kernel not in _GRAPHON_KERNELS:
        raise ConfigError(f"{path}kernel: must be one of {_GRAPHON_KERNELS}")
    if not 0.0 < cfg.eps <= 1.0:
        raise ConfigError(f"{path}eps: must lie in (0, 1]")
    _reject_unknown(raw, path)
    return cfg


def parse_config(raw: dict) -> ExperimentConfig:
    raw = dict(_expect_mapping(raw, "config"))
    output_dir = _take(raw, "output_dir", "", required=True)
    seed = int(_take(raw, "seed", "", default=0))
    sigma = float(_take(raw, "sigma", "", default=1.0))
    if sigma <= 0:
        raise ConfigError("sigma: must be positive")
    topology = _parse_topology(_take(raw, "topology", "", required=True))
    train = _parse_train(_take(raw, "train", ""), seed, sigma,
                         _take(raw, "mode", ""))
    baseline = _parse_baseline(_take(raw, "baseline", ""))
    transfer = _parse_transfer(_take(raw, "transfer", ""))
    graphon = _parse_graphon(_take(raw, "graphon", ""))
    _reject_unknown(raw, "")
    return ExperimentConfig(
        output_dir=str(output_dir), topology=topology, train=train,
        baseline=baseline, transfer=transfer, graphon=graphon,
        seed=seed, sigma=sigma)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: "
                          f"{exc.msg}")
    return parse_config(raw)
