"""TOML experiment configuration.

Key naming is deliberately explicit about which learning rate is which:
`gamma_values` steps the value nodes during inference, `alpha_weights`
steps the weights. Validation collects every problem it finds before
raising, so a bad file reports all its mistakes at once.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

from .core import ConfigurationError
from .engine import TrainSchedule


class ConfigError(ConfigurationError):
    """Invalid experiment configuration; message lists every problem."""


@dataclass
class DataConfig:
    dir: str = ""
    train_limit: int = 0  # 0 means all
    test_limit: int = 0
    with_labels: bool = True
    synthesize: bool = True
    subset_seed: int = 0


@dataclass
class TopologyConfig:
    kind: str = "fully_connected"
    n: int = 200
    d: int = 0  # 0 means derive from data (pixels [+ labels])
    dims: list = field(default_factory=list)
    direction: str = "from_sensory"
    lateral: bool = False
    recurrent: bool = False
    label_layer: bool = False
    cluster_sizes: list = field(default_factory=list)
    inter_edges: list = field(default_factory=list)
    p: float = 0.1
    k_frac: float = 0.2
    activation: str = "hardtanh"
    seed: int = 0


@dataclass
class QueryConfig:
    T: int = 256
    gamma_values: float = 0.5
    init_policy: str = "zeros"
    init_seed: int = 0
    chunk: int = 512


@dataclass
class TaskConfig:
    kind: str = "classify"
    limit: int = 0
    label: int = 0
    corruption: str = "gaussian"
    variance: float = 0.25
    fraction: float = 0.5
    region: str = "top"
    seed: int = 0
    memories: int = 50
    retrieval_T: int = 256
    grid: list = field(default_factory=lambda: [2, 5])


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    out_dir: str = "runs/experiment"
    data: DataConfig = field(default_factory=DataConfig)
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    query: QueryConfig = field(default_factory=QueryConfig)
    tasks: list = field(default_factory=list)
    digest: str = ""
    baseline_dims: list = field(default_factory=list)
    baseline_epochs: int = 10
    baseline_alpha: float = 1e-3


_SCHEDULE_KEYS = {
    "T": "T", "gamma_values": "gamma", "alpha_weights": "alpha",
    "epochs": "epochs", "batch_size": "batch_size", "optimizer": "optimizer",
    "weight_decay": "weight_decay", "shuffle": "shuffle", "seed": "seed",
    "trace_every": "trace_every", "init": "init", "init_sigma": "init_sigma",
    "sweeps": "sweeps",
}


def _fill(obj, section: dict, errors: list, where: str, rename: dict | None = None):
    rename = rename or {}
    fields = set(vars(obj).keys())
    for key, val in section.items():
        attr = rename.get(key, key)
        if attr not in fields:
            errors.append(f"[{where}] unknown key {key!r}")
            continue
        cur = getattr(obj, attr)
        if isinstance(cur, bool) and not isinstance(val, bool):
            errors.append(f"[{where}] {key} must be a boolean, got {val!r}")
            continue
        if isinstance(cur, int) and not isinstance(cur, bool) and isinstance(val, bool):
            errors.append(f"[{where}] {key} must be a number, got {val!r}")
            continue
        if isinstance(cur, float) and isinstance(val, int):
            val = float(val)
        if cur is not None and not isinstance(val, type(cur)) and not isinstance(cur, list):
            errors.append(f"[{where}] {key} expects {type(cur).__name__}, got {type(val).__name__}")
            continue
        setattr(obj, attr, val)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from e
    try:
        doc = tomllib.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"{path}: not valid TOML: {e}") from e

    errors: list = []
    cfg = ExperimentConfig()
    cfg.digest = hashlib.sha256(raw).hexdigest()[:16]

    known = {"experiment", "data", "topology", "schedule", "query", "task", "baseline"}
    for key in doc:
        if key not in known:
            errors.append(f"unknown section [{key}]")

    exp = doc.get("experiment", {})
    _fill_simple = {"name": str, "seed": int, "out_dir": str}
    for key, val in exp.items():
        if key not in _fill_simple:
            errors.append(f"[experiment] unknown key {key!r}")
        elif not isinstance(val, _fill_simple[key]):
            errors.append(f"[experiment] {key} expects {_fill_simple[key].__name__}")
        else:
            setattr(cfg, key, val)

    _fill(cfg.data, doc.get("data", {}), errors, "data")
    _fill(cfg.topology, doc.get("topology", {}), errors, "topology")

    sched_doc = doc.get("schedule", {})
    for key in sched_doc:
        if key not in _SCHEDULE_KEYS:
            if key in ("gamma", "alpha"):
                errors.append(f"[schedule] ambiguous key {key!r}: use gamma_values "
                              f"(value-node step) or alpha_weights (weight step)")
            else:
                errors.append(f"[schedule] unknown key {key!r}")
    kw = {_SCHEDULE_KEYS[k]: v for k, v in sched_doc.items() if k in _SCHEDULE_KEYS}
    try:
        cfg.schedule = TrainSchedule(**kw)
    except (ConfigurationError, TypeError) as e:
        errors.append(f"[schedule] {e}")

    _fill(cfg.query, doc.get("query", {}), errors, "query")

    base = doc.get("baseline", {})
    for key, val in base.items():
        if key == "dims":
            cfg.baseline_dims = list(val)
        elif key == "epochs":
            cfg.baseline_epochs = int(val)
        elif key == "alpha":
            cfg.baseline_alpha = float(val)
        else:
            errors.append(f"[baseline] unknown key {key!r}")

    for i, tdoc in enumerate(doc.get("task", [])):
        tc = TaskConfig()
        _fill(tc, tdoc, errors, f"task.{i}")
        cfg.tasks.append(tc)

    _validate(cfg, errors)
    if errors:
        raise ConfigError(f"{path}:\n  " + "\n  ".join(errors))
    return cfg


_TASK_KINDS = ("classify", "generate", "reconstruct", "denoise", "am")
_TOPOLOGY_KINDS = ("fully_connected", "layered", "assembly")


def _validate(cfg: ExperimentConfig, errors: list):
    t = cfg.topology
    if t.kind not in _TOPOLOGY_KINDS:
        errors.append(f"[topology] kind must be one of {_TOPOLOGY_KINDS}, got {t.kind!r}")
    if t.kind == "fully_connected" and t.n < 2:
        errors.append(f"[topology] n must be >= 2, got {t.n}")
    if t.kind == "layered":
        if len(t.dims) < 2:
            errors.append(f"[topology] layered needs >= 2 dims, got {t.dims}")
        if t.direction not in ("from_sensory", "toward_sensory"):
            errors.append(f"[topology] unknown direction {t.direction!r}")
    if t.kind == "assembly":
        if not t.cluster_sizes:
            errors.append("[topology] assembly needs cluster_sizes")
        if not 0.0 < t.p <= 1.0:
            errors.append(f"[topology] p must be in (0, 1], got {t.p}")
        if not 0.0 < t.k_frac <= 1.0:
            errors.append(f"[topology] k_frac must be in (0, 1], got {t.k_frac}")
    if t.activation not in ("identity", "hardtanh", "tanh", "relu"):
        errors.append(f"[topology] unknown activation {t.activation!r}")
    q = cfg.query
    if q.T < 1:
        errors.append(f"[query] T must be >= 1, got {q.T}")
    if not 0.0 < q.gamma_values <= 1.0:
        errors.append(f"[query] gamma_values must be in (0, 1], got {q.gamma_values}")
    if q.init_policy not in ("zeros", "gaussian", "uniform"):
        errors.append(f"[query] unknown init_policy {q.init_policy!r}")
    for i, tc in enumerate(cfg.tasks):
        if tc.kind not in _TASK_KINDS:
            errors.append(f"[task.{i}] kind must be one of {_TASK_KINDS}, got {tc.kind!r}")
        if tc.kind in ("generate",) and not 0 <= tc.label <= 9:
            errors.append(f"[task.{i}] label must be a digit, got {tc.label}")
