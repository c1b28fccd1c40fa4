"""Run configuration: TOML loading, defaults, and strict validation.

The file format is a flat-with-sections TOML subset. Unknown keys are
rejected (typo safety), every value is range-checked, and cross-field
constraints (schedule coverage, ring size, referenced files) are enforced
at load time so a run can only start from a coherent description.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:                       # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .optim import Algo, SumHyper

ALGO_NAMES = tuple(a.value for a in Algo)
MODEL_NAMES = ("synthetic", "logreg", "mlp")
TOPOLOGY_NAMES = ("full_mesh", "ring", "custom")

# Task defaults for the learning rate, found by the eta grid sweep at desk
# scale; applied when the config leaves hyper.eta unset.
DEFAULT_ETA = {"synthetic": 0.1, "logreg": 0.1, "mlp": 0.1}


@dataclass(frozen=True)
class SyntheticDataConfig:
    classes: int = 4
    dim: int = 16
    samples: int = 2000
    blob_stddev: float = 1.0
    test_samples: int = 1000


@dataclass(frozen=True)
class RunConfig:
    seed: int
    workers: int
    epochs: int
    model: str
    hyper: SumHyper
    parallelism: int = 1
    diag_every: int = 1
    topology: Optional[str] = None            # None -> default schedule
    custom_adjacency: Optional[str] = None
    schedule: Optional[tuple[tuple[int, str], ...]] = None
    data_source: str = "synthetic"
    data_path: Optional[str] = None
    data_format: str = "csv"
    dirichlet_conc: float = 1.0
    batch_size: int = 32                      # 0 means full-shard gradients
    synthetic_data: SyntheticDataConfig = field(default_factory=SyntheticDataConfig)
    mlp_hidden: int = 16
    synthetic_model_dim: int = 16
    synthetic_model_amplitude: float = 1.0


def _type_name(value) -> str:
    return type(value).__name__


class _Section:
    """Key-checked view over one TOML table."""

    def __init__(self, raw: dict, path: str = ""):
        self.raw = raw
        self.path = path
        self.seen: set[str] = set()

    def _label(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def take(self, key: str, kind, default, required: bool = False):
        self.seen.add(key)
        if key not in self.raw:
            if required:
                raise ConfigError(f"missing required key '{self._label(key)}'")
            return default
        value = self.raw[key]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if kind is int and isinstance(value, bool):
            raise ConfigError(f"key '{self._label(key)}' must be an integer")
        if not isinstance(value, kind):
            raise ConfigError(
                f"key '{self._label(key)}' must be {kind.__name__}, "
                f"got {_type_name(value)}")
        return value

    def subsection(self, key: str) -> "_Section":
        self.seen.add(key)
        sub = self.raw.get(key, {})
        if not isinstance(sub, dict):
            raise ConfigError(f"key '{self._label(key)}' must be a table")
        return _Section(sub, self._label(key))

    def reject_unknown(self):
        for key in self.raw:
            if key not in self.seen:
                raise ConfigError(f"unknown key '{self._label(key)}'")


def _check(cond: bool, message: str):
    if not cond:
        raise ConfigError(message)


def parse_override(text: str) -> tuple[str, object]:
    """Parse a ``--set key=value`` item; values use TOML scalar syntax loosely."""
    if "=" not in text:
        raise ConfigError(f"override '{text}' must look like key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    raw = raw.strip()
    if not key:
        raise ConfigError(f"override '{text}' has an empty key")
    value: object
    if raw.lower() in ("true", "false"):
        value = raw.lower() == "true"
    else:
        try:
            value = int(raw)
        except ValueError:
            try:
                value = float(raw)
            except ValueError:
                value = raw.strip("\"'")
    return key, value


def apply_overrides(raw: dict, overrides) -> dict:
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override '{key}' descends through a scalar")
        node[parts[-1]] = value
    return raw


def load_config(path: str, overrides=()) -> RunConfig:
    """Load, override, and validate a run configuration file."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config {path!r}: {exc}") from exc
    raw = apply_overrides(raw, overrides)
    return validate_config(raw, base_dir=os.path.dirname(os.path.abspath(path)))


def validate_config(raw: dict, base_dir: str = ".") -> RunConfig:
    top = _Section(raw)

    seed = top.take("seed", int, 0)
    workers = top.take("workers", int, None, required=True)
    epochs = top.take("epochs", int, None, required=True)
    algo_name = top.take("algo", str, "dsum")
    model = top.take("model", str, None, required=True)
    parallelism = top.take("parallelism", int, 1)
    diag_every = top.take("diag_every", int, 1)
    topology = top.take("topology", str, None)
    custom_adjacency = top.take("custom_adjacency", str, None)
    schedule_raw = top.take("schedule", list, None)

    _check(seed >= 0, "seed must be non-negative")
    _check(workers >= 1, "workers must be >= 1")
    _check(epochs >= 1, "epochs must be >= 1")
    _check(algo_name in ALGO_NAMES, f"algo must be one of {ALGO_NAMES}, got '{algo_name}'")
    _check(model in MODEL_NAMES, f"model must be one of {MODEL_NAMES}, got '{model}'")
    _check(parallelism >= 1, "parallelism must be >= 1")
    _check(diag_every >= 1, "diag_every must be >= 1")

    hyper_sec = top.subsection("hyper")
    alpha = hyper_sec.take("alpha", float, 2.0)
    beta = hyper_sec.take("beta", float, 0.9)
    eta = hyper_sec.take("eta", float, DEFAULT_ETA[model])
    lam = hyper_sec.take("lambda", float, 0.8)
    k_local = hyper_sec.take("k_local", int, 10)
    hyper_sec.reject_unknown()

    _check(alpha >= 0, f"hyper.alpha must be >= 0, got {alpha}")
    _check(0.0 <= beta < 1.0, f"hyper.beta must lie in [0, 1), got {beta}")
    _check(eta > 0, f"hyper.eta must be positive, got {eta}")
    _check(0.0 <= lam <= 1.0, f"hyper.lambda must lie in [0, 1], got {lam}")
    _check(k_local >= 1, f"hyper.k_local must be >= 1, got {k_local}")

    data_sec = top.subsection("data")
    data_source = data_sec.take("source", str, "synthetic")
    data_path = data_sec.take("path", str, None)
    data_format = data_sec.take("format", str, "csv")
    dirichlet_conc = data_sec.take("dirichlet_conc", float, 1.0)
    batch_size = data_sec.take("batch_size", int, 32)
    syn_sec = data_sec.subsection("synthetic")
    syn = SyntheticDataConfig(
        classes=syn_sec.take("classes", int, 4),
        dim=syn_sec.take("dim", int, 16),
        samples=syn_sec.take("samples", int, 2000),
        blob_stddev=syn_sec.take("blob_stddev", float, 1.0),
        test_samples=syn_sec.take("test_samples", int, 1000),
    )
    syn_sec.reject_unknown()
    data_sec.reject_unknown()

    _check(data_source in ("synthetic", "file"),
           f"data.source must be 'synthetic' or 'file', got '{data_source}'")
    _check(data_format in ("csv", "idx"),
           f"data.format must be 'csv' or 'idx', got '{data_format}'")
    _check(dirichlet_conc > 0, f"data.dirichlet_conc must be positive, got {dirichlet_conc}")
    _check(batch_size >= 0, "data.batch_size must be >= 0 (0 = full shard)")
    _check(syn.classes >= 1 and syn.dim >= 1 and syn.samples >= 1,
           "data.synthetic classes/dim/samples must all be >= 1")
    _check(syn.blob_stddev >= 0, "data.synthetic.blob_stddev must be >= 0")
    _check(syn.test_samples >= 0, "data.synthetic.test_samples must be >= 0")

    mlp_sec = top.subsection("mlp")
    mlp_hidden = mlp_sec.take("hidden", int, 16)
    mlp_sec.reject_unknown()
    _check(mlp_hidden >= 1, "mlp.hidden must be >= 1")

    syn_model_sec = top.subsection("synthetic_model")
    syn_model_dim = syn_model_sec.take("dim", int, 16)
    syn_model_amplitude = syn_model_sec.take("amplitude", float, 1.0)
    syn_model_sec.reject_unknown()
    _check(syn_model_dim >= 1, "synthetic_model.dim must be >= 1")
    _check(syn_model_amplitude >= 0, "synthetic_model.amplitude must be >= 0")

    top.reject_unknown()

    # Topology cross-checks.
    if topology is not None:
        _check(topology in TOPOLOGY_NAMES,
               f"topology must be one of {TOPOLOGY_NAMES}, got '{topology}'")
        _check(schedule_raw is None, "give either 'topology' or 'schedule', not both")
    schedule = None
    if schedule_raw is not None:
        entries = []
        last = 0
        for pos, item in enumerate(schedule_raw):
            sec = _Section(item if isinstance(item, dict) else {}, f"schedule[{pos}]")
            _check(isinstance(item, dict), f"schedule[{pos}] must be a table")
            until = sec.take("until_epoch", int, None, required=True)
            kind = sec.take("topology", str, None, required=True)
            sec.reject_unknown()
            _check(kind in TOPOLOGY_NAMES,
                   f"schedule[{pos}].topology must be one of {TOPOLOGY_NAMES}")
            _check(until > last,
                   f"schedule[{pos}].until_epoch must increase past {last}")
            entries.append((until, kind))
            last = until
        _check(last == epochs,
               f"schedule must cover [0, {epochs}) but ends at {last}")
        schedule = tuple(entries)

    ring_used = (topology == "ring"
                 or (schedule is not None and any(k == "ring" for _, k in schedule)))
    _check(not ring_used or workers >= 3, "ring topology needs workers >= 3")

    custom_used = (topology == "custom"
                   or (schedule is not None and any(k == "custom" for _, k in schedule)))
    if custom_used:
        _check(custom_adjacency is not None,
               "custom topology needs 'custom_adjacency' to point at a 0/1 matrix file")
        custom_adjacency = _resolve(custom_adjacency, base_dir)
        _check(os.path.exists(custom_adjacency),
               f"custom_adjacency file not found: {custom_adjacency}")

    if data_source == "file":
        _check(data_path is not None, "data.source = 'file' needs data.path")
        data_path = _resolve(data_path, base_dir)
        probe = data_path + "-images-idx3-ubyte" if data_format == "idx" else data_path
        _check(os.path.exists(probe), f"dataset file not found: {probe}")
        _check(workers <= 10**9, "workers out of range")
    else:
        _check(workers <= syn.samples,
               f"workers ({workers}) cannot exceed synthetic samples ({syn.samples})")

    if model in ("logreg", "mlp") and data_source == "synthetic":
        _check(syn.classes >= 2, f"model '{model}' needs data.synthetic.classes >= 2")

    hyper = SumHyper(alpha=alpha, beta=beta, eta=eta, lam=lam,
                     k_local=k_local, algo=Algo(algo_name))
    return RunConfig(
        seed=seed, workers=workers, epochs=epochs, model=model, hyper=hyper,
        parallelism=parallelism, diag_every=diag_every, topology=topology,
        custom_adjacency=custom_adjacency, schedule=schedule,
        data_source=data_source, data_path=data_path, data_format=data_format,
        dirichlet_conc=dirichlet_conc, batch_size=batch_size,
        synthetic_data=syn, mlp_hidden=mlp_hidden,
        synthetic_model_dim=syn_model_dim,
        synthetic_model_amplitude=syn_model_amplitude,
    )


def _resolve(path: str, base_dir: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base_dir, path)
