"""Experiment configuration: YAML parsing, defaults, validation, round trip.

One config file describes one reproducible run.  Missing keys take the
defaults below (K=20 clients, 5 per round, E=1, B=16, Adadelta lr 0.005,
100 rounds, 90/10 split); unknown keys are rejected with a line number so
typos cannot silently change an experiment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
import yaml

from .federation import AGGREGATORS, BALANCING_MODES, FederationConfig
from .model import ARCH_KINDS, ArchSpec, OptimizerState
from .partition import PartitionSpec


class ConfigError(ValueError):
    """Invalid configuration text; carries a 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class DatasetConfig:
    source: str = "synthetic"  # "synthetic" | "file"
    path: str | None = None
    num_classes: int = 4
    per_class: int = 100
    height: int = 16
    width: int = 16
    noise_sigma: float = 0.1


@dataclass(frozen=True)
class ReportConfig:
    protocol_trace: bool = False
    divergence_reference: str | None = None
    timing: bool = False
    stability_window: int = 20


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig
    test_fraction: float
    partition: PartitionSpec
    federation: FederationConfig
    report: ReportConfig


_SCHEMA = {
    "dataset": {"source", "path", "num_classes", "per_class", "height", "width", "noise_sigma"},
    "test_fraction": None,
    "partition": {"num_clients", "mode", "alpha"},
    "federation": {
        "rounds",
        "clients_per_round",
        "local_epochs",
        "batch_size",
        "aggregator",
        "balancing",
        "seed",
    },
    "model": {"arch", "hidden", "filters"},
    "optimizer": {"kind", "lr", "rho", "eps"},
    "report": {"protocol_trace", "divergence_reference", "timing", "stability_window"},
}


def _find_line(text: str, key: str) -> int | None:
    pattern = re.compile(rf"^\s*{re.escape(key)}\s*:")
    for i, line in enumerate(text.splitlines(), start=1):
        if pattern.match(line):
            return i
    return None


def _reject_unknown(raw: dict, text: str) -> None:
    for key, value in raw.items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key {key!r}", _find_line(text, key))
        allowed = _SCHEMA[key]
        if allowed is None or value is None:
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"section {key!r} must be a mapping", _find_line(text, key))
        for sub in value:
            if sub not in allowed:
                raise ConfigError(f"unknown key {key}.{sub}", _find_line(text, sub))


def _get(raw: dict, section: str, key: str, default, types, text: str):
    value = (raw.get(section) or {}).get(key, default)
    if value is None:
        return None
    if types is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if types is int and isinstance(value, bool):
        raise ConfigError(f"{section}.{key} must be an integer", _find_line(text, key))
    if not isinstance(value, types if isinstance(types, tuple) else (types,)):
        raise ConfigError(
            f"{section}.{key} has the wrong type ({type(value).__name__})",
            _find_line(text, key),
        )
    return value


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate YAML config text, applying defaults."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        line = None
        mark = getattr(exc, "problem_mark", None)
        if mark is not None:
            line = mark.line + 1
        raise ConfigError(f"not valid YAML: {exc}", line) from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of sections")
    _reject_unknown(raw, text)

    ds = DatasetConfig(
        source=_get(raw, "dataset", "source", "synthetic", str, text),
        path=_get(raw, "dataset", "path", None, str, text),
        num_classes=_get(raw, "dataset", "num_classes", 4, int, text),
        per_class=_get(raw, "dataset", "per_class", 100, int, text),
        height=_get(raw, "dataset", "height", 16, int, text),
        width=_get(raw, "dataset", "width", 16, int, text),
        noise_sigma=_get(raw, "dataset", "noise_sigma", 0.1, float, text),
    )
    if ds.source not in ("synthetic", "file"):
        raise ConfigError("dataset.source must be 'synthetic' or 'file'", _find_line(text, "source"))
    if ds.source == "file" and not ds.path:
        raise ConfigError("dataset.source 'file' requires dataset.path", _find_line(text, "source"))

    test_fraction = raw.get("test_fraction", 0.1)
    if isinstance(test_fraction, int) and not isinstance(test_fraction, bool):
        test_fraction = float(test_fraction)
    if not isinstance(test_fraction, float):
        raise ConfigError("test_fraction must be a number", _find_line(text, "test_fraction"))
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction must be in (0, 1)", _find_line(text, "test_fraction"))

    num_clients = _get(raw, "partition", "num_clients", 20, int, text)
    mode = _get(raw, "partition", "mode", "iid", str, text)
    alpha = (raw.get("partition") or {}).get("alpha", 1.0)
    try:
        if mode == "iid":
            part = PartitionSpec.iid(num_clients)
        else:
            part = PartitionSpec.dirichlet(num_clients, alpha)
    except ValueError as exc:
        raise ConfigError(str(exc), _find_line(text, "mode") or _find_line(text, "num_clients")) from None

    arch_kind = _get(raw, "model", "arch", "softmax", str, text)
    if arch_kind not in ARCH_KINDS:
        raise ConfigError(f"model.arch must be one of {ARCH_KINDS}", _find_line(text, "arch"))
    try:
        arch = ArchSpec(
            kind=arch_kind,
            image_shape=(ds.height, ds.width),
            num_classes=ds.num_classes,
            hidden=_get(raw, "model", "hidden", 32, int, text) if arch_kind == "mlp" else 0,
            filters=_get(raw, "model", "filters", 8, int, text) if arch_kind == "tinyconv" else 0,
        )
    except ValueError as exc:
        raise ConfigError(str(exc), _find_line(text, "arch")) from None

    opt_kind = _get(raw, "optimizer", "kind", "adadelta", str, text)
    try:
        optimizer = OptimizerState(
            kind=opt_kind,
            lr=_get(raw, "optimizer", "lr", 0.005, float, text),
            rho=_get(raw, "optimizer", "rho", 0.9, float, text),
            eps=_get(raw, "optimizer", "eps", 1e-6, float, text),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), _find_line(text, "kind")) from None

    try:
        fed = FederationConfig(
            num_rounds=_get(raw, "federation", "rounds", 100, int, text),
            clients_per_round=_get(raw, "federation", "clients_per_round", 5, int, text),
            local_epochs=_get(raw, "federation", "local_epochs", 1, int, text),
            batch_size=_get(raw, "federation", "batch_size", 16, int, text),
            aggregator=_get(raw, "federation", "aggregator", "fedavg", str, text),
            balancing=_get(raw, "federation", "balancing", "none", str, text),
            optimizer=optimizer,
            arch=arch,
            master_seed=_get(raw, "federation", "seed", 0, int, text),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), _find_line(text, "rounds")) from None
    if fed.clients_per_round > part.num_clients:
        raise ConfigError(
            f"clients_per_round ({fed.clients_per_round}) exceeds num_clients ({part.num_clients})",
            _find_line(text, "clients_per_round"),
        )

    report = ReportConfig(
        protocol_trace=_get(raw, "report", "protocol_trace", False, bool, text),
        divergence_reference=_get(raw, "report", "divergence_reference", None, str, text),
        timing=_get(raw, "report", "timing", False, bool, text),
        stability_window=_get(raw, "report", "stability_window", 20, int, text),
    )
    if report.stability_window < 2:
        raise ConfigError("report.stability_window must be >= 2", _find_line(text, "stability_window"))

    return ExperimentConfig(ds, test_fraction, part, fed, report)


def dump_config(cfg: ExperimentConfig) -> str:
    """Effective config as YAML; parse(dump(cfg)) reproduces cfg exactly."""
    alphas = cfg.partition.alphas
    alpha_out: float | list[float] | None
    if alphas is None:
        alpha_out = None
    elif len(set(alphas)) == 1:
        alpha_out = alphas[0]
    else:
        alpha_out = list(alphas)
    doc = {
        "dataset": {
            "source": cfg.dataset.source,
            "path": cfg.dataset.path,
            "num_classes": cfg.dataset.num_classes,
            "per_class": cfg.dataset.per_class,
            "height": cfg.dataset.height,
            "width": cfg.dataset.width,
            "noise_sigma": cfg.dataset.noise_sigma,
        },
        "test_fraction": cfg.test_fraction,
        "partition": {
            "num_clients": cfg.partition.num_clients,
            "mode": cfg.partition.mode,
        },
        "federation": {
            "rounds": cfg.federation.num_rounds,
            "clients_per_round": cfg.federation.clients_per_round,
            "local_epochs": cfg.federation.local_epochs,
            "batch_size": cfg.federation.batch_size,
            "aggregator": cfg.federation.aggregator,
            "balancing": cfg.federation.balancing,
            "seed": cfg.federation.master_seed,
        },
        "model": {
            "arch": cfg.federation.arch.kind,
            "hidden": cfg.federation.arch.hidden,
            "filters": cfg.federation.arch.filters,
        },
        "optimizer": {
            "kind": cfg.federation.optimizer.kind,
            "lr": cfg.federation.optimizer.lr,
            "rho": cfg.federation.optimizer.rho,
            "eps": cfg.federation.optimizer.eps,
        },
        "report": {
            "protocol_trace": cfg.report.protocol_trace,
            "divergence_reference": cfg.report.divergence_reference,
            "timing": cfg.report.timing,
            "stability_window": cfg.report.stability_window,
        },
    }
    if alpha_out is not None:
        doc["partition"]["alpha"] = alpha_out
    if doc["dataset"]["path"] is None:
        del doc["dataset"]["path"]
    if doc["report"]["divergence_reference"] is None:
        del doc["report"]["divergence_reference"]
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=False)
