"""Line-oriented experiment configuration.

Format: UTF-8 text, one ``section.key = value`` per line, ``#`` starts a
comment, blank lines ignored. Keys come from a fixed registry; anything else
is rejected with the offending file and line. Later files override earlier
ones when several are merged, and command-line flags override files.
"""

from __future__ import annotations

import os

from .augment import AugConfig, OPERATORS
from .evaluate import TuneSpec
from .nn import ConvBlock, ModelConfig, TrainConfig, default_model_config
from .traces import SplitSpec


class ManifestError(ValueError):
    """Raised for unparseable, unknown or ill-typed manifest content."""


# key -> value kind; the registry doubles as documentation of the format
KNOWN_KEYS = {
    "run.seed": "int",
    "out.dir": "str",
    "data.path": "str",
    "data.trace_len": "int",
    "data.classes": "int",
    "data.per_class": "int",
    "data.noise": "float",
    "split.shots": "int",
    "split.val_per_class": "int",
    "split.test_per_class": "int",
    "aug.r_max": "int",
    "aug.m_len": "int",
    "aug.alpha": "float",
    "aug.order": "str",
    "aug.enable.rotation": "bool",
    "aug.enable.masking": "bool",
    "aug.enable.mixing": "bool",
    "tpe.gamma": "float",
    "tpe.n_startup": "int",
    "tpe.n_candidates": "int",
    "tpe.budget_per_param": "int",
    "tpe.mode": "str",
    "tpe.proxy_epochs": "int",
    "model.blocks": "str",
    "model.kernel": "int",
    "model.fc": "str",
    "train.epochs": "int",
    "train.batch_size": "int",
    "train.lr": "float",
    "train.optimizer": "str",
    "train.momentum": "float",
}

_BOOL = {"true": True, "1": True, "false": False, "0": False}
_MISSING = object()


def parse_manifest_text(text: str, source: str = "<string>") -> dict:
    """Parse one manifest document into a raw key -> string map."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ManifestError(f"{source}:{lineno}: expected 'key = value'")
        key, value = key.strip(), value.strip()
        if key not in KNOWN_KEYS:
            raise ManifestError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ManifestError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def load_manifest_file(path) -> dict:
    if not os.path.exists(path):
        raise ManifestError(f"manifest file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return parse_manifest_text(fh.read(), source=str(path))


class Manifest:
    """Merged manifest values with typed, registry-checked access."""

    def __init__(self, *value_maps: dict):
        merged: dict[str, str] = {}
        for values in value_maps:
            merged.update(values)
        self.values = merged

    @classmethod
    def from_files(cls, paths) -> "Manifest":
        return cls(*[load_manifest_file(p) for p in paths])

    def has(self, key: str) -> bool:
        return key in self.values

    def get(self, key: str, default=_MISSING):
        """Typed lookup. Without a default, a missing key is an error."""
        kind = KNOWN_KEYS.get(key)
        if kind is None:
            raise ManifestError(f"unknown manifest key {key!r}")
        if key not in self.values:
            if default is _MISSING:
                raise ManifestError(f"missing required manifest key {key!r}")
            return default
        raw = self.values[key]
        try:
            if kind == "int":
                return int(raw)
            if kind == "float":
                return float(raw)
            if kind == "bool":
                return _BOOL[raw.lower()]
        except (ValueError, KeyError):
            raise ManifestError(
                f"manifest key {key!r}: {raw!r} is not a {kind}") from None
        return raw


def format_manifest(values: dict) -> str:
    """Render keys back to manifest syntax (registry order, one per line)."""
    unknown = set(values) - set(KNOWN_KEYS)
    if unknown:
        raise ManifestError(f"unknown manifest keys {sorted(unknown)}")
    lines = [f"{key} = {values[key]}" for key in KNOWN_KEYS if key in values]
    return "\n".join(lines) + "\n"


def parse_operator_order(raw: str) -> tuple:
    order = tuple(part.strip() for part in raw.split(","))
    if sorted(order) != sorted(OPERATORS):
        raise ManifestError(
            f"aug.order must list {', '.join(OPERATORS)} exactly once, "
            f"got {raw!r}")
    return order


def aug_config_from_manifest(m: Manifest, trace_len: int,
                             default_order=OPERATORS) -> AugConfig | None:
    """Build the augmentation config, or None when every operator is off."""
    enabled = {op: m.get(f"aug.enable.{op}", False) for op in OPERATORS}
    if not any(enabled.values()):
        return None
    order = default_order
    if m.has("aug.order"):
        order = parse_operator_order(m.get("aug.order"))
    cfg = AugConfig(r_max=m.get("aug.r_max", 20), m_len=m.get("aug.m_len", 180),
                    alpha=m.get("aug.alpha", 0.1), order=order, enabled=enabled)
    if enabled["masking"] and cfg.m_len >= trace_len:
        raise ManifestError(
            f"aug.m_len = {cfg.m_len} must be < trace length {trace_len}")
    if enabled["rotation"] and cfg.r_max > trace_len:
        raise ManifestError(
            f"aug.r_max = {cfg.r_max} must be <= trace length {trace_len}")
    return cfg


def split_spec_from_manifest(m: Manifest, seed: int) -> SplitSpec:
    return SplitSpec(shots=m.get("split.shots"),
                     val_per_class=m.get("split.val_per_class"),
                     test_per_class=m.get("split.test_per_class"),
                     seed=seed)


def train_config_from_manifest(m: Manifest, seed: int) -> TrainConfig:
    return TrainConfig(epochs=m.get("train.epochs", 150),
                       batch_size=m.get("train.batch_size", 32),
                       lr=m.get("train.lr", 1e-3),
                       optimizer=m.get("train.optimizer", "adam"),
                       momentum=m.get("train.momentum", 0.9),
                       seed=seed)


def tune_spec_from_manifest(m: Manifest, order,
                            mode: str | None = None,
                            budget: int | None = None) -> TuneSpec:
    """tpe.* keys with optional flag overrides for mode and budget."""
    defaults = TuneSpec()
    if mode is None:
        mode = m.get("tpe.mode", defaults.mode)
    if budget is None:
        budget = m.get("tpe.budget_per_param", None)
    return TuneSpec(mode=mode, order=order, budget_per_param=budget,
                    proxy_epochs=m.get("tpe.proxy_epochs", defaults.proxy_epochs),
                    gamma=m.get("tpe.gamma", defaults.gamma),
                    n_startup=m.get("tpe.n_startup", defaults.n_startup),
                    n_candidates=m.get("tpe.n_candidates", defaults.n_candidates))


def _parse_block(item: str, kernel: int) -> ConvBlock:
    parts = item.split(":")
    if len(parts) not in (2, 3):
        raise ManifestError(
            f"model.blocks item {item!r} must be 'channels:dilation' or "
            f"'channels:dilation:pool'")
    try:
        out_channels, dilation = int(parts[0]), int(parts[1])
    except ValueError:
        raise ManifestError(
            f"model.blocks item {item!r}: channels and dilation must be "
            f"integers") from None
    pool = parts[2] if len(parts) == 3 else "none"
    try:
        return ConvBlock(out_channels, kernel=kernel, dilation=dilation,
                         pool=pool)
    except ValueError as exc:
        raise ManifestError(f"model.blocks item {item!r}: {exc}") from None


def model_config_from_manifest(m: Manifest, input_len: int,
                               num_classes: int) -> ModelConfig:
    """model.blocks as 'ch:dil[:pool],...'; model.fc lists hidden widths.

    Without model.blocks the stock architecture is used, and the other
    model.* keys must be absent (they would be silently ignored otherwise).
    """
    if not m.has("model.blocks"):
        for key in ("model.kernel", "model.fc"):
            if m.has(key):
                raise ManifestError(f"{key} requires model.blocks")
        return default_model_config(input_len, num_classes)
    kernel = m.get("model.kernel", 3)
    blocks = tuple(_parse_block(item.strip(), kernel)
                   for item in m.get("model.blocks").split(","))
    fc_raw = m.get("model.fc", "")
    try:
        hidden = tuple(int(w) for w in fc_raw.split(",") if w.strip())
    except ValueError:
        raise ManifestError(
            f"model.fc: {fc_raw!r} must be comma-separated integers") from None
    try:
        return ModelConfig(input_len=input_len, num_classes=num_classes,
                           blocks=blocks, fc=hidden + (num_classes,))
    except ValueError as exc:
        raise ManifestError(f"model configuration invalid: {exc}") from None
