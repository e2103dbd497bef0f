"""Experiment configuration: JSON files, dotted overrides, validation.

A config is a nested JSON object::

    {"mode": "train-seg", "seed": 0, "output_dir": null,
     "data":  {"source": "synth", "size": 64, "count": 120, ...},
     "order": {...OrderConfig fields...},
     "law":   {...LawConfig fields...},
     "optim": {"lr": 0.003, "batch_size": 8, "epochs": 15, "steps": 150, ...},
     "checkpoint": null,
     "sweep": {"runs": [{"name": "a", "set": {"order.attn_stages": [0, 1]}}], "seeds": [0]}}

Every section is optional; missing keys take the defaults below.
"""
from __future__ import annotations

import copy
import json
import re
from dataclasses import fields
from pathlib import Path

from .law.config import LawConfig
from .order.config import OrderConfig

MODES = ("gen-data", "train-seg", "train-law", "eval", "profile", "export-maps", "sweep")


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, source: str | None = None, line: int | None = None):
        self.key, self.source, self.line = key, source, line
        where = f"{source}:{line}: " if source and line else (f"{source}: " if source else "")
        super().__init__(f"{where}{key + ': ' if key else ''}{message}")


def _defaults(mode: str) -> dict:
    law_data = mode == "train-law"
    return {
        "mode": mode,
        "seed": 0,
        "output_dir": None,
        "checkpoint": None,
        "data": {
            "source": "synth",
            "size": 32 if law_data else 64,
            "count": 48 if law_data else 120,
            "channels": 1 if law_data else 3,
            "ratio_range": [0.02, 0.10],
            "blob_range": [1, 3],
            "contrast": 0.25,
            "noise": 0.05,
            "images": None,
            "masks": None,
            "crop": False,
            "val_fraction": 0.2,
        },
        "order": {**OrderConfig().to_dict(), "input_size": 64, "attn_grid": 16},
        "law": {**LawConfig().to_dict(), "student_hidden": 16, "T": 100},
        "optim": {
            "lr": 1e-3 if law_data else 3e-3,
            "batch_size": 4 if law_data else 8,
            "epochs": 15,
            "steps": 150,
            "snapshot_every": 50,
            "compare_baseline": True,
        },
        "sweep": {"runs": [], "seeds": None, "base": {}, "overrides": []},
    }


def default_config(mode: str) -> dict:
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}", "mode")
    cfg = _defaults(mode)
    if mode == "profile":
        cfg["order"] = {**OrderConfig().to_dict()}
    return cfg


def parse_value(text: str):
    """JSON literal when it parses, otherwise the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_dotted(cfg: dict, key: str, value) -> None:
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError("not a config section", ".".join(parts[: parts.index(p) + 1]))
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError("unknown key", key)
    node[parts[-1]] = value


def _merge(base: dict, override: dict, prefix: str = "") -> None:
    for k, v in override.items():
        key = f"{prefix}{k}"
        if k not in base:
            raise ConfigError("unknown key", key)
        if isinstance(base[k], dict) and k != "sweep":
            if not isinstance(v, dict):
                raise ConfigError("expected an object", key)
            _merge(base[k], v, key + ".")
        else:
            base[k] = v


def _line_of(text: str, key: str | None) -> int | None:
    if not text or not key:
        return None
    leaf = key.split(".")[-1]
    m = re.search(rf'"{re.escape(leaf)}"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def load_config(path=None, mode: str | None = None, overrides: list[tuple[str, object]] = ()) -> dict:
    """Resolve file, mode defaults and overrides into one validated dict."""
    raw, text, source = {}, "", None
    if path is not None:
        source = str(path)
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", source=source) from exc
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg}", source=source, line=exc.lineno) from exc
        if not isinstance(raw, dict):
            raise ConfigError("top level must be an object", source=source, line=1)
    chosen = mode or raw.get("mode")
    if chosen is None:
        raise ConfigError("no mode given", "mode", source)
    if mode and raw.get("mode") not in (None, mode):
        raise ConfigError(f"file declares mode {raw['mode']!r} but {mode!r} was requested", "mode", source,
                          _line_of(text, "mode"))
    try:
        cfg = default_config(chosen)
        _merge(cfg, {k: v for k, v in raw.items() if k != "mode"})
        for key, value in overrides:
            set_dotted(cfg, key, value)
        if chosen == "sweep":
            # runs start from their own mode defaults, so keep what was given explicitly
            cfg["sweep"]["base"] = {k: v for k, v in raw.items() if k not in ("mode", "sweep", "output_dir")}
            cfg["sweep"]["overrides"] = [[k, v] for k, v in overrides
                                         if not k.startswith("sweep.") and k != "output_dir"]
        validate(cfg)
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1] if exc.key else str(exc), exc.key, source,
                          _line_of(text, exc.key)) from exc
    return cfg


def _build(cls, section: dict, name: str, extra: tuple[str, ...] = ()):
    known = {f.name for f in fields(cls)}
    kwargs = {k: v for k, v in section.items() if k in known}
    unknown = set(section) - known - set(extra)
    if unknown:
        raise ConfigError("unknown key", f"{name}.{sorted(unknown)[0]}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), name) from exc


def order_config(cfg: dict) -> OrderConfig:
    section = dict(cfg["order"])
    section["attn_stages"] = tuple(section.get("attn_stages", ()))
    return _build(OrderConfig, section, "order")


def law_config(cfg: dict) -> LawConfig:
    return _build(LawConfig, cfg["law"], "law", extra=("student_hidden", "T"))


def validate(cfg: dict) -> None:
    if cfg["mode"] not in MODES:
        raise ConfigError(f"unknown mode {cfg['mode']!r}", "mode")
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or cfg["seed"] < 0:
        raise ConfigError("must be a non-negative integer", "seed")
    data = cfg["data"]
    if data["source"] not in ("synth", "dir"):
        raise ConfigError("must be 'synth' or 'dir'", "data.source")
    if data["source"] == "dir":
        for key in ("images", "masks"):
            if not data[key] or not Path(data[key]).is_dir():
                raise ConfigError(f"directory {data[key]!r} does not exist", f"data.{key}")
    elif not isinstance(data["count"], int) or data["count"] < 1:
        raise ConfigError("must be a positive integer", "data.count")
    if not 0.0 < float(data["val_fraction"]) < 1.0:
        raise ConfigError("must lie in (0, 1)", "data.val_fraction")
    order_config(cfg)
    law_config(cfg)
    opt = cfg["optim"]
    for key in ("epochs", "steps", "batch_size", "snapshot_every"):
        if not isinstance(opt[key], int) or opt[key] < 0 or (key == "batch_size" and opt[key] == 0):
            raise ConfigError("must be a non-negative integer", f"optim.{key}")
    if not float(opt["lr"]) > 0:
        raise ConfigError("must be positive", "optim.lr")
    if cfg["mode"] in ("eval", "export-maps"):
        ck = cfg["checkpoint"]
        if not ck or not (Path(ck) / "manifest.json").is_file():
            raise ConfigError(f"checkpoint {ck!r} not found", "checkpoint")
    if cfg["mode"] == "sweep":
        runs = cfg["sweep"].get("runs") or []
        if not runs:
            raise ConfigError("needs at least one run", "sweep.runs")
        modes = {r.get("mode") for r in runs}
        if len(modes) != 1 or None in modes:
            raise ConfigError(f"runs must share one declared mode, got {sorted(map(str, modes))}", "sweep.runs")
        names = [r.get("name") for r in runs]
        if len(set(names)) != len(names) or None in names:
            raise ConfigError("run names must be present and unique", "sweep.runs")
        for run in runs:
            run_config(cfg, run, cfg["seed"])


def run_config(sweep_cfg: dict, run: dict, seed: int) -> dict:
    """Resolve one sweep row into a standalone validated config."""
    mode = run.get("mode")
    if mode in (None, "sweep") or mode not in MODES:
        raise ConfigError(f"run {run.get('name')!r} has invalid mode {mode!r}", "sweep.runs")
    cfg = default_config(mode)
    _merge(cfg, copy.deepcopy(sweep_cfg["sweep"].get("base", {})))
    for key, value in sweep_cfg["sweep"].get("overrides", []):
        set_dotted(cfg, key, value)
    for key, value in (run.get("set") or {}).items():
        set_dotted(cfg, key, value)
    cfg["seed"] = seed
    validate(cfg)
    return cfg


def resolved_copy(cfg: dict) -> dict:
    return copy.deepcopy(cfg)
