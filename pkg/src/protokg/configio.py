"""Line-oriented key=value config files, shipped defaults, and typed
resolution into the engine config dataclasses. Resolution precedence:
dataclass defaults < config file < explicit overrides.
"""

from __future__ import annotations

import dataclasses
from importlib import resources
from pathlib import Path

from .gcn import GcnConfig
from .rotate import CompletionConfig

# keys carried alongside the typed fields (paths, runtime notes, task tags)
METADATA_KEYS = {"dataset", "task", "expected_runtime", "train_path", "valid_path",
                 "test_path", "kg1_path", "kg2_path", "seeds_path", "model"}


def parse_config(text: str) -> dict[str, str]:
    """Parse "key = value" lines; '#' starts a comment, blanks ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def serialize_config(mapping: dict[str, str]) -> str:
    return "".join(f"{k} = {mapping[k]}\n" for k in sorted(mapping))


def _coerce(field: dataclasses.Field, raw: str):
    if field.type in ("bool", bool):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"bad boolean for {field.name}: {raw!r}")
    if field.type in ("int", int):
        return int(raw)
    if field.type in ("float", float):
        return float(raw)
    return raw


def _resolve(cls, mapping: dict[str, str], overrides: dict | None):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    meta = {}
    for key, raw in mapping.items():
        if key in fields:
            kwargs[key] = _coerce(fields[key], raw)
        elif key in METADATA_KEYS:
            meta[key] = raw
        else:
            raise ValueError(f"unknown config key {key!r}")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in fields:
            kwargs[key] = value
        else:
            meta[key] = value
    return cls(**kwargs), meta


def resolve_completion_config(mapping: dict[str, str],
                              overrides: dict | None = None) -> tuple[CompletionConfig, dict]:
    return _resolve(CompletionConfig, mapping, overrides)


def resolve_alignment_config(mapping: dict[str, str],
                             overrides: dict | None = None) -> tuple[GcnConfig, dict]:
    return _resolve(GcnConfig, mapping, overrides)


def config_to_mapping(config) -> dict[str, str]:
    out = {}
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        out[f.name] = str(value)
    return out


def load_config_file(path) -> dict[str, str]:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def shipped_config(name: str) -> dict[str, str]:
    """Load a bundled config by name, e.g. "completion-wn18rr"."""
    ref = resources.files("protokg").joinpath("configs", f"{name}.cfg")
    try:
        return parse_config(ref.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValueError(f"no shipped config named {name!r}") from None


def shipped_config_names() -> list[str]:
    base = resources.files("protokg").joinpath("configs")
    return sorted(p.name[:-4] for p in base.iterdir() if p.name.endswith(".cfg"))
