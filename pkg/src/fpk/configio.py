"""Config ingestion and deterministic report emission.

JSON in, JSON/CSV out.  Configs are validated strictly: unknown keys are
rejected with their JSON pointer path, duplicate keys are a parse error,
and every applied default is recorded in the resolved config so that a rerun
from the resolved form reproduces the original byte for byte.  All writes
go through a temp-file rename.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .sde import SimConfig

TOOL_VERSION = "0.1.0"


class ConfigError(ValueError):
    """Schema violation, reported with the JSON pointer of the offender."""


def _no_duplicates(pairs):
    seen = set()
    for key, _ in pairs:
        if key in seen:
            raise ConfigError(f"duplicate key {key!r}")
        seen.add(key)
    return dict(pairs)


def load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh, object_pairs_hook=_no_duplicates)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"invalid JSON in {path}: {err}") from None


def _reject_unknown(cfg: dict, allowed: set, where: str):
    for key in cfg:
        if key not in allowed:
            raise ConfigError(f"unknown key at {where}/{key}")


def resolve_field_config(cfg: dict) -> dict:
    """Validate a field config and apply defaults; returns the resolved dict."""
    _reject_unknown(cfg, {"dim", "catalog", "params", "A", "G", "claimed", "p"}, "")
    if "dim" not in cfg:
        raise ConfigError("missing key at /dim")
    d = cfg["dim"]
    if not isinstance(d, int) or isinstance(d, bool):
        raise ConfigError("/dim must be an integer")
    if d < 2:
        raise ConfigError("/dim must be >= 2 (one-dimensional fields are not supported)")
    out = {"dim": d}
    if "catalog" in cfg:
        if "A" in cfg or "G" in cfg:
            raise ConfigError("give either /catalog or /A + /G, not both")
        out["catalog"] = cfg["catalog"]
        out["params"] = cfg.get("params", {})
    elif "A" in cfg and "G" in cfg:
        out["A"] = cfg["A"]
        out["G"] = cfg["G"]
        if "claimed" in cfg:
            out["claimed"] = cfg["claimed"]
    else:
        raise ConfigError("field config needs /catalog or both /A and /G")
    if "p" in cfg:
        out["p"] = float(cfg["p"])
    return out


def resolve_sim_config(cfg: dict, d: int, seed_override: int | None = None) -> dict:
    """Validate a sim config against the field dimension; apply defaults."""
    allowed = {
        "x0", "T", "dt", "n_paths", "seed", "snapshot_times", "r_explode",
        "compare", "bank_scale",
    }
    _reject_unknown(cfg, allowed, "")
    for key in ("x0", "T", "dt", "n_paths"):
        if key not in cfg:
            raise ConfigError(f"missing key at /{key}")
    x0 = cfg["x0"]
    if not isinstance(x0, list) or len(x0) != d:
        raise ConfigError(f"/x0 must be a list of {d} numbers")
    out = {
        "x0": [float(v) for v in x0],
        "T": float(cfg["T"]),
        "dt": float(cfg["dt"]),
        "n_paths": int(cfg["n_paths"]),
        "seed": int(cfg.get("seed", 0)),
        "r_explode": float(cfg.get("r_explode", 1e6)),
        "bank_scale": float(cfg.get("bank_scale", 1.0)),
    }
    if seed_override is not None:
        out["seed"] = int(seed_override)
    if "snapshot_times" in cfg:
        out["snapshot_times"] = [float(t) for t in cfg["snapshot_times"]]
    else:
        out["snapshot_times"] = [
            out["T"] * k / 20.0 for k in range(21)
        ]
    cmp_cfg = cfg.get("compare", {})
    if not isinstance(cmp_cfg, dict):
        raise ConfigError("/compare must be an object")
    _reject_unknown(cmp_cfg, {"dt", "seed"}, "/compare")
    out["compare"] = {
        "dt": float(cmp_cfg.get("dt", out["dt"] / 2.0)),
        "seed": int(cmp_cfg.get("seed", out["seed"] + 1)),
    }
    return out


def sim_config_from_resolved(resolved: dict) -> SimConfig:
    return SimConfig(
        x0=tuple(resolved["x0"]),
        t_horizon=resolved["T"],
        dt=resolved["dt"],
        n_paths=resolved["n_paths"],
        seed=resolved["seed"],
        snapshot_times=tuple(resolved["snapshot_times"]),
        r_explode=resolved["r_explode"],
    )


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, frozenset):
        return sorted(obj)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_to_jsonable(obj), sort_keys=True, indent=2) + "\n"


def atomic_write_text(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".fpk-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str, obj):
    atomic_write_text(path, dumps_json(obj))


def write_csv(path: str, header: list[str], rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_format_cell(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _format_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def manifest(command: str, resolved: dict, verdicts: dict, outputs: list[str],
             seed: int | None, wall_seconds: float) -> dict:
    return {
        "tool_version": TOOL_VERSION,
        "command": command,
        "resolved_config": resolved,
        "seed": seed,
        "wall_seconds": wall_seconds,
        "verdicts": verdicts,
        "outputs": outputs,
    }
