"""Scenario configuration files: schema validation and assembly.

Configs are plain JSON mirroring :class:`MigrationScenario`.  Unknown
fields are rejected everywhere so typos fail loudly instead of
silently running a different experiment.
"""

from __future__ import annotations

import dataclasses
import json

from .guest import GuestSpec, Virtualization, container_spec, vm_spec
from .migrator import (
    CostModel,
    DestinationState,
    MigrationMode,
    MigrationScenario,
)
from .netsim import LinkSpec
from .workloads import AppProfile, profile_by_name, profile_from_dict

MB = 1_000_000


class ConfigError(Exception):
    """A scenario config that does not follow the schema."""


_TOP_FIELDS = {
    "profile", "virtualization", "mode", "destination", "link", "scale",
    "seed", "block_size", "chunk_size", "round_trips", "staleness_epochs",
    "guest", "cost_model",
}
_DEST_FIELDS = {"has_base", "has_app", "has_stale_instance"}
_LINK_FIELDS = {"bandwidth_mbps", "latency_ms", "jitter_ms", "processing_cap_mbps", "seed"}
_GUEST_FIELDS = {
    "base_tree_size", "virtualization_overhead_bytes", "base_wire_ratio",
    "fs_wire_ratio", "scan_unchanged", "memory_floor_bytes", "memory_floor_wire_ratio",
}
_PROFILE_FIELDS = {
    "name", "install_bytes", "data_bytes", "memory_bytes", "memory_churn_rate",
    "instance_unique_file_bytes", "memory_wire_ratio",
}
_COST_FIELDS = {
    "clone_rate", "suspend_fixed", "suspend_per_byte", "restore_fixed",
    "restore_per_byte", "scan_rate", "stage_fixed_overhead", "other_tasks_fixed",
}


def _reject_unknown(obj: dict, allowed: set[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(f"unknown field(s) in {where}: {', '.join(unknown)}")


def _number(obj: dict, key: str, default, where: str, *, minimum=None):
    value = obj.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{where}.{key} must be >= {minimum}")
    return value


def _boolean(obj: dict, key: str, default: bool, where: str) -> bool:
    value = obj.get(key, default)
    if not isinstance(value, bool):
        raise ConfigError(f"{where}.{key} must be a boolean")
    return value


def load_scenario_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read scenario config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario config is not valid JSON: {exc}") from exc
    validate_scenario_config(data)
    return data


def validate_scenario_config(data: dict) -> None:
    _reject_unknown(data, _TOP_FIELDS, "scenario")

    profile = data.get("profile", "No Application")
    if isinstance(profile, dict):
        _reject_unknown(profile, _PROFILE_FIELDS, "scenario.profile")
        if "name" not in profile:
            raise ConfigError("scenario.profile.name is required for inline profiles")
    elif not isinstance(profile, str):
        raise ConfigError("scenario.profile must be a name or an inline profile object")

    kind = data.get("virtualization", "container")
    if kind not in ("container", "vm"):
        raise ConfigError("scenario.virtualization must be 'container' or 'vm'")
    mode = data.get("mode", "three_layer")
    if mode not in ("two_layer", "three_layer"):
        raise ConfigError("scenario.mode must be 'two_layer' or 'three_layer'")

    dest = data.get("destination", {})
    _reject_unknown(dest, _DEST_FIELDS, "scenario.destination")
    for key in _DEST_FIELDS:
        if key in dest and not isinstance(dest[key], bool):
            raise ConfigError(f"scenario.destination.{key} must be a boolean")

    link = data.get("link", {})
    _reject_unknown(link, _LINK_FIELDS, "scenario.link")
    _number(link, "bandwidth_mbps", 100.0, "scenario.link", minimum=1e-6)
    _number(link, "latency_ms", 0.0, "scenario.link", minimum=0.0)
    _number(link, "jitter_ms", 0.0, "scenario.link", minimum=0.0)
    if link.get("processing_cap_mbps") is not None:
        _number(link, "processing_cap_mbps", None, "scenario.link", minimum=1e-6)
    _number(link, "seed", 0, "scenario.link")

    scale = _number(data, "scale", 1.0, "scenario", minimum=0.0)
    if not 0 < scale <= 1:
        raise ConfigError("scenario.scale must be in (0, 1]")
    _number(data, "seed", 0, "scenario")
    _number(data, "block_size", 2048, "scenario", minimum=16)
    _number(data, "chunk_size", 4 * 1024 * 1024, "scenario", minimum=1)
    _number(data, "round_trips", 2, "scenario", minimum=0)
    _number(data, "staleness_epochs", 3, "scenario", minimum=0)

    guest = data.get("guest", {})
    _reject_unknown(guest, _GUEST_FIELDS, "scenario.guest")
    if "scan_unchanged" in guest:
        _boolean(guest, "scan_unchanged", False, "scenario.guest")
    for key in _GUEST_FIELDS - {"scan_unchanged"}:
        if key in guest:
            _number(guest, key, None, "scenario.guest", minimum=0)

    cost = data.get("cost_model")
    if cost is not None:
        _reject_unknown(cost, _COST_FIELDS, "scenario.cost_model")
        missing = sorted(_COST_FIELDS - set(cost))
        if missing:
            raise ConfigError(f"scenario.cost_model missing field(s): {', '.join(missing)}")
        for key in _COST_FIELDS:
            _number(cost, key, None, "scenario.cost_model", minimum=0)

    # Destination consistency under the selected mode.
    state = DestinationState(
        has_base=dest.get("has_base", True),
        has_app=dest.get("has_app", mode == "three_layer"),
        has_stale_instance=dest.get("has_stale_instance", False),
    )
    try:
        state.validate(MigrationMode(mode))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_scenario(
    data: dict,
    calibration: dict[Virtualization, tuple[CostModel, float]],
    *,
    seed: int | None = None,
    scale: float | None = None,
) -> MigrationScenario:
    """Validated config dict -> concrete scenario.

    The cost model and the default processing cap come from the
    calibration unless the config carries inline overrides.
    """
    validate_scenario_config(data)
    kind = Virtualization(data.get("virtualization", "container"))
    spec = container_spec() if kind is Virtualization.CONTAINER else vm_spec()
    overrides = {
        key: (int(value) if key.endswith("bytes") or key.endswith("size") else value)
        for key, value in data.get("guest", {}).items()
    }
    if overrides:
        spec = dataclasses.replace(spec, **overrides)

    profile = data.get("profile", "No Application")
    if isinstance(profile, str):
        app = profile_by_name(profile)
    else:
        app = profile_from_dict(profile)

    mode = MigrationMode(data.get("mode", "three_layer"))
    dest_cfg = data.get("destination", {})
    destination = DestinationState(
        has_base=dest_cfg.get("has_base", True),
        has_app=dest_cfg.get("has_app", mode is MigrationMode.THREE_LAYER),
        has_stale_instance=dest_cfg.get("has_stale_instance", False),
    )

    if data.get("cost_model") is not None:
        cost_model = CostModel.from_dict(data["cost_model"])
        default_cap = float("inf")
    else:
        if kind not in calibration:
            raise ConfigError(f"calibration holds no cost model for {kind.value!r}")
        cost_model, default_cap = calibration[kind]

    link_cfg = data.get("link", {})
    cap_mbps = link_cfg.get("processing_cap_mbps")
    link = LinkSpec(
        bandwidth_bps=link_cfg.get("bandwidth_mbps", 100.0) * MB,
        latency_s=link_cfg.get("latency_ms", 0.0) / 1e3,
        jitter_s=link_cfg.get("jitter_ms", 0.0) / 1e3,
        processing_cap_bps=(cap_mbps * MB) if cap_mbps is not None else default_cap,
        seed=int(link_cfg.get("seed", 0)),
    )

    return MigrationScenario(
        guest_spec=spec,
        profile=app,
        mode=mode,
        destination=destination,
        link=link,
        cost_model=cost_model,
        scale=scale if scale is not None else data.get("scale", 1.0),
        seed=seed if seed is not None else int(data.get("seed", 0)),
        block_size=int(data.get("block_size", 2048)),
        chunk_size=int(data.get("chunk_size", 4 * 1024 * 1024)),
        round_trips=int(data.get("round_trips", 2)),
        staleness_epochs=int(data.get("staleness_epochs", 3)),
    )
