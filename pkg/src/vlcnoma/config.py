"""Run configuration: dataclass tree, strict YAML loading and defaults.

Every numeric key carries its unit in the name. Unknown keys are rejected at
load time so that a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration."""


DIMMING_LEVELS = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


@dataclass
class RoomConfig:
    length_m: float = 4.0
    width_m: float = 8.0
    height_m: float = 3.0
    wall_reflectivity: float = 0.8
    floor_reflectivity: float = 0.3
    ceiling_reflectivity: float = 0.8
    patch_edge_m: float = 0.25
    reflect_floor: bool = False
    reflect_ceiling: bool = False
    # grid spacing of the per-AP reflection table; None sums patches every step
    nlos_table_step_m: float | None = 0.1


@dataclass
class ApConfig:
    # (x, y) in metres; every AP hangs at the ceiling height
    positions_m: list = field(
        default_factory=lambda: [[x, y] for x in (1.0, 3.0) for y in (1.0, 3.0, 5.0, 7.0)]
    )
    semi_angle_deg: float = 60.0
    max_power_w: float = 15.0


@dataclass
class ReceiverConfig:
    pd_area_m2: float = 1e-4
    fov_deg: float = 70.0
    filter_gain: float = 1.0
    concentrator_gain: float = 1.0
    responsivity_a_per_w: float = 0.5
    height_m: float = 0.85


@dataclass
class UserConfig:
    n_users: int = 20
    hp_fraction: float = 0.25
    v_min_mps: float = 0.5
    v_max_mps: float = 1.5
    # heading drawn at a wall: "cosine" about the inward normal or "uniform"
    boundary_heading: str = "cosine"


@dataclass
class PhyConfig:
    noise_psd_a2_per_hz: float = 1e-22
    bandwidth_hz: float = 20e6
    k_max: int = 10
    sic_mode: str = "standard"
    dimming_levels: list = field(default_factory=lambda: list(DIMMING_LEVELS))


@dataclass
class QosConfig:
    hp_rate_req_bps: float = 12e6
    sp_rate_req_bps: float = 2e6
    outage_threshold_bps: float = 0.5e6


@dataclass
class HandoverConfig:
    pingpong_window_s: float = 2.0
    baseline_hysteresis_db: float = 3.0


@dataclass
class EnvConfig:
    dt_s: float = 1.0
    max_steps: int = 100
    n_neighbors: int = 2


@dataclass
class RewardConfig:
    w_qos: float = 2.5
    w_stab: float = 0.75
    w_hp_met: float = 1.0
    w_outage: float = 0.5
    w_ppr: float = 0.3
    w_ho: float = 0.2
    w_thr: float = 0.1


@dataclass
class PpoConfig:
    discount: float = 0.97
    gae_lambda: float = 0.95
    clip: float = 0.2
    entropy_coef: float = 0.01
    actor_lr: float = 5e-4
    critic_lr: float = 1e-4
    epochs: int = 4
    minibatch: int = 256
    buffer_steps: int = 2048
    total_steps: int = 1_500_000
    hidden_units: int = 256
    hidden_layers: int = 2
    eval_episodes: int = 1000


@dataclass
class BoConfig:
    w_qos_bounds: list = field(default_factory=lambda: [0.1, 5.0])
    w_stab_bounds: list = field(default_factory=lambda: [0.1, 5.0])
    n_init: int = 10
    n_trials: int = 81
    grid_step: float = 0.05
    tuner: str = "bo"
    algo: str = "mappo"
    trial_steps: int = 100_000
    trial_eval_episodes: int = 20
    # None -> n_users * hp_rate_req_bps
    r_max_bps: float | None = None


@dataclass
class SimConfig:
    room: RoomConfig = field(default_factory=RoomConfig)
    aps: ApConfig = field(default_factory=ApConfig)
    receiver: ReceiverConfig = field(default_factory=ReceiverConfig)
    users: UserConfig = field(default_factory=UserConfig)
    phy: PhyConfig = field(default_factory=PhyConfig)
    qos: QosConfig = field(default_factory=QosConfig)
    handover: HandoverConfig = field(default_factory=HandoverConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    bo: BoConfig = field(default_factory=BoConfig)

    @property
    def n_aps(self) -> int:
        return len(self.aps.positions_m)

    @property
    def n_hp(self) -> int:
        return math.ceil(self.users.hp_fraction * self.users.n_users - 1e-9)

    @property
    def noise_var(self) -> float:
        return self.phy.noise_psd_a2_per_hz * self.phy.bandwidth_hz

    @property
    def r_max_bps(self) -> float:
        if self.bo.r_max_bps is not None:
            return self.bo.r_max_bps
        return self.users.n_users * self.qos.hp_rate_req_bps

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        sub = _SECTIONS.get(name) if cls is SimConfig else None
        kwargs[name] = _build(sub, value, name) if sub is not None else value
    return cls(**kwargs)


_SECTIONS = {
    "room": RoomConfig,
    "aps": ApConfig,
    "receiver": ReceiverConfig,
    "users": UserConfig,
    "phy": PhyConfig,
    "qos": QosConfig,
    "handover": HandoverConfig,
    "env": EnvConfig,
    "reward": RewardConfig,
    "ppo": PpoConfig,
    "bo": BoConfig,
}


def _normalise(cfg: SimConfig) -> SimConfig:
    # YAML may hand back ints where floats are meant; coerce per declared default type
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            default = getattr(type(obj)(), f.name)
            if isinstance(default, bool):
                if not isinstance(value, bool):
                    raise ConfigError(f"{section}.{f.name}: expected bool")
            elif isinstance(default, float) or (default is None and value is not None):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"{section}.{f.name}: expected a number, got {value!r}")
                setattr(obj, f.name, float(value))
            elif isinstance(default, int) and (isinstance(value, bool) or not isinstance(value, int)):
                raise ConfigError(f"{section}.{f.name}: expected integer, got {value!r}")
            elif isinstance(default, (str, list)) and not isinstance(value, type(default)):
                raise ConfigError(f"{section}.{f.name}: expected {type(default).__name__}, "
                                  f"got {value!r}")
    return cfg


def validate(cfg: SimConfig) -> SimConfig:
    """Check cross-field invariants; returns ``cfg`` for chaining."""
    r = cfg.room
    if min(r.length_m, r.width_m, r.height_m) <= 0:
        raise ConfigError("room dimensions must be positive")
    for name in ("wall_reflectivity", "floor_reflectivity", "ceiling_reflectivity"):
        if not 0.0 <= getattr(r, name) <= 1.0:
            raise ConfigError(f"room.{name} must lie in [0, 1]")
    if r.patch_edge_m <= 0:
        raise ConfigError("room.patch_edge_m must be positive")
    if r.nlos_table_step_m is not None and r.nlos_table_step_m <= 0:
        raise ConfigError("room.nlos_table_step_m must be positive or null")
    if cfg.n_aps < 1:
        raise ConfigError("at least one AP is required")
    for pos in cfg.aps.positions_m:
        if len(pos) != 2:
            raise ConfigError("aps.positions_m entries must be [x, y]")
        x, y = pos
        if not (0 <= x <= r.length_m and 0 <= y <= r.width_m):
            raise ConfigError(f"AP at {pos} lies outside the room")
    if not 0 < cfg.aps.semi_angle_deg < 90:
        raise ConfigError("aps.semi_angle_deg must lie in (0, 90)")
    if cfg.aps.max_power_w <= 0:
        raise ConfigError("aps.max_power_w must be positive")
    rx = cfg.receiver
    if rx.pd_area_m2 <= 0 or not 0 < rx.fov_deg <= 90:
        raise ConfigError("receiver area must be positive and FOV in (0, 90] degrees")
    if min(rx.filter_gain, rx.concentrator_gain, rx.responsivity_a_per_w) <= 0:
        raise ConfigError("receiver gains must be positive")
    if not 0 < rx.height_m < r.height_m:
        raise ConfigError("receiver height must lie strictly between floor and ceiling")
    u = cfg.users
    if u.n_users < 0 or not 0 <= u.hp_fraction <= 1:
        raise ConfigError("users.n_users must be >= 0 and hp_fraction in [0, 1]")
    if not 0 <= u.v_min_mps <= u.v_max_mps:
        raise ConfigError("need 0 <= v_min_mps <= v_max_mps")
    if u.boundary_heading not in ("cosine", "uniform"):
        raise ConfigError("users.boundary_heading must be 'cosine' or 'uniform'")
    p = cfg.phy
    if p.sic_mode not in ("standard", "literal-eq5"):
        raise ConfigError("phy.sic_mode must be 'standard' or 'literal-eq5'")
    if p.k_max < 1 or p.bandwidth_hz <= 0 or p.noise_psd_a2_per_hz <= 0:
        raise ConfigError("phy.k_max, bandwidth and noise PSD must be positive")
    if not p.dimming_levels or any(not 0 < g <= 1 for g in p.dimming_levels):
        raise ConfigError("phy.dimming_levels must be a nonempty subset of (0, 1]")
    if cfg.env.dt_s <= 0 or cfg.env.max_steps < 1 or cfg.env.n_neighbors < 0:
        raise ConfigError("env.dt_s, env.max_steps must be positive")
    if any(v < 0 for v in dataclasses.asdict(cfg.reward).values()):
        raise ConfigError("reward weights must be nonnegative")
    ppo = cfg.ppo
    if not 0 <= ppo.discount < 1 or not 0 <= ppo.gae_lambda <= 1 or not 0 < ppo.clip < 1:
        raise ConfigError("ppo: need 0 <= discount < 1, 0 <= gae_lambda <= 1, 0 < clip < 1")
    if min(ppo.epochs, ppo.minibatch, ppo.buffer_steps, ppo.hidden_units, ppo.hidden_layers) < 1:
        raise ConfigError("ppo sizes must be positive")
    if ppo.total_steps < 0:
        raise ConfigError("ppo.total_steps must be >= 0")
    bo = cfg.bo
    for b in (bo.w_qos_bounds, bo.w_stab_bounds):
        if len(b) != 2 or not b[0] < b[1]:
            raise ConfigError("bo bounds must be ordered [low, high]")
    if bo.n_init < 2 or bo.n_trials < bo.n_init:
        raise ConfigError("bo: need n_init >= 2 and n_trials >= n_init")
    if bo.tuner not in ("bo", "grid") or bo.algo not in ("mappo", "cenppo"):
        raise ConfigError("bo.tuner must be bo|grid and bo.algo mappo|cenppo")
    return cfg


def from_dict(data: dict) -> SimConfig:
    return validate(_normalise(_build(SimConfig, data, "")))


def load(path: str | Path) -> SimConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    return from_dict(data or {})


def dump(cfg: SimConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))


def reduced(n_aps: int = 4, n_users: int = 10) -> SimConfig:
    """Desk-scale variant: same room, fewer APs and users."""
    cfg = SimConfig()
    if n_aps == 4:
        cfg.aps.positions_m = [[x, y] for x in (1.0, 3.0) for y in (2.0, 6.0)]
    elif n_aps == 2:
        cfg.aps.positions_m = [[2.0, 2.0], [2.0, 6.0]]
    elif n_aps == 1:
        cfg.aps.positions_m = [[2.0, 4.0]]
    elif n_aps != 8:
        raise ConfigError(f"no reduced layout for {n_aps} APs")
    cfg.users.n_users = n_users
    return validate(cfg)
