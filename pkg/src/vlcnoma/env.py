"""Multi-agent VLC-NOMA environment: one agent per AP.

Observation layout for one agent, ``K = k_max`` user slots followed by the
agent-level block::

    slot k (k < K), 9 features at [9k, 9k+9):
        0 valid           1 own gain       2..3 neighbour gains
        4 ICI (last step) 5 last rate      6 high-priority flag
        7 time since HO   8 HO would return the user to its previous AP
    [9K]              dimming level
    [9K+1, 10K+1)     previous power share per slot (fraction of budget)
    [10K+1, 11K+1)    previous trigger bit per slot

Slots hold the AP's associated users in descending order of own gain and
are zero when empty. Gains and ICI enter as ``log10(1 + x / noise) / 5``,
rates as ``log10(1 + r / 1 Mbps) / 3``.

Raw action layout, length ``3K + 1``::

    [0, K)        selection (> 0.5 serves the slot)
    [K, 2K)       power weights per slot, clipped to [0, 1]
    [2K]          budget utilisation, clipped to [0, 1]
    [2K+1, 3K+1)  handover trigger (> 0.5 triggers)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import handover as ho
from . import mobility
from .channel import ChannelModel, ap_positions
from .config import SimConfig, validate
from .noma import LinkReport, effective_power_budget, sinr_and_rate

SLOT_FEATURES = 9
N_NEIGHBOUR_FEATURES = 2
_GAIN_SCALE = 5.0
_RATE_SCALE = 3.0
_HO_CLOCK_S = 10.0


def obs_dim(k_max: int) -> int:
    return SLOT_FEATURES * k_max + 1 + 2 * k_max


def action_dim(k_max: int) -> int:
    return 3 * k_max + 1


@dataclass(frozen=True)
class Decoded:
    """One agent's decoded action."""
    users: np.ndarray     # served user ids
    powers: np.ndarray    # W, aligned with ``users``
    triggers: np.ndarray  # user ids to hand over
    shares: np.ndarray    # (K,) power / budget per slot
    trig_bits: np.ndarray  # (K,) trigger bit per slot


def decode_action(raw: np.ndarray, candidates: np.ndarray, budget: float, k_max: int) -> Decoded:
    """Map a raw head output onto served users, powers and handover triggers.

    Slots past ``len(candidates)`` are ignored. Selected slots share
    ``utilisation * budget`` in proportion to their clipped weights, equally
    when all weights are zero.
    """
    raw = np.asarray(raw, float)
    if raw.shape != (action_dim(k_max),):
        raise ValueError(f"action must have shape ({action_dim(k_max)},), got {raw.shape}")
    n = len(candidates)
    sel = raw[:k_max][:n] > 0.5
    weights = np.clip(raw[k_max:2 * k_max][:n], 0.0, 1.0) * sel
    util = float(np.clip(raw[2 * k_max], 0.0, 1.0))
    trig = raw[2 * k_max + 1:][:n] > 0.5
    shares = np.zeros(k_max)
    if sel.any():
        total = weights.sum()
        w = weights / total if total > 0 else sel / sel.sum()
        shares[:n] = util * w
    powers = shares[:n] * budget
    served = sel & (powers > 0)
    bits = np.zeros(k_max)
    bits[:n] = trig
    return Decoded(candidates[served], powers[served], candidates[trig], shares, bits)


@dataclass(frozen=True)
class RewardBreakdown:
    hp_credit: float
    outage_severity: float
    n_ho: int
    n_pingpong: int
    throughput: float  # scaled by the normaliser

    def qos(self, w) -> float:
        return w.w_hp_met * self.hp_credit - w.w_outage * self.outage_severity

    def stab(self, w) -> float:
        return -w.w_ho * self.n_ho - w.w_ppr * self.n_pingpong + w.w_thr * self.throughput

    def total(self, w) -> float:
        return w.w_qos * self.qos(w) + w.w_stab * self.stab(w)


def reward_terms(users: np.ndarray, rate: np.ndarray, is_hp: np.ndarray, n_ho: int,
                 n_pp: int, hp_req: float, outage_bps: float, rate_norm: float) -> RewardBreakdown:
    """Reward ingredients for one agent over the users it is accountable for."""
    r = rate[users]
    hp = is_hp[users]
    hp_credit = float(np.minimum(1.0, r[hp] / hp_req).sum())
    sp = r[~hp]
    short = sp < outage_bps
    severity = float((1.0 - sp[short] / outage_bps).sum())
    return RewardBreakdown(hp_credit, severity, int(n_ho), int(n_pp), float(r.sum() / rate_norm))


@dataclass
class StepResult:
    obs: np.ndarray            # (A, D)
    state: np.ndarray          # (A * D,)
    rewards: np.ndarray        # (A,)
    global_reward: float
    links: LinkReport
    done: bool
    info: dict


class VlcNomaEnv:
    """Gym-style environment; ``reset(seed)`` then ``step(actions)`` with actions of shape (A, 3K+1)."""

    def __init__(self, cfg: SimConfig, channel: ChannelModel | None = None):
        self.cfg = validate(cfg)
        self.n_ap = cfg.n_aps
        self.n_ue = cfg.users.n_users
        self.k = cfg.phy.k_max
        self.obs_dim = obs_dim(self.k)
        self.act_dim = action_dim(self.k)
        self.state_dim = self.n_ap * self.obs_dim
        self.channel = channel if channel is not None else ChannelModel.from_config(cfg)
        self.noise = cfg.noise_var
        self.is_hp = np.arange(self.n_ue) < cfg.n_hp
        self.rate_norm = max(self.n_ue, 1) * cfg.qos.hp_rate_req_bps
        pos = ap_positions(cfg)[:, :2]
        dist = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
        np.fill_diagonal(dist, np.inf)
        n_nb = min(cfg.env.n_neighbors, N_NEIGHBOUR_FEATURES, self.n_ap - 1)
        # stable sort keeps the lower AP id first on equal distance
        self.neighbours = np.argsort(dist, axis=1, kind="stable")[:, :n_nb]
        self.rng = None
        self.t = 0

    # ------------------------------------------------------------------ state
    def reset(self, seed: int | None = None):
        cfg = self.cfg
        self.rng = np.random.default_rng(seed)
        r, u = cfg.room, cfg.users
        self.users = mobility.init_users(self.rng, self.n_ue, r.length_m, r.width_m,
                                         cfg.receiver.height_m, u.v_min_mps, u.v_max_mps)
        levels = np.asarray(cfg.phy.dimming_levels, float)
        self.gamma = levels[self.rng.integers(len(levels), size=self.n_ap)]
        self.budget = np.array([effective_power_budget(cfg.aps.max_power_w, g, levels)
                                for g in self.gamma])
        self.ch = self.channel.build(self.users.position)
        self.assoc = ho.initial_association(self.ch.gain)
        self.last_rate = np.zeros(self.n_ue)
        self.last_ici = np.zeros(self.n_ue)
        self.prev_shares = np.zeros((self.n_ap, self.k))
        self.prev_trig = np.zeros((self.n_ap, self.k))
        self.t = 0
        obs = self.observe()
        return obs, obs.ravel().copy()

    @property
    def time_s(self) -> float:
        return self.t * self.cfg.env.dt_s

    def candidates(self, ap: int) -> np.ndarray:
        """Associated users of ``ap``, strongest first, at most ``k_max``."""
        users = self.assoc.users_of(ap)
        g = self.ch.gain[ap, users]
        order = np.lexsort((users, -g))
        return users[order][: self.k]

    def observe(self) -> np.ndarray:
        obs = np.zeros((self.n_ap, self.obs_dim))
        gain_feat = np.log10(1.0 + self.ch.gain / self.noise) / _GAIN_SCALE
        ici_feat = np.log10(1.0 + self.last_ici / self.noise) / _GAIN_SCALE
        rate_feat = np.log10(1.0 + self.last_rate / 1e6) / _RATE_SCALE
        clock = np.minimum(self.assoc.since_ho, _HO_CLOCK_S) / _HO_CLOCK_S
        back = (ho.best_other_ap(self.ch.gain, self.assoc.serving) == self.assoc.previous) \
            & (self.assoc.previous != ho.NO_AP)
        for a in range(self.n_ap):
            cand = self.candidates(a)
            n = len(cand)
            slots = np.zeros((self.k, SLOT_FEATURES))
            slots[:n, 0] = 1.0
            slots[:n, 1] = gain_feat[a, cand]
            for j, nb in enumerate(self.neighbours[a]):
                slots[:n, 2 + j] = gain_feat[nb, cand]
            slots[:n, 4] = ici_feat[cand]
            slots[:n, 5] = rate_feat[cand]
            slots[:n, 6] = self.is_hp[cand]
            slots[:n, 7] = clock[cand]
            slots[:n, 8] = back[cand]
            row = obs[a]
            row[: SLOT_FEATURES * self.k] = slots.ravel()
            row[SLOT_FEATURES * self.k] = self.gamma[a]
            row[SLOT_FEATURES * self.k + 1: SLOT_FEATURES * self.k + 1 + self.k] = self.prev_shares[a]
            row[SLOT_FEATURES * self.k + 1 + self.k:] = self.prev_trig[a]
        return obs

    # ------------------------------------------------------------------- step
    def step(self, actions: np.ndarray) -> StepResult:
        if self.rng is None:
            raise RuntimeError("call reset() before step()")
        if self.t >= self.cfg.env.max_steps:
            raise RuntimeError("episode is over; call reset()")
        actions = np.asarray(actions, float)
        if actions.shape != (self.n_ap, self.act_dim):
            raise ValueError(f"actions must have shape {(self.n_ap, self.act_dim)}, "
                             f"got {actions.shape}")
        cfg = self.cfg
        power = np.zeros((self.n_ap, self.n_ue))
        triggers = {}
        accountable = []
        for a in range(self.n_ap):
            cand = self.candidates(a)
            dec = decode_action(actions[a], cand, self.budget[a], self.k)
            power[a, dec.users] = dec.powers
            triggers[a] = dec.triggers
            self.prev_shares[a] = dec.shares
            self.prev_trig[a] = dec.trig_bits
            accountable.append(self.assoc.users_of(a))
        if np.any(power.sum(axis=1) > self.budget * (1 + 1e-12)):
            raise AssertionError("power budget exceeded")

        serving = self.assoc.serving.copy()
        links = sinr_and_rate(self.ch.gain, power, serving, self.noise,
                              cfg.phy.bandwidth_hz, cfg.phy.sic_mode)
        n_before = len(self.assoc.log)
        self.assoc = ho.apply_handover_triggers(self.assoc, triggers, self.ch.gain,
                                                self.time_s, cfg.env.dt_s)
        new_events = self.assoc.log[n_before:]
        pp = ho.pingpong_flags(self.assoc.log, cfg.handover.pingpong_window_s)[n_before:]

        rewards = np.zeros(self.n_ap)
        terms = []
        for a in range(self.n_ap):
            n_ho = sum(ev.src == a for ev in new_events)
            n_pp = sum(f and ev.src == a for ev, f in zip(new_events, pp))
            bd = reward_terms(accountable[a], links.rate_bps, self.is_hp, n_ho, n_pp,
                              cfg.qos.hp_rate_req_bps, cfg.qos.outage_threshold_bps,
                              self.rate_norm)
            terms.append(bd)
            rewards[a] = bd.total(cfg.reward)

        info = {
            "time_s": self.time_s,
            "serving": serving,
            "power": power,
            "budget": self.budget.copy(),
            "gamma": self.gamma.copy(),
            "events": new_events,
            "pingpong": pp,
            "terms": terms,
            "is_hp": self.is_hp,
        }
        self.last_rate = links.rate_bps.copy()
        self.last_ici = links.ici.copy()
        r, u = cfg.room, cfg.users
        self.users = mobility.step(self.users, cfg.env.dt_s, self.rng, r.length_m, r.width_m,
                                   u.v_min_mps, u.v_max_mps, u.boundary_heading)
        self.ch = self.channel.build(self.users.position)
        self.t += 1
        obs = self.observe()
        done = self.t >= cfg.env.max_steps
        return StepResult(obs, obs.ravel().copy(), rewards, float(rewards.mean()) if self.n_ap else 0.0,
                          links, done, info)
