"""PPO machinery and the two training regimes.

A learner owns one or more *streams*: MAPPO has one stream per AP (its own
actor, fed the local observation) and CenPPO has a single stream whose actor
sees the concatenated state and emits the joint action. Both use one critic.
The MAPPO critic sees the concatenated state plus a one-hot agent index so
that the same network can score every agent's return.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .baseline import baseline_policy
from .config import PpoConfig, SimConfig
from .env import SLOT_FEATURES, VlcNomaEnv, obs_dim
from .metrics import EpisodeTrace, episode_metrics, summarise

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


def gae(rewards, values, dones, last_value, discount: float, lam: float):
    """Generalised advantage estimates and returns along axis 0.

    ``dones[t]`` marks that the episode ended after step ``t``; nothing is
    bootstrapped across it. ``last_value`` scores the state after the final
    step and is used only if that step did not end an episode.
    """
    rewards = np.asarray(rewards, float)
    values = np.asarray(values, float)
    dones = np.asarray(dones, bool)
    adv = np.zeros_like(rewards)
    running = np.zeros_like(rewards[0]) if rewards.ndim > 1 else 0.0
    next_value = np.asarray(last_value, float)
    for t in range(len(rewards) - 1, -1, -1):
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + discount * next_value * live - values[t]
        running = delta + discount * lam * live * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


def normalise(adv: np.ndarray) -> np.ndarray:
    std = adv.std()
    return (adv - adv.mean()) / (std if std > 1e-12 else 1.0)


def _minibatches(n: int, size: int, rng):
    idx = rng.permutation(n)
    for i in range(0, n, size):
        yield idx[i:i + size]


def update_actor(params, opt, obs, actions, masks, old_logp, adv, cfg: PpoConfig, rng) -> dict:
    """Clipped-PPO epochs over one actor's samples. ``adv`` is normalised here."""
    adv = normalise(adv)
    history = []
    for _ in range(cfg.epochs):
        for mb in _minibatches(len(adv), cfg.minibatch, rng):
            loss, grads, st = nn.ppo_actor_loss(params, obs[mb], actions[mb], masks[mb],
                                                old_logp[mb], adv[mb], cfg.clip, cfg.entropy_coef)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"actor loss is {loss}")
            opt.step(params, grads)
            history.append(st)
    return {k: float(np.mean([h[k] for h in history])) for k in history[0]} | {
        "first_ratio_min": history[0]["ratio_min"], "first_ratio_max": history[0]["ratio_max"]}


def update_critic(params, opt, inputs, returns, cfg: PpoConfig, rng) -> dict:
    losses = []
    for _ in range(cfg.epochs):
        for mb in _minibatches(len(returns), cfg.minibatch, rng):
            loss, grads = nn.critic_loss(params, inputs[mb], returns[mb])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"critic loss is {loss}")
            opt.step(params, grads)
            losses.append(loss)
    return {"critic_loss": float(np.mean(losses))}


def ppo_update(actor, actor_opt, critic, critic_opt, batch: dict, cfg: PpoConfig, rng) -> dict:
    """One PPO update of a single actor and its critic from a filled buffer.

    ``batch`` needs ``obs, actions, masks, logp, adv, returns, critic_in``.
    """
    stats = update_actor(actor, actor_opt, batch["obs"], batch["actions"], batch["masks"],
                         batch["logp"], batch["adv"], cfg, rng)
    stats |= update_critic(critic, critic_opt, batch["critic_in"], batch["returns"], cfg, rng)
    return stats


# ----------------------------------------------------------------- learners
def action_masks(obs_rows: np.ndarray, sampled: np.ndarray, k: int) -> np.ndarray:
    """Log-prob masks for per-agent actions laid out as in the environment.

    Empty slots are masked everywhere; a slot's power weight counts only if
    the slot was selected. The utilisation entry always counts.
    """
    valid = obs_rows[:, : SLOT_FEATURES * k: SLOT_FEATURES]
    sel = sampled[:, :k] > 0.5
    m = np.ones_like(sampled)
    m[:, :k] = valid
    m[:, k:2 * k] = valid * sel
    m[:, 2 * k + 1:] = valid
    return m


@dataclass
class Learner:
    kind: str
    n_ap: int
    k: int
    obs_dim: int
    actors: list
    critic: dict
    ppo: PpoConfig
    actor_opts: list = field(default_factory=list)
    critic_opt: nn.Adam | None = None

    def __post_init__(self):
        if not self.actor_opts:
            self.actor_opts = [nn.Adam(p, self.ppo.actor_lr) for p in self.actors]
        if self.critic_opt is None:
            self.critic_opt = nn.Adam(self.critic, self.ppo.critic_lr)

    @property
    def n_streams(self) -> int:
        return self.n_ap if self.kind == "mappo" else 1

    @property
    def act_dim(self) -> int:
        return 3 * self.k + 1

    # layout helpers -------------------------------------------------------
    def actor_inputs(self, obs: np.ndarray) -> np.ndarray:
        """(streams, D_in) for the current observation."""
        return obs if self.kind == "mappo" else obs.reshape(1, -1)

    def critic_inputs(self, obs: np.ndarray) -> np.ndarray:
        state = obs.ravel()
        if self.kind == "cenppo":
            return state[None, :]
        return np.hstack([np.repeat(state[None, :], self.n_ap, 0), np.eye(self.n_ap)])

    def to_env(self, sampled: np.ndarray) -> np.ndarray:
        """Per-stream actions to the (A, 3K+1) environment layout."""
        if self.kind == "mappo":
            return sampled
        k, a = self.k, self.n_ap
        s = sampled[0]
        sel = s[: a * k].reshape(a, k)
        pw = s[a * k: a * k + a * (k + 1)].reshape(a, k + 1)
        trig = s[a * k + a * (k + 1):].reshape(a, k)
        return np.hstack([sel, pw, trig])

    def masks(self, obs: np.ndarray, sampled: np.ndarray) -> np.ndarray:
        per_agent = action_masks(obs, self.to_env(sampled), self.k)
        if self.kind == "mappo":
            return per_agent
        k = self.k
        return np.concatenate([per_agent[:, :k].ravel(), per_agent[:, k:2 * k + 1].ravel(),
                               per_agent[:, 2 * k + 1:].ravel()])[None, :]

    # acting ---------------------------------------------------------------
    def act(self, obs: np.ndarray, rng=None, deterministic: bool = False):
        """Environment action plus what the buffer needs (per stream)."""
        x = self.actor_inputs(obs)
        outs = [nn.actor_forward(p, x[s:s + 1]) for s, p in enumerate(self.actors)]
        if deterministic:
            sampled = np.vstack([nn.greedy(o) for o in outs])
        else:
            sampled = np.vstack([nn.sample(o, rng)[0] for o in outs])
        masks = self.masks(obs, sampled)
        logp = np.zeros(self.n_streams)
        if not deterministic:
            for s, o in enumerate(outs):
                logp[s] = nn.logprob_entropy(o, sampled[s:s + 1], masks[s:s + 1])[0][0]
        return self.to_env(sampled), sampled, masks, logp

    def _n_act(self) -> int:
        p = self.actors[0]
        return p["bsel"].size + p["bmu"].size + p["btrig"].size

    def values(self, obs: np.ndarray) -> np.ndarray:
        return nn.critic_forward(self.critic, self.critic_inputs(obs))[0]

    # persistence ----------------------------------------------------------
    def nets(self) -> dict:
        out = {f"actor{i}": p for i, p in enumerate(self.actors)}
        out["critic"] = self.critic
        return out

    def optimisers(self) -> dict:
        out = {f"actor{i}": o for i, o in enumerate(self.actor_opts)}
        out["critic"] = self.critic_opt
        return out

    def save(self, path, meta: dict) -> None:
        nn.save_checkpoint(path, self.nets(), {"kind": self.kind, "n_ap": self.n_ap,
                                               "k_max": self.k, **meta}, self.optimisers())

    def load(self, path) -> None:
        nets = nn.load_checkpoint(path, self.nets(), self.optimisers())
        self.actors = [nets[f"actor{i}"] for i in range(len(self.actors))]
        self.critic = nets["critic"]


def make_learner(kind: str, cfg: SimConfig, rng: np.random.Generator) -> Learner:
    k, n_ap = cfg.phy.k_max, cfg.n_aps
    d = obs_dim(k)
    hid, lay = cfg.ppo.hidden_units, cfg.ppo.hidden_layers
    if kind == "mappo":
        spec = nn.ActorSpec(d, k, k + 1, k, hid, lay)
        actors = [nn.init_actor(spec, rng) for _ in range(n_ap)]
        critic = nn.init_critic(nn.CriticSpec(n_ap * d + n_ap, hid, lay), rng)
    elif kind == "cenppo":
        spec = nn.ActorSpec(n_ap * d, n_ap * k, n_ap * (k + 1), n_ap * k, hid, lay)
        actors = [nn.init_actor(spec, rng)]
        critic = nn.init_critic(nn.CriticSpec(n_ap * d, hid, lay), rng)
    else:
        raise ValueError(f"unknown algorithm {kind!r}")
    return Learner(kind, n_ap, k, d, actors, critic, cfg.ppo)


# ------------------------------------------------------------------ training
@dataclass
class CurveRow:
    step: int
    episodes: int
    raw_reward: float
    normalised_reward: float
    actor_loss: float
    critic_loss: float
    entropy: float
    approx_kl: float
    clip_frac: float


CURVE_FIELDS = tuple(CurveRow.__dataclass_fields__)


def write_curve(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_FIELDS)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v
                        for v in (getattr(r, f) for f in CURVE_FIELDS)])


def _episode_seeds(rng):
    while True:
        yield int(rng.integers(2**31 - 1))


def train(kind: str, cfg: SimConfig, seed: int, total_steps: int | None = None,
          env: VlcNomaEnv | None = None, on_update=None):
    """Train one learner; returns ``(learner, curve_rows)``.

    Exactly ``total_steps`` environment steps are taken. Updates happen on
    full buffers only, so a trailing partial buffer is collected but unused.
    The curve's raw reward is the mean per-step training reward (per agent for
    MAPPO, global for CenPPO) over the buffer.
    """
    total = cfg.ppo.total_steps if total_steps is None else int(total_steps)
    ss = np.random.SeedSequence(seed)
    init_rng, act_rng, upd_rng, ep_rng = (np.random.default_rng(s) for s in ss.spawn(4))
    env = env or VlcNomaEnv(cfg)
    learner = make_learner(kind, cfg, init_rng)
    seeds = _episode_seeds(ep_rng)
    ppo = cfg.ppo
    n_buf, S = ppo.buffer_steps, learner.n_streams
    obs, _ = env.reset(next(seeds))
    rows, lo, hi = [], np.inf, -np.inf
    episodes = 0
    done_steps = 0
    while done_steps < total:
        T = min(n_buf, total - done_steps)
        x_dim = learner.actor_inputs(obs).shape[1]
        buf = {
            "obs": np.zeros((T, S, x_dim)),
            "critic_in": np.zeros((T, S, learner.critic_inputs(obs).shape[1])),
            "actions": np.zeros((T, S, learner._n_act())),
            "masks": np.zeros((T, S, learner._n_act())),
            "logp": np.zeros((T, S)),
            "values": np.zeros((T, S)),
            "rewards": np.zeros((T, S)),
            "dones": np.zeros(T, bool),
        }
        for t in range(T):
            env_act, sampled, masks, logp = learner.act(obs, act_rng)
            buf["obs"][t] = learner.actor_inputs(obs)
            buf["critic_in"][t] = learner.critic_inputs(obs)
            buf["actions"][t] = sampled
            buf["masks"][t] = masks
            buf["logp"][t] = logp
            buf["values"][t] = learner.values(obs)
            res = env.step(env_act)
            buf["rewards"][t] = res.rewards if kind == "mappo" else res.global_reward
            buf["dones"][t] = res.done
            if res.done:
                episodes += 1
                obs, _ = env.reset(next(seeds))
            else:
                obs = res.obs
        done_steps += T
        raw = float(buf["rewards"].mean())
        if not np.isfinite(raw):
            raise TrainingDiverged("non-finite training reward")
        lo, hi = min(lo, raw), max(hi, raw)
        norm = (raw - lo) / (hi - lo) if hi > lo else 0.0
        stats = {"actor_loss": np.nan, "critic_loss": np.nan, "entropy": np.nan,
                 "approx_kl": np.nan, "clip_frac": np.nan}
        if T == n_buf:
            stats = _update(learner, buf, obs, upd_rng)
        rows.append(CurveRow(done_steps, episodes, raw, norm, stats["actor_loss"],
                             stats["critic_loss"], stats["entropy"], stats["approx_kl"],
                             stats["clip_frac"]))
        log.info("%s step %d reward %.4f kl %.4f", kind, done_steps, raw, stats["approx_kl"])
        if on_update is not None:
            on_update(learner, rows[-1])
    return learner, rows


def _update(learner: Learner, buf: dict, next_obs, rng) -> dict:
    ppo = learner.ppo
    last = learner.values(next_obs)
    adv, ret = gae(buf["rewards"], buf["values"], buf["dones"], last, ppo.discount,
                   ppo.gae_lambda)
    actor_stats = []
    for s, (params, opt) in enumerate(zip(learner.actors, learner.actor_opts)):
        actor_stats.append(update_actor(params, opt, buf["obs"][:, s], buf["actions"][:, s],
                                        buf["masks"][:, s], buf["logp"][:, s], adv[:, s],
                                        ppo, rng))
    T, S = ret.shape
    crit = update_critic(learner.critic, learner.critic_opt,
                         buf["critic_in"].reshape(T * S, -1), ret.reshape(-1), ppo, rng)
    out = {k: float(np.mean([st[k] for st in actor_stats])) for k in actor_stats[0]}
    return out | crit


# ---------------------------------------------------------------- evaluation
def learner_policy(learner: Learner):
    def policy(env: VlcNomaEnv, obs: np.ndarray) -> np.ndarray:
        return learner.act(obs, deterministic=True)[0]
    return policy


def baseline(env: VlcNomaEnv, obs: np.ndarray) -> np.ndarray:
    return baseline_policy(env)


def evaluate(policy, cfg: SimConfig, n_episodes: int, seed: int = 0,
             env: VlcNomaEnv | None = None):
    """Run ``n_episodes`` greedy episodes; returns (episode metrics list, summary, logs)."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be at least 1")
    env = env or VlcNomaEnv(cfg)
    seeds = np.random.SeedSequence(seed).generate_state(n_episodes)
    episodes, logs = [], []
    for s in seeds:
        obs, _ = env.reset(int(s))
        trace = EpisodeTrace(env.is_hp, cfg.env.dt_s)
        done = False
        while not done:
            res = env.step(policy(env, obs))
            trace.record(res)
            obs, done = res.obs, res.done
        episodes.append(episode_metrics(trace, cfg.qos.hp_rate_req_bps,
                                        cfg.qos.outage_threshold_bps,
                                        cfg.handover.pingpong_window_s))
        logs.append(trace.log)
    return episodes, summarise(episodes), logs


def load_learner(path, cfg: SimConfig) -> Learner:
    meta = nn.read_meta(path)
    learner = make_learner(meta["kind"], cfg, np.random.default_rng(0))
    learner.load(path)
    return learner
