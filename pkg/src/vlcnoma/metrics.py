"""Evaluation metrics computed from episode traces, plus CSV/JSON export."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .handover import pingpong_flags


@dataclass
class EpisodeTrace:
    """Per-step record of one episode; arrays are stacked over steps."""
    is_hp: np.ndarray
    dt_s: float
    rate: list = field(default_factory=list)      # (U,) bit/s
    sinr: list = field(default_factory=list)      # (U,) linear
    served: list = field(default_factory=list)    # (U,) bool
    ici: list = field(default_factory=list)       # (U,) A^2 W
    user_power: list = field(default_factory=list)  # (U,) W
    ap_power: list = field(default_factory=list)  # (A,) W
    rewards: list = field(default_factory=list)   # (A,)
    noise_var: float = 0.0
    log: list = field(default_factory=list)

    def record(self, res) -> None:
        links = res.links
        self.rate.append(links.rate_bps)
        self.sinr.append(links.sinr)
        self.served.append(links.served)
        self.ici.append(links.ici)
        p = res.info["power"]
        self.user_power.append(p.sum(axis=0))
        self.ap_power.append(p.sum(axis=1))
        self.rewards.append(res.rewards)
        self.noise_var = links.noise_var
        self.log.extend(res.info["events"])

    @property
    def n_steps(self) -> int:
        return len(self.rate)

    def stacked(self, name: str) -> np.ndarray:
        rows = getattr(self, name)
        return np.vstack(rows) if rows else np.zeros((0, len(self.is_hp)))


def qossr_hp(rate: np.ndarray, is_hp: np.ndarray, req_bps: float) -> tuple[float, bool]:
    """Share of (HP user, step) pairs meeting the requirement; second value flags no HP users."""
    r = rate[:, is_hp]
    if r.size == 0:
        return 1.0, True
    return float(np.mean(r >= req_bps)), False


def outage_probability_sp(rate: np.ndarray, is_hp: np.ndarray,
                          threshold_bps: float) -> tuple[float, bool]:
    r = rate[:, ~is_hp]
    if r.size == 0:
        return 0.0, True
    return float(np.mean(r < threshold_bps)), False


def pingpong_bruteforce(log, window_s: float) -> list:
    """Quadratic reference for :func:`vlcnoma.handover.pingpong_flags`."""
    flags = []
    for i, ev in enumerate(log):
        prev = None
        for j in range(i):
            if log[j].user == ev.user:
                prev = log[j]
        flags.append(prev is not None and ev.dst == prev.src
                     and ev.time - prev.time <= window_s)
    return flags


def hor_and_ppr(log, duration_s: float, n_users: int, window_s: float) -> tuple[float, float]:
    if not log:
        return 0.0, 0.0
    if duration_s <= 0 or n_users < 1:
        raise ValueError("need positive duration and at least one user")
    n_pp = sum(pingpong_flags(log, window_s))
    return len(log) / (n_users * duration_s), n_pp / max(1, len(log))


def jfi(values) -> float:
    x = np.asarray(values, float)
    if x.size == 0 or np.any(x < 0):
        raise ValueError("JFI needs a nonempty nonnegative vector")
    top = x.max()
    if top == 0:
        raise ValueError("JFI undefined for an all-zero vector")
    x = x / top  # keeps the squares clear of underflow
    sq = float(np.sum(x * x))
    return float(x.sum() ** 2 / (x.size * sq))


def sum_rate(rate: np.ndarray) -> float:
    return float(rate.sum(axis=1).mean()) if len(rate) else 0.0


def avg_sinr_db(sinr: np.ndarray) -> tuple[float, int]:
    """Mean SINR in dB over pairs with positive SINR, and the count left out."""
    pos = sinr[sinr > 0]
    excluded = int(sinr.size - pos.size)
    return (float(np.mean(10 * np.log10(pos))) if pos.size else float("nan")), excluded


def inr_samples_db(ici: np.ndarray, noise_var: float) -> np.ndarray:
    """INR per (user, step) in dB; pairs with no ICI at all are dropped."""
    x = ici[ici > 0]
    return 10 * np.log10(x / noise_var)


def empirical_cdf(samples) -> tuple[np.ndarray, np.ndarray]:
    s = np.sort(np.asarray(samples, float))
    return s, np.arange(1, len(s) + 1) / max(len(s), 1)


def avg_ap_power(ap_power: np.ndarray) -> float:
    return float(ap_power.mean()) if ap_power.size else 0.0


SCALARS = ("qossr_hp", "p_out_sp", "hor", "ppr", "jfi", "sum_rate_bps", "avg_rate_bps",
           "avg_sinr_db", "avg_ap_power_w", "mean_reward", "n_handovers", "sinr_excluded")


@dataclass
class EpisodeMetrics:
    qossr_hp: float
    p_out_sp: float
    hor: float
    ppr: float
    jfi: float
    sum_rate_bps: float
    avg_rate_bps: float
    avg_sinr_db: float
    avg_ap_power_w: float
    mean_reward: float
    n_handovers: int
    sinr_excluded: int
    inr_db: np.ndarray
    sinr_db: np.ndarray
    no_hp: bool = False
    no_sp: bool = False

    def scalars(self) -> dict:
        return {k: getattr(self, k) for k in SCALARS}


def episode_metrics(trace: EpisodeTrace, hp_req_bps: float, outage_bps: float,
                    window_s: float) -> EpisodeMetrics:
    rate = trace.stacked("rate")
    sinr = trace.stacked("sinr")
    n_ue = len(trace.is_hp)
    q, no_hp = qossr_hp(rate, trace.is_hp, hp_req_bps)
    p_out, no_sp = outage_probability_sp(rate, trace.is_hp, outage_bps)
    duration = trace.n_steps * trace.dt_s
    hor, ppr = hor_and_ppr(trace.log, duration, n_ue, window_s)
    mean_user_power = trace.stacked("user_power").mean(axis=0) if trace.n_steps else np.zeros(n_ue)
    fair = jfi(mean_user_power) if np.any(mean_user_power > 0) else float("nan")
    s_db, excluded = avg_sinr_db(sinr)
    pos = sinr[sinr > 0]
    ap_power = np.vstack(trace.ap_power) if trace.ap_power else np.zeros((0, 0))
    rewards = np.vstack(trace.rewards) if trace.rewards else np.zeros((0, 0))
    sr = sum_rate(rate)
    return EpisodeMetrics(
        qossr_hp=q, p_out_sp=p_out, hor=hor, ppr=ppr, jfi=fair, sum_rate_bps=sr,
        avg_rate_bps=sr / n_ue if n_ue else 0.0, avg_sinr_db=s_db,
        avg_ap_power_w=avg_ap_power(ap_power),
        mean_reward=float(rewards.mean()) if rewards.size else 0.0,
        n_handovers=len(trace.log), sinr_excluded=excluded,
        inr_db=inr_samples_db(trace.stacked("ici"), trace.noise_var) if trace.n_steps else np.zeros(0),
        sinr_db=10 * np.log10(pos), no_hp=no_hp, no_sp=no_sp,
    )


def confidence_interval(values, level: float = 0.95) -> tuple[float, float]:
    """Mean and Student-t half-width; NaN entries are skipped."""
    x = np.asarray(values, float)
    x = x[~np.isnan(x)]
    if x.size == 0:
        return float("nan"), float("nan")
    if x.size == 1:
        return float(x[0]), 0.0
    half = stats.t.ppf(0.5 + level / 2, x.size - 1) * x.std(ddof=1) / math.sqrt(x.size)
    return float(x.mean()), float(half)


def summarise(episodes: list) -> dict:
    out = {"n_episodes": len(episodes)}
    for key in SCALARS:
        mean, half = confidence_interval([getattr(e, key) for e in episodes])
        out[key] = {"mean": mean, "ci95": half}
    out["no_hp_users"] = any(e.no_hp for e in episodes)
    out["no_sp_users"] = any(e.no_sp for e in episodes)
    return out


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_episode_csv(episodes: list, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("episode",) + SCALARS)
        for i, e in enumerate(episodes):
            w.writerow([i] + [_fmt(v) for v in e.scalars().values()])


def write_samples_csv(episodes: list, path: str | Path) -> None:
    """Long-format INR and SINR samples with their empirical CDF levels."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "value_db", "cdf"])
        for kind in ("inr_db", "sinr_db"):
            pooled = np.concatenate([getattr(e, kind) for e in episodes]) if episodes else []
            xs, ps = empirical_cdf(pooled)
            for x, p in zip(xs, ps):
                w.writerow([kind.split("_")[0], repr(float(x)), repr(float(p))])


def write_summary_json(summary: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True, default=float))


def asdict_scalars(m: EpisodeMetrics) -> dict:
    d = asdict(m)
    d.pop("inr_db")
    d.pop("sinr_db")
    return d
