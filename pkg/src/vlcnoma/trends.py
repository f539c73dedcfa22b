"""Desk-scale comparison of MAPPO, CenPPO and the baseline on the reduced layout."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config, ppo

log = logging.getLogger(__name__)

KEYS = ("qossr_hp", "avg_rate_bps", "avg_sinr_db", "jfi", "p_out_sp", "hor", "ppr",
        "sum_rate_bps", "mean_reward")


@dataclass
class TrendChecks:
    qossr_factor: bool     # each MARL QoSSR_HP >= 2x baseline
    rate_above: bool       # each MARL mean user rate > baseline
    sinr_direction: bool   # CenPPO SINR >= MAPPO SINR - 1 dB
    baseline_fairest: bool  # baseline JFI >= each MARL JFI

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _means(summary: dict) -> dict:
    return {k: summary[k]["mean"] for k in KEYS}


def check_seed(base: dict, mappo: dict, cen: dict) -> TrendChecks:
    return TrendChecks(
        qossr_factor=all(m["qossr_hp"] >= 2 * base["qossr_hp"] for m in (mappo, cen)),
        rate_above=all(m["avg_rate_bps"] > base["avg_rate_bps"] for m in (mappo, cen)),
        sinr_direction=cen["avg_sinr_db"] >= mappo["avg_sinr_db"] - 1.0,
        baseline_fairest=all(base["jfi"] >= m["jfi"] for m in (mappo, cen)),
    )


def run_trends(seeds=(0, 1, 2), steps: int = 200_000, episodes: int = 100,
               cfg: config.SimConfig | None = None, out: Path | None = None,
               eval_seed: int = 9001) -> dict:
    """Train both learners per seed, evaluate greedily next to the baseline.

    Every policy is scored on the same evaluation episode seeds.
    """
    cfg = cfg or config.reduced()
    _, base_summary, _ = ppo.evaluate(ppo.baseline, cfg, episodes, seed=eval_seed)
    base = _means(base_summary)
    result = {"steps": steps, "episodes": episodes, "baseline": base, "seeds": {}}
    for seed in seeds:
        per = {}
        for kind in ("mappo", "cenppo"):
            learner, rows = ppo.train(kind, cfg, seed, steps)
            _, summary, _ = ppo.evaluate(ppo.learner_policy(learner), cfg, episodes,
                                         seed=eval_seed)
            per[kind] = _means(summary)
            per[kind + "_curve"] = [(r.step, r.raw_reward) for r in rows]
            if out is not None:
                out.mkdir(parents=True, exist_ok=True)
                ppo.write_curve(rows, out / f"curve_{kind}_seed{seed}.csv")
            log.info("seed %d %s %s", seed, kind, per[kind])
        per["checks"] = check_seed(base, per["mappo"], per["cenppo"]).as_dict()
        result["seeds"][str(seed)] = per
        if out is not None:
            (out / "trends.json").write_text(json.dumps(result, indent=2, default=float))
    return result


def criterion_outcomes(result: dict) -> dict:
    """A check passes only if it holds for every seed."""
    names = TrendChecks.__dataclass_fields__
    return {n: all(s["checks"][n] for s in result["seeds"].values()) for n in names}


def summary_table(result: dict) -> str:
    lines = [f"{'policy':<14}" + "".join(f"{k:>14}" for k in KEYS[:4])]
    lines.append(f"{'baseline':<14}" + "".join(f"{result['baseline'][k]:>14.4g}" for k in KEYS[:4]))
    for seed, per in result["seeds"].items():
        for kind in ("mappo", "cenppo"):
            lines.append(f"{kind + '/' + seed:<14}"
                         + "".join(f"{per[kind][k]:>14.4g}" for k in KEYS[:4]))
    return "\n".join(lines)


def mean_over_seeds(result: dict, kind: str, key: str) -> float:
    return float(np.mean([s[kind][key] for s in result["seeds"].values()]))
