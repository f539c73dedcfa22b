"""Gaussian-process Bayesian optimisation of the two main reward weights."""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats
from scipy.stats import qmc

from .config import SimConfig

log = logging.getLogger(__name__)

# fixed sub-weights of the score: HP satisfaction, outage, handover rate,
# ping-pong ratio, normalised sum rate
SCORE_COEFFS = (1.0, 0.5, 0.2, 0.3, 0.1)
COMPONENTS = ("qossr_hp", "p_out", "hor", "ppr", "rsum_norm")


def composite_score(c: dict, w_qos: float, w_stab: float) -> float:
    a, b, h, p, r = SCORE_COEFFS
    rsum = min(max(c["rsum_norm"], 0.0), 1.0)
    return (w_qos * (a * c["qossr_hp"] - b * c["p_out"])
            + w_stab * (-h * c["hor"] - p * c["ppr"] + r * rsum))


def worst_score(w_qos: float, w_stab: float, dt_s: float = 1.0) -> float:
    """Lowest attainable score: nobody satisfied, everyone in outage, one HO per user per step."""
    a, b, h, p, r = SCORE_COEFFS
    return w_qos * (-b) + w_stab * (-h / dt_s - p)


# ------------------------------------------------------------------------ GP
_LENGTH_GRID = np.geomspace(0.03, 3.0, 25)
_JITTERS = (1e-10, 1e-8, 1e-6, 1e-4)
# used when there are too few points for the likelihood to pick a length-scale
_PRIOR_LENGTH = 0.5


def se_kernel(x1, x2, ell, var):
    d = (x1[:, None, :] - x2[None, :, :]) / ell
    return var * np.exp(-0.5 * np.sum(d * d, axis=-1))


@dataclass
class GaussianProcess:
    x: np.ndarray
    y_mean: float
    y_std: float
    ell: np.ndarray
    var: float
    chol: tuple
    alpha: np.ndarray

    def predict(self, xq):
        xq = np.atleast_2d(np.asarray(xq, float))
        ks = se_kernel(xq, self.x, self.ell, self.var)
        mean = ks @ self.alpha
        v = linalg.cho_solve(self.chol, ks.T)
        var = np.maximum(self.var - np.sum(ks * v.T, axis=1), 0.0)
        return self.y_mean + self.y_std * mean, var * self.y_std ** 2


def _factor(k):
    n = len(k)
    scale = max(np.mean(np.diag(k)), 1e-300)
    for j in _JITTERS:
        try:
            return linalg.cho_factor(k + j * scale * np.eye(n), lower=True)
        except linalg.LinAlgError:
            continue
    raise linalg.LinAlgError("covariance is not positive definite even with jitter")


def _profile_fit(x, yn, ell):
    """Signal variance in closed form and the resulting log marginal likelihood."""
    n = len(yn)
    k1 = se_kernel(x, x, ell, 1.0)
    chol = _factor(k1)
    a1 = linalg.cho_solve(chol, yn)
    var = max(float(yn @ a1) / n, 1e-6)
    logdet = 2 * np.sum(np.log(np.diag(chol[0])))
    # with K = var * K1: -1/2 y'K^-1 y - 1/2 log|K|
    lml = -0.5 * float(yn @ a1) / var - 0.5 * (logdet + n * np.log(var))
    return lml, var


def gp_fit(x, y, length_scales=None) -> GaussianProcess:
    """Noise-free GP on inputs already scaled to the unit cube.

    Targets are standardised. Without ``length_scales`` each dimension's
    length-scale is chosen on a log grid by marginal likelihood (from three
    points on; below that a fixed prior length-scale is used).
    """
    x = np.atleast_2d(np.asarray(x, float))
    y = np.asarray(y, float).ravel()
    if len(y) < 1 or len(y) != len(x):
        raise ValueError("need at least one (x, y) pair with matching lengths")
    mu = float(y.mean())
    sd = float(y.std()) if len(y) > 1 and y.std() > 0 else 1.0
    yn = (y - mu) / sd
    dim = x.shape[1]
    if length_scales is None and len(y) < 3:
        length_scales = _PRIOR_LENGTH
    if length_scales is None:
        best = None
        for ell in _iter_grid(dim):
            lml, _ = _profile_fit(x, yn, ell)
            if best is None or lml > best[0]:
                best = (lml, ell)
        ell = best[1]
    else:
        ell = np.broadcast_to(np.asarray(length_scales, float), (dim,)).copy()
    _, var = _profile_fit(x, yn, ell)
    chol = _factor(se_kernel(x, x, ell, var))
    return GaussianProcess(x, mu, sd, ell, var, chol, linalg.cho_solve(chol, yn))


def _iter_grid(dim):
    mesh = np.meshgrid(*([_LENGTH_GRID] * dim), indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def gp_predict(gp: GaussianProcess, xq):
    return gp.predict(xq)


def expected_improvement(mean, var, best_y):
    std = np.sqrt(np.maximum(var, 0.0))
    gap = mean - best_y
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(std > 0, gap / std, 0.0)
    ei = np.where(std > 0, gap * stats.norm.cdf(z) + std * stats.norm.pdf(z),
                  np.maximum(gap, 0.0))
    return np.maximum(ei, 0.0)


def candidate_grid(bounds, step: float) -> np.ndarray:
    axes = [np.round(np.arange(lo, hi + step / 2, step), 10) for lo, hi in bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def acquisition_argmax(gp: GaussianProcess, best_y: float, bounds, step: float):
    """Grid point (in original units) with the largest expected improvement."""
    grid = candidate_grid(bounds, step)
    mean, var = gp.predict(_to_unit(grid, bounds))
    ei = expected_improvement(mean, var, best_y)
    return grid[int(np.argmax(ei))], float(ei.max())


def _to_unit(w, bounds):
    b = np.asarray(bounds, float)
    return (np.asarray(w, float) - b[:, 0]) / (b[:, 1] - b[:, 0])


# ------------------------------------------------------------------- search
@dataclass
class Trial:
    index: int
    w: tuple
    score: float
    components: dict = field(default_factory=dict)
    status: str = "ok"
    phase: str = "init"


def _evaluate(objective, w, index, phase, dt_s):
    try:
        out = objective(*w)
    except Exception as exc:  # a failed trial must not end the search
        log.warning("trial %d at %s failed: %s", index, w, exc)
        return Trial(index, tuple(w), worst_score(*w, dt_s), {}, f"failed: {exc}", phase)
    if isinstance(out, tuple):
        score, comps = out
    else:
        score, comps = out, {}
    score = float(score)
    if not np.isfinite(score):
        return Trial(index, tuple(w), worst_score(*w, dt_s), dict(comps), "non-finite", phase)
    return Trial(index, tuple(w), score, dict(comps), "ok", phase)


def initial_design(bounds, n: int, seed: int) -> np.ndarray:
    b = np.asarray(bounds, float)
    u = qmc.Halton(d=len(b), scramble=True, seed=seed).random(n)
    return b[:, 0] + u * (b[:, 1] - b[:, 0])


def run_bo(objective, bounds, n_init: int, n_trials: int, grid_step: float = 0.05,
           seed: int = 0, dt_s: float = 1.0):
    """Maximise ``objective(w_qos, w_stab)``; returns (best trial, all trials).

    The objective returns a score or ``(score, components)``.
    """
    if n_init < 1 or n_trials < n_init:
        raise ValueError("need 1 <= n_init <= n_trials")
    trials = []
    for w in initial_design(bounds, n_init, seed):
        trials.append(_evaluate(objective, w, len(trials), "init", dt_s))
    while len(trials) < n_trials:
        x = _to_unit(np.array([t.w for t in trials]), bounds)
        y = np.array([t.score for t in trials])
        gp = gp_fit(x, y)
        w, _ = acquisition_argmax(gp, float(y.max()), bounds, grid_step)
        trials.append(_evaluate(objective, w, len(trials), "bo", dt_s))
    return best_trial(trials), trials


def run_grid(objective, bounds, n_trials: int, dt_s: float = 1.0):
    """Square grid with ``n_trials`` points (must be a perfect square)."""
    side = int(round(np.sqrt(n_trials)))
    if side * side != n_trials:
        raise ValueError("grid tuning needs a square number of trials")
    axes = [np.linspace(lo, hi, side) for lo, hi in bounds]
    trials = []
    for a in axes[0]:
        for b in axes[1]:
            trials.append(_evaluate(objective, (a, b), len(trials), "grid", dt_s))
    return best_trial(trials), trials


def best_trial(trials) -> Trial:
    # first maximum wins so the answer does not depend on float noise in ties
    return max(trials, key=lambda t: (t.score, -t.index))


def write_trials(trials, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "phase", "w_qos", "w_stab", "score", *COMPONENTS, "status"])
        for t in trials:
            w.writerow([t.index, t.phase, repr(float(t.w[0])), repr(float(t.w[1])),
                        repr(t.score), *[repr(float(t.components[c])) if c in t.components
                                         else "" for c in COMPONENTS], t.status])


# ---------------------------------------------------------- MARL objective
def components_from_summary(summary: dict, r_max_bps: float) -> dict:
    m = {k: v["mean"] for k, v in summary.items() if isinstance(v, dict)}
    return {"qossr_hp": m["qossr_hp"], "p_out": m["p_out_sp"], "hor": m["hor"],
            "ppr": m["ppr"], "rsum_norm": min(max(m["sum_rate_bps"] / r_max_bps, 0.0), 1.0)}


def marl_objective(cfg: SimConfig, seed: int = 0):
    """Reduced-budget train+evaluate cycle scored with :func:`composite_score`."""
    from .ppo import evaluate, learner_policy, train

    def objective(w_qos, w_stab):
        trial_cfg = dataclasses.replace(
            cfg, reward=dataclasses.replace(cfg.reward, w_qos=float(w_qos), w_stab=float(w_stab)))
        learner, _ = train(cfg.bo.algo, trial_cfg, seed, cfg.bo.trial_steps)
        _, summary, _ = evaluate(learner_policy(learner), trial_cfg, cfg.bo.trial_eval_episodes,
                                 seed=seed + 1)
        comps = components_from_summary(summary, cfg.r_max_bps)
        return composite_score(comps, w_qos, w_stab), comps

    return objective
