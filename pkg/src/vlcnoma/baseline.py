"""Rule-based reference: serve everyone associated (up to K) with equal power,
hand over on a fixed hysteresis margin."""

from __future__ import annotations

import numpy as np

from .handover import baseline_handover


def baseline_policy(env) -> np.ndarray:
    """Raw joint action in the environment's layout for the current state."""
    k = env.k
    acts = np.zeros((env.n_ap, env.act_dim))
    trig = baseline_handover(env.assoc, env.ch.gain, env.cfg.handover.baseline_hysteresis_db)
    for a in range(env.n_ap):
        cand = env.candidates(a)
        n = len(cand)
        acts[a, :n] = 1.0
        acts[a, k:k + n] = 1.0
        acts[a, 2 * k] = 1.0
        acts[a, 2 * k + 1:2 * k + 1 + n] = trig[cand]
    return acts
