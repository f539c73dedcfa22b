"""Downlink power-domain NOMA with perfect SIC, inter-cell interference and rates.

Allocations are dense ``(A, U)`` power arrays: entry ``[a, u]`` is the electrical
power AP ``a`` spends on user ``u``, zero when ``u`` is not in its served set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import DIMMING_LEVELS

SIC_MODES = ("standard", "literal-eq5")


def effective_power_budget(max_power_w: float, gamma: float,
                           levels=DIMMING_LEVELS) -> float:
    """Electrical budget under dimming level ``gamma`` (linear in brightness)."""
    if not any(np.isclose(gamma, g, rtol=0, atol=1e-9) for g in levels):
        raise ValueError(f"dimming level {gamma} not in {tuple(levels)}")
    return gamma * max_power_w


def sic_order(gains, ids=None) -> list:
    """Decoding order: descending gain, ties by ascending id."""
    gains = list(gains)
    ids = list(range(len(gains))) if ids is None else list(ids)
    return [u for _, u in sorted(zip(gains, ids), key=lambda t: (-t[0], t[1]))]


def intra_cell_interference(gain_col: np.ndarray, power_row: np.ndarray, served: np.ndarray,
                            mode: str = "standard") -> np.ndarray:
    """Residual co-channel interference for every user of one cell.

    ``gain_col[u]`` is the gain from this AP to user ``u``. In standard mode a
    user strips off everything sent to users decoded after it (weaker, or equal
    gain with a higher id, as in :func:`sic_order`) and is left with the power
    of those decoded before it; ``literal-eq5`` leaves every other served user
    in. Users outside ``served`` get 0.
    """
    g = np.asarray(gain_col, float)
    p = np.where(served, power_row, 0.0)
    out = np.zeros_like(g)
    idx = np.flatnonzero(served)
    if len(idx) < 2:
        return out
    gs, ps = g[idx], p[idx]
    if mode == "standard":
        lower_id = idx[None, :] < idx[:, None]
        stronger = (gs[None, :] > gs[:, None]) | ((gs[None, :] == gs[:, None]) & lower_id)
        residual = stronger.astype(float) @ ps
    elif mode == "literal-eq5":
        residual = ps.sum() - ps
    else:
        raise ValueError(f"unknown SIC mode {mode!r}")
    out[idx] = gs * residual
    return out


def ici(gain: np.ndarray, power: np.ndarray, serving: np.ndarray) -> np.ndarray:
    """Interference each user receives from every AP other than its own.

    The victim's gain from an interfering AP multiplies every stream that AP
    sends, so the inner sum collapses to that AP's total power.
    """
    total = np.asarray(power, float).sum(axis=1)
    contrib = np.asarray(gain, float) * total[:, None]
    # mask rather than subtract the serving term: subtraction cancels badly
    # when the serving AP dominates
    contrib[serving, np.arange(gain.shape[1])] = 0.0
    return contrib.sum(axis=0)


def ici_naive(gain, power, serving) -> np.ndarray:
    """Double-loop form of :func:`ici`, kept as a reference."""
    n_ap, n_ue = gain.shape
    out = np.zeros(n_ue)
    for u in range(n_ue):
        for a in range(n_ap):
            if a == serving[u]:
                continue
            for v in range(n_ue):
                out[u] += gain[a, u] * power[a, v]
    return out


@dataclass(frozen=True)
class LinkReport:
    sinr: np.ndarray       # linear, 0 for users without power
    signal: np.ndarray     # A^2 W
    intra: np.ndarray      # A^2 W
    ici: np.ndarray        # A^2 W, relative to the serving AP
    noise_var: float       # A^2
    rate_bps: np.ndarray
    served: np.ndarray     # bool, user got positive power this step

    @property
    def inr_db(self) -> np.ndarray:
        """ICI-to-noise ratio in dB; -inf where no ICI reaches the user."""
        with np.errstate(divide="ignore"):
            return 10.0 * np.log10(self.ici / self.noise_var)


def sinr_and_rate(gain: np.ndarray, power: np.ndarray, serving: np.ndarray,
                  noise_var: float, bandwidth_hz: float,
                  mode: str = "standard") -> LinkReport:
    """SINR and Shannon rate of every user for one allocation snapshot.

    ``serving[u]`` is the AP user ``u`` is attached to; only that AP's power to
    ``u`` carries its data.
    """
    gain = np.asarray(gain, float)
    power = np.asarray(power, float)
    serving = np.asarray(serving, int)
    n_ap, n_ue = gain.shape
    if power.shape != gain.shape:
        raise ValueError("power and gain shapes differ")
    if np.any(power < 0):
        raise ValueError("negative power")
    users = np.arange(n_ue)
    own_p = power[serving, users] if n_ue else np.zeros(0)
    own_g = gain[serving, users] if n_ue else np.zeros(0)
    # power sent to a user by a non-serving AP would be pure interference;
    # the environment never produces it
    served = own_p > 0
    intra = np.zeros(n_ue)
    for a in range(n_ap):
        mask = served & (serving == a)
        if mask.sum() > 1:
            intra += np.where(mask, intra_cell_interference(gain[a], power[a], mask, mode), 0.0)
    interference = ici(gain, power, serving) if n_ue else np.zeros(0)
    signal = own_g * own_p
    sinr = np.where(served, signal / (intra + interference + noise_var), 0.0)
    rate = bandwidth_hz * np.log2(1.0 + sinr)
    return LinkReport(sinr, signal, intra, interference, float(noise_var), rate, served)
