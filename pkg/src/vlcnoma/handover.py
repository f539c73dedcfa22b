"""User-AP association, handover execution and the handover event log."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

NO_AP = -1


@dataclass(frozen=True)
class HandoverEvent:
    time: float
    user: int
    src: int
    dst: int


@dataclass
class AssociationState:
    serving: np.ndarray      # (U,) AP index
    previous: np.ndarray     # (U,) AP index before the last handover, NO_AP if none
    since_ho: np.ndarray     # (U,) seconds since the last handover (or since start)
    log: list = field(default_factory=list)

    def copy(self) -> "AssociationState":
        return AssociationState(self.serving.copy(), self.previous.copy(),
                                self.since_ho.copy(), list(self.log))

    def users_of(self, ap: int) -> np.ndarray:
        return np.flatnonzero(self.serving == ap)


def strongest_ap(gain: np.ndarray) -> np.ndarray:
    # argmax returns the first maximum, i.e. the lowest AP id on ties
    return np.argmax(gain, axis=0) if gain.shape[1] else np.zeros(0, int)


def initial_association(gain: np.ndarray) -> AssociationState:
    n_ue = gain.shape[1]
    return AssociationState(strongest_ap(gain).astype(int), np.full(n_ue, NO_AP),
                            np.zeros(n_ue))


def best_other_ap(gain: np.ndarray, serving: np.ndarray) -> np.ndarray:
    """Strongest AP other than the serving one per user; NO_AP with a single AP."""
    if gain.shape[0] < 2:
        return np.full(gain.shape[1], NO_AP)
    masked = gain.copy()
    masked[serving, np.arange(gain.shape[1])] = -np.inf
    return np.argmax(masked, axis=0)


def _trigger_mask(state: AssociationState, triggers) -> np.ndarray:
    n_ue = len(state.serving)
    if isinstance(triggers, dict):
        mask = np.zeros(n_ue, bool)
        for ap, users in triggers.items():
            users = np.asarray(list(users), int)
            bad = users[state.serving[users] != ap] if len(users) else users
            if len(bad):
                raise ValueError(f"AP {ap} triggered handover for users {bad.tolist()} "
                                 "it does not serve")
            mask[users] = True
        return mask
    mask = np.asarray(triggers, bool)
    if mask.shape != (n_ue,):
        raise ValueError(f"expected {n_ue} trigger bits, got shape {mask.shape}")
    return mask


def apply_handover_triggers(state: AssociationState, triggers, gain: np.ndarray,
                            t: float, dt: float) -> AssociationState:
    """Move every triggered user to its strongest non-serving AP.

    ``triggers`` is either a per-user bool array or a mapping from AP id to
    the users that AP hands over; the mapping form is checked against the
    current association. Timers of users that stay put advance by ``dt``.
    """
    mask = _trigger_mask(state, triggers)
    new = state.copy()
    new.since_ho = new.since_ho + dt
    target = best_other_ap(gain, state.serving)
    for u in np.flatnonzero(mask & (target != NO_AP)):
        src, dst = int(state.serving[u]), int(target[u])
        new.log.append(HandoverEvent(float(t), int(u), src, dst))
        new.previous[u] = src
        new.serving[u] = dst
        new.since_ho[u] = 0.0
    return new


def baseline_handover(state: AssociationState, gain: np.ndarray,
                      hysteresis_db: float) -> np.ndarray:
    """Trigger when the best other AP beats the serving one by more than the margin."""
    n_ue = gain.shape[1]
    other = best_other_ap(gain, state.serving)
    if n_ue == 0 or gain.shape[0] < 2:
        return np.zeros(n_ue, bool)
    users = np.arange(n_ue)
    return gain[other, users] > gain[state.serving, users] * 10 ** (hysteresis_db / 10)


def pingpong_flags(log, window_s: float) -> list:
    """True for an event that returns a user to the AP it left within the window."""
    last = {}
    flags = []
    for ev in log:
        prev = last.get(ev.user)
        flags.append(prev is not None and ev.dst == prev.src and ev.time - prev.time <= window_s)
        last[ev.user] = ev
    return flags


def write_event_log(log, window_s: float, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "user", "from_ap", "to_ap", "pingpong"])
        for ev, pp in zip(log, pingpong_flags(log, window_s)):
            w.writerow([f"{ev.time:g}", ev.user, ev.src, ev.dst, int(pp)])
