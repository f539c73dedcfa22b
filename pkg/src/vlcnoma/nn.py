"""Numpy MLP actor/critic with hand-written backward passes and Adam.

The actor is a ReLU trunk with three heads:

* selection: one logit per slot, Bernoulli with ``p = sigmoid(logit)``;
* power: Gaussian with mean ``(tanh(z) + 1) / 2`` in [0, 1] and
  ``std = max(softplus(z'), STD_FLOOR)``;
* trigger: one logit per slot, Bernoulli.

A sampled action is laid out ``[selection | power | trigger]``. Log-probs are
taken under the pre-clipping Gaussian. Masks switch individual action entries
out of the log-prob and entropy, which is how empty user slots are kept from
influencing training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

STD_FLOOR = 1e-4
LAYOUT_VERSION = 1
_HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)
_HALF_LOG_2PIE = 0.5 * np.log(2 * np.pi * np.e)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------- parameters
def _trunk_init(rng, sizes):
    params = {}
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        lim = np.sqrt(6.0 / n_in)
        params[f"W{i}"] = rng.uniform(-lim, lim, (n_in, n_out))
        params[f"b{i}"] = np.zeros(n_out)
    return params


def _head_init(rng, n_in, n_out, scale):
    lim = scale * np.sqrt(6.0 / n_in)
    return rng.uniform(-lim, lim, (n_in, n_out)), np.zeros(n_out)


@dataclass(frozen=True)
class ActorSpec:
    n_in: int
    n_sel: int
    n_pow: int
    n_trig: int
    hidden: int = 256
    layers: int = 2

    @property
    def n_act(self) -> int:
        return self.n_sel + self.n_pow + self.n_trig


@dataclass(frozen=True)
class CriticSpec:
    n_in: int
    hidden: int = 256
    layers: int = 2


def init_actor(spec: ActorSpec, rng: np.random.Generator) -> dict:
    p = _trunk_init(rng, [spec.n_in] + [spec.hidden] * spec.layers)
    for name, n in (("sel", spec.n_sel), ("mu", spec.n_pow), ("std", spec.n_pow),
                    ("trig", spec.n_trig)):
        p[f"W{name}"], p[f"b{name}"] = _head_init(rng, spec.hidden, n, 0.01)
    return p


def init_critic(spec: CriticSpec, rng: np.random.Generator) -> dict:
    p = _trunk_init(rng, [spec.n_in] + [spec.hidden] * spec.layers)
    p["Wv"], p["bv"] = _head_init(rng, spec.hidden, 1, 1.0)
    return p


def _n_layers(params) -> int:
    n = 0
    while f"W{n}" in params:
        n += 1
    return n


def trunk_forward(params, x):
    acts = [x]
    h = x
    for i in range(_n_layers(params)):
        h = np.maximum(h @ params[f"W{i}"] + params[f"b{i}"], 0.0)
        acts.append(h)
    return acts


def trunk_backward(params, acts, dh, grads):
    for i in reversed(range(_n_layers(params))):
        dh = dh * (acts[i + 1] > 0)
        grads[f"W{i}"] = acts[i].T @ dh
        grads[f"b{i}"] = dh.sum(axis=0)
        if i:
            dh = dh @ params[f"W{i}"].T


# --------------------------------------------------------------------- actor
@dataclass
class ActorOut:
    acts: list
    sel_logit: np.ndarray
    mu_pre: np.ndarray
    std_pre: np.ndarray
    trig_logit: np.ndarray

    @property
    def sel_p(self):
        return sigmoid(self.sel_logit)

    @property
    def mu(self):
        return 0.5 * (np.tanh(self.mu_pre) + 1.0)

    @property
    def std(self):
        return np.maximum(softplus(self.std_pre), STD_FLOOR)

    @property
    def trig_p(self):
        return sigmoid(self.trig_logit)


def actor_forward(params, x) -> ActorOut:
    x = np.atleast_2d(np.asarray(x, float))
    if x.shape[1] != params["W0"].shape[0]:
        raise ValueError(f"actor expects {params['W0'].shape[0]} inputs, got {x.shape[1]}")
    acts = trunk_forward(params, x)
    h = acts[-1]
    return ActorOut(acts, h @ params["Wsel"] + params["bsel"], h @ params["Wmu"] + params["bmu"],
                    h @ params["Wstd"] + params["bstd"], h @ params["Wtrig"] + params["btrig"])


def split_action(a, n_sel, n_pow):
    return a[:, :n_sel], a[:, n_sel:n_sel + n_pow], a[:, n_sel + n_pow:]


def _bernoulli_logp(bits, logit):
    # log p(bits) without forming log(sigmoid) explicitly
    return -softplus(np.where(bits > 0.5, -logit, logit))


def _bernoulli_entropy(logit):
    p = sigmoid(logit)
    return softplus(logit) - p * logit


def logprob_entropy(out: ActorOut, actions, masks):
    """Joint log-prob and entropy per row.

    ``masks`` has the action's shape plus, for the power block, decides which
    Gaussian entries count; entropy uses the same masks.
    """
    n_sel, n_pow = out.sel_logit.shape[1], out.mu_pre.shape[1]
    s, x, t = split_action(actions, n_sel, n_pow)
    ms, mp, mt = split_action(masks, n_sel, n_pow)
    mu, std = out.mu, out.std
    lp = ((ms * _bernoulli_logp(s, out.sel_logit)).sum(1)
          + (mp * (-0.5 * ((x - mu) / std) ** 2 - np.log(std) - _HALF_LOG_2PI)).sum(1)
          + (mt * _bernoulli_logp(t, out.trig_logit)).sum(1))
    ent = ((ms * _bernoulli_entropy(out.sel_logit)).sum(1)
           + (mp * (np.log(std) + _HALF_LOG_2PIE)).sum(1)
           + (mt * _bernoulli_entropy(out.trig_logit)).sum(1))
    return lp, ent


def sample(out: ActorOut, rng: np.random.Generator):
    """Draw one action per row: (actions, log_prob, entropy) with all entries counted."""
    sel = (rng.random(out.sel_logit.shape) < out.sel_p).astype(float)
    pw = out.mu + out.std * rng.standard_normal(out.mu_pre.shape)
    trig = (rng.random(out.trig_logit.shape) < out.trig_p).astype(float)
    a = np.concatenate([sel, pw, trig], axis=1)
    lp, ent = logprob_entropy(out, a, np.ones_like(a))
    return a, lp, ent


def greedy(out: ActorOut) -> np.ndarray:
    return np.concatenate([(out.sel_p > 0.5).astype(float), out.mu,
                           (out.trig_p > 0.5).astype(float)], axis=1)


def _backward_heads(params, out: ActorOut, actions, masks, d_lp, d_ent, grads):
    """Backprop per-row coefficients on log-prob and entropy into every parameter."""
    n_sel, n_pow = out.sel_logit.shape[1], out.mu_pre.shape[1]
    s, x, t = split_action(actions, n_sel, n_pow)
    ms, mp, mt = split_action(masks, n_sel, n_pow)
    d_lp = d_lp[:, None]
    d_ent = d_ent[:, None]

    p = out.sel_p
    g_sel = ms * (d_lp * (s - p) - d_ent * out.sel_logit * p * (1 - p))
    q = out.trig_p
    g_trig = mt * (d_lp * (t - q) - d_ent * out.trig_logit * q * (1 - q))

    mu, std = out.mu, out.std
    z = (x - mu) / std
    g_mu = mp * d_lp * z / std * 0.5 * (1 - np.tanh(out.mu_pre) ** 2)
    d_std = mp * (d_lp * (z * z - 1) / std + d_ent / std)
    g_std = d_std * sigmoid(out.std_pre) * (softplus(out.std_pre) > STD_FLOOR)

    h = out.acts[-1]
    dh = 0.0
    for name, g in (("sel", g_sel), ("mu", g_mu), ("std", g_std), ("trig", g_trig)):
        grads[f"W{name}"] = h.T @ g
        grads[f"b{name}"] = g.sum(axis=0)
        dh = dh + g @ params[f"W{name}"].T
    trunk_backward(params, out.acts, dh, grads)


def ppo_actor_loss(params, obs, actions, masks, old_logp, adv, clip: float,
                   ent_coef: float, with_grad: bool = True):
    """Clipped-surrogate loss minus the entropy bonus, its gradient and diagnostics."""
    out = actor_forward(params, obs)
    lp, ent = logprob_entropy(out, actions, masks)
    ratio = np.exp(lp - old_logp)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1 - clip, 1 + clip) * adv
    n = len(adv)
    loss = -np.mean(np.minimum(surr1, surr2)) - ent_coef * np.mean(ent)
    stats = {
        "actor_loss": float(loss),
        "entropy": float(np.mean(ent)),
        "clip_frac": float(np.mean(np.abs(ratio - 1) > clip)),
        "approx_kl": float(np.mean(old_logp - lp)),
        "ratio_min": float(ratio.min()) if n else 1.0,
        "ratio_max": float(ratio.max()) if n else 1.0,
    }
    if not with_grad:
        return loss, None, stats
    active = surr1 <= surr2
    d_lp = np.where(active, -adv * ratio, 0.0) / n
    d_ent = np.full(n, -ent_coef / n)
    grads = {}
    _backward_heads(params, out, actions, masks, d_lp, d_ent, grads)
    return loss, grads, stats


# -------------------------------------------------------------------- critic
def critic_forward(params, x):
    x = np.atleast_2d(np.asarray(x, float))
    if x.shape[1] != params["W0"].shape[0]:
        raise ValueError(f"critic expects {params['W0'].shape[0]} inputs, got {x.shape[1]}")
    acts = trunk_forward(params, x)
    return (acts[-1] @ params["Wv"] + params["bv"])[:, 0], acts


def critic_loss(params, x, returns, with_grad: bool = True):
    v, acts = critic_forward(params, x)
    err = v - returns
    loss = float(np.mean(err * err))
    if not with_grad:
        return loss, None
    dv = (2.0 / len(err)) * err[:, None]
    grads = {"Wv": acts[-1].T @ dv, "bv": dv.sum(axis=0)}
    trunk_backward(params, acts, dv @ params["Wv"].T, grads)
    return loss, grads


# ---------------------------------------------------------------------- adam
class Adam:
    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        """In-place update of ``params``."""
        b1, b2 = self.betas
        self.t += 1
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state(self, prefix: str) -> dict:
        out = {f"{prefix}m/{k}": v for k, v in self.m.items()}
        out.update({f"{prefix}v/{k}": v for k, v in self.v.items()})
        out[f"{prefix}t"] = np.array(self.t)
        return out

    def load_state(self, arrays: dict, prefix: str) -> None:
        for k in self.m:
            self.m[k] = _checked(arrays, f"{prefix}m/{k}", self.m[k].shape)
            self.v[k] = _checked(arrays, f"{prefix}v/{k}", self.v[k].shape)
        self.t = int(arrays[f"{prefix}t"])


# --------------------------------------------------------------- checkpoints
def _checked(arrays, key, shape):
    if key not in arrays:
        raise ValueError(f"checkpoint lacks {key}")
    arr = np.asarray(arrays[key])
    if arr.shape != tuple(shape):
        raise ValueError(f"{key}: checkpoint shape {arr.shape} != expected {tuple(shape)}")
    return arr.copy()


def save_checkpoint(path: str | Path, nets: dict, meta: dict, optimisers: dict | None = None):
    """``nets`` maps a name to a parameter dict; writes ``path`` (.npz) and ``path``.json."""
    path = Path(path)
    arrays = {}
    for name, params in nets.items():
        for k, v in params.items():
            arrays[f"{name}/{k}"] = v
    for name, opt in (optimisers or {}).items():
        arrays.update(opt.state(f"opt:{name}/"))
    np.savez(path, **arrays)
    shapes = {name: {k: list(v.shape) for k, v in p.items()} for name, p in nets.items()}
    info = {"layout_version": LAYOUT_VERSION, "shapes": shapes, **meta}
    path.with_suffix(".json").write_text(json.dumps(info, indent=2, sort_keys=True))


def load_checkpoint(path: str | Path, templates: dict, optimisers: dict | None = None) -> dict:
    """Load parameters shaped like ``templates``; any mismatch raises ValueError."""
    path = Path(path)
    with np.load(path) as data:
        arrays = dict(data)
    nets = {}
    for name, tmpl in templates.items():
        nets[name] = {k: _checked(arrays, f"{name}/{k}", v.shape) for k, v in tmpl.items()}
        extra = [k for k in arrays if k.startswith(f"{name}/") and k[len(name) + 1:] not in tmpl]
        if extra:
            raise ValueError(f"checkpoint has unexpected tensors {extra}")
    for name, opt in (optimisers or {}).items():
        opt.load_state(arrays, f"opt:{name}/")
    return nets


def read_meta(path: str | Path) -> dict:
    meta = json.loads(Path(path).with_suffix(".json").read_text())
    if meta.get("layout_version") != LAYOUT_VERSION:
        raise ValueError(f"unsupported checkpoint layout {meta.get('layout_version')}")
    return meta
