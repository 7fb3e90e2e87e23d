"""Stacked bidirectional LSTM with a softmax head, trained by exact BPTT.

Everything is float64 numpy. Parameters live in a plain ``dict`` keyed by
name; :func:`param_names` fixes their order for checkpoints and optimizers.
Each LSTM direction uses one combined weight ``W`` of shape ``(4H, in + H)``
with gate blocks ordered input, forget, cell, output.
"""
import base64
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

KL_EPS = 1e-8
# "estimate_target": KL(estimate || target), the default; "target_estimate": KL(target || estimate)
LOSS_ORIENTATIONS = ("estimate_target", "target_estimate")
CHECKPOINT_FORMAT = "cropsynth.seqnet/1"


@dataclass(frozen=True)
class NetConfig:
    input_dim: int = 47
    hidden: int = 128
    layers: int = 2
    n_out: int = 6
    head_input: str = "all"  # "all": final states of every layer; "top": last layer only
    time_stride: int = 1  # average input rows in blocks of this many days before the scan

    def __post_init__(self):
        if self.head_input not in ("all", "top"):
            raise ValidationError(f"head_input must be 'all' or 'top', got {self.head_input!r}")
        if min(self.input_dim, self.hidden, self.layers, self.n_out, self.time_stride) < 1:
            raise ValidationError("network dimensions must be positive")

    @property
    def head_width(self):
        n = self.layers if self.head_input == "all" else 1
        return 2 * self.hidden * n


def param_names(cfg):
    names = []
    for layer in range(cfg.layers):
        for d in "fb":
            names += [f"W{layer}{d}", f"b{layer}{d}"]
    return names + ["W_head", "b_head"]


def param_shapes(cfg):
    H = cfg.hidden
    shapes = {}
    for layer in range(cfg.layers):
        n_in = cfg.input_dim if layer == 0 else 2 * H
        for d in "fb":
            shapes[f"W{layer}{d}"] = (4 * H, n_in + H)
            shapes[f"b{layer}{d}"] = (4 * H,)
    shapes["W_head"] = (cfg.n_out, cfg.head_width)
    shapes["b_head"] = (cfg.n_out,)
    return shapes


def n_params(cfg):
    return int(sum(np.prod(s) for s in param_shapes(cfg).values()))


def init_params(cfg, rng):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, forget-gate bias +1."""
    H = cfg.hidden
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.startswith("W"):
            bound = 1.0 / np.sqrt(shape[1])
            params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            params[name] = np.zeros(shape)
            if name != "b_head":
                params[name][H:2 * H] = 1.0
    return params


def zero_params(cfg):
    return {name: np.zeros(shape) for name, shape in param_shapes(cfg).items()}


def pool_time(x, stride):
    """Average consecutive blocks of ``stride`` rows along axis -2, zero-padding the tail."""
    if stride == 1:
        return x
    T = x.shape[-2]
    n = -(-T // stride)
    pad = n * stride - T
    if pad:
        x = np.concatenate([x, np.zeros(x.shape[:-2] + (pad, x.shape[-1]))], axis=-2)
    return x.reshape(x.shape[:-2] + (n, stride, x.shape[-1])).mean(axis=-2)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _scan(x, W, b, reverse):
    """One LSTM direction over x (B, T, n_in); returns hidden states (B, T, H) and a cache."""
    B, T, n_in = x.shape
    H = W.shape[0] // 4
    Wx, Wh = W[:, :n_in], W[:, n_in:]
    xp = x @ Wx.T + b
    gates = np.empty((B, T, 4 * H))
    cs = np.empty((B, T, H))
    hs = np.empty((B, T, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        z = xp[:, t] + h @ Wh.T
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[:, t, :H], gates[:, t, H:2 * H], gates[:, t, 2 * H:3 * H], gates[:, t, 3 * H:] = i, f, g, o
        cs[:, t] = c
        hs[:, t] = h
    return hs, (x, gates, cs, hs, reverse)


def _scan_backward(dhs, W, cache):
    """Reverse-mode pass of :func:`_scan`; returns (dx, dW, db)."""
    x, gates, cs, hs, reverse = cache
    B, T, n_in = x.shape
    H = W.shape[0] // 4
    Wh = W[:, n_in:]
    dz = np.empty((B, T, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    order = range(T) if reverse else range(T - 1, -1, -1)
    step = 1 if reverse else -1  # offset from t to the previous step of the scan
    for t in order:
        i, f, g, o = (gates[:, t, k * H:(k + 1) * H] for k in range(4))
        tc = np.tanh(cs[:, t])
        tp = t + step
        c_prev = cs[:, tp] if 0 <= tp < T else 0.0
        dh = dhs[:, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dzt = dz[:, t]
        dzt[:, :H] = dc * g * i * (1.0 - i)
        dzt[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        dzt[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dzt[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dzt @ Wh
    h_prev = np.zeros_like(hs)
    if reverse:
        h_prev[:, :-1] = hs[:, 1:]
    else:
        h_prev[:, 1:] = hs[:, :-1]
    dz2 = dz.reshape(B * T, 4 * H)
    dW = np.hstack([dz2.T @ x.reshape(B * T, n_in), dz2.T @ h_prev.reshape(B * T, H)])
    db = dz2.sum(axis=0)
    dx = dz @ W[:, :n_in]
    return dx, dW, db


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(params, x, cfg):
    """Stage distributions for inputs ``x`` of shape (T, D) or (B, T, D).

    Returns ``(P, cache)``; ``P`` has shape (6,) or (B, 6).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 2
    if single:
        x = x[None]
    if not np.isfinite(x).all():
        raise ValueError("network input contains non-finite values")
    if x.shape[-1] != cfg.input_dim:
        raise ValueError(f"expected {cfg.input_dim} input columns, got {x.shape[-1]}")
    h_in = pool_time(x, cfg.time_stride)
    caches, finals = [], []
    for layer in range(cfg.layers):
        hf, cf = _scan(h_in, params[f"W{layer}f"], params[f"b{layer}f"], reverse=False)
        hb, cb = _scan(h_in, params[f"W{layer}b"], params[f"b{layer}b"], reverse=True)
        caches.append((cf, cb))
        finals.append((hf[:, -1], hb[:, 0]))
        h_in = np.concatenate([hf, hb], axis=-1)
    used = finals if cfg.head_input == "all" else finals[-1:]
    head_in = np.concatenate([h for pair in used for h in pair], axis=-1)
    P = softmax(head_in @ params["W_head"].T + params["b_head"])
    cache = (caches, head_in, P)
    return (P[0] if single else P), cache


def predict(params, x, cfg, batch=512):
    """Forward pass in chunks, without keeping the cache."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        return forward(params, x, cfg)[0]
    out = [forward(params, x[s:s + batch], cfg)[0] for s in range(0, len(x), batch)]
    return np.vstack(out) if out else np.zeros((0, cfg.n_out))


def _check_simplex(v, name, strict):
    v = np.asarray(v, dtype=float)
    if not np.isfinite(v).all() or (v < 0).any() or (strict and (v <= 0).any()):
        raise ValueError(f"{name} is not a valid distribution")
    if not np.allclose(v.sum(axis=-1), 1.0, atol=1e-6):
        raise ValueError(f"{name} does not sum to 1")
    return v


def kl_loss(estimated, actual, eps=KL_EPS, orientation="estimate_target"):
    """Sum over stages of P log(P / (Q + eps)) with P the estimate and Q the target.

    Works on single 6-vectors or row-stacked batches (returning one value per
    row). ``orientation="target_estimate"`` swaps the roles and returns
    sum Q log(Q / P); the estimate must then be strictly positive.
    """
    P = _check_simplex(estimated, "estimate", strict=orientation == "target_estimate")
    Q = _check_simplex(actual, "target", strict=False)
    if orientation == "target_estimate":
        P, Q, eps = Q, P, 0.0
    elif orientation != "estimate_target":
        raise ValueError(f"unknown loss orientation {orientation!r}")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * (np.log(P) - np.log(Q + eps)), 0.0)
    out = terms.sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def loss_and_grad(params, x, targets, cfg, reduction="mean", orientation="estimate_target"):
    """Loss of a batch and its exact gradient with respect to every parameter.

    Parameters
    ----------
    x : (B, T, D) array
    targets : (B, 6) array
    reduction : {"mean", "sum"}
    orientation : {"estimate_target", "target_estimate"}
    """
    x = np.asarray(x, dtype=float)
    Q = np.asarray(targets, dtype=float)
    P, (caches, head_in, _) = forward(params, x, cfg)
    B = len(P)
    scale = 1.0 / B if reduction == "mean" else 1.0
    if orientation == "estimate_target":
        logratio = np.log(P) - np.log(Q + KL_EPS)
        losses = (P * logratio).sum(axis=1)
        dlogits = P * (logratio - losses[:, None]) * scale
    elif orientation == "target_estimate":
        with np.errstate(divide="ignore", invalid="ignore"):
            losses = np.where(Q > 0, Q * (np.log(Q) - np.log(P)), 0.0).sum(axis=1)
        dlogits = (P - Q) * scale
    else:
        raise ValueError(f"unknown loss orientation {orientation!r}")

    grads = {"W_head": dlogits.T @ head_in, "b_head": dlogits.sum(axis=0)}
    dhead = dlogits @ params["W_head"]
    H = cfg.hidden
    L = cfg.layers
    first = 0 if cfg.head_input == "all" else L - 1
    T = caches[0][0][0].shape[1]
    d_above = None  # gradient wrt the concatenated output sequence of the current layer
    for layer in range(L - 1, -1, -1):
        cf, cb = caches[layer]
        dhf = np.zeros((B, T, H))
        dhb = np.zeros((B, T, H))
        if d_above is not None:
            dhf += d_above[..., :H]
            dhb += d_above[..., H:]
        if layer >= first:
            k = 2 * H * (layer - first)
            dhf[:, -1] += dhead[:, k:k + H]
            dhb[:, 0] += dhead[:, k + H:k + 2 * H]
        dxf, grads[f"W{layer}f"], grads[f"b{layer}f"] = _scan_backward(dhf, params[f"W{layer}f"], cf)
        dxb, grads[f"W{layer}b"], grads[f"b{layer}b"] = _scan_backward(dhb, params[f"W{layer}b"], cb)
        d_above = dxf + dxb
    total = losses.mean() if reduction == "mean" else losses.sum()
    return float(total), grads


def batch_loss(params, x, targets, cfg, orientation="estimate_target"):
    P = predict(params, x, cfg)
    return float(np.mean(kl_loss(P, targets, orientation=orientation)))


# --- optimizer -----------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    lr: float = 1e-3
    weight_decay: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params, **kw):
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, **kw)

    def hyper(self):
        return {"lr": self.lr, "weight_decay": self.weight_decay, "beta1": self.beta1,
                "beta2": self.beta2, "eps": self.eps}


def adam_step(params, grads, state):
    """One bias-corrected Adam update with decoupled weight decay.

    Returns new ``(params, state)``; the inputs are left untouched.
    """
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = {}, {}, {}
    for k in params:
        g = grads[k]
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape mismatch for {k}")
        m = b1 * state.m[k] + (1 - b1) * g
        v = b2 * state.v[k] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_p[k] = params[k] - state.lr * (m_hat / (np.sqrt(v_hat) + state.eps)) - state.lr * state.weight_decay * params[k]
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t, **state.hyper())


# --- checkpoints ---------------------------------------------------------------------

def _encode(a):
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(d):
    return np.frombuffer(base64.b64decode(d["data"]), dtype="<f8").reshape(d["shape"]).copy()


@dataclass
class Checkpoint:
    cfg: NetConfig
    params: dict
    adam: AdamState
    epoch: int
    rng_state: dict = None

    def to_json(self):
        names = param_names(self.cfg)
        doc = {
            "format": CHECKPOINT_FORMAT,
            "config": asdict(self.cfg),
            "epoch": int(self.epoch),
            "rng_state": self.rng_state,
            "params": {k: _encode(self.params[k]) for k in names},
            "adam": {
                "step": int(self.adam.step), **self.adam.hyper(),
                "m": {k: _encode(self.adam.m[k]) for k in names},
                "v": {k: _encode(self.adam.v[k]) for k in names},
            },
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ValidationError(f"unsupported checkpoint format {doc.get('format')!r}")
        cfg = NetConfig(**doc["config"])
        params = {k: _decode(v) for k, v in doc["params"].items()}
        shapes = param_shapes(cfg)
        if set(params) != set(shapes) or any(params[k].shape != shapes[k] for k in shapes):
            raise ValidationError("checkpoint parameters do not match the stored configuration")
        a = doc["adam"]
        adam = AdamState({k: _decode(x) for k, x in a["m"].items()}, {k: _decode(x) for k, x in a["v"].items()},
                         a["step"], a["lr"], a["weight_decay"], a["beta1"], a["beta2"], a["eps"])
        return cls(cfg, params, adam, doc["epoch"], doc["rng_state"])

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


# --- gradient check ------------------------------------------------------------------

def gradient_check(params, x, targets, cfg, rng, n_entries=8, h=1e-5, floor=1e-6, orientation="estimate_target"):
    """Compare analytic gradients with central differences.

    Checks ``n_entries`` random entries of every tensor plus one random
    direction over all parameters. Returns the largest relative error
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    def loss_at(p):
        return loss_and_grad(p, x, targets, cfg, "mean", orientation)[0]

    _, grads = loss_and_grad(params, x, targets, cfg, "mean", orientation)
    worst = 0.0
    for name in param_names(cfg):
        p = params[name]
        flat_idx = rng.choice(p.size, size=min(n_entries, p.size), replace=False)
        for j in flat_idx:
            idx = np.unravel_index(j, p.shape)
            orig = p[idx]
            p[idx] = orig + h
            up = loss_at(params)
            p[idx] = orig - h
            dn = loss_at(params)
            p[idx] = orig
            num = (up - dn) / (2 * h)
            a = grads[name][idx]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), floor))
    direction = {k: rng.standard_normal(v.shape) for k, v in params.items()}
    norm = np.sqrt(sum((d * d).sum() for d in direction.values()))
    direction = {k: d / norm for k, d in direction.items()}
    up = loss_at({k: params[k] + h * direction[k] for k in params})
    dn = loss_at({k: params[k] - h * direction[k] for k in params})
    num = (up - dn) / (2 * h)
    a = sum((grads[k] * direction[k]).sum() for k in params)
    worst = max(worst, abs(a - num) / max(abs(a), abs(num), floor))
    return worst
