"""Causal sequence models mapping an R-R history to per-beat IG parameters.

Pipeline, per interval ``x_t`` (seconds):

    h_t      = LayerNorm(w_e * x_t + b_e)
    h1_t     = h_t + Block(h_1..h_t)             GRU, LSTM, diagonal SSM or selective SSM
    mu_t     = softplus(w_mu . h1_t + b_mu) + mu_floor
    logvar_t = clip(w2 . tanh(W1 h1_t + b1) + b2, lo, hi)

The prediction at position ``t`` is scored against ``x_{t+1}``.

Sequences are processed time-major internally. A batch is a ``(B, T)`` array
of equal-length segments; a single ``(T,)`` sequence is a batch of one.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .igdist import IGParams, IGTrajectory

VARIANTS = ("gru", "lstm", "ssm-diag", "ssm-selective")
CHECKPOINT_FORMAT = "igbeat-checkpoint"
CHECKPOINT_VERSION = 1
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class BackboneConfig:
    variant: str = "gru"
    model_dim: int = 64
    state_dim: int = 32
    mu_floor: float = 0.3
    logvar_clip: tuple[float, float] = (-9.0, 1.5)
    clip_at_inference: bool = True
    ln_eps: float = 1e-12
    init_mu: float = 0.9
    init_logvar: float = -5.0
    # fixed standardisation (x - input_center) / input_scale ahead of the embedding
    input_center: float = 0.8
    input_scale: float = 0.1
    # gated RNNs: spread gate biases over memory timescales in [1, gate_tmax] beats (0 disables)
    gate_tmax: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.model_dim <= 0:
            raise ValueError("model_dim must be positive")
        if self.variant.startswith("ssm") and self.state_dim <= 0:
            raise ValueError("state_dim must be positive for SSM variants")
        if self.mu_floor <= 0:
            raise ValueError("mu_floor must be positive")
        lo, hi = self.logvar_clip
        if not lo < hi:
            raise ValueError(f"logvar_clip must satisfy lo < hi, got {self.logvar_clip}")
        self.logvar_clip = (float(lo), float(hi))
        if self.init_mu <= self.mu_floor:
            raise ValueError("init_mu must exceed mu_floor")
        if self.input_scale <= 0:
            raise ValueError("input_scale must be positive")


class ModelParameters:
    """Named learnable tensors of one backbone plus both heads."""

    def __init__(self, config: BackboneConfig, tensors: dict[str, Tensor]):
        self.config = config
        self._tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def items(self):
        return self._tensors.items()

    def tensors(self) -> list[Tensor]:
        return list(self._tensors.values())

    def n_scalars(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def zero_grad(self):
        for t in self._tensors.values():
            t.zero_grad()

    def clear_grad(self):
        for t in self._tensors.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self._tensors.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        if set(state) != set(self._tensors):
            raise ValueError(f"parameter names differ: {sorted(set(state) ^ set(self._tensors))}")
        for k, v in state.items():
            t = self._tensors[k]
            v = np.asarray(v, dtype=np.float64)
            if v.shape != t.shape:
                raise ValueError(f"{k}: expected shape {t.shape}, got {v.shape}")
            t.value = v.copy()

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.value)) for t in self._tensors.values())


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: BackboneConfig, rng: np.random.Generator) -> ModelParameters:
    d, n = config.model_dim, config.state_dim
    p: dict[str, np.ndarray] = {
        "embed.w": _uniform(rng, 1, (d,)),
        "embed.b": _uniform(rng, 1, (d,)),
        "norm.gamma": np.ones(d),
        "norm.beta": np.zeros(d),
    }
    if config.variant == "gru":
        p["block.w_x"] = _uniform(rng, d, (d, 3 * d))
        p["block.w_h"] = _uniform(rng, d, (d, 3 * d))
        b = np.zeros(3 * d)
        if config.gate_tmax > 1:
            # update rate z = 1/T with T ~ U(2, tmax)
            b[:d] = -np.log(rng.uniform(1.0, config.gate_tmax - 1.0, d))
        p["block.b"] = b
    elif config.variant == "lstm":
        p["block.w_x"] = _uniform(rng, d, (d, 4 * d))
        p["block.w_h"] = _uniform(rng, d, (d, 4 * d))
        b = np.zeros(4 * d)
        b[d:2 * d] = 1.0  # forget gate
        if config.gate_tmax > 1:
            b[d:2 * d] = np.log(rng.uniform(1.0, config.gate_tmax - 1.0, d))
            b[:d] = -b[d:2 * d]
        p["block.b"] = b
    elif config.variant == "ssm-diag":
        p["block.log_neg_a"] = np.tile(np.log(np.geomspace(0.1, 10.0, n)), (d, 1))
        p["block.log_dt"] = rng.uniform(math.log(1e-3), math.log(1e-1), size=d)
        p["block.b_in"] = np.ones((d, n))
        p["block.c_out"] = rng.normal(0.0, math.sqrt(0.5), size=(d, n))
        p["block.d_skip"] = np.ones(d)
    else:
        p["block.w_in"] = _uniform(rng, d, (d, d))
        p["block.b_in"] = np.zeros(d)
        p["block.w_gate"] = _uniform(rng, d, (d, d))
        p["block.b_gate"] = np.zeros(d)
        p["block.w_dt"] = _uniform(rng, d, (d, d))
        # softplus^-1 of dt drawn log-uniformly in [1e-3, 1e-1]
        dt = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), size=d))
        p["block.b_dt"] = dt + np.log(-np.expm1(-dt))
        p["block.w_b"] = _uniform(rng, d, (d, n))
        p["block.w_c"] = _uniform(rng, d, (d, n))
        p["block.log_neg_a"] = np.tile(np.log(np.arange(1, n + 1, dtype=np.float64)), (d, 1))
        p["block.d_skip"] = np.ones(d)
    p["block.out_w"] = _uniform(rng, d, (d, d))
    p["block.out_b"] = np.zeros(d)
    p["mean.w"] = _uniform(rng, d, (d,))
    p["mean.b"] = np.array(_softplus_inv(config.init_mu - config.mu_floor))
    p["var.w1"] = _uniform(rng, d, (d, d))
    p["var.b1"] = np.zeros(d)
    p["var.w2"] = _uniform(rng, d, (d,))
    p["var.b2"] = np.array(config.init_logvar)
    tensors = {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}
    return ModelParameters(config, tensors)


def _softplus_inv(y: float) -> float:
    return y + math.log(-math.expm1(-y))


# ---------------------------------------------------------------- stages


def embed(x: np.ndarray, params: ModelParameters) -> Tensor:
    """Pointwise embedding + layer norm. ``x`` is time-major ``(T, B)``; returns ``(T*B, d)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty sequence")
    cfg = params.config
    d = cfg.model_dim
    col = Tensor(((x - cfg.input_center) / cfg.input_scale).reshape(-1, 1))
    pre = ad.matmul(col, ad.reshape(params["embed.w"], (1, d))) + params["embed.b"]
    return ad.layer_norm(pre, params["norm.gamma"], params["norm.beta"], eps=cfg.ln_eps)


def _expand_matrix(d: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    # E: (d, d*n) copies channel c to slots c*n..c*n+n-1
    # F: (n, d*n) tiles a length-n vector across all d channels
    eye_n = np.eye(n)
    expand = np.kron(np.eye(d), np.ones((1, n)))
    tile = np.tile(eye_n, (1, d))
    return expand, tile


def _gru(steps: list[Tensor], params: ModelParameters, batch: int) -> list[Tensor]:
    d = params.config.model_dim
    w_h = params["block.w_h"]
    w_hzr = w_h[:, : 2 * d]
    w_hn = w_h[:, 2 * d:]
    h = Tensor(np.zeros((batch, d)))
    outs = []
    for xp in steps:
        zr = ad.sigmoid(xp[:, : 2 * d] + h @ w_hzr)
        z = zr[:, :d]
        r = zr[:, d:]
        cand = ad.tanh(xp[:, 2 * d:] + (r * h) @ w_hn)
        h = h + z * (cand - h)
        outs.append(h)
    return outs


def _lstm(steps: list[Tensor], params: ModelParameters, batch: int) -> list[Tensor]:
    d = params.config.model_dim
    w_h = params["block.w_h"]
    h = Tensor(np.zeros((batch, d)))
    c = Tensor(np.zeros((batch, d)))
    outs = []
    for xp in steps:
        pre = xp + h @ w_h
        gates = ad.sigmoid(pre[:, : 2 * d])
        i, f = gates[:, :d], gates[:, d:]
        g = ad.tanh(pre[:, 2 * d: 3 * d])
        o = ad.sigmoid(pre[:, 3 * d:])
        c = f * c + i * g
        h = o * ad.tanh(c)
        outs.append(h)
    return outs


def _sig(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def gru_scan(xp: Tensor, w_h: Tensor) -> Tensor:
    """Whole GRU recurrence as one tape node with hand-written BPTT.

    ``xp`` is the time-major ``(T, B, 3d)`` input projection (update, reset,
    candidate blocks), ``w_h`` the ``(d, 3d)`` recurrent weights. Returns the
    ``(T, B, d)`` hidden states. Same maths as :func:`_gru`.
    """
    x, w = xp.value, w_h.value
    n_steps, batch, width = x.shape
    d = width // 3
    w_zr, w_n = w[:, :2 * d], w[:, 2 * d:]
    hs = np.zeros((n_steps + 1, batch, d))
    zs = np.empty((n_steps, batch, d))
    rs = np.empty_like(zs)
    ns = np.empty_like(zs)
    for t in range(n_steps):
        h = hs[t]
        zr = _sig(x[t, :, :2 * d] + h @ w_zr)
        z, r = zr[:, :d], zr[:, d:]
        n = np.tanh(x[t, :, 2 * d:] + (r * h) @ w_n)
        zs[t], rs[t], ns[t] = z, r, n
        hs[t + 1] = h + z * (n - h)

    def vjp(g):
        gx = np.empty_like(x)
        gw_zr = np.zeros_like(w_zr)
        gw_n = np.zeros_like(w_n)
        dh = np.zeros((batch, d))
        for t in range(n_steps - 1, -1, -1):
            h, z, r, n = hs[t], zs[t], rs[t], ns[t]
            dh = dh + g[t]
            dn = dh * z * (1.0 - n * n)
            dz = dh * (n - h) * z * (1.0 - z)
            d_rh = dn @ w_n.T
            dr = d_rh * h * r * (1.0 - r)
            gx[t, :, :d], gx[t, :, d:2 * d], gx[t, :, 2 * d:] = dz, dr, dn
            dzr = gx[t, :, :2 * d]
            gw_n += (r * h).T @ dn
            gw_zr += h.T @ dzr
            dh = dh * (1.0 - z) + d_rh * r + dzr @ w_zr.T
        return gx, np.concatenate([gw_zr, gw_n], axis=1)

    return ad.custom_op(hs[1:], [xp, w_h], vjp)


def lstm_scan(xp: Tensor, w_h: Tensor) -> Tensor:
    """Whole LSTM recurrence (gate order i, f, g, o) as one tape node; see :func:`_lstm`."""
    x, w = xp.value, w_h.value
    n_steps, batch, width = x.shape
    d = width // 4
    hs = np.zeros((n_steps + 1, batch, d))
    cs = np.zeros((n_steps + 1, batch, d))
    acts = np.empty((n_steps, batch, width))
    for t in range(n_steps):
        pre = x[t] + hs[t] @ w
        a = acts[t]
        a[:, :2 * d] = _sig(pre[:, :2 * d])
        a[:, 2 * d:3 * d] = np.tanh(pre[:, 2 * d:3 * d])
        a[:, 3 * d:] = _sig(pre[:, 3 * d:])
        cs[t + 1] = a[:, d:2 * d] * cs[t] + a[:, :d] * a[:, 2 * d:3 * d]
        hs[t + 1] = a[:, 3 * d:] * np.tanh(cs[t + 1])

    def vjp(g):
        gx = np.empty_like(x)
        gw = np.zeros_like(w)
        dh = np.zeros((batch, d))
        dc = np.zeros((batch, d))
        for t in range(n_steps - 1, -1, -1):
            a = acts[t]
            i, f, gg, o = a[:, :d], a[:, d:2 * d], a[:, 2 * d:3 * d], a[:, 3 * d:]
            tc = np.tanh(cs[t + 1])
            dh = dh + g[t]
            dc = dc + dh * o * (1.0 - tc * tc)
            gt = gx[t]
            gt[:, :d] = dc * gg * i * (1.0 - i)
            gt[:, d:2 * d] = dc * cs[t] * f * (1.0 - f)
            gt[:, 2 * d:3 * d] = dc * i * (1.0 - gg * gg)
            gt[:, 3 * d:] = dh * tc * o * (1.0 - o)
            gw += hs[t].T @ gt
            dh = gt @ w.T
            dc = dc * f
        return gx, gw

    return ad.custom_op(hs[1:], [xp, w_h], vjp)


def diag_ssm_scan(u_steps: list[Tensor], a_bar: Tensor, b_bar: Tensor, c: Tensor, d_skip: Tensor) -> list[Tensor]:
    """Run ``s_t = a_bar * s_{t-1} + b_bar * u_t``, ``y_t = sum_n c * s_t + d_skip * u_t``.

    ``a_bar``, ``b_bar``, ``c`` are ``(d, n)`` per-channel diagonal systems,
    ``u_steps`` a list of ``(B, d)`` inputs.
    """
    d, n = a_bar.shape
    expand, _ = _expand_matrix(d, n)
    expand_t = Tensor(expand)
    collapse_t = Tensor(expand.T)
    a_flat = ad.reshape(a_bar, (d * n,))
    b_flat = ad.reshape(b_bar, (d * n,))
    c_flat = ad.reshape(c, (d * n,))
    s = Tensor(np.zeros((u_steps[0].shape[0], d * n)))
    outs = []
    for u in u_steps:
        s = a_flat * s + b_flat * (u @ expand_t)
        outs.append((c_flat * s) @ collapse_t + d_skip * u)
    return outs


def zoh_discretize(log_dt: Tensor, log_neg_a: Tensor) -> tuple[Tensor, Tensor]:
    """Zero-order hold for ``A = -exp(log_neg_a)`` with step ``exp(log_dt)`` per channel.

    Returns ``(a_bar, b_scale)`` with ``a_bar = exp(dt A)`` and
    ``b_scale = (a_bar - 1) / A`` so that ``b_bar = b_scale * B``.
    """
    d, n = log_neg_a.shape
    dt = ad.matmul(ad.reshape(ad.exp(log_dt), (d, 1)), Tensor(np.ones((1, n))))
    neg_a = ad.exp(log_neg_a)
    a_bar = ad.exp(-(dt * neg_a))
    b_scale = (1.0 - a_bar) * ad.exp(-log_neg_a)
    return a_bar, b_scale


def _ssm_diag(steps: list[Tensor], params: ModelParameters, batch: int) -> list[Tensor]:
    a_bar, b_scale = zoh_discretize(params["block.log_dt"], params["block.log_neg_a"])
    b_bar = b_scale * params["block.b_in"]
    ys = diag_ssm_scan(steps, a_bar, b_bar, params["block.c_out"], params["block.d_skip"])
    return [ad.tanh(y) for y in ys]


def _ssm_selective(h_flat: Tensor, params: ModelParameters, n_steps: int, batch: int) -> list[Tensor]:
    cfg = params.config
    d, n = cfg.model_dim, cfg.state_dim
    u_all = h_flat @ params["block.w_in"] + params["block.b_in"]
    gate_all = h_flat @ params["block.w_gate"] + params["block.b_gate"]
    gate_all = gate_all * ad.sigmoid(gate_all)
    dt_all = ad.softplus(u_all @ params["block.w_dt"] + params["block.b_dt"])
    b_all = u_all @ params["block.w_b"]
    c_all = u_all @ params["block.w_c"]

    def per_step(t: Tensor, width: int) -> list[Tensor]:
        return ad.unstack(ad.reshape(t, (n_steps, batch, width)))

    u_steps = per_step(u_all, d)
    gate_steps = per_step(gate_all, d)
    dt_steps = per_step(dt_all, d)
    b_steps = per_step(b_all, n)
    c_steps = per_step(c_all, n)

    expand, tile = _expand_matrix(d, n)
    expand_t, tile_t, collapse_t = Tensor(expand), Tensor(tile), Tensor(expand.T)
    neg_a_flat = ad.reshape(ad.exp(params["block.log_neg_a"]), (d * n,))
    d_skip = params["block.d_skip"]
    s = Tensor(np.zeros((batch, d * n)))
    outs = []
    for u, gate, dt, b, c in zip(u_steps, gate_steps, dt_steps, b_steps, c_steps):
        a_bar = ad.exp(-((dt @ expand_t) * neg_a_flat))
        s = a_bar * s + ((dt * u) @ expand_t) * (b @ tile_t)
        y = (s * (c @ tile_t)) @ collapse_t + d_skip * u
        outs.append(y * gate)
    return outs


def block_forward(h_flat: Tensor, params: ModelParameters, n_steps: int, batch: int) -> Tensor:
    """Residual recurrent block on time-major flattened ``(T*B, d)`` input."""
    cfg = params.config
    d = cfg.model_dim
    if cfg.variant in ("gru", "lstm"):
        xp = h_flat @ params["block.w_x"] + params["block.b"]
        width = xp.shape[-1]
        scan = gru_scan if cfg.variant == "gru" else lstm_scan
        hs = scan(ad.reshape(xp, (n_steps, batch, width)), params["block.w_h"])
        inner = ad.reshape(hs, (n_steps * batch, d))
        return h_flat + (inner @ params["block.out_w"] + params["block.out_b"])
    elif cfg.variant == "ssm-diag":
        steps = ad.unstack(ad.reshape(h_flat, (n_steps, batch, d)))
        outs = _ssm_diag(steps, params, batch)
    else:
        outs = _ssm_selective(h_flat, params, n_steps, batch)
    inner = ad.reshape(ad.stack(outs), (n_steps * batch, d))
    return h_flat + (inner @ params["block.out_w"] + params["block.out_b"])


def mean_head(h1: Tensor, params: ModelParameters) -> Tensor:
    z = h1 @ params["mean.w"] + params["mean.b"]
    mu = ad.softplus(z) + params.config.mu_floor
    # softplus underflows below z ~ -37, so keep the float strictly above the floor
    least = np.nextafter(params.config.mu_floor, np.inf)
    return ad.custom_op(np.maximum(mu.value, least), [mu], lambda g: [g])


def var_head_raw(h1: Tensor, params: ModelParameters) -> Tensor:
    hidden = ad.tanh(h1 @ params["var.w1"] + params["var.b1"])
    return hidden @ params["var.w2"] + params["var.b2"]


def var_head(h1: Tensor, params: ModelParameters, clip: bool = True) -> Tensor:
    raw = var_head_raw(h1, params)
    if not clip:
        return raw
    lo, hi = params.config.logvar_clip
    return ad.clip_straight_through(raw, lo, hi)


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError(f"expected a (T,) or (B, T) array, got shape {x.shape}")
    if x.shape[1] == 0:
        raise ValueError("empty sequence")
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise ValueError("R-R intervals must be finite and positive")
    return x, single


def predict(x, params: ModelParameters, training: bool = False) -> tuple[Tensor, Tensor]:
    """Heads at every position. Returns time-major ``(T, B)`` tensors ``(mu, logvar)``."""
    xb, _ = _as_batch(x)
    batch, n_steps = xb.shape
    h = embed(xb.T, params)
    h1 = block_forward(h, params, n_steps, batch)
    mu = ad.reshape(mean_head(h1, params), (n_steps, batch))
    clip = training or params.config.clip_at_inference
    logvar = ad.reshape(var_head(h1, params, clip=clip), (n_steps, batch))
    return mu, logvar


def ig_nll(x_next: np.ndarray, mu: Tensor, logvar: Tensor) -> Tensor:
    """Elementwise IG negative log-likelihood with ``sigma^2 = exp(logvar)``."""
    x = np.asarray(x_next, dtype=np.float64)
    log_mu = ad.log(mu)
    norm = 0.5 * (_LOG_2PI + 3.0 * np.log(x) + logvar - 3.0 * log_mu)
    diff = x - mu
    quad = (diff * diff) * mu * ad.exp(-logvar) * (0.5 / x)
    return norm + quad


def sequence_loss(x, params: ModelParameters) -> Tensor:
    """Summed one-step-ahead NLL over every sequence in the batch."""
    xb, _ = _as_batch(x)
    if xb.shape[1] < 2:
        raise ValueError("need at least two intervals")
    mu, logvar = predict(xb, params, training=True)
    targets = xb[:, 1:].T
    return ad.reduce_sum(ig_nll(targets, mu[:-1], logvar[:-1]))


def forward(x, params: ModelParameters) -> IGTrajectory | list[IGTrajectory]:
    """One-step-ahead IG trajectory: prediction ``i`` uses ``x[:i+1]`` and targets ``x[i+1]``."""
    xb, single = _as_batch(x)
    if xb.shape[1] < 2:
        raise ValueError("forward needs T >= 2")
    mu, logvar = predict(xb, params, training=False)
    mu_v = mu.value[:-1].T
    sigma_v = np.exp(0.5 * logvar.value[:-1].T)
    trajs = [IGTrajectory(IGParams(mu_v[b], sigma_v[b]), xb[b, 1:]) for b in range(xb.shape[0])]
    return trajs[0] if single else trajs


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, params: ModelParameters, extra: dict | None = None):
    """Write a JSON checkpoint.

    Layout::

        {"format": "igbeat-checkpoint", "format_version": 1,
         "config": {...BackboneConfig...},
         "extra": {...caller metadata...},
         "params": {name: {"shape": [...], "values": [row-major float64 ...]}}}

    Floats are written with ``repr`` precision so loading is bit-exact.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "extra": extra or {},
        "params": {
            k: {"shape": list(t.shape), "values": t.value.ravel().tolist()} for k, t in params.items()
        },
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[ModelParameters, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an igbeat checkpoint")
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported format_version {doc.get('format_version')}")
    cfg = doc["config"]
    cfg["logvar_clip"] = tuple(cfg["logvar_clip"])
    config = BackboneConfig(**cfg)
    params = init_params(config, np.random.default_rng(0))
    params.load_state(
        {k: np.asarray(v["values"], dtype=np.float64).reshape(v["shape"]) for k, v in doc["params"].items()}
    )
    return params, doc.get("extra", {})
