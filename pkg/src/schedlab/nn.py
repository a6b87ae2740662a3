"""Lean convolutional policy/value network, written directly in numpy.

Layout: a state tensor ``(capacity, 3, n_hist)`` becomes a sequence of
``capacity`` rows with ``3 * n_hist`` channels. Five conv blocks (conv
along the row axis with kernel ``m``, 'same' padding, batch-norm, ReLU)
feed a policy head of three affine layers (masked softmax over rows) and a
value head of two affine layers (tanh).

Loss per sample: ``|z - v| - pi . log p`` averaged over the batch, plus
``c * ||theta||^2``. Optimizer: SGD with momentum, separate learning rates
for the policy side (trunk + policy head) and the value head.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoding import DEFAULT_CAPACITY, DEFAULT_HISTORY, PREEMPTIVE_HOMO, SystemState
from .model import ContractError

MAGIC = b"S0NN"
FORMAT_VERSION = 1
BN_EPS = 1e-5
LOG_FLOOR = 1e-12

LR_TABLE = (
    (500, 0.1, 0.01),
    (1000, 0.01, 0.001),
    (1500, 0.001, 0.0001),
    (2000, 0.0001, 0.00001),
)


def lr_schedule(simulation_index: int) -> tuple[float, float]:
    """(policy lr, value lr) for a simulation index; the last row holds beyond 2000."""
    if simulation_index < 0:
        raise ValueError("simulation index must be non-negative")
    for upper, lr_p, lr_v in LR_TABLE:
        if simulation_index < upper:
            return lr_p, lr_v
    return LR_TABLE[-1][1], LR_TABLE[-1][2]


@dataclass
class NetConfig:
    m: int = 2
    capacity: int = DEFAULT_CAPACITY
    n_hist: int = DEFAULT_HISTORY
    mode: str = PREEMPTIVE_HOMO
    filters: int = 64
    blocks: int = 5
    hidden: int = 64
    input_scale: float = 100.0
    reg_coeff: float = 1e-4
    squared_value_loss: bool = False

    @property
    def in_channels(self) -> int:
        return 3 * self.n_hist


class ShapeError(ContractError, ValueError):
    pass


@dataclass
class TrainSample:
    tensor: np.ndarray      # (capacity, 3, n_hist)
    mask: np.ndarray        # selectable rows
    target_pi: np.ndarray   # search policy over rows, sums to 1 on the mask
    target_z: float         # normalized survival reward in [-1, 1]


@dataclass
class NetParams:
    config: NetConfig
    weights: dict = field(default_factory=dict)    # learnable arrays, fixed order
    buffers: dict = field(default_factory=dict)    # batch-norm running statistics
    momentum: dict = field(default_factory=dict)
    version: int = 0

    def copy(self) -> "NetParams":
        return NetParams(self.config,
                         {k: v.copy() for k, v in self.weights.items()},
                         {k: v.copy() for k, v in self.buffers.items()},
                         {k: v.copy() for k, v in self.momentum.items()},
                         self.version)

    def sq_norm(self) -> float:
        return float(sum(np.sum(np.square(w, dtype=np.float64)) for w in self.weights.values()))

    def is_value_param(self, name: str) -> bool:
        return name.startswith("value.")


def init_params(config: NetConfig, seed=0, dtype=np.float32) -> NetParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; batch-norm scale 1, shift 0."""
    rng = np.random.default_rng(seed)
    w, buf = {}, {}

    def affine(name, fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        w[f"{name}.w"] = rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dtype)
        w[f"{name}.b"] = rng.uniform(-bound, bound, fan_out).astype(dtype)

    cin = config.in_channels
    for i in range(config.blocks):
        affine(f"conv{i}", config.m * cin, config.filters)
        w[f"bn{i}.gamma"] = np.ones(config.filters, dtype)
        w[f"bn{i}.beta"] = np.zeros(config.filters, dtype)
        buf[f"bn{i}.mean"] = np.zeros(config.filters, dtype)
        buf[f"bn{i}.var"] = np.ones(config.filters, dtype)
        cin = config.filters
    flat = config.capacity * config.filters
    affine("policy.fc0", flat, config.hidden)
    affine("policy.fc1", config.hidden, config.hidden)
    affine("policy.fc2", config.hidden, config.capacity)
    affine("value.fc0", flat, config.hidden)
    affine("value.fc1", config.hidden, 1)
    mom = {k: np.zeros_like(v) for k, v in w.items()}
    return NetParams(config, w, buf, mom)


# -- forward / backward ----------------------------------------------------------

def _im2col(h: np.ndarray, k: int) -> np.ndarray:
    """(B, L, C) -> (B, L, k*C) windows centred on each row ('same' padding)."""
    if k == 1:
        return h
    pl = (k - 1) // 2
    B, L, C = h.shape
    out = np.zeros((B, L, k * C), dtype=h.dtype)
    for j in range(k):
        s = j - pl                      # window offset: out row r sees input row r + s
        lo, hi = max(0, -s), min(L, L - s)
        if hi > lo:
            out[:, lo:hi, j * C:(j + 1) * C] = h[:, lo + s:hi + s, :]
    return out


def _col2im(dcols: np.ndarray, k: int, c: int) -> np.ndarray:
    if k == 1:
        return dcols
    pl = (k - 1) // 2
    B, L, _ = dcols.shape
    dhp = np.zeros((B, L + k - 1, c), dtype=dcols.dtype)
    for j in range(k):
        dhp[:, j:j + L, :] += dcols[:, :, j * c:(j + 1) * c]
    return dhp[:, pl:pl + L, :]


def _masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    z = np.where(mask, logits, -np.inf)
    zmax = np.max(z, axis=1, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    e = np.where(mask, np.exp(z - zmax), 0.0)
    s = e.sum(axis=1, keepdims=True)
    s = np.where(s > 0, s, 1.0)
    return e / s


def as_batch(states, config: NetConfig):
    """Stack SystemStates (or raw tensors) into network input ``(B, L, C)`` plus masks."""
    if isinstance(states, SystemState):
        states = [states]
    xs, ms = [], []
    for s in states:
        if isinstance(s, SystemState):
            t, m = s.tensor, s.mask
        else:
            t, m = s
        if t.shape != (config.capacity, 3, config.n_hist):
            raise ShapeError(f"state shape {t.shape} != {(config.capacity, 3, config.n_hist)}")
        xs.append(t.reshape(config.capacity, 3 * config.n_hist))
        ms.append(m)
    return np.stack(xs), np.stack(ms)


def _forward(params: NetParams, x: np.ndarray, mask: np.ndarray, train: bool, bn_momentum=0.1):
    cfg = params.config
    P = params.weights
    dtype = P["conv0.w"].dtype
    h = x.astype(dtype) * dtype.type(1.0 / cfg.input_scale)
    B, L, _ = h.shape
    cache = {"blocks": [], "mask": mask}
    for i in range(cfg.blocks):
        cols = _im2col(h, cfg.m)
        a = cols @ P[f"conv{i}.w"] + P[f"conv{i}.b"]
        if train:
            mu = a.mean(axis=(0, 1))
            var = a.var(axis=(0, 1))
            if bn_momentum:
                rm, rv = params.buffers[f"bn{i}.mean"], params.buffers[f"bn{i}.var"]
                n = a.shape[0] * a.shape[1]
                unbiased = var * (n / max(n - 1, 1))
                rm *= 1 - bn_momentum
                rm += bn_momentum * mu
                rv *= 1 - bn_momentum
                rv += bn_momentum * unbiased
        else:
            mu, var = params.buffers[f"bn{i}.mean"], params.buffers[f"bn{i}.var"]
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (a - mu) * inv
        y = P[f"bn{i}.gamma"] * xhat + P[f"bn{i}.beta"]
        cache["blocks"].append((cols, xhat, inv, y > 0, h.shape[2]))
        h = np.maximum(y, 0)
    flat = h.reshape(B, -1)
    z0 = flat @ P["policy.fc0.w"] + P["policy.fc0.b"]
    r0 = np.maximum(z0, 0)
    z1 = r0 @ P["policy.fc1.w"] + P["policy.fc1.b"]
    r1 = np.maximum(z1, 0)
    logits = r1 @ P["policy.fc2.w"] + P["policy.fc2.b"]
    p = _masked_softmax(logits, mask)
    y0 = flat @ P["value.fc0.w"] + P["value.fc0.b"]
    s0 = np.maximum(y0, 0)
    a1 = s0 @ P["value.fc1.w"] + P["value.fc1.b"]
    v = np.tanh(a1[:, 0])
    cache.update(flat=flat, r0=r0, r1=r1, s0=s0, z0=z0 > 0, z1=z1 > 0, y0=y0 > 0, hshape=h.shape)
    return p, v, cache


def forward_batch(params: NetParams, x, mask, train=False):
    p, v, _ = _forward(params, x, mask, train, bn_momentum=0.0)
    return p, v


def forward(params: NetParams, state) -> tuple[np.ndarray, float]:
    """Inference pass (batch-norm on running statistics) for one state."""
    x, mask = as_batch(state, params.config)
    p, v, _ = _forward(params, x, mask, train=False)
    return p[0], float(v[0])


def loss(policy_p, value_v, target_pi, target_z, reg_coeff: float = 0.0, params: NetParams | None = None,
         squared: bool = False) -> float:
    """|z - v| - pi . log p + c * ||theta||^2 for one sample (or the batch mean)."""
    p = np.atleast_2d(np.asarray(policy_p, dtype=np.float64))
    pi = np.atleast_2d(np.asarray(target_pi, dtype=np.float64))
    v = np.atleast_1d(np.asarray(value_v, dtype=np.float64))
    z = np.atleast_1d(np.asarray(target_z, dtype=np.float64))
    support = pi > 0
    if np.any(support & (p <= 0)):
        warnings.warn("target policy puts mass on a zero-probability row; flooring", RuntimeWarning)
    logp = np.log(np.maximum(p, LOG_FLOOR))
    ce = -np.sum(np.where(support, pi * logp, 0.0), axis=1)
    err = (z - v) ** 2 if squared else np.abs(z - v)
    out = float(np.mean(err + ce))
    if reg_coeff and params is not None:
        out += reg_coeff * params.sq_norm()
    return out


def _backward(params: NetParams, cache, p, v, target_pi, target_z):
    """Gradients of the batch-mean data loss w.r.t. every weight (no regularizer)."""
    cfg = params.config
    P = params.weights
    B = p.shape[0]
    g = {}
    dlogits = (p - target_pi) / B
    dlogits = np.where(cache["mask"], dlogits, 0.0).astype(p.dtype)
    if cfg.squared_value_loss:
        dv = -2.0 * (target_z - v)
    else:
        dv = -np.sign(target_z - v)
    da1 = (dv * (1.0 - v * v) / B)[:, None].astype(p.dtype)

    g["policy.fc2.w"] = cache["r1"].T @ dlogits
    g["policy.fc2.b"] = dlogits.sum(0)
    d = (dlogits @ P["policy.fc2.w"].T) * cache["z1"]
    g["policy.fc1.w"] = cache["r0"].T @ d
    g["policy.fc1.b"] = d.sum(0)
    d = (d @ P["policy.fc1.w"].T) * cache["z0"]
    g["policy.fc0.w"] = cache["flat"].T @ d
    g["policy.fc0.b"] = d.sum(0)
    dflat = d @ P["policy.fc0.w"].T

    g["value.fc1.w"] = cache["s0"].T @ da1
    g["value.fc1.b"] = da1.sum(0)
    d = (da1 @ P["value.fc1.w"].T) * cache["y0"]
    g["value.fc0.w"] = cache["flat"].T @ d
    g["value.fc0.b"] = d.sum(0)
    dflat = dflat + d @ P["value.fc0.w"].T

    dh = dflat.reshape(cache["hshape"])
    for i in reversed(range(cfg.blocks)):
        cols, xhat, inv, relu_on, cin = cache["blocks"][i]
        dy = dh * relu_on
        g[f"bn{i}.gamma"] = np.sum(dy * xhat, axis=(0, 1))
        g[f"bn{i}.beta"] = np.sum(dy, axis=(0, 1))
        dxhat = dy * P[f"bn{i}.gamma"]
        n = dxhat.shape[0] * dxhat.shape[1]
        da = (inv / n) * (n * dxhat - dxhat.sum(axis=(0, 1)) - xhat * np.sum(dxhat * xhat, axis=(0, 1)))
        kc = cols.shape[2]
        g[f"conv{i}.w"] = cols.reshape(-1, kc).T @ da.reshape(-1, da.shape[2])
        g[f"conv{i}.b"] = da.sum(axis=(0, 1))
        if i > 0:
            dh = _col2im(da @ P[f"conv{i}.w"].T, cfg.m, cin)
    return g


def gradients(params: NetParams, x, mask, target_pi, target_z, train=True, update_stats=False):
    """(loss, grads) of the full objective, regularizer included, on one batch."""
    p, v, cache = _forward(params, x, mask, train, bn_momentum=0.1 if update_stats else 0.0)
    pi = np.asarray(target_pi, dtype=p.dtype)
    z = np.asarray(target_z, dtype=p.dtype)
    g = _backward(params, cache, p, v, pi, z)
    c = params.config.reg_coeff
    if c:
        for k, w in params.weights.items():
            g[k] = g[k] + 2.0 * c * w
    l = loss(p, v, pi, z, c, params, params.config.squared_value_loss)
    return l, g


@dataclass
class UpdateReport:
    loss: float
    skipped: bool = False
    reason: str = ""


def backward_and_update(params: NetParams, batch, lr_policy: float, lr_value: float,
                        momentum: float = 0.9) -> UpdateReport:
    """One SGD-with-momentum step on a minibatch of TrainSamples (in place).

    The trunk is trained at the policy rate, the value head at the value rate.
    A non-finite gradient leaves the parameters untouched.
    """
    if len(batch) == 0:
        raise ValueError("empty minibatch")
    x, mask = as_batch([(s.tensor, s.mask) for s in batch], params.config)
    pi = np.stack([s.target_pi for s in batch])
    z = np.array([s.target_z for s in batch])
    snapshot = {k: v.copy() for k, v in params.buffers.items()}
    l, g = gradients(params, x, mask, pi, z, train=True, update_stats=True)
    if not np.isfinite(l) or not all(np.all(np.isfinite(a)) for a in g.values()):
        params.buffers.update(snapshot)
        return UpdateReport(l, True, "non-finite gradient")
    for k, w in params.weights.items():
        buf = params.momentum[k]
        buf *= momentum
        buf += g[k]
        lr = lr_value if params.is_value_param(k) else lr_policy
        if lr:
            w -= w.dtype.type(lr) * buf
    params.version += 1
    return UpdateReport(l)


# -- checkpoint file -------------------------------------------------------------

def _pack_str(s: str) -> bytes:
    b = s.encode()
    return struct.pack("<I", len(b)) + b


def dumps(params: NetParams) -> bytes:
    cfg = params.config
    out = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    out.append(struct.pack("<IIIIIII", cfg.m, cfg.capacity, cfg.n_hist, cfg.filters, cfg.blocks,
                           cfg.hidden, params.version))
    out.append(struct.pack("<ddI", cfg.input_scale, cfg.reg_coeff, int(cfg.squared_value_loss)))
    out.append(_pack_str(cfg.mode))
    arrays = list(params.weights.items())
    arrays += [("buffer/" + k, v) for k, v in params.buffers.items()]
    arrays += [("momentum/" + k, v) for k, v in params.momentum.items()]
    out.append(struct.pack("<I", len(arrays)))
    for name, a in arrays:
        a = np.ascontiguousarray(a, dtype="<f4")
        out.append(_pack_str(name))
        out.append(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        out.append(a.tobytes())
    return b"".join(out)


def loads(data: bytes) -> NetParams:
    if data[:4] != MAGIC:
        raise ValueError("not a checkpoint (bad magic)")
    off = 4

    def take(fmt):
        nonlocal off
        vals = struct.unpack_from(fmt, data, off)
        off += struct.calcsize(fmt)
        return vals

    def take_str():
        nonlocal off
        (n,) = take("<I")
        s = data[off:off + n].decode()
        off += n
        return s

    (version,) = take("<I")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    m, cap, nh, filters, blocks, hidden, pver = take("<IIIIIII")
    scale, reg, sq = take("<ddI")
    mode = take_str()
    cfg = NetConfig(m, cap, nh, mode, filters, blocks, hidden, scale, reg, bool(sq))
    params = NetParams(cfg, version=pver)
    (count,) = take("<I")
    for _ in range(count):
        name = take_str()
        (rank,) = take("<I")
        dims = take(f"<{rank}I")
        n = int(np.prod(dims)) if rank else 1
        a = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(dims).astype(np.float32)
        off += 4 * n
        if name.startswith("buffer/"):
            params.buffers[name[7:]] = a
        elif name.startswith("momentum/"):
            params.momentum[name[9:]] = a
        else:
            params.weights[name] = a
    return params


def save(params: NetParams, path) -> None:
    Path(path).write_bytes(dumps(params))


def load(path) -> NetParams:
    return loads(Path(path).read_bytes())


def check_compatible(params: NetParams, m: int, capacity: int, n_hist: int, mode: str) -> None:
    cfg = params.config
    got = (cfg.m, cfg.capacity, cfg.n_hist, cfg.mode)
    want = (m, capacity, n_hist, mode)
    if got != want:
        raise ShapeError(f"network trained for (m, capacity, n_hist, mode)={got}, needed {want}")
