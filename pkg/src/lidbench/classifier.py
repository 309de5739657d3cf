"""Time-delay neural network with statistics pooling, trained end-to-end.

Pure numpy, float64 throughout, with a hand-written backward pass. Activations are
laid out (batch, time, dim); feature matrices arrive as (dim, time) and are
transposed at the boundary.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .spectral import FeatureMatrix

POOL_EPS = 1e-10
MODEL_MAGIC = b"LIDM"
MODEL_VERSION = 1

PAPER_FRAME_LAYERS = (((-2, -1, 0, 1, 2), 512), ((-2, 0, 2), 512), ((-3, 0, 3), 512),
                      ((0,), 512), ((0,), 1500))
DESK_FRAME_LAYERS = (((-2, -1, 0, 1, 2), 64), ((-2, 0, 2), 64), ((-3, 0, 3), 64),
                     ((0,), 64), ((0,), 150))


@dataclass(frozen=True)
class TdnnConfig:
    input_dim: int = 20
    frame_layers: tuple = DESK_FRAME_LAYERS
    segment_dims: tuple = (64, 64)
    n_languages: int = 0  # 0: taken from the training data
    lr: float = 0.001
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 30
    patience: int = 3
    chunk_frames: int = 300
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if len(self.frame_layers) != 5 or len(self.segment_dims) != 2:
            raise ValueError("TDNN needs 5 frame layers and 2 hidden segment layers")
        if self.chunk_frames < self.receptive_field:
            raise ValueError(f"chunk of {self.chunk_frames} frames is shorter than the "
                             f"receptive field ({self.receptive_field})")

    @property
    def receptive_field(self) -> int:
        return 1 + sum(max(ctx) - min(ctx) for ctx, _ in self.frame_layers)

    @classmethod
    def preset(cls, name: str = "desk", **overrides) -> "TdnnConfig":
        if name == "desk":
            base = cls()
        elif name == "paper":
            base = cls(frame_layers=PAPER_FRAME_LAYERS, segment_dims=(512, 512))
        else:
            raise ValueError(f"unknown preset {name!r} (expected desk or paper)")
        return replace(base, **overrides)

    def param_shapes(self) -> list[tuple[int, ...]]:
        shapes = []
        d = self.input_dim
        for ctx, out in self.frame_layers:
            shapes += [(len(ctx) * d, out), (out,)]
            d = out
        d *= 2
        for out in (*self.segment_dims, self.n_languages):
            shapes += [(d, out), (out,)]
            d = out
        return shapes


@dataclass
class TdnnModel:
    config: TdnnConfig
    params: list
    languages: list = field(default_factory=list)
    trained_epochs: int = 0

    def copy(self) -> "TdnnModel":
        return TdnnModel(self.config, [p.copy() for p in self.params], list(self.languages),
                         self.trained_epochs)


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0


def init_model(cfg: TdnnConfig, languages: Sequence[str] | None = None, seed: int | None = None) -> TdnnModel:
    if languages is not None:
        cfg = replace(cfg, n_languages=len(languages))
    if cfg.n_languages < 2:
        raise ValueError("a classifier needs at least two languages")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params = []
    for shape in cfg.param_shapes():
        if len(shape) == 2:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            params.append(rng.uniform(-limit, limit, size=shape))
        else:
            params.append(np.zeros(shape))
    langs = list(languages) if languages is not None else [f"L{i}" for i in range(cfg.n_languages)]
    return TdnnModel(cfg, params, langs)


def _splice(h: np.ndarray, ctx) -> np.ndarray:
    lo = min(ctx)
    t_out = h.shape[1] - (max(ctx) - lo)
    return np.concatenate([h[:, o - lo:o - lo + t_out, :] for o in ctx], axis=2)


def forward_logits(cfg: TdnnConfig, params, x: np.ndarray, keep: bool = False):
    """Logits for a (B, T, D) batch; with ``keep`` also the cache for ``backward``."""
    if x.shape[1] < cfg.receptive_field:
        raise ValueError(f"{x.shape[1]} frames is below the receptive field ({cfg.receptive_field})")
    cache = []
    h = x
    for i, (ctx, _) in enumerate(cfg.frame_layers):
        s = _splice(h, ctx)
        z = s @ params[2 * i] + params[2 * i + 1]
        h = np.maximum(z, 0.0)
        if keep:
            cache.append((s, z))
    t = h.shape[1]
    mu = h.mean(axis=1)
    dev = h - mu[:, None, :]
    sd = np.sqrt((dev * dev).mean(axis=1) + POOL_EPS)
    a = np.concatenate([mu, sd], axis=1)
    pool = (dev, sd, t)
    seg = []
    n_frame = 2 * len(cfg.frame_layers)
    n_seg = len(cfg.segment_dims)
    for j in range(n_seg + 1):
        z = a @ params[n_frame + 2 * j] + params[n_frame + 2 * j + 1]
        seg.append((a, z))
        a = np.maximum(z, 0.0) if j < n_seg else z
    if keep:
        return a, (cache, pool, seg)
    return a


def frame_activations(cfg: TdnnConfig, params, x: np.ndarray) -> np.ndarray:
    """Output of the last frame-level layer for a (B, T, D) batch."""
    h = x
    for i, (ctx, _) in enumerate(cfg.frame_layers):
        h = np.maximum(_splice(h, ctx) @ params[2 * i] + params[2 * i + 1], 0.0)
    return h


def pooled_logits(cfg: TdnnConfig, params, h: np.ndarray) -> np.ndarray:
    """Statistics pooling over time followed by the segment-level layers."""
    mu = h.mean(axis=1)
    dev = h - mu[:, None, :]
    a = np.concatenate([mu, np.sqrt((dev * dev).mean(axis=1) + POOL_EPS)], axis=1)
    n_frame = 2 * len(cfg.frame_layers)
    n_seg = len(cfg.segment_dims)
    for j in range(n_seg + 1):
        a = a @ params[n_frame + 2 * j] + params[n_frame + 2 * j + 1]
        if j < n_seg:
            a = np.maximum(a, 0.0)
    return a


def backward(cfg: TdnnConfig, params, cache, dlogits: np.ndarray) -> list:
    frame_cache, (dev, sd, t), seg = cache
    grads = [None] * len(params)
    n_frame = 2 * len(cfg.frame_layers)
    n_seg = len(cfg.segment_dims)
    g = dlogits
    for j in range(n_seg, -1, -1):
        a_in, z = seg[j]
        if j < n_seg:
            g = g * (z > 0)
        grads[n_frame + 2 * j] = a_in.T @ g
        grads[n_frame + 2 * j + 1] = g.sum(axis=0)
        g = g @ params[n_frame + 2 * j].T
    dim = sd.shape[1]
    dmu, dsd = g[:, :dim], g[:, dim:]
    dh = dmu[:, None, :] / t + dsd[:, None, :] * dev / (t * sd[:, None, :])
    for i in range(len(cfg.frame_layers) - 1, -1, -1):
        ctx = cfg.frame_layers[i][0]
        s, z = frame_cache[i]
        dz = dh * (z > 0)
        k_in = s.shape[2]
        grads[2 * i] = s.reshape(-1, k_in).T @ dz.reshape(-1, dz.shape[2])
        grads[2 * i + 1] = dz.sum(axis=(0, 1))
        if i == 0:
            break
        ds = dz @ params[2 * i].T
        d_in = k_in // len(ctx)
        lo = min(ctx)
        t_out = ds.shape[1]
        dprev = np.zeros((ds.shape[0], t_out + max(ctx) - lo, d_in))
        for k, o in enumerate(ctx):
            dprev[:, o - lo:o - lo + t_out, :] += ds[:, :, k * d_in:(k + 1) * d_in]
        dh = dprev
    return grads


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def loss_and_grads(cfg: TdnnConfig, params, x: np.ndarray, labels: np.ndarray):
    logits, cache = forward_logits(cfg, params, x, keep=True)
    logp = log_softmax(logits)
    b = x.shape[0]
    loss = -logp[np.arange(b), labels].mean()
    d = np.exp(logp)
    d[np.arange(b), labels] -= 1.0
    return float(loss), backward(cfg, params, cache, d / b)


def _as_batch(x) -> np.ndarray:
    v = x.values if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=np.float64)
    return v.T[None, :, :]


def forward(model: TdnnModel, x) -> np.ndarray:
    """Posterior probabilities over ``model.languages`` for one (D, T) utterance."""
    return softmax(forward_logits(model.config, model.params, _as_batch(x)))[0]


def nll_loss(probs, label: int) -> float:
    probs = np.asarray(probs)
    if not 0 <= label < len(probs):
        raise IndexError(f"label {label} out of range for {len(probs)} classes")
    return float(-np.log(probs[label]))


def score_utterance(model: TdnnModel, x) -> np.ndarray:
    """Log-odds detection scores log p_L - log(1 - p_L), computed from logits."""
    z = forward_logits(model.config, model.params, _as_batch(x))[0]
    return log_odds_from_logits(z)


def log_odds_from_logits(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    for k in range(len(z)):
        others = np.delete(z, k)
        m = others.max()
        out[k] = z[k] - (m + np.log(np.exp(others - m).sum()))
    return out


class AdamW:
    """Adam with decoupled weight decay: theta <- theta(1 - lr*wd) - lr*m_hat/(sqrt(v_hat)+eps)."""

    def __init__(self, params, lr=0.001, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.lr, self.eps, self.weight_decay = lr, eps, weight_decay
        self.beta1, self.beta2 = betas
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p *= 1.0 - self.lr * self.weight_decay
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class EarlyStopping:
    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.bad_epochs = 0
        self.epoch = 0

    def update(self, val_loss: float) -> bool:
        """Record one epoch; return True when training should stop."""
        self.epoch += 1
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = self.epoch
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def random_chunk(v: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """(T, D) -> (n, D) random crop; short inputs are wrap-padded."""
    t = v.shape[0]
    if t >= n:
        start = int(rng.integers(0, t - n + 1))
        return v[start:start + n]
    start = int(rng.integers(0, t))
    return v[(start + np.arange(n)) % t]


def _encode(items, languages):
    index = {lang: i for i, lang in enumerate(languages)}
    xs, ys = [], []
    for x, lang in items:
        if lang not in index:
            raise ValueError(f"language {lang!r} is not among the training languages")
        v = x.values if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=np.float64)
        xs.append(np.ascontiguousarray(v.T))
        ys.append(index[lang])
    return xs, np.array(ys, dtype=np.int64)


def evaluate_loss(model: TdnnModel, xs, ys) -> tuple[float, float]:
    """Mean cross-entropy and accuracy over full-length utterances."""
    losses, hits = [], 0
    for v, y in zip(xs, ys):
        logp = log_softmax(forward_logits(model.config, model.params, v[None]))[0]
        losses.append(-logp[y])
        hits += int(np.argmax(logp) == y)
    return float(np.mean(losses)), hits / len(ys)


def train(cfg: TdnnConfig, train_set, val_set, languages: Sequence[str] | None = None,
          log=None) -> tuple[TdnnModel, TrainReport]:
    """Train on ``(features, language)`` pairs with validation-loss early stopping.

    Each epoch draws one random ``chunk_frames`` crop per training utterance.
    Returns the parameters of the best validation epoch.
    """
    if not train_set or not val_set:
        raise ValueError("training and validation sets must be nonempty")
    if languages is None:
        languages = sorted({lang for _, lang in train_set})
    for name, items in (("training", train_set), ("validation", val_set)):
        if len({lang for _, lang in items}) < 2:
            raise ValueError(f"{name} set contains a single language; need at least two")
    cfg = replace(cfg, n_languages=len(languages))
    model = init_model(cfg, languages)
    xs, ys = _encode(train_set, languages)
    vx, vy = _encode(val_set, languages)
    for v in xs + vx:
        if v.shape[1] != cfg.input_dim:
            raise ValueError(f"features have {v.shape[1]} dims, model expects {cfg.input_dim}")
    rng = np.random.default_rng([cfg.seed, 1])
    opt = AdamW(model.params, cfg.lr, (cfg.beta1, cfg.beta2), cfg.adam_eps, cfg.weight_decay)
    stopper = EarlyStopping(cfg.patience)
    report = TrainReport()
    best = model.copy()
    for epoch in range(1, cfg.max_epochs + 1):
        chunks = np.stack([random_chunk(v, cfg.chunk_frames, rng) for v in xs])
        order = rng.permutation(len(xs))
        total = 0.0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss, grads = loss_and_grads(cfg, model.params, chunks[idx], ys[idx])
            opt.step(model.params, grads)
            total += loss * len(idx)
        val_loss, val_acc = evaluate_loss(model, vx, vy)
        report.train_loss.append(total / len(order))
        report.val_loss.append(val_loss)
        report.val_accuracy.append(val_acc)
        if log is not None:
            log(f"epoch {epoch}: train {total / len(order):.4f} val {val_loss:.4f} acc {val_acc:.3f}")
        stop = stopper.update(val_loss)
        if stopper.best_epoch == epoch:
            best = model.copy()
        report.stopped_epoch = epoch
        if stop:
            break
    report.best_epoch = stopper.best_epoch
    best.trained_epochs = report.stopped_epoch
    return best, report


def gradient_check(cfg: TdnnConfig, x: np.ndarray, label: int, h: float = 1e-5,
                   seed: int = 0, params=None) -> dict:
    """Max relative error between analytic and central-difference gradients, per parameter.

    Relative error is |a - n| / max(|a| + |n|, 1e-6); the floor keeps round-off on
    vanishing gradients from dominating.
    """
    if params is None:
        params = init_model(cfg, seed=seed).params
    params = [np.array(p, dtype=np.float64) for p in params]
    xb = np.asarray(x, dtype=np.float64)[None]
    yb = np.array([label])
    _, grads = loss_and_grads(cfg, params, xb, yb)
    errors = {}
    for k, p in enumerate(params):
        worst = 0.0
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = loss_and_grads(cfg, params, xb, yb)
            flat[i] = orig - h
            lm, _ = loss_and_grads(cfg, params, xb, yb)
            flat[i] = orig
            num = (lp - lm) / (2 * h)
            ana = grads[k].reshape(-1)[i]
            worst = max(worst, abs(ana - num) / max(abs(ana) + abs(num), 1e-6))
        errors[k] = worst
    errors["max"] = max(errors.values())
    return errors


def _cfg_bytes(cfg: TdnnConfig) -> bytes:
    out = [struct.pack("<II", cfg.input_dim, len(cfg.frame_layers))]
    for ctx, dim in cfg.frame_layers:
        out.append(struct.pack(f"<I{len(ctx)}iI", len(ctx), *ctx, dim))
    out.append(struct.pack(f"<I{len(cfg.segment_dims)}I", len(cfg.segment_dims), *cfg.segment_dims))
    out.append(struct.pack("<I5d4Iq", cfg.n_languages, cfg.lr, cfg.weight_decay, cfg.beta1,
                           cfg.beta2, cfg.adam_eps, cfg.max_epochs, cfg.patience,
                           cfg.chunk_frames, cfg.batch_size, cfg.seed))
    return b"".join(out)


def save_model(model: TdnnModel, path) -> None:
    parts = [MODEL_MAGIC, struct.pack("<H", MODEL_VERSION), _cfg_bytes(model.config),
             struct.pack("<I", model.trained_epochs)]
    for lang in model.languages:
        raw = lang.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    for p in model.params:
        parts.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise ValueError("truncated model file")
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals


def load_model(path) -> TdnnModel:
    r = _Reader(Path(path).read_bytes())
    if r.take("<4s")[0] != MODEL_MAGIC:
        raise ValueError("bad magic: not a LIDM model file")
    version = r.take("<H")[0]
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported model version {version}")
    input_dim, n_layers = r.take("<II")
    layers = []
    for _ in range(n_layers):
        n_ctx = r.take("<I")[0]
        ctx = r.take(f"<{n_ctx}i")
        layers.append((tuple(ctx), r.take("<I")[0]))
    n_seg = r.take("<I")[0]
    seg = r.take(f"<{n_seg}I")
    n_lang, lr, wd, b1, b2, eps, max_epochs, patience, chunk, batch, seed = r.take("<I5d4Iq")
    cfg = TdnnConfig(input_dim, tuple(layers), tuple(seg), n_lang, lr, wd, b1, b2, eps,
                     max_epochs, patience, chunk, batch, seed)
    trained = r.take("<I")[0]
    langs = []
    for _ in range(n_lang):
        n = r.take("<H")[0]
        langs.append(r.take(f"<{n}s")[0].decode("utf-8"))
    params = []
    for shape in cfg.param_shapes():
        n = int(np.prod(shape))
        if r.pos + 8 * n > len(r.data):
            raise ValueError("truncated model file")
        params.append(np.frombuffer(r.data, "<f8", n, r.pos).astype(np.float64).reshape(shape))
        r.pos += 8 * n
    if r.pos != len(r.data):
        raise ValueError("trailing bytes after model parameters")
    return TdnnModel(cfg, params, langs, trained)
