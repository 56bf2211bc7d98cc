"""Compact multi-head predictor trained by manual gradient descent.

Shared hashed embedding tables and a two-layer backbone feed per-task
towers: quantile label (bounded), raw slide time, attributed slide time,
author value, watch time, completion, interaction. Positive-target heads
use an exponential output transform so the Tweedie loss is well defined.
Author-head steps never touch shared parameters (stop gradient): an
author-only update leaves embeddings and backbone bitwise unchanged.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .datamodel import fmt_real

FEATURE_FIELDS = ("user", "video", "author", "category", "page_group")

#: head name -> (output transform, default loss)
HEAD_SPECS: dict[str, tuple[str, str]] = {
    "pdq": ("sigmoid", "mse"),
    "slide": ("identity", "mse"),
    "attr": ("exp", "hybrid"),
    "author": ("exp", "hybrid"),
    "watch": ("exp", "hybrid"),
    "completion": ("sigmoid", "mse"),
    "interaction": ("sigmoid", "mse"),
}

_HASH_MULT = 2654435761  # Knuth multiplicative hashing


class TrainingDiverged(RuntimeError):
    def __init__(self, head: str, epoch: int):
        super().__init__(f"non-finite loss on head {head!r} at epoch {epoch}")
        self.head = head


@dataclass
class HashConfig:
    vocab: dict[str, int] = field(default_factory=lambda: {
        "user": 4096, "video": 8192, "author": 1024, "category": 256,
        "page_group": 16,
    })

    def encode(self, field_name: str, raw_id) -> int:
        v = self.vocab[field_name]
        if raw_id is None:
            return v  # reserved bucket
        return int((int(raw_id) * _HASH_MULT) % v)


@dataclass
class TrainConfig:
    batch_size: int = 512
    learning_rate: float = 0.05
    epochs: int = 3
    lam: float = 0.1          # hybrid-loss Tweedie weight
    rho: float = 1.5          # Tweedie power
    accumulator_decay: float = 0.9999
    embedding_dim: int = 16
    hidden_sizes: tuple[int, int] = (64, 32)
    tower_size: int = 16
    seed: int = 0
    head_losses: dict[str, str] = field(default_factory=dict)

    def validate(self) -> None:
        if not 1.0 < self.rho < 2.0:
            raise ValueError(f"rho must be in (1,2), got {self.rho}")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")

    def loss_for(self, head: str) -> str:
        return self.head_losses.get(head, HEAD_SPECS[head][1])


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

class PredictorParams:
    """All weights, addressable by name for serialization and grad checks."""

    def __init__(self, arrays: dict[str, np.ndarray], heads: tuple[str, ...],
                 hash_config: HashConfig):
        self.arrays = arrays
        self.heads = heads
        self.hash_config = hash_config

    @classmethod
    def init(cls, config: TrainConfig, heads=None,
             hash_config: HashConfig | None = None) -> "PredictorParams":
        heads = tuple(heads) if heads is not None else tuple(HEAD_SPECS)
        hc = hash_config or HashConfig()
        rng = np.random.default_rng(np.random.SeedSequence(config.seed))
        d = config.embedding_dim
        h1, h2 = config.hidden_sizes
        ht = config.tower_size
        arrays: dict[str, np.ndarray] = {}
        for f in FEATURE_FIELDS:
            arrays[f"emb/{f}"] = rng.normal(0.0, 0.1, size=(hc.vocab[f] + 1, d))
        din = d * len(FEATURE_FIELDS)
        arrays["backbone/W1"] = rng.normal(0.0, np.sqrt(2.0 / din), size=(din, h1))
        arrays["backbone/b1"] = np.zeros(h1)
        arrays["backbone/W2"] = rng.normal(0.0, np.sqrt(2.0 / h1), size=(h1, h2))
        arrays["backbone/b2"] = np.zeros(h2)
        for head in heads:
            arrays[f"tower/{head}/W"] = rng.normal(0.0, np.sqrt(2.0 / h2), size=(h2, ht))
            arrays[f"tower/{head}/b"] = np.zeros(ht)
            arrays[f"tower/{head}/wo"] = rng.normal(0.0, np.sqrt(1.0 / ht), size=ht)
            arrays[f"tower/{head}/bo"] = np.zeros(1)
        return cls(arrays, heads, hc)

    def copy(self) -> "PredictorParams":
        return PredictorParams({k: v.copy() for k, v in self.arrays.items()},
                               self.heads, self.hash_config)

    def shared_names(self) -> list[str]:
        return [k for k in self.arrays if not k.startswith("tower/")]

    def tower_names(self, head: str) -> list[str]:
        return [k for k in self.arrays if k.startswith(f"tower/{head}/")]

    def to_vector(self, names=None) -> np.ndarray:
        names = names or sorted(self.arrays)
        return np.concatenate([self.arrays[n].ravel() for n in names])

    def from_vector(self, vec: np.ndarray, names=None) -> None:
        names = names or sorted(self.arrays)
        offset = 0
        for n in names:
            size = self.arrays[n].size
            self.arrays[n] = vec[offset:offset + size].reshape(self.arrays[n].shape).copy()
            offset += size


def encode_features(impressions, page_group_spec, hash_config: HashConfig | None = None) -> np.ndarray:
    """Hash (user, video, author, category, page group) ids to index rows."""
    hc = hash_config or HashConfig()
    out = np.empty((len(impressions), len(FEATURE_FIELDS)), dtype=np.int64)
    for row, r in enumerate(impressions):
        group = page_group_spec.group_of(r.page_index) if page_group_spec is not None else 0
        out[row, 0] = hc.encode("user", r.user_id)
        out[row, 1] = hc.encode("video", r.video_id)
        out[row, 2] = hc.encode("author", r.author_id)
        out[row, 3] = hc.encode("category", r.category_id)
        out[row, 4] = hc.encode("page_group", group)
    return out


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _transform(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if kind == "exp":
        return np.exp(np.minimum(z, 30.0))
    if kind == "identity":
        return z
    raise ValueError(f"unknown transform {kind!r}")


def _transform_grad(z: np.ndarray, out: np.ndarray, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        return out * (1.0 - out)
    if kind == "exp":
        return np.where(z < 30.0, out, 0.0)
    if kind == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown transform {kind!r}")


def forward(params: PredictorParams, features: np.ndarray, heads=None):
    """Batch forward pass. Returns (predictions dict, cache for backward)."""
    heads = tuple(heads) if heads is not None else params.heads
    a = params.arrays
    embs = [a[f"emb/{f}"][features[:, i]] for i, f in enumerate(FEATURE_FIELDS)]
    x = np.concatenate(embs, axis=1)
    z1 = x @ a["backbone/W1"] + a["backbone/b1"]
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ a["backbone/W2"] + a["backbone/b2"]
    h2 = np.maximum(z2, 0.0)
    preds: dict[str, np.ndarray] = {}
    head_cache: dict[str, tuple] = {}
    for head in heads:
        zt = h2 @ a[f"tower/{head}/W"] + a[f"tower/{head}/b"]
        ht = np.maximum(zt, 0.0)
        z = ht @ a[f"tower/{head}/wo"] + a[f"tower/{head}/bo"][0]
        out = _transform(z, HEAD_SPECS[head][0])
        preds[head] = out
        head_cache[head] = (zt, ht, z, out)
    cache = (features, x, z1, h1, z2, h2, head_cache)
    return preds, cache


def predict(params: PredictorParams, features: np.ndarray, heads=None,
            batch_size: int = 8192) -> dict[str, np.ndarray]:
    """Chunked inference over a feature matrix."""
    heads = tuple(heads) if heads is not None else params.heads
    outs = {h: [] for h in heads}
    for lo in range(0, len(features), batch_size):
        preds, _ = forward(params, features[lo:lo + batch_size], heads)
        for h in heads:
            outs[h].append(preds[h])
    return {h: np.concatenate(v) if v else np.empty(0) for h, v in outs.items()}


# ---------------------------------------------------------------------------
# Losses (batch means) and their gradients w.r.t. predictions
# ---------------------------------------------------------------------------

def mse_loss(pred: np.ndarray, label: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    return float(np.mean((pred - label) ** 2))


def tweedie_loss(mu: np.ndarray, y: np.ndarray, rho: float = 1.5) -> float:
    """Compound Poisson-Gamma deviance surrogate for zero-inflated targets."""
    mu = np.asarray(mu, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not 1.0 < rho < 2.0:
        raise ValueError(f"rho must be in (1,2), got {rho}")
    if np.any(mu <= 0):
        raise ValueError("tweedie loss requires mu > 0")
    if np.any(y < 0):
        raise ValueError("tweedie loss requires y >= 0")
    term = -y * mu ** (1.0 - rho) / (1.0 - rho) + mu ** (2.0 - rho) / (2.0 - rho)
    return float(np.mean(term))


def hybrid_loss(pred: np.ndarray, label: np.ndarray, lam: float = 0.1,
                rho: float = 1.5) -> float:
    """MSE plus lam-weighted Tweedie, both on the same predictions."""
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    loss = mse_loss(pred, label)
    if lam > 0:
        loss += lam * tweedie_loss(pred, label, rho)
    return loss


def loss_value(name: str, pred, label, lam: float, rho: float) -> float:
    if name == "mse":
        return mse_loss(pred, label)
    if name == "tweedie":
        return tweedie_loss(pred, label, rho)
    if name == "hybrid":
        return hybrid_loss(pred, label, lam, rho)
    raise ValueError(f"unknown loss {name!r}")


def _loss_grad(name: str, pred: np.ndarray, label: np.ndarray, lam: float,
               rho: float) -> np.ndarray:
    n = len(pred)
    if name == "mse":
        return 2.0 * (pred - label) / n
    if name == "tweedie":
        return (pred ** (1.0 - rho) - label * pred ** (-rho)) / n
    if name == "hybrid":
        g = 2.0 * (pred - label) / n
        if lam > 0:
            g = g + lam * (pred ** (1.0 - rho) - label * pred ** (-rho)) / n
        return g
    raise ValueError(f"unknown loss {name!r}")


def backward(params: PredictorParams, cache, head_grads: dict[str, np.ndarray],
             shared: bool = True) -> dict[str, np.ndarray]:
    """Gradients of the summed per-head losses w.r.t. parameters.

    ``head_grads`` maps head -> dLoss/dPrediction. With ``shared=False``
    only tower gradients are produced (stop-gradient step).
    """
    a = params.arrays
    features, x, z1, h1, z2, h2, head_cache = cache
    grads: dict[str, np.ndarray] = {}
    dh2 = np.zeros_like(h2)
    for head, dpred in head_grads.items():
        zt, ht, z, out = head_cache[head]
        dz = dpred * _transform_grad(z, out, HEAD_SPECS[head][0])
        grads[f"tower/{head}/wo"] = ht.T @ dz
        grads[f"tower/{head}/bo"] = np.array([dz.sum()])
        dht = np.outer(dz, a[f"tower/{head}/wo"])
        dzt = dht * (zt > 0)
        grads[f"tower/{head}/W"] = h2.T @ dzt
        grads[f"tower/{head}/b"] = dzt.sum(axis=0)
        if shared:
            dh2 += dzt @ a[f"tower/{head}/W"].T
    if not shared:
        return grads
    dz2 = dh2 * (z2 > 0)
    grads["backbone/W2"] = h1.T @ dz2
    grads["backbone/b2"] = dz2.sum(axis=0)
    dh1 = dz2 @ a["backbone/W2"].T
    dz1 = dh1 * (z1 > 0)
    grads["backbone/W1"] = x.T @ dz1
    grads["backbone/b1"] = dz1.sum(axis=0)
    dx = dz1 @ a["backbone/W1"].T
    d = params.arrays["emb/user"].shape[1]
    for i, f in enumerate(FEATURE_FIELDS):
        g = np.zeros_like(a[f"emb/{f}"])
        np.add.at(g, features[:, i], dx[:, i * d:(i + 1) * d])
        grads[f"emb/{f}"] = g
    return grads


# ---------------------------------------------------------------------------
# Optimizer and training loop
# ---------------------------------------------------------------------------

class AdaptiveAccumulator:
    """Per-parameter squared-gradient accumulation with decay."""

    def __init__(self, params: PredictorParams, lr: float, decay: float,
                 eps: float = 1e-8):
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.acc = {k: np.zeros_like(v) for k, v in params.arrays.items()}

    def step(self, params: PredictorParams, grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            acc = self.acc[name]
            acc *= self.decay
            acc += g * g
            params.arrays[name] -= self.lr * g / (np.sqrt(acc) + self.eps)


@dataclass
class StreamData:
    """Hashed feature rows plus per-head label vectors."""

    features: np.ndarray                  # (n, 5) int64
    labels: dict[str, np.ndarray]

    def __len__(self) -> int:
        return len(self.features)


def train(days, config: TrainConfig, heads=None,
          params: PredictorParams | None = None,
          hash_config: HashConfig | None = None):
    """Alternating dual-stream training.

    ``days`` is an ordered list of (standard: StreamData, delayed:
    StreamData | None). Standard steps update every enabled head except
    ``author``; delayed steps update only the author tower, leaving all
    shared parameters bitwise untouched.

    Returns (params, trace) where trace is a per-epoch list of mean losses
    per head.
    """
    config.validate()
    if heads is None:
        heads = tuple(h for h in HEAD_SPECS
                      if any(h in std.labels for std, _ in days)
                      or (h == "author" and any(d is not None for _, d in days)))
    if params is None:
        params = PredictorParams.init(config, heads=heads, hash_config=hash_config)
    opt = AdaptiveAccumulator(params, config.learning_rate, config.accumulator_decay)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0x7261)))
    standard_heads = tuple(h for h in heads if h != "author")
    trace: list[dict[str, float]] = []
    for epoch in range(config.epochs):
        sums: dict[str, float] = {h: 0.0 for h in heads}
        counts: dict[str, int] = {h: 0 for h in heads}
        for std, delayed in days:
            std_batches = _batches(rng, len(std), config.batch_size)
            del_batches = _batches(rng, len(delayed), config.batch_size) if delayed else []
            # interleave: standard step(s), then a delayed step
            di = 0
            for bi, idx in enumerate(std_batches):
                _train_step(params, opt, std, idx, standard_heads, config,
                            shared=True, sums=sums, counts=counts, epoch=epoch)
                if del_batches and bi % max(1, len(std_batches) // len(del_batches)) == 0 \
                        and di < len(del_batches):
                    _train_step(params, opt, delayed, del_batches[di], ("author",),
                                config, shared=False, sums=sums, counts=counts,
                                epoch=epoch)
                    di += 1
            for rest in del_batches[di:]:
                _train_step(params, opt, delayed, rest, ("author",), config,
                            shared=False, sums=sums, counts=counts, epoch=epoch)
        trace.append({h: (sums[h] / counts[h]) for h in heads if counts[h]})
    return params, trace


def _batches(rng, n: int, batch_size: int) -> list[np.ndarray]:
    if n == 0:
        return []
    order = rng.permutation(n)
    return [order[lo:lo + batch_size] for lo in range(0, n, batch_size)]


def _train_step(params, opt, data: StreamData, idx, heads, config: TrainConfig,
                shared: bool, sums, counts, epoch: int) -> None:
    active = tuple(h for h in heads if h in data.labels)
    if not active:
        return
    feats = data.features[idx]
    preds, cache = forward(params, feats, active)
    head_grads = {}
    for h in active:
        y = data.labels[h][idx]
        name = config.loss_for(h)
        value = loss_value(name, preds[h], y, config.lam, config.rho)
        if not np.isfinite(value):
            raise TrainingDiverged(h, epoch)
        sums[h] += value
        counts[h] += 1
        head_grads[h] = _loss_grad(name, preds[h], y, config.lam, config.rho)
    grads = backward(params, cache, head_grads, shared=shared)
    opt.step(params, grads)


# ---------------------------------------------------------------------------
# Finite-difference verification
# ---------------------------------------------------------------------------

def gradient_check(params: PredictorParams, head: str, loss_name: str,
                   features: np.ndarray, labels: np.ndarray,
                   lam: float = 0.1, rho: float = 1.5, n_probes: int = 20,
                   step: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients
    on randomly probed coordinates."""
    rng = np.random.default_rng(seed)
    preds, cache = forward(params, features, (head,))
    dpred = _loss_grad(loss_name, preds[head], labels, lam, rho)
    grads = backward(params, cache, {head: dpred}, shared=True)
    names = sorted(grads)
    max_err = 0.0
    for _ in range(n_probes):
        name = names[rng.integers(0, len(names))]
        flat_idx = int(rng.integers(0, params.arrays[name].size))
        orig = params.arrays[name].flat[flat_idx]
        params.arrays[name].flat[flat_idx] = orig + step
        up, _ = forward(params, features, (head,))
        lplus = loss_value(loss_name, up[head], labels, lam, rho)
        params.arrays[name].flat[flat_idx] = orig - step
        dn, _ = forward(params, features, (head,))
        lminus = loss_value(loss_name, dn[head], labels, lam, rho)
        params.arrays[name].flat[flat_idx] = orig
        numeric = (lplus - lminus) / (2 * step)
        analytic = grads[name].flat[flat_idx]
        denom = max(abs(numeric), abs(analytic), 1e-8)
        max_err = max(max_err, abs(numeric - analytic) / denom)
    return max_err


# ---------------------------------------------------------------------------
# Parameter persistence (text, versioned, deterministic)
# ---------------------------------------------------------------------------

def save_params(path, params: PredictorParams, meta: str | None = None) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#ltvrank-params v1\n")
        if meta:
            fh.write(f"#meta {meta}\n")
        fh.write("H\t" + ",".join(params.heads) + "\n")
        fh.write("V\t" + ",".join(f"{f}:{params.hash_config.vocab[f]}"
                                  for f in FEATURE_FIELDS) + "\n")
        for name in sorted(params.arrays):
            arr = params.arrays[name]
            shape = ",".join(str(s) for s in arr.shape)
            values = ",".join(fmt_real(x) for x in arr.ravel())
            fh.write(f"P\t{name}\t{shape}\t{values}\n")
    os.replace(tmp, path)


def load_params(path) -> PredictorParams:
    arrays: dict[str, np.ndarray] = {}
    heads: tuple[str, ...] = ()
    hc = HashConfig()
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "#ltvrank-params v1":
            raise ValueError(f"{path}: bad header {header!r}")
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if parts[0] == "H":
                heads = tuple(parts[1].split(","))
            elif parts[0] == "V":
                hc = HashConfig(vocab={})
                for item in parts[1].split(","):
                    f, v = item.split(":")
                    hc.vocab[f] = int(v)
            elif parts[0] == "P":
                shape = tuple(int(s) for s in parts[2].split(","))
                values = np.array([float(x) for x in parts[3].split(",")])
                arrays[parts[1]] = values.reshape(shape)
            else:
                raise ValueError(f"{path}: unknown record tag {parts[0]!r}")
    return PredictorParams(arrays, heads, hc)
