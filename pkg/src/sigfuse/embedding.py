"""Triplet-trained embedding network for signature images.

The network is a small numpy CNN (conv / ReLU / max-pool / linear layers) with
an explicit backward pass. Parameters live in one flat float64 vector so that
gradient checks, SGD and serialization all work on the same array.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image

from .errors import InsufficientData

log = logging.getLogger(__name__)

MODEL_FORMAT = "sigfuse-embedding/1"

DEFAULT_ARCHITECTURE = (
    {"type": "conv", "out": 8, "kernel": 3},
    {"type": "relu"},
    {"type": "maxpool", "size": 2},
    {"type": "conv", "out": 16, "kernel": 3},
    {"type": "relu"},
    {"type": "maxpool", "size": 2},
    {"type": "flatten"},
    {"type": "linear", "out": 64},
    {"type": "relu"},
    {"type": "linear", "out": 32},
)


# -- layers -------------------------------------------------------------------


class _Layer:
    n_params = 0
    offset = 0

    def init(self, params: np.ndarray, rng: np.random.Generator) -> None:
        pass

    def bind(self, params: np.ndarray) -> None:
        pass


class _Conv(_Layer):
    def __init__(self, in_shape, out, kernel):
        c, h, w = in_shape
        self.in_shape, self.out, self.k = in_shape, out, kernel
        self.pad = kernel // 2
        self.out_shape = (out, h + 2 * self.pad - kernel + 1, w + 2 * self.pad - kernel + 1)
        self.fan_in = c * kernel * kernel
        self.n_params = out * self.fan_in + out

    def bind(self, params):
        seg = params[self.offset : self.offset + self.n_params]
        self.weight = seg[: self.out * self.fan_in].reshape(self.out, self.fan_in)
        self.bias = seg[self.out * self.fan_in :]

    def init(self, params, rng):
        bound = np.sqrt(6.0 / self.fan_in)
        params[self.offset : self.offset + self.out * self.fan_in] = rng.uniform(
            -bound, bound, self.out * self.fan_in
        )

    def forward(self, x):
        n = x.shape[0]
        p, k = self.pad, self.k
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(xp, (k, k), axis=(2, 3))
        _, oh, ow = self.out_shape
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, self.fan_in)
        out = cols @ self.weight.T + self.bias
        return out.reshape(n, oh, ow, self.out).transpose(0, 3, 1, 2), (cols, xp.shape)

    def backward(self, dout, cache, grad):
        cols, padded_shape = cache
        n = dout.shape[0]
        _, oh, ow = self.out_shape
        d2 = dout.transpose(0, 2, 3, 1).reshape(-1, self.out)
        seg = grad[self.offset : self.offset + self.n_params]
        seg[: self.out * self.fan_in] = (d2.T @ cols).ravel()
        seg[self.out * self.fan_in :] = d2.sum(axis=0)
        c = self.in_shape[0]
        dcols = (d2 @ self.weight).reshape(n, oh, ow, c, self.k, self.k)
        dxp = np.zeros(padded_shape)
        for i in range(self.k):
            for j in range(self.k):
                dxp[:, :, i : i + oh, j : j + ow] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        p = self.pad
        h, w = self.in_shape[1:]
        return dxp[:, :, p : p + h, p : p + w]


class _Linear(_Layer):
    def __init__(self, in_shape, out):
        (self.fan_in,) = in_shape
        self.out = out
        self.out_shape = (out,)
        self.n_params = out * self.fan_in + out

    def bind(self, params):
        seg = params[self.offset : self.offset + self.n_params]
        self.weight = seg[: self.out * self.fan_in].reshape(self.out, self.fan_in)
        self.bias = seg[self.out * self.fan_in :]

    def init(self, params, rng):
        bound = np.sqrt(6.0 / self.fan_in)
        params[self.offset : self.offset + self.out * self.fan_in] = rng.uniform(
            -bound, bound, self.out * self.fan_in
        )

    def forward(self, x):
        return x @ self.weight.T + self.bias, x

    def backward(self, dout, x, grad):
        seg = grad[self.offset : self.offset + self.n_params]
        seg[: self.out * self.fan_in] = (dout.T @ x).ravel()
        seg[self.out * self.fan_in :] = dout.sum(axis=0)
        return dout @ self.weight


class _ReLU(_Layer):
    def __init__(self, in_shape):
        self.out_shape = in_shape

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, dout, mask, grad):
        return dout * mask


class _MaxPool(_Layer):
    def __init__(self, in_shape, size):
        c, h, w = in_shape
        if h % size or w % size:
            raise ValueError(f"pool size {size} does not divide {h}x{w}")
        self.s = size
        self.out_shape = (c, h // size, w // size)

    def forward(self, x):
        n, c, h, w = x.shape
        s = self.s
        blocks = x.reshape(n, c, h // s, s, w // s, s).transpose(0, 1, 2, 4, 3, 5)
        blocks = blocks.reshape(n, c, h // s, w // s, s * s)
        arg = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
        return out, (arg, x.shape)

    def backward(self, dout, cache, grad):
        arg, shape = cache
        n, c, h, w = shape
        s = self.s
        onehot = np.zeros(arg.shape + (s * s,))
        np.put_along_axis(onehot, arg[..., None], dout[..., None], axis=-1)
        dx = onehot.reshape(n, c, h // s, w // s, s, s).transpose(0, 1, 2, 4, 3, 5)
        return dx.reshape(shape)


class _Flatten(_Layer):
    def __init__(self, in_shape):
        self.in_shape = in_shape
        self.out_shape = (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), None

    def backward(self, dout, cache, grad):
        return dout.reshape((dout.shape[0],) + tuple(self.in_shape))


def _make_layers(architecture, input_size):
    shape = (1,) + tuple(input_size)
    layers = []
    offset = 0
    for spec in architecture:
        kind = spec["type"]
        if kind == "conv":
            layer = _Conv(shape, int(spec["out"]), int(spec.get("kernel", 3)))
        elif kind == "linear":
            if len(shape) != 1:
                layer = _Flatten(shape)
                layers.append(layer)
                shape = layer.out_shape
            layer = _Linear(shape, int(spec["out"]))
        elif kind == "relu":
            layer = _ReLU(shape)
        elif kind == "maxpool":
            layer = _MaxPool(shape, int(spec.get("size", 2)))
        elif kind == "flatten":
            layer = _Flatten(shape)
        else:
            raise ValueError(f"unknown layer type {kind!r}")
        layer.offset = offset
        offset += layer.n_params
        layers.append(layer)
        shape = layer.out_shape
    if len(shape) != 1:
        raise ValueError("architecture must end in a vector output")
    return layers, offset, shape[0]


# -- model --------------------------------------------------------------------


class EmbeddingModel:
    """Maps preprocessed images of shape ``(1, H, W)`` to embedding vectors."""

    def __init__(self, architecture=DEFAULT_ARCHITECTURE, input_size=(32, 32), params=None, seed=0, meta=None):
        self.architecture = tuple(dict(spec) for spec in architecture)
        self.input_size = tuple(int(v) for v in input_size)
        self._layers, n_params, self.embedding_dim = _make_layers(self.architecture, self.input_size)
        if params is None:
            params = np.zeros(n_params)
            rng = np.random.default_rng(seed)
            for layer in self._layers:
                layer.init(params, rng)
        params = np.array(params, dtype=float)
        if params.shape != (n_params,):
            raise ValueError(f"expected {n_params} parameters, got {params.shape}")
        self.params = params
        self.seed = seed
        self.meta = dict(meta or {})
        for layer in self._layers:
            layer.bind(self.params)

    @property
    def n_params(self) -> int:
        return self.params.size

    def set_params(self, values) -> None:
        self.params[...] = values

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(self.architecture, self.input_size, self.params.copy(), self.seed, self.meta)

    def forward(self, x: np.ndarray, keep_cache: bool = False):
        x = np.asarray(x, dtype=float)
        if x.ndim == 3:
            x = x[:, None]
        caches = []
        for layer in self._layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return (x, caches) if keep_cache else x

    def backward(self, dout: np.ndarray, caches) -> np.ndarray:
        grad = np.zeros_like(self.params)
        for layer, cache in zip(reversed(self._layers), reversed(caches)):
            dout = layer.backward(dout, cache, grad)
        return grad

    def save(self, path) -> None:
        meta = {
            "format": MODEL_FORMAT,
            "architecture": list(self.architecture),
            "input_size": list(self.input_size),
            "seed": self.seed,
            **self.meta,
        }
        with open(path, "wb") as fh:
            np.savez(fh, params=self.params, meta=np.array(json.dumps(meta)))

    @classmethod
    def load(cls, path) -> "EmbeddingModel":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            params = data["params"].copy()
        if meta.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model format {meta.get('format')!r}")
        arch = meta.pop("architecture")
        size = meta.pop("input_size")
        seed = meta.pop("seed")
        meta.pop("format")
        return cls(arch, size, params, seed, meta)


def prepare_input(image, input_size=(32, 32)) -> np.ndarray:
    """Inverted intensities in [0, 1], resized to fit ``input_size`` and zero-padded (centered)."""
    gray = np.asarray(image)
    if gray.ndim != 2:
        raise ValueError("expected a 2-D grayscale image")
    th, tw = input_size
    h, w = gray.shape
    ink = 255 - gray.astype(np.uint8)
    scale = min(th / h, tw / w)
    nh, nw = max(1, round(h * scale)), max(1, round(w * scale))
    if (nh, nw) != (h, w):
        ink = np.asarray(Image.fromarray(ink, mode="L").resize((nw, nh), Image.BILINEAR))
    out = np.zeros((th, tw))
    y0, x0 = (th - nh) // 2, (tw - nw) // 2
    out[y0 : y0 + nh, x0 : x0 + nw] = ink / 255.0
    return out


def embed(model: EmbeddingModel, image) -> np.ndarray:
    return model.forward(prepare_input(image, model.input_size)[None])[0]


def embed_many(model: EmbeddingModel, images, batch_size: int = 256) -> np.ndarray:
    x = np.stack([prepare_input(img, model.input_size) for img in images])
    out = [model.forward(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.embedding_dim))


def dissimilarity_neural(model: EmbeddingModel, r, t) -> float:
    return float(np.linalg.norm(embed(model, r) - embed(model, t)))


# -- loss ---------------------------------------------------------------------


def triplet_loss(delta_plus: float, delta_minus: float, margin: float) -> float:
    return max(delta_plus - delta_minus + margin, 0.0)


def batch_triplet_loss(model: EmbeddingModel, anchors, positives, negatives, margin: float):
    """Mean triplet loss over a batch of preprocessed images and its parameter gradient."""
    b = len(anchors)
    x = np.concatenate([anchors, positives, negatives])
    emb, caches = model.forward(x, keep_cache=True)
    ea, ep, en = emb[:b], emb[b : 2 * b], emb[2 * b :]
    diff_p, diff_n = ea - ep, ea - en
    dp = np.sqrt((diff_p**2).sum(axis=1))
    dn = np.sqrt((diff_n**2).sum(axis=1))
    hinge = dp - dn + margin
    loss = float(np.maximum(hinge, 0.0).mean())

    active = (hinge > 0).astype(float)[:, None] / b
    unit_p = diff_p / np.maximum(dp, 1e-12)[:, None]
    unit_n = diff_n / np.maximum(dn, 1e-12)[:, None]
    d_emb = np.concatenate([active * (unit_p - unit_n), -active * unit_p, active * unit_n])
    return loss, model.backward(d_emb, caches)


def triplet_losses_from_embeddings(emb: np.ndarray, triplets: np.ndarray, margin: float) -> np.ndarray:
    a, p, n = emb[triplets[:, 0]], emb[triplets[:, 1]], emb[triplets[:, 2]]
    dp = np.linalg.norm(a - p, axis=1)
    dn = np.linalg.norm(a - n, axis=1)
    return np.maximum(dp - dn + margin, 0.0)


# -- training -----------------------------------------------------------------


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    margin: float = 1.0
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    train_per_user: int = 16
    val_per_user: int = 8
    triplets_per_image: int = 4
    input_size: tuple[int, int] = (32, 32)
    architecture: tuple = field(default=DEFAULT_ARCHITECTURE)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if not self.margin > 0:
            raise ValueError("margin must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        self.input_size = tuple(int(v) for v in self.input_size)

    _SCALARS = {
        "learning_rate": float,
        "momentum": float,
        "margin": float,
        "epochs": int,
        "batch_size": int,
        "seed": int,
        "train_per_user": int,
        "val_per_user": int,
        "triplets_per_image": int,
    }

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        """Parse a flat ``key = value`` file. ``input_size`` takes ``HxW``."""
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (s.strip() for s in line.partition("="))
            if not sep:
                raise ValueError(f"line {lineno}: expected key = value")
            if key in cls._SCALARS:
                kwargs[key] = cls._SCALARS[key](value)
            elif key == "input_size":
                kwargs[key] = tuple(int(v) for v in value.lower().split("x"))
            else:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
        return cls(**kwargs)

    def to_text(self) -> str:
        lines = [f"{key} = {getattr(self, key)}" for key in self._SCALARS]
        lines.append("input_size = {}x{}".format(*self.input_size))
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict:
        d = asdict(self)
        d["architecture"] = list(self.architecture)
        d["input_size"] = list(self.input_size)
        return d


def _sample_triplets(owner: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random valid (anchor, positive, negative) index triples."""
    by_user = {u: np.flatnonzero(owner == u) for u in np.unique(owner)}
    eligible = np.flatnonzero([len(by_user[u]) >= 2 for u in owner])
    out = np.empty((count, 3), dtype=np.intp)
    for k in range(count):
        a = int(eligible[rng.integers(len(eligible))])
        same = by_user[owner[a]]
        same = same[same != a]
        others = np.flatnonzero(owner != owner[a])
        out[k] = a, same[rng.integers(len(same))], others[rng.integers(len(others))]
    return out


class Trainer:
    """SGD-with-momentum triplet training on genuine signatures only."""

    def __init__(self, images_by_user: Mapping[str, Sequence[np.ndarray]], config: TrainConfig = TrainConfig()):
        self.config = config
        users = list(images_by_user)
        if len(users) < 2:
            raise InsufficientData("triplet training needs at least two users")
        train_x, train_owner, val_x, val_owner = [], [], [], []
        for k, uid in enumerate(users):
            imgs = list(images_by_user[uid])
            tr = imgs[: config.train_per_user]
            va = imgs[config.train_per_user : config.train_per_user + config.val_per_user]
            if len(tr) < 2:
                raise InsufficientData(f"user {uid} has {len(tr)} training images, need >= 2")
            train_x += [prepare_input(im, config.input_size) for im in tr]
            train_owner += [k] * len(tr)
            val_x += [prepare_input(im, config.input_size) for im in va]
            val_owner += [k] * len(va)
        self.train_x = np.stack(train_x)[:, None]
        self.train_owner = np.array(train_owner)
        self.val_x = np.stack(val_x)[:, None] if val_x else np.zeros((0, 1) + config.input_size)
        self.val_owner = np.array(val_owner, dtype=int)

        self.model = EmbeddingModel(config.architecture, config.input_size, seed=config.seed)
        self.velocity = np.zeros_like(self.model.params)
        self.triplet_rng = np.random.default_rng([config.seed, 1])
        self.val_triplets = self._validation_triplets()

    def _validation_triplets(self) -> np.ndarray:
        counts = np.bincount(self.val_owner) if self.val_owner.size else np.zeros(0)
        if (counts >= 2).sum() < 1 or len(np.unique(self.val_owner)) < 2:
            return np.zeros((0, 3), dtype=np.intp)
        rng = np.random.default_rng([self.config.seed, 2])
        return _sample_triplets(self.val_owner, self.config.triplets_per_image * len(self.val_owner), rng)

    def epoch_triplets(self) -> np.ndarray:
        count = self.config.triplets_per_image * len(self.train_owner)
        return _sample_triplets(self.train_owner, count, self.triplet_rng)

    def batches(self, triplets: np.ndarray):
        bs = self.config.batch_size
        for i in range(0, len(triplets), bs):
            yield triplets[i : i + bs]

    def step(self, batch: np.ndarray) -> float:
        x = self.train_x
        loss, grad = batch_triplet_loss(self.model, x[batch[:, 0]], x[batch[:, 1]], x[batch[:, 2]], self.config.margin)
        self.velocity *= self.config.momentum
        self.velocity += grad
        self.model.params -= self.config.learning_rate * self.velocity
        return loss

    def validation_loss(self) -> float:
        if not len(self.val_triplets):
            return float("nan")
        emb = self.model.forward(self.val_x)
        return float(triplet_losses_from_embeddings(emb, self.val_triplets, self.config.margin).mean())

    def fit(self) -> EmbeddingModel:
        """Train for ``config.epochs`` epochs; return the best-validation model.

        Validation loss is recorded before training (epoch 0) and after each
        epoch. Without a validation split the final parameters are returned.
        """
        cfg = self.config
        val_hist = [self.validation_loss()]
        train_hist = []
        best_params, best_epoch = self.model.params.copy(), 0
        for epoch in range(1, cfg.epochs + 1):
            losses = [self.step(batch) for batch in self.batches(self.epoch_triplets())]
            train_hist.append(float(np.mean(losses)))
            val_hist.append(self.validation_loss())
            log.info("epoch %d train %.4f val %.4f", epoch, train_hist[-1], val_hist[-1])
            if np.isnan(val_hist[-1]) or val_hist[-1] < val_hist[best_epoch]:
                best_params, best_epoch = self.model.params.copy(), epoch
        result = self.model.copy()
        result.set_params(best_params)
        result.meta = {
            "config": cfg.as_dict(),
            "val_loss": val_hist,
            "train_loss": train_hist,
            "best_epoch": best_epoch,
        }
        return result


def train(images_by_user: Mapping[str, Sequence[np.ndarray]], config: TrainConfig = TrainConfig()) -> EmbeddingModel:
    return Trainer(images_by_user, config).fit()


def genuine_images(dataset) -> dict[str, list[np.ndarray]]:
    """Genuine images per user of a :class:`SignatureDataset`; forgeries are never used."""
    return {u.user_id: [dataset.image(i) for i in u.genuine] for u in dataset.users}
