"""Semantic feature learning from level-set parameters.

Field parameters (or their offsets from a shared prior) are reshaped into
three tensors: layer 1 as weights plus bias column, the middle layers stacked
into equal slabs with the narrower skip layer zero-padded, and the final
layer. Three branches (a fully connected block per tensor, with average
pooling over the middle-layer slabs in two orientations) produce a global
feature used for classification and retrieval. A sinusoidal encoding of the
layer index is concatenated onto the middle slabs so they are not
interchangeable under pooling.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .autodiff import Adam, Tensor, backward, concat
from .geometry import make_rng
from .sdf import LevelSetParams, SdfConfig

_BN_EPS = 1e-5
_BN_MOMENTUM = 0.1


# ---------------------------------------------------------------------------
# tensorization


@dataclass
class ParamTensors:
    """(theta1, theta2, theta3) layout of one parameter set.

    theta1: (H, 4) first-layer weights with the bias as the last column.
    theta2: (L-2, H, H+1) middle layers as weight-plus-bias slabs; the skip
    layer (3 fewer output rows) is padded with zero rows at the bottom.
    theta3: (1, H+1) final layer. ``level_shift`` records a perturbation of
    the zero level applied during augmentation (0 otherwise); its sinusoidal
    encoding joins theta3 in the corresponding branch.
    """

    config: SdfConfig
    theta1: np.ndarray
    theta2: np.ndarray
    theta3: np.ndarray
    level_shift: float = 0.0

    def validate(self) -> "ParamTensors":
        h, d = self.config.hidden, self.config.depth
        if self.theta1.shape != (h, 4):
            raise ValueError(f"theta1 must be ({h}, 4), got {self.theta1.shape}")
        if self.theta2.shape != (d - 2, h, h + 1):
            raise ValueError(f"theta2 must be ({d - 2}, {h}, {h + 1}), "
                             f"got {self.theta2.shape}")
        if self.theta3.shape != (1, h + 1):
            raise ValueError(f"theta3 must be (1, {h + 1}), got {self.theta3.shape}")
        return self

    def copy(self) -> "ParamTensors":
        return ParamTensors(self.config, self.theta1.copy(), self.theta2.copy(),
                            self.theta3.copy(), self.level_shift)


def tensorize(params: LevelSetParams, layout: SdfConfig | None = None) -> ParamTensors:
    """Reshape layer parameters into the (theta1, theta2, theta3) tuple."""
    cfg = params.config
    if layout is not None and layout != cfg:
        raise ValueError("layout does not match the parameter configuration")
    if cfg.depth < 3:
        raise ValueError("tensorization needs first, middle and final layers")
    h = cfg.hidden
    theta1 = np.concatenate([params.weights[0], params.biases[0][:, None]], axis=1)
    theta2 = np.zeros((cfg.depth - 2, h, h + 1))
    for i in range(2, cfg.depth):
        w, b = params.weights[i - 1], params.biases[i - 1]
        theta2[i - 2, :w.shape[0], :h] = w
        theta2[i - 2, :w.shape[0], h] = b
    theta3 = np.concatenate([params.weights[-1],
                             params.biases[-1][None, :]], axis=1)
    return ParamTensors(cfg, theta1, theta2, theta3).validate()


def detensorize(tensors: ParamTensors) -> LevelSetParams:
    """Inverse of :func:`tensorize` (padding rows are dropped)."""
    cfg = tensors.config
    t = tensors.validate()
    h = cfg.hidden
    dims = cfg.layer_dims()
    weights = [t.theta1[:, :3].copy()]
    biases = [t.theta1[:, 3].copy()]
    for i in range(2, cfg.depth):
        out = dims[i - 1][0]
        weights.append(t.theta2[i - 2, :out, :h].copy())
        biases.append(t.theta2[i - 2, :out, h].copy())
    weights.append(t.theta3[:, :h].copy())
    biases.append(t.theta3[0, h:].copy())
    return LevelSetParams(weights, biases, cfg).validate()


def positional_encode(value: float, bands: int) -> np.ndarray:
    """[sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^(b-1) pi v), cos(2^(b-1) pi v)]."""
    if bands < 1:
        raise ValueError("bands must be positive")
    angles = np.pi * value * 2.0 ** np.arange(bands)
    out = np.empty(2 * bands)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out


def _layer_codes(config: SdfConfig, bands: int) -> np.ndarray:
    """Encodings of the middle-layer indices, one row per slab.

    Indices are scaled by the depth before encoding; at integer arguments
    every sine band vanishes and layers two apart collide, so the raw index
    cannot separate the slabs.
    """
    return np.stack([positional_encode(i / config.depth, bands)
                     for i in range(2, config.depth)])


# ---------------------------------------------------------------------------
# augmentation


@dataclass
class AugmentConfig:
    """Perturbations applied to parameter tensors during training."""

    sigma_major: float = 0.2   # std of the global scale factor
    sigma_minor: float = 0.05  # std of per-entry scale factors
    dropout: float = 0.5       # drop rate on theta2 entries
    sigma_c: float = 0.1       # std of the level-value perturbation

    def __post_init__(self):
        if min(self.sigma_major, self.sigma_minor, self.sigma_c) < 0:
            raise ValueError("sigmas must be nonnegative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


def augment(tensors: ParamTensors, cfg: AugmentConfig, rng) -> ParamTensors:
    """Randomly scaled, dropped-out and level-shifted copy of the tensors.

    One global factor (1 + eg) scales everything, per-entry factors (1 + ee)
    perturb individual values, theta2 gets an inverted dropout mask, and a
    level shift c moves the final bias by -c (the surface f = c rewritten as
    f - c = 0) and is recorded for the theta3 branch encoding.
    """
    if isinstance(rng, (int, np.integer)):
        rng = make_rng(rng, "augment")
    t = tensors.validate()
    g = 1.0 + rng.normal(scale=cfg.sigma_major) if cfg.sigma_major else 1.0
    parts = []
    for a in (t.theta1, t.theta2, t.theta3):
        e = rng.normal(scale=cfg.sigma_minor, size=a.shape) if cfg.sigma_minor else 0.0
        parts.append(a * g * (1.0 + e))
    t1, t2, t3 = parts
    if cfg.dropout:
        keep = rng.random(t2.shape) >= cfg.dropout
        t2 = t2 * keep / (1.0 - cfg.dropout)
    c = rng.normal(scale=cfg.sigma_c) if cfg.sigma_c else 0.0
    t3 = t3.copy()
    t3[0, t.config.hidden] -= c
    return ParamTensors(t.config, t1, t2, t3, level_shift=c)


# ---------------------------------------------------------------------------
# encoder network


@dataclass
class BaseNetParams:
    """Two fully connected layers (first with ReLU) and batch normalization."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    run_mean: np.ndarray
    run_var: np.ndarray
    initialized: bool = False  # running statistics seen at least one batch

    def copy(self) -> "BaseNetParams":
        return BaseNetParams(*(a.copy() for a in (
            self.w1, self.b1, self.w2, self.b2, self.gamma, self.beta,
            self.run_mean, self.run_var)), self.initialized)


@dataclass
class EncoderParams:
    """Three-branch feature network plus linear classifier."""

    sdf: SdfConfig
    n_classes: int
    pe_bands: int
    hidden: int
    net1: BaseNetParams
    pool2a: BaseNetParams
    pool2b: BaseNetParams
    net3: BaseNetParams
    cls_w: np.ndarray
    cls_b: np.ndarray

    @property
    def d_pe(self) -> int:
        return 2 * self.pe_bands

    @property
    def feature_dim(self) -> int:
        return 4 * self.hidden

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.sdf, self.n_classes, self.pe_bands,
                             self.hidden, self.net1.copy(), self.pool2a.copy(),
                             self.pool2b.copy(), self.net3.copy(),
                             self.cls_w.copy(), self.cls_b.copy())


def _init_basenet(d_in: int, width: int, rng) -> BaseNetParams:
    return BaseNetParams(
        w1=rng.normal(scale=np.sqrt(2.0 / d_in), size=(d_in, width)),
        b1=np.zeros(width),
        w2=rng.normal(scale=np.sqrt(1.0 / width), size=(width, width)),
        b2=np.zeros(width),
        gamma=np.ones(width), beta=np.zeros(width),
        run_mean=np.zeros(width), run_var=np.ones(width))


def init_encoder(sdf: SdfConfig, n_classes: int, pe_bands: int = 8,
                 hidden: int = 256, seed: int = 0) -> EncoderParams:
    """Randomly initialized encoder for the given field layout."""
    if n_classes < 1:
        raise ValueError("need at least one class")
    rng = make_rng(seed, "encoder-init")
    h, d_pe = sdf.hidden, 2 * pe_bands
    return EncoderParams(
        sdf, n_classes, pe_bands, hidden,
        net1=_init_basenet(4 * h, hidden, rng),
        pool2a=_init_basenet(h + 1 + d_pe, hidden, rng),
        pool2b=_init_basenet(h + d_pe, hidden, rng),
        net3=_init_basenet(h + 1 + d_pe, hidden, rng),
        cls_w=rng.normal(scale=np.sqrt(1.0 / (4 * hidden)),
                         size=(4 * hidden, n_classes)),
        cls_b=np.zeros(n_classes))


def _branch_inputs(batch: list, enc: EncoderParams) -> dict:
    """Flattened per-branch input arrays for a batch of tensor tuples."""
    cfg = enc.sdf
    for t in batch:
        t.validate()
        if t.config != cfg:
            raise ValueError("tensor layout does not match the encoder")
    n, h, slabs = len(batch), cfg.hidden, cfg.depth - 2
    codes = _layer_codes(cfg, enc.pe_bands)
    t2 = np.stack([t.theta2 for t in batch])                    # (n, s, h, h+1)
    pe_a = np.broadcast_to(codes[None, :, None, :], (n, slabs, h, enc.d_pe))
    xa = np.concatenate([t2, pe_a], axis=-1).reshape(n * slabs * h, -1)
    t2t = t2.transpose(0, 1, 3, 2)                              # (n, s, h+1, h)
    pe_b = np.broadcast_to(codes[None, :, None, :], (n, slabs, h + 1, enc.d_pe))
    xb = np.concatenate([t2t, pe_b], axis=-1).reshape(n * slabs * (h + 1), -1)
    x3 = np.concatenate(
        [np.stack([t.theta3[0] for t in batch]),
         np.stack([positional_encode(t.level_shift, enc.pe_bands)
                   for t in batch])], axis=1)
    return {"x1": np.stack([t.theta1 for t in batch]).reshape(n, 4 * h),
            "xa": xa, "rows_a": slabs * h,
            "xb": xb, "rows_b": slabs * (h + 1), "x3": x3}


def _basenet_np(block: BaseNetParams, x: np.ndarray) -> np.ndarray:
    """Inference forward pass using the running normalization statistics."""
    if not block.initialized:
        raise ValueError("batch-norm statistics are uninitialized; train first")
    y = np.maximum(x @ block.w1 + block.b1, 0.0) @ block.w2 + block.b2
    yhat = (y - block.run_mean) / np.sqrt(block.run_var + _BN_EPS)
    return yhat * block.gamma + block.beta


def encode_batch(batch: list, enc: EncoderParams) -> np.ndarray:
    """Global features, one row per tensor tuple (inference mode)."""
    xs = _branch_inputs(batch, enc)
    n = len(batch)
    a1 = _basenet_np(enc.net1, xs["x1"])
    a2a = _basenet_np(enc.pool2a, xs["xa"]).reshape(n, xs["rows_a"], -1).mean(axis=1)
    a2b = _basenet_np(enc.pool2b, xs["xb"]).reshape(n, xs["rows_b"], -1).mean(axis=1)
    a3 = _basenet_np(enc.net3, xs["x3"])
    return np.concatenate([a1, a2a, a2b, a3], axis=1)


def encode(tensors: ParamTensors, enc: EncoderParams) -> np.ndarray:
    """Global feature of one tensor tuple (inference mode)."""
    return encode_batch([tensors], enc)[0]


# ---------------------------------------------------------------------------
# training


def _basenet_tensors(block: BaseNetParams, name: str) -> dict:
    out = {}
    for key in ("w1", "b1", "w2", "b2", "gamma", "beta"):
        arr = getattr(block, key)
        out[f"{name}.{key}"] = Tensor(arr.copy(), requires_grad=True,
                                      name=f"{name}.{key}")
    return out


def _encoder_tensors(enc: EncoderParams) -> dict:
    ts = {}
    for name in ("net1", "pool2a", "pool2b", "net3"):
        ts.update(_basenet_tensors(getattr(enc, name), name))
    ts["cls_w"] = Tensor(enc.cls_w.copy(), requires_grad=True, name="cls_w")
    ts["cls_b"] = Tensor(enc.cls_b.copy(), requires_grad=True, name="cls_b")
    return ts


def _write_back(ts: dict, enc: EncoderParams) -> None:
    for name in ("net1", "pool2a", "pool2b", "net3"):
        block = getattr(enc, name)
        for key in ("w1", "b1", "w2", "b2", "gamma", "beta"):
            setattr(block, key, ts[f"{name}.{key}"].data.copy())
    enc.cls_w = ts["cls_w"].data.copy()
    enc.cls_b = ts["cls_b"].data.copy()


def _basenet_t(ts: dict, name: str, x: np.ndarray):
    """Training forward pass; returns the output and the batch statistics."""
    h = Tensor(x) @ ts[f"{name}.w1"] + ts[f"{name}.b1"]
    y = h.relu() @ ts[f"{name}.w2"] + ts[f"{name}.b2"]
    mu = y.mean(axis=0, keepdims=True)
    centered = y - mu
    var = (centered * centered).mean(axis=0, keepdims=True)
    yhat = centered / (var + _BN_EPS).sqrt()
    out = yhat * ts[f"{name}.gamma"] + ts[f"{name}.beta"]
    return out, (mu.data[0], var.data[0])


def _dropout_t(x: Tensor, rate: float, rng) -> Tensor:
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep


def _forward_train(ts: dict, enc: EncoderParams, batch: list, rng,
                   feature_dropout: float):
    """Batch logits on the tape plus per-block normalization statistics."""
    xs = _branch_inputs(batch, enc)
    n = len(batch)
    stats = {}
    a1, stats["net1"] = _basenet_t(ts, "net1", xs["x1"])
    ya, stats["pool2a"] = _basenet_t(ts, "pool2a", xs["xa"])
    a2a = ya.reshape((n, xs["rows_a"], enc.hidden)).mean(axis=1)
    yb, stats["pool2b"] = _basenet_t(ts, "pool2b", xs["xb"])
    a2b = yb.reshape((n, xs["rows_b"], enc.hidden)).mean(axis=1)
    a3, stats["net3"] = _basenet_t(ts, "net3", xs["x3"])
    if feature_dropout:
        a1 = _dropout_t(a1, feature_dropout, rng)
        a2a = _dropout_t(a2a, feature_dropout, rng)
        a2b = _dropout_t(a2b, feature_dropout, rng)
        a3 = _dropout_t(a3, feature_dropout, rng)
    sg = concat([a1, a2a, a2b, a3], axis=1)
    logits = sg @ ts["cls_w"] + ts["cls_b"]
    return logits, stats


def _update_running(enc: EncoderParams, stats: dict) -> None:
    m = _BN_MOMENTUM
    for name, (mu, var) in stats.items():
        block = getattr(enc, name)
        if block.initialized:
            block.run_mean = (1 - m) * block.run_mean + m * mu
            block.run_var = (1 - m) * block.run_var + m * var
        else:
            block.run_mean, block.run_var = mu.copy(), var.copy()
            block.initialized = True


def cross_entropy_t(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy (max-shifted for stability)."""
    shift = logits - logits.data.max(axis=1, keepdims=True)
    lse = shift.exp().sum(axis=1, keepdims=True).log()
    logp = shift - lse
    picked = logp[np.arange(len(labels)), labels]
    return -picked.mean()


@dataclass
class EncoderTrainConfig:
    """Classifier training settings."""

    epochs: int = 60
    batch: int = 16
    lr: float = 1e-3
    val_fraction: float = 0.2
    augmentation: AugmentConfig | None = field(default_factory=AugmentConfig)
    feature_dropout: float = 0.5
    pe_bands: int = 8
    hidden: int = 256
    seed: int = 0


def _stratified_split(labels: np.ndarray, fraction: float, rng):
    """(train indices, validation indices), class-balanced."""
    train, val = [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        k = int(round(fraction * len(idx)))
        if len(idx) > 1:
            k = max(k, 1) if fraction > 0 else 0
        val.extend(idx[:k])
        train.extend(idx[k:])
    return np.array(sorted(train), dtype=int), np.array(sorted(val), dtype=int)


def train_classifier(tensors: list, labels, sdf: SdfConfig,
                     cfg: EncoderTrainConfig = EncoderTrainConfig()):
    """Fit the encoder and classifier by cross-entropy.

    Labels are integers in [0, C). A stratified validation split tracks
    accuracy per epoch; the parameters with the best validation accuracy
    (earliest epoch on ties) are returned along with the training history.
    """
    labels = np.asarray(labels, dtype=int)
    if len(tensors) != len(labels):
        raise ValueError("one label per tensor tuple required")
    if len(tensors) == 0:
        raise ValueError("empty training set")
    if labels.min() < 0:
        raise ValueError("labels must be nonnegative integers")
    n_classes = int(labels.max()) + 1
    enc = init_encoder(sdf, n_classes, cfg.pe_bands, cfg.hidden, cfg.seed)
    ts = _encoder_tensors(enc)
    opt = Adam(ts, lr=cfg.lr)
    rng = make_rng(cfg.seed, "encoder-train")
    train_idx, val_idx = _stratified_split(labels, cfg.val_fraction, rng)
    if len(train_idx) == 0:
        raise ValueError("validation split left no training data")
    val_set = [tensors[i] for i in val_idx]
    val_labels = labels[val_idx]

    best = None
    best_acc = -1.0
    history = {"train_loss": [], "val_acc": [], "best_epoch": 0}
    for epoch in range(cfg.epochs):
        order = train_idx.copy()
        rng.shuffle(order)
        losses = []
        for lo in range(0, len(order), cfg.batch):
            idx = order[lo:lo + cfg.batch]
            if cfg.augmentation is not None:
                batch = [augment(tensors[i], cfg.augmentation, rng) for i in idx]
            else:
                batch = [tensors[i] for i in idx]
            logits, stats = _forward_train(ts, enc, batch, rng,
                                           cfg.feature_dropout)
            loss = cross_entropy_t(logits, labels[idx])
            opt.zero_grad()
            backward(loss)
            opt.step()
            _write_back(ts, enc)
            _update_running(enc, stats)
            losses.append(loss.item())
        history["train_loss"].append(float(np.mean(losses)))
        if len(val_idx):
            acc = float(np.mean(predict(val_set, enc) == val_labels))
            history["val_acc"].append(acc)
            if acc > best_acc:
                best_acc, best = acc, enc.copy()
                history["best_epoch"] = epoch
    if best is None:
        best = enc.copy()
        history["best_epoch"] = cfg.epochs - 1
    return best, history


def predict_proba(tensors: list, enc: EncoderParams) -> np.ndarray:
    """Class probabilities, one row per tensor tuple."""
    logits = encode_batch(tensors, enc) @ enc.cls_w + enc.cls_b
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def predict(tensors: list, enc: EncoderParams) -> np.ndarray:
    """Most likely class index per tensor tuple."""
    return predict_proba(tensors, enc).argmax(axis=1)


# ---------------------------------------------------------------------------
# retrieval


def retrieve(query: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """Gallery indices by ascending Euclidean distance (ties keep input order)."""
    gallery = np.asarray(gallery, dtype=np.float64)
    dists = np.linalg.norm(gallery - np.asarray(query, dtype=np.float64), axis=1)
    return np.argsort(dists, kind="stable")


def retrieval_metrics(features: np.ndarray, labels, ks=(1, 5, 10)) -> dict:
    """mAP and top-k hit rates over a labeled gallery, each item as query.

    The query is excluded from its own ranking. Queries whose label has no
    other member are skipped. Average precision follows the standard form:
    mean of precision-at-k over the relevant ranks.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(features)
    aps, hits = [], {k: [] for k in ks}
    for i in range(n):
        order = retrieve(features[i], features)
        order = order[order != i]
        rel = labels[order] == labels[i]
        if not rel.any():
            continue
        ranks = np.flatnonzero(rel) + 1
        precision = np.arange(1, len(ranks) + 1) / ranks
        aps.append(precision.mean())
        for k in ks:
            hits[k].append(bool(rel[:k].any()))
    if not aps:
        raise ValueError("no query has another member of its class")
    out = {"mAP": float(np.mean(aps))}
    for k in ks:
        out[f"top{k}"] = float(np.mean(hits[k]))
    return out


def write_embeddings_csv(path, ids, labels, features) -> None:
    """One row per shape: id, label, then the feature entries."""
    features = np.asarray(features)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label"]
                        + [f"f{j:04d}" for j in range(features.shape[1])])
        for sid, lab, row in zip(ids, labels, features):
            writer.writerow([sid, lab] + [f"{v:.8e}" for v in row])


# ---------------------------------------------------------------------------
# estimator wrapper


class TensorFeatureClassifier(BaseEstimator):
    """Estimator wrapper around :func:`train_classifier`.

    ``X`` is a list of ParamTensors; after ``fit`` the learned network is in
    ``encoder_`` and original labels in ``classes_``.
    """

    def __init__(self, epochs: int = 60, batch: int = 16, lr: float = 1e-3,
                 val_fraction: float = 0.2, augmentation: bool = True,
                 sigma_major: float = 0.2, sigma_minor: float = 0.05,
                 dropout: float = 0.5, sigma_c: float = 0.1,
                 feature_dropout: float = 0.5, pe_bands: int = 8,
                 hidden: int = 256, seed: int = 0):
        self.epochs = epochs
        self.batch = batch
        self.lr = lr
        self.val_fraction = val_fraction
        self.augmentation = augmentation
        self.sigma_major = sigma_major
        self.sigma_minor = sigma_minor
        self.dropout = dropout
        self.sigma_c = sigma_c
        self.feature_dropout = feature_dropout
        self.pe_bands = pe_bands
        self.hidden = hidden
        self.seed = seed

    def _config(self) -> EncoderTrainConfig:
        aug = AugmentConfig(self.sigma_major, self.sigma_minor, self.dropout,
                            self.sigma_c) if self.augmentation else None
        return EncoderTrainConfig(
            epochs=self.epochs, batch=self.batch, lr=self.lr,
            val_fraction=self.val_fraction, augmentation=aug,
            feature_dropout=self.feature_dropout, pe_bands=self.pe_bands,
            hidden=self.hidden, seed=self.seed)

    def fit(self, X, y):
        if len(X) == 0:
            raise ValueError("empty training set")
        self.classes_, encoded = np.unique(y, return_inverse=True)
        self.encoder_, self.history_ = train_classifier(
            list(X), encoded, X[0].config, self._config())
        return self

    def _check_fitted(self):
        if not hasattr(self, "encoder_"):
            raise NotFittedError("TensorFeatureClassifier is not fitted yet")

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        return self.classes_[predict(list(X), self.encoder_)]

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        return predict_proba(list(X), self.encoder_)

    def transform(self, X) -> np.ndarray:
        """Global features, one row per input."""
        self._check_fitted()
        return encode_batch(list(X), self.encoder_)

    def score(self, X, y) -> float:
        return float(np.mean(self.predict(X) == np.asarray(y)))
