"""One-vs-rest feed-forward classifier over fused text + demographic embeddings.

Architecture: a text embedding (TF-IDF vector or an externally computed
dense vector) is summed with learned age-group and sex embedding rows of
the same dimension, passed through inverted dropout, a dense ReLU layer,
dropout again, and a per-label sigmoid output layer.  Gradients, Adam, the
learning-rate schedule, and early stopping are implemented here directly.

All math is plain numpy.  Parameters and activations are float32 during
training; the functions are dtype-preserving so gradient checking can run
the same code in float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dataset import Encounter, LabelVocabulary, N_AGE_GROUPS, SEX_INDEX
from .metrics import micro_pr_auc
from .text_pipeline import TfidfModel, transform_tfidf

PROB_EPS = 1e-7

_MODEL_MAGIC = b"CCMDL1"
_EMB_MAGIC = b"CCEMB1"

TENSOR_NAMES = ("age_table", "sex_table", "W1", "b1", "W2", "b2")


@dataclass
class ClassifierParams:
    D: int
    H: int
    C: int
    age_table: np.ndarray  # (11, D)
    sex_table: np.ndarray  # (2, D)
    W1: np.ndarray         # (H, D)
    b1: np.ndarray         # (H,)
    W2: np.ndarray         # (C, H)
    b2: np.ndarray         # (C,)
    dropout_p: float = 0.0

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in TENSOR_NAMES}

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(
            self.D, self.H, self.C,
            self.age_table.copy(), self.sex_table.copy(),
            self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy(),
            self.dropout_p,
        )

    def astype(self, dtype) -> "ClassifierParams":
        return ClassifierParams(
            self.D, self.H, self.C,
            self.age_table.astype(dtype), self.sex_table.astype(dtype),
            self.W1.astype(dtype), self.b1.astype(dtype),
            self.W2.astype(dtype), self.b2.astype(dtype),
            self.dropout_p,
        )


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.001
    batch_size: int = 1024
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_patience: int = 10
    lr_factor: float = 0.8
    early_stop_patience: int = 20
    max_epochs: int = 100
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.lr_factor < 1.0:
            raise ValueError("lr_factor must be in (0, 1)")
        if self.lr_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patience values must be >= 1")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def init_like(cls, params: ClassifierParams) -> "AdamState":
        tensors = params.tensors()
        return cls(
            m={k: np.zeros_like(t) for k, t in tensors.items()},
            v={k: np.zeros_like(t) for k, t in tensors.items()},
        )


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_pr_auc: float
    lr: float


@dataclass
class TrainingLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1

    def to_json(self) -> str:
        import json

        return json.dumps(
            {
                "best_epoch": self.best_epoch,
                "records": [
                    [r.epoch, r.train_loss, r.val_pr_auc, r.lr] for r in self.records
                ],
            }
        )


@dataclass
class EmbeddingFile:
    """Keyed store of fixed-dimension dense float32 vectors for exact texts."""

    dim: int
    entries: dict[str, np.ndarray]


# ---------------------------------------------------------------------------
# initialization and forward/backward


def init_params(D: int, H: int, C: int, rng_seed: int, dropout_p: float = 0.0,
                dtype=np.float32) -> ClassifierParams:
    """Glorot-uniform weights, zero biases, zero demographic tables.

    Zero tables make the fusion an identity on the text embedding at the
    start of training.
    """
    rng = np.random.default_rng(rng_seed)
    lim1 = np.sqrt(6.0 / (D + H))
    lim2 = np.sqrt(6.0 / (H + C))
    return ClassifierParams(
        D=D, H=H, C=C,
        age_table=np.zeros((N_AGE_GROUPS, D), dtype=dtype),
        sex_table=np.zeros((2, D), dtype=dtype),
        W1=rng.uniform(-lim1, lim1, size=(H, D)).astype(dtype),
        b1=np.zeros(H, dtype=dtype),
        W2=rng.uniform(-lim2, lim2, size=(C, H)).astype(dtype),
        b2=np.zeros(C, dtype=dtype),
        dropout_p=float(dropout_p),
    )


def fuse(text_embedding: np.ndarray, age_group: int, sex: str | int,
         params: ClassifierParams) -> np.ndarray:
    """text embedding + age row + sex row (all length D)."""
    if text_embedding.shape[-1] != params.D:
        raise ValueError(
            f"dimension mismatch: embedding has {text_embedding.shape[-1]}, model wants {params.D}"
        )
    sex_idx = SEX_INDEX[sex] if isinstance(sex, str) else sex
    return text_embedding + params.age_table[age_group] + params.sex_table[sex_idx]


def fuse_batch(text_X: np.ndarray, age_idx, sex_idx,
               params: ClassifierParams) -> np.ndarray:
    """Batched fusion; age_idx or sex_idx may be None for a zero contribution."""
    if text_X.shape[-1] != params.D:
        raise ValueError(
            f"dimension mismatch: embeddings have {text_X.shape[-1]}, model wants {params.D}"
        )
    fused = text_X
    if age_idx is not None:
        fused = fused + params.age_table[np.asarray(age_idx)]
    if sex_idx is not None:
        fused = fused + params.sex_table[np.asarray(sex_idx)]
    return np.array(fused, copy=True) if fused is text_X else fused


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite values in tensor {name!r}")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class ForwardCache:
    x_in: np.ndarray          # fused embedding after input dropout (B, D)
    z1: np.ndarray            # hidden pre-activation (B, H)
    h: np.ndarray             # dropped ReLU output (B, H)
    probs: np.ndarray         # sigmoid outputs (B, C)
    unclamped: np.ndarray     # bool mask where the probability clamp is inactive
    masks: tuple[np.ndarray, np.ndarray] | None
    age_idx: np.ndarray | None = None
    sex_idx: np.ndarray | None = None


def _forward_cached(params: ClassifierParams, fused: np.ndarray,
                    masks=None) -> ForwardCache:
    p = params.dropout_p
    if masks is not None:
        mask_in, mask_h = masks
        x_in = fused * mask_in / (1.0 - p)
    else:
        x_in = fused
    z1 = x_in @ params.W1.T + params.b1
    _check_finite("z1", z1)
    a1 = np.maximum(z1, 0.0)
    if masks is not None:
        h = a1 * mask_h / (1.0 - p)
    else:
        h = a1
    logits = h @ params.W2.T + params.b2
    _check_finite("logits", logits)
    raw = _sigmoid(logits)
    # Saturated sigmoids are clamped so outputs stay inside (0, 1); the
    # clamped entries are flat in the loss and get zero gradient.
    unclamped = (raw >= PROB_EPS) & (raw <= 1.0 - PROB_EPS)
    probs = np.clip(raw, PROB_EPS, 1.0 - PROB_EPS)
    return ForwardCache(x_in, z1, h, probs, unclamped, masks)


def forward(params: ClassifierParams, fused: np.ndarray, masks=None) -> np.ndarray:
    """Per-label probabilities for fused embeddings.

    ``masks`` is a pair of binary arrays (input mask, hidden mask) for
    inverted-dropout training; omit it for inference.
    """
    single = fused.ndim == 1
    batch = fused[None, :] if single else fused
    probs = _forward_cached(params, batch, masks).probs
    return probs[0] if single else probs


def bce_loss(probs: np.ndarray, targets: np.ndarray) -> float:
    """Binary cross-entropy, mean over labels then mean over examples."""
    p = np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(targets, dtype=p.dtype)
    losses = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(losses.mean())


def training_forward(params: ClassifierParams, text_X: np.ndarray,
                     age_idx, sex_idx, masks=None) -> ForwardCache:
    """Fusion plus forward pass, caching what backward needs."""
    fused = fuse_batch(text_X, age_idx, sex_idx, params)
    cache = _forward_cached(params, fused, masks)
    cache.age_idx = None if age_idx is None else np.asarray(age_idx)
    cache.sex_idx = None if sex_idx is None else np.asarray(sex_idx)
    return cache


def backward(params: ClassifierParams, cache: ForwardCache,
             targets: np.ndarray) -> dict[str, np.ndarray]:
    """Analytic gradients of the batch BCE loss for every tensor.

    Demographic table rows that no batch item touches get exactly zero
    gradient.  Entries where the probability clamp is active contribute
    nothing (the clamped loss is flat there).
    """
    B, C = cache.probs.shape
    y = np.asarray(targets, dtype=cache.probs.dtype)
    if y.shape != cache.probs.shape:
        raise ValueError(f"shape mismatch: targets {y.shape} vs probs {cache.probs.shape}")
    g_logits = (cache.probs - y) / (B * C)
    g_logits = np.where(cache.unclamped, g_logits, 0.0)

    grads = {
        "W2": g_logits.T @ cache.h,
        "b2": g_logits.sum(axis=0),
    }
    g_h = g_logits @ params.W2
    p = params.dropout_p
    if cache.masks is not None:
        mask_in, mask_h = cache.masks
        g_a1 = g_h * mask_h / (1.0 - p)
    else:
        g_a1 = g_h
    g_z1 = g_a1 * (cache.z1 > 0)
    grads["W1"] = g_z1.T @ cache.x_in
    grads["b1"] = g_z1.sum(axis=0)
    g_x_in = g_z1 @ params.W1
    if cache.masks is not None:
        g_fused = g_x_in * cache.masks[0] / (1.0 - p)
    else:
        g_fused = g_x_in

    g_age = np.zeros_like(params.age_table)
    g_sex = np.zeros_like(params.sex_table)
    if cache.age_idx is not None:
        np.add.at(g_age, cache.age_idx, g_fused)
    if cache.sex_idx is not None:
        np.add.at(g_sex, cache.sex_idx, g_fused)
    grads["age_table"] = g_age
    grads["sex_table"] = g_sex
    return grads


def adam_step(params: ClassifierParams, grads: Mapping[str, np.ndarray],
              state: AdamState, lr: float, config: TrainConfig) -> None:
    """Bias-corrected Adam update, applied to every tensor in place."""
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for name, tensor in params.tensors().items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        m_hat = m / corr1
        v_hat = v / corr2
        tensor -= lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)


# ---------------------------------------------------------------------------
# embedding resolution and target assembly


def embed_texts(source, texts: Sequence[str], dtype=np.float32) -> np.ndarray:
    """Resolve texts to a dense (N, D) matrix from either embedding source."""
    if isinstance(source, TfidfModel):
        out = np.zeros((len(texts), source.dim), dtype=dtype)
        for i, text in enumerate(texts):
            vec = transform_tfidf(source, text)
            out[i, vec.indices] = vec.values
        return out
    if isinstance(source, EmbeddingFile):
        missing = [t for t in texts if t not in source.entries]
        if missing:
            shown = ", ".join(repr(t) for t in missing[:10])
            more = "" if len(missing) <= 10 else f" (+{len(missing) - 10} more)"
            raise KeyError(f"texts missing from embedding file: {shown}{more}")
        return np.stack([source.entries[t] for t in texts]).astype(dtype)
    raise TypeError(f"unsupported embedding source: {type(source).__name__}")


def source_dim(source) -> int:
    if isinstance(source, TfidfModel):
        return source.dim
    if isinstance(source, EmbeddingFile):
        return source.dim
    raise TypeError(f"unsupported embedding source: {type(source).__name__}")


def targets_matrix(encounters: Sequence[Encounter], vocab: LabelVocabulary) -> np.ndarray:
    out = np.zeros((len(encounters), len(vocab)), dtype=np.float32)
    for i, enc in enumerate(encounters):
        for label in enc.labels:
            if label in vocab:
                out[i, vocab.index(label)] = 1.0
    return out


def predict_proba(params: ClassifierParams, source, encounters: Sequence[Encounter],
                  batch_size: int = 4096) -> np.ndarray:
    """Inference-mode probabilities for a list of encounters."""
    out = np.empty((len(encounters), params.C), dtype=np.float32)
    for start in range(0, len(encounters), batch_size):
        chunk = encounters[start : start + batch_size]
        X = embed_texts(source, [e.text for e in chunk])
        age = np.fromiter((e.age_group for e in chunk), dtype=np.int64, count=len(chunk))
        sex = np.fromiter((SEX_INDEX[e.sex] for e in chunk), dtype=np.int64, count=len(chunk))
        out[start : start + len(chunk)] = forward(params, fuse_batch(X, age, sex, params))
    return out


# ---------------------------------------------------------------------------
# training loop


def train(train_part: Sequence[Encounter], validation_part: Sequence[Encounter],
          source, vocab: LabelVocabulary, config: TrainConfig,
          hidden_size: int = 500, dropout_p: float = 0.0,
          ) -> tuple[ClassifierParams, TrainingLog]:
    """Mini-batch training with validation-PR-AUC-driven scheduling.

    The learning rate shrinks by ``lr_factor`` after ``lr_patience`` epochs
    without improvement; training stops after ``early_stop_patience`` epochs
    without improvement or at ``max_epochs``.  Improvement means a strictly
    higher validation micro PR-AUC.  Returns the parameters of the best
    validation epoch.
    """
    train_part = [e for e in train_part if any(l in vocab for l in e.labels)]
    validation_part = [e for e in validation_part if any(l in vocab for l in e.labels)]
    if not train_part:
        raise ValueError("no training encounters with in-vocabulary labels")
    if not validation_part:
        raise ValueError("no validation encounters with in-vocabulary labels")

    D = source_dim(source)
    C = len(vocab)
    params = init_params(D, hidden_size, C, config.rng_seed, dropout_p)
    state = AdamState.init_like(params)
    rng = np.random.default_rng(config.rng_seed)

    texts = [e.text for e in train_part]
    ages = np.array([e.age_group for e in train_part], dtype=np.int64)
    sexes = np.array([SEX_INDEX[e.sex] for e in train_part], dtype=np.int64)
    Y = targets_matrix(train_part, vocab)

    # Validation embeddings are reused every epoch; fine at this scale.
    val_X = embed_texts(source, [e.text for e in validation_part])
    val_age = np.array([e.age_group for e in validation_part], dtype=np.int64)
    val_sex = np.array([SEX_INDEX[e.sex] for e in validation_part], dtype=np.int64)
    val_Y = targets_matrix(validation_part, vocab)

    lr = config.lr0
    best_pr = -np.inf
    best_params = params.copy()
    best_epoch = -1
    epochs_since_improve = 0
    lr_epochs_since_improve = 0
    log = TrainingLog()

    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train_part))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            X = embed_texts(source, [texts[i] for i in idx])
            masks = None
            if dropout_p > 0.0:
                masks = (
                    (rng.random(X.shape) >= dropout_p).astype(X.dtype),
                    (rng.random((len(idx), hidden_size)) >= dropout_p).astype(X.dtype),
                )
            cache = training_forward(params, X, ages[idx], sexes[idx], masks)
            epoch_loss += bce_loss(cache.probs, Y[idx])
            grads = backward(params, cache, Y[idx])
            adam_step(params, grads, state, lr, config)
            n_batches += 1

        val_probs = forward(params, fuse_batch(val_X, val_age, val_sex, params))
        val_pr = micro_pr_auc(val_probs, val_Y)
        log.records.append(EpochRecord(epoch, epoch_loss / n_batches, val_pr, lr))

        if val_pr > best_pr:
            best_pr = val_pr
            best_params = params.copy()
            best_epoch = epoch
            epochs_since_improve = 0
            lr_epochs_since_improve = 0
        else:
            epochs_since_improve += 1
            lr_epochs_since_improve += 1
            if epochs_since_improve >= config.early_stop_patience:
                break
            if lr_epochs_since_improve >= config.lr_patience:
                lr *= config.lr_factor
                lr_epochs_since_improve = 0

    log.best_epoch = best_epoch
    return best_params, log


# ---------------------------------------------------------------------------
# model file (magic "CCMDL1"): metadata + float32 tensors, little-endian


def _write_str(fh, s: str) -> None:
    raw = s.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def _read_str(fh) -> str:
    (length,) = struct.unpack("<I", _read_exact(fh, 4))
    return _read_exact(fh, length).decode("utf-8")


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError("truncated file")
    return data


def save_model(params: ClassifierParams, labels: Sequence[str],
               embedding_tag: str, path) -> None:
    if embedding_tag not in ("tfidf", "dense"):
        raise ValueError(f"embedding_tag must be 'tfidf' or 'dense', got {embedding_tag!r}")
    if len(labels) != params.C:
        raise ValueError(f"label count {len(labels)} does not match C={params.C}")
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        _write_str(fh, embedding_tag)
        fh.write(struct.pack("<IIIf", params.D, params.H, params.C, params.dropout_p))
        for label in labels:
            _write_str(fh, label)
        for name in TENSOR_NAMES:
            tensor = np.ascontiguousarray(getattr(params, name), dtype="<f4")
            fh.write(tensor.tobytes())


@dataclass
class LoadedModel:
    params: ClassifierParams
    labels: tuple[str, ...]
    embedding_tag: str


def load_model(path) -> LoadedModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MODEL_MAGIC))
        if magic != _MODEL_MAGIC:
            raise ValueError(f"{path}: not a model file (bad magic {magic!r})")
        tag = _read_str(fh)
        if tag not in ("tfidf", "dense"):
            raise ValueError(f"{path}: unknown embedding tag {tag!r}")
        D, H, C, dropout_p = struct.unpack("<IIIf", _read_exact(fh, 16))
        labels = tuple(_read_str(fh) for _ in range(C))
        shapes = {
            "age_table": (N_AGE_GROUPS, D), "sex_table": (2, D),
            "W1": (H, D), "b1": (H,), "W2": (C, H), "b2": (C,),
        }
        tensors = {}
        for name in TENSOR_NAMES:
            shape = shapes[name]
            count = int(np.prod(shape))
            raw = _read_exact(fh, 4 * count)
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after tensors")
    params = ClassifierParams(D=D, H=H, C=C, dropout_p=float(dropout_p), **tensors)
    return LoadedModel(params, labels, tag)


# ---------------------------------------------------------------------------
# embedding file (magic "CCEMB1"): keyed dense float32 vectors


def write_embedding_file(path, dim: int, entries: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(_EMB_MAGIC)
        fh.write(struct.pack("<QI", len(entries), dim))
        for key, vec in entries.items():
            arr = np.ascontiguousarray(vec, dtype="<f4")
            if arr.shape != (dim,):
                raise ValueError(f"vector for {key!r} has shape {arr.shape}, want ({dim},)")
            raw = key.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(arr.tobytes())


def read_embedding_file(path) -> EmbeddingFile:
    with open(path, "rb") as fh:
        magic = fh.read(len(_EMB_MAGIC))
        if magic != _EMB_MAGIC:
            raise ValueError(f"{path}: not an embedding file (bad magic {magic!r})")
        count, dim = struct.unpack("<QI", _read_exact(fh, 12))
        entries: dict[str, np.ndarray] = {}
        for _ in range(count):
            key = _read_str(fh)
            if key in entries:
                raise ValueError(f"{path}: duplicate key {key!r}")
            raw = _read_exact(fh, 4 * dim)
            entries[key] = np.frombuffer(raw, dtype="<f4").copy()
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after records")
    return EmbeddingFile(dim=dim, entries=entries)
