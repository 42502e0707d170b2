"""Heterogeneous sequence-to-survival model.

A bidirectional GRU encodes the 28-day window; a learned group signal
(site/plant/part embeddings through a two-layer MLP) is added to every
encoder state and concatenated into every decoder step input; an additive
attention decoder emits one raw score phi_k per grid day, mapped through a
logistic link to the discrete hazard curve. Trained with the right-censored
negative log-likelihood.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import survival
from .errors import SchemaError, ShapeError, TrainingAbortError, ValidationError
from .nn import layers
from .nn import tensor as T
from .nn.optim import ParameterStore, adam_step
from .nn.tensor import Tensor, backward

CHECKPOINT_VERSION = 1
UNKNOWN_ID = 0

__all__ = [
    "ModelConfig", "TrainSettings", "ModelCheckpoint", "GroupIds",
    "init_params", "group_effect", "encode", "decode", "forward_phi",
    "predict_hazard", "predict_survival", "loss", "train",
    "ablate_homogeneous", "save_checkpoint", "load_checkpoint",
]


@dataclass(frozen=True)
class GroupIds:
    site_id: int
    plant_id: int
    part_id: int

    def as_array(self):
        return np.array([self.site_id, self.plant_id, self.part_id], dtype=np.intp)


@dataclass(frozen=True)
class ModelConfig:
    vocab_sizes: tuple                 # (n_sites, n_plants, n_parts), unknown id 0 included
    input_dim: int = 21
    window_len: int = 28
    encoder_hidden: int = 32
    embed_dim: int = 8
    group_mlp_hidden: int = 32
    horizon: int = 366
    heterogeneous: bool = True

    def __post_init__(self):
        for name in ("input_dim", "window_len", "encoder_hidden", "embed_dim",
                     "group_mlp_hidden", "horizon"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        if len(self.vocab_sizes) != 3 or any(v < 1 for v in self.vocab_sizes):
            raise ValidationError(f"bad vocab sizes {self.vocab_sizes}")

    @property
    def state_dim(self):
        # bidirectional: forward + backward halves
        return 2 * self.encoder_hidden

    def to_dict(self):
        return {
            "vocab_sizes": list(self.vocab_sizes),
            "input_dim": self.input_dim,
            "window_len": self.window_len,
            "encoder_hidden": self.encoder_hidden,
            "embed_dim": self.embed_dim,
            "group_mlp_hidden": self.group_mlp_hidden,
            "horizon": self.horizon,
            "heterogeneous": self.heterogeneous,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["vocab_sizes"] = tuple(d["vocab_sizes"])
        return cls(**d)


@dataclass(frozen=True)
class TrainSettings:
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    global_clip: float = 5.0
    max_epochs: int = 100
    patience: int = 5
    val_fraction: float = 0.1
    id_dropout: float = 0.01
    seed: int = 0


def _add_gru(store, prefix, in_dim, d):
    for gate in ("z", "r", "h"):
        store.add_matrix(f"{prefix}.W{gate}", (d, in_dim))
        store.add_matrix(f"{prefix}.U{gate}", (d, d))
        store.add_bias(f"{prefix}.b{gate}", (d,))


def _gru_params(store, prefix):
    return {f"{kind}{gate}": store[f"{prefix}.{kind}{gate}"]
            for gate in ("z", "r", "h") for kind in ("W", "U", "b")}


def init_params(config, seed):
    """Create all parameters in a documented, fixed draw order."""
    store = ParameterStore(seed=seed)
    d2 = config.state_dim
    if config.heterogeneous:
        for name, vocab in zip(("site", "plant", "part"), config.vocab_sizes):
            store.add_embedding(f"emb.{name}", (vocab, config.embed_dim))
        store.add_matrix("group.W1", (config.group_mlp_hidden, 3 * config.embed_dim))
        store.add_bias("group.b1", (config.group_mlp_hidden,))
        store.add_matrix("group.W2", (d2, config.group_mlp_hidden))
        store.add_bias("group.b2", (d2,))
    _add_gru(store, "enc.fwd", config.input_dim, config.encoder_hidden)
    _add_gru(store, "enc.bwd", config.input_dim, config.encoder_hidden)
    store.add_matrix("dec.W0", (d2, d2))
    store.add_bias("dec.b0", (d2,))
    store.add_matrix("attn.Wa", (config.encoder_hidden, d2))
    store.add_matrix("attn.Ua", (config.encoder_hidden, d2))
    store.add_matrix("attn.v", (config.encoder_hidden,))
    _add_gru(store, "dec.gru", 2 * d2, d2)
    store.add_matrix("out.w", (d2,))
    store.add_bias("out.b", ())
    return store


def _ids_array(ids):
    if isinstance(ids, GroupIds):
        return ids.as_array()[None, :], True
    arr = np.asarray(ids, dtype=np.intp)
    if arr.ndim == 1:
        return arr[None, :], True
    return arr, False


def group_effect(ids, store, config):
    """Embeddings -> concat -> dense -> tanh -> dense; output dim 2d."""
    arr, single = _ids_array(ids)
    if not config.heterogeneous:
        shape = (config.state_dim,) if single else (arr.shape[0], config.state_dim)
        return Tensor(np.zeros(shape))
    parts = [layers.embedding_lookup(store[f"emb.{name}"], arr[:, i])
             for i, name in enumerate(("site", "plant", "part"))]
    e = T.concat(parts, axis=-1)
    hidden = T.tanh(layers.dense(e, store["group.W1"], store["group.b1"]))
    g = layers.dense(hidden, store["group.W2"], store["group.b2"])
    if single:
        return T.select_time(g, 0)
    return g


def _encode_batch(windows, g, store):
    """Bidirectional states with the group signal added to every step."""
    fwd, bwd = layers.bigru_states(windows, _gru_params(store, "enc.fwd"),
                                   _gru_params(store, "enc.bwd"))
    steps = [T.add(T.concat([f, b], axis=-1), g) for f, b in zip(fwd, bwd)]
    axis = 0 if steps[0].ndim == 1 else 1
    states = T.stack(steps, axis=axis)
    last = T.concat([fwd[-1], bwd[-1]], axis=-1)
    return states, last


def encode(window, g, store):
    """Encoder states (L, 2d) or (B, L, 2d) with group signal g added."""
    states, _ = _encode_batch(window, g, store)
    return states


def decode(states, last_state, g, store, horizon):
    """Emit phi_1..phi_H; decoder state starts from the final encoder states."""
    attn = {"Wa": store["attn.Wa"], "Ua": store["attn.Ua"], "v": store["attn.v"]}
    dec_params = _gru_params(store, "dec.gru")
    s = T.tanh(layers.dense(last_state, store["dec.W0"], store["dec.b0"]))
    key_proj = T.matmul(states, T.transpose(store["attn.Ua"]))
    phis = []
    for _ in range(horizon):
        context, _w = layers.attention_scores(s, key_proj, states, attn)
        step_in = T.concat([context, g], axis=-1)
        s = layers.gru_cell(step_in, s, dec_params)
        phi = T.add_scalar(T.matmul(s, store["out.w"]), store["out.b"])
        phis.append(phi)
    axis = 0 if phis[0].ndim == 0 else 1
    if phis[0].ndim == 0:
        return T.stack(phis, axis=0)
    return T.stack(phis, axis=1)


def forward_phi(windows, ids, store, config):
    """Raw decoder outputs phi, shape (H,) for one sample or (B, H)."""
    windows = np.asarray(windows, dtype=np.float64)
    single = windows.ndim == 2
    if single:
        windows = windows[None, ...]
    if windows.shape[1:] != (config.window_len, config.input_dim):
        raise ShapeError(
            f"window shape {windows.shape[1:]} vs expected "
            f"({config.window_len}, {config.input_dim})")
    if windows.min() < -0.001 or windows.max() > 1.001:
        raise ValidationError(
            "window values outside [0, 1]; apply normalization first")
    arr, _ = _ids_array(ids)
    if arr.shape[0] != windows.shape[0]:
        raise ShapeError(f"{arr.shape[0]} id rows vs {windows.shape[0]} windows")
    for col, vocab in enumerate(config.vocab_sizes):
        if config.heterogeneous and (arr[:, col].min() < 0 or arr[:, col].max() >= vocab):
            raise ValidationError(f"group id out of vocabulary in column {col}")
    phi = _phi_batch(windows, arr, store, config)
    return T.select_time(phi, 0) if single else phi


def _phi_batch(windows, ids_arr, store, config):
    g = group_effect(ids_arr, store, config)
    states, last = _encode_batch(windows, g, store)
    return decode(states, last, g, store, config.horizon)


def predict_hazard(window, ids, checkpoint):
    """Clamped hazard curve h(tau_k | window, ids) for a normalized window."""
    config = checkpoint.config
    w = np.asarray(window, dtype=np.float64)
    if w.min() < -0.001 or w.max() > 1.001:
        raise ValidationError(
            "window values outside [0, 1]; apply the checkpoint's normalization first")
    store = checkpoint.to_store()
    single = w.ndim == 2
    arr, _ = _ids_array(ids)
    phi = _phi_batch(w[None, ...] if single else w, arr, store, config)
    h = survival.clamp_hazard(1.0 / (1.0 + np.exp(-phi.data)))
    return h[0] if single else h


def predict_survival(window, ids, checkpoint):
    h = predict_hazard(window, ids, checkpoint)
    if h.ndim == 1:
        return survival.survival_from_hazard(h)
    return np.cumprod(1.0 - h, axis=1)


def _nll_masks(outcomes, horizon):
    n = len(outcomes)
    event = np.zeros((n, horizon))
    tail = np.zeros((n, horizon))
    for i, o in enumerate(outcomes):
        if o.t > horizon:
            raise ValidationError(f"observed time {o.t} beyond horizon {horizon}")
        k = o.t - 1
        if o.y:
            event[i, k] = 1.0
        else:
            tail[i, k] = 1.0
        tail[i, :k] = 1.0
    return event, tail


def loss_from_phi(phi, outcomes):
    """Mean per-sample NLL, differentiable in phi (shape (B, H))."""
    event, tail = _nll_masks(outcomes, phi.data.shape[1])
    h = T.clip(T.sigmoid(phi), survival.HAZARD_FLOOR, 1.0 - survival.HAZARD_FLOOR)
    log_h = T.log(h)
    log_1mh = T.log(T.add_scalar(T.neg(h), Tensor(1.0)))
    terms = T.add(T.mul(log_h, Tensor(event)), T.mul(log_1mh, Tensor(tail)))
    return T.neg(T.tmean(T.tsum(terms, axis=1)))


def loss(windows, ids, outcomes, store, config):
    """Batch mean of the right-censored NLL of the model's hazards."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or windows.shape[0] == 0:
        raise ValidationError("loss requires a non-empty batch of windows")
    arr, _ = _ids_array(ids)
    phi = _phi_batch(windows, arr, store, config)
    return loss_from_phi(phi, outcomes)


@dataclass
class ModelCheckpoint:
    config: ModelConfig
    params: dict                        # name -> ndarray
    normalization: dict                 # feature mins/maxes from the pipeline
    metadata: dict = field(default_factory=dict)
    format_version: int = CHECKPOINT_VERSION

    def to_store(self):
        store = init_params(self.config, seed=0)
        store.load_state_dict(self.params)
        return store


def save_checkpoint(checkpoint, path):
    doc = {
        "format_version": checkpoint.format_version,
        "config": checkpoint.config.to_dict(),
        "normalization": checkpoint.normalization,
        "metadata": checkpoint.metadata,
        "params": {
            name: {"shape": list(arr.shape), "values": arr.reshape(-1).tolist()}
            for name, arr in checkpoint.params.items()
        },
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(path):
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaError(f"malformed checkpoint file: {e}") from e
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise SchemaError(
            f"unsupported checkpoint format_version {version!r}; "
            f"this build reads version {CHECKPOINT_VERSION}")
    params = {}
    for name, entry in doc["params"].items():
        shape = tuple(entry["shape"])
        values = np.asarray(entry["values"], dtype=np.float64)
        expected = int(np.prod(shape)) if shape else 1
        if values.size != expected:
            raise SchemaError(
                f"parameter {name!r}: {values.size} values for shape {shape}")
        params[name] = values.reshape(shape)
    return ModelCheckpoint(
        config=ModelConfig.from_dict(doc["config"]),
        params=params,
        normalization=doc["normalization"],
        metadata=doc.get("metadata", {}),
        format_version=version,
    )


def ablate_homogeneous(config):
    """Disable the group-effect pathway, recovering a plain seq2surv model."""
    return replace(config, heterogeneous=False)


def _mean_nll(windows, ids_arr, outcomes, store, config, batch_size=256):
    total = 0.0
    n = len(outcomes)
    for start in range(0, n, batch_size):
        sl = slice(start, min(start + batch_size, n))
        value = loss(windows[sl], ids_arr[sl], outcomes[sl], store, config)
        total += float(value.data) * (sl.stop - sl.start)
    return total / n


def train(dataset, config, settings=TrainSettings(), log=None):
    """Mini-batch Adam training with early stopping on validation NLL.

    dataset: object with .train and .validation lists of samples exposing
    .window (28 x 21 normalized), .ids (3 ints), .outcome (survival
    ObservedOutcome); the pipeline's Dataset satisfies this. Returns the
    best-validation ModelCheckpoint. Deterministic given (dataset bytes,
    config, settings).
    """
    train_samples = list(dataset.train)
    val_samples = list(dataset.validation)
    if not train_samples:
        raise ValidationError("empty training set")
    rng = np.random.default_rng(settings.seed + 1)
    store = init_params(config, seed=settings.seed)

    def arrays(samples):
        w = np.stack([np.asarray(s.window, dtype=np.float64) for s in samples])
        i = np.stack([np.asarray(s.ids, dtype=np.intp) for s in samples])
        o = [s.outcome for s in samples]
        return w, i, o

    tw, ti, to = arrays(train_samples)
    if val_samples:
        vw, vi, vo = arrays(val_samples)

    best_val = np.inf
    best_state = store.state_dict()
    best_epoch = 0
    epochs_since_best = 0
    history = []
    n = len(train_samples)
    for epoch in range(1, settings.max_epochs + 1):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for bstart in range(0, n, settings.batch_size):
            idx = perm[bstart:bstart + settings.batch_size]
            ids_batch = ti[idx].copy()
            if config.heterogeneous and settings.id_dropout > 0.0:
                drop = rng.random(ids_batch.shape) < settings.id_dropout
                ids_batch[drop] = UNKNOWN_ID
            store.zero_grad()
            value = loss(tw[idx], ids_batch, [to[j] for j in idx], store, config)
            if not np.isfinite(value.data):
                raise TrainingAbortError(
                    f"non-finite loss at epoch {epoch}, batch {bstart // settings.batch_size}")
            backward(value)
            adam_step(store, lr=settings.learning_rate, beta1=settings.beta1,
                      beta2=settings.beta2, eps=settings.eps,
                      global_clip=settings.global_clip)
            epoch_loss += float(value.data) * len(idx)
        train_nll = epoch_loss / n
        val_nll = _mean_nll(vw, vi, vo, store, config) if val_samples else train_nll
        history.append({"epoch": epoch, "train_nll": train_nll, "val_nll": val_nll})
        if log is not None:
            log(f"epoch {epoch:3d}  train_nll {train_nll:.6f}  val_nll {val_nll:.6f}")
        if val_nll < best_val - 1e-12:
            best_val = val_nll
            best_state = store.state_dict()
            best_epoch = epoch
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= settings.patience:
                break
    return ModelCheckpoint(
        config=config,
        params=best_state,
        normalization=getattr(dataset, "normalization_dict", lambda: {})(),
        metadata={
            "seed": settings.seed,
            "epochs_run": len(history),
            "best_epoch": best_epoch,
            "best_val_nll": best_val if val_samples else history[-1]["train_nll"],
            "history": history,
        },
    )
