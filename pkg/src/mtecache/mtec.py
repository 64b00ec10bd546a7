"""Dual-path Transformer popularity predictor.

Path one (``tc``) classifies the request history directly. Path two first
predicts next-interval request probabilities (``rpp``), appends them to the
history as one extra time step and classifies that (``cls2``). Mean-pooled
features of the two classification encoders are summed and mapped by a
dense sigmoid layer to per-content popularity scores.
"""

from __future__ import annotations

import dataclasses
import io
from dataclasses import dataclass, field

import numpy as np

from mtecache.errors import ConfigError, NumericalError
from mtecache.nn import tensor as T
from mtecache.nn.checkpoint import load_checkpoint, save_checkpoint
from mtecache.nn.layers import EncoderConfig, ParameterStore, encode, init_encoder, xavier_uniform
from mtecache.nn.losses import bce_loss, mse_loss
from mtecache.nn.optim import Adam
from mtecache.nn.tensor import Tensor
from mtecache.pipeline import gaf_features, minmax_normalize


DEFAULT_LOSS_WEIGHTS = (0.2, 0.4, 0.1, 0.3)


@dataclass
class MtecConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    k: int = 20
    loss_weights: tuple = DEFAULT_LOSS_WEIGHTS
    lr: float = 1e-4
    weight_decay: float = 1e-5
    epochs: int = 100
    batch_size: int = 32
    gaf_mode: bool = False
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        errors = []
        if len(self.loss_weights) != 4:
            errors.append("loss_weights needs four entries")
        elif min(self.loss_weights) < 0 or sum(self.loss_weights) <= 0:
            errors.append("loss_weights must be non-negative with a positive sum")
        if self.k < 1:
            errors.append("k must be >= 1")
        if self.epochs < 0:
            errors.append("epochs must be >= 0")
        if self.batch_size < 1:
            errors.append("batch_size must be >= 1")
        if self.lr <= 0:
            errors.append("lr must be positive")
        if errors:
            raise ConfigError("; ".join(errors))

    def to_dict(self):
        return dataclasses.asdict(self)


class MtecModel:
    def __init__(self, config, n_contents, lookback):
        self.config = config
        self.n_contents = n_contents
        self.lookback = lookback
        self.store = ParameterStore()
        rng = np.random.default_rng(config.seed)
        enc = config.encoder
        d = enc.model_dim
        init_encoder(self.store, rng, enc, "tc", n_contents, lookback)
        init_encoder(self.store, rng, enc, "rpp", n_contents, lookback)
        init_encoder(self.store, rng, enc, "cls2", n_contents, lookback + 1)
        for head in ("tc.head", "rpp.head", "cls2.head", "fusion"):
            self.store.add(f"{head}.weight", xavier_uniform(rng, d, n_contents))
            self.store.add(f"{head}.bias", np.zeros(n_contents))

    @property
    def n_parameters(self):
        return self.store.count()

    def parameter_groups(self):
        groups = {}
        for name in self.store:
            groups.setdefault(name.split(".")[0], []).append(name)
        return groups

    def save(self, path, extra_meta=None):
        meta = {
            "config": self.config.to_dict(),
            "n_contents": self.n_contents,
            "lookback": self.lookback,
        }
        meta.update(extra_meta or {})
        save_checkpoint(path, self.store.state_dict(), meta)

    @classmethod
    def load(cls, path):
        tensors, meta = load_checkpoint(path)
        cfg = dict(meta["config"])
        cfg["loss_weights"] = tuple(cfg["loss_weights"])
        model = cls(MtecConfig(**cfg), meta["n_contents"], meta["lookback"])
        model.store.load_state_dict(tensors)
        return model, meta


def build_model(config, n_contents, lookback):
    return MtecModel(config, n_contents, lookback)


@dataclass
class ForwardOutput:
    tc_features: Tensor
    tc_scores: Tensor
    p_hat: Tensor
    cls2_input: Tensor
    cls2_features: Tensor
    cls2_scores: Tensor
    scores: Tensor


def prepare_inputs(x):
    """Model input from raw window counts: each time step's content vector scaled to ``[0, 1]``."""
    return minmax_normalize(x, axis=-2)


def _finite(t, where):
    if not np.all(np.isfinite(t.data)):
        raise NumericalError(f"non-finite activations after {where}")
    return t


def _encode_path(x, model, prefix):
    try:
        z = encode(x, model.store, model.config.encoder, prefix)
    except NumericalError as err:
        raise NumericalError(f"{prefix} encoder: {err}") from None
    return _finite(z.mean(axis=-2), f"{prefix} encoder")


def forward(model, x):
    """Run both paths on normalised samples ``x`` (``N_c x L`` or ``B x N_c x L``)."""
    p = model.store
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.shape[1:] != (model.n_contents, model.lookback):
        raise ValueError(
            f"expected samples of shape ({model.n_contents}, {model.lookback}), got {x.shape[1:]}"
        )
    cls_in = Tensor(gaf_features(x) if model.config.gaf_mode else x)
    raw = Tensor(x)

    f_tc = _encode_path(cls_in, model, "tc")
    f_rpp = _encode_path(raw, model, "rpp")
    p_hat = T.softmax(f_rpp @ p["rpp.head.weight"] + p["rpp.head.bias"], axis=-1)

    b = x.shape[0]
    cls2_in = T.concat([cls_in, T.reshape(p_hat, (b, model.n_contents, 1))], axis=-1)
    f_c2 = _encode_path(cls2_in, model, "cls2")

    tc_scores = T.sigmoid(f_tc @ p["tc.head.weight"] + p["tc.head.bias"])
    cls2_scores = T.sigmoid(f_c2 @ p["cls2.head.weight"] + p["cls2.head.bias"])
    scores = _finite(T.sigmoid((f_tc + f_c2) @ p["fusion.weight"] + p["fusion.bias"]), "fusion")
    out = ForwardOutput(f_tc, tc_scores, p_hat, cls2_in, f_c2, cls2_scores, scores)
    if single:
        out = ForwardOutput(**{f.name: getattr(out, f.name)[0] for f in dataclasses.fields(out)})
    return out


LOSS_TERMS = ("rpp", "c1", "c2", "f")


def total_loss(out, y, p_true, weights=DEFAULT_LOSS_WEIGHTS):
    """Weighted sum of the four loss terms; returns ``(total, {term: value})``."""
    y = Tensor(np.asarray(y, dtype=np.float64))
    terms = {
        "rpp": mse_loss(out.p_hat, Tensor(np.asarray(p_true, dtype=np.float64))),
        "c1": bce_loss(out.tc_scores, y),
        "c2": bce_loss(out.cls2_scores, y),
        "f": bce_loss(out.scores, y),
    }
    total = None
    for w, name in zip(weights, LOSS_TERMS):
        part = terms[name] * float(w)
        total = part if total is None else total + part
    return total, {name: float(t.data) for name, t in terms.items()}


# ---------------------------------------------------------------- prediction


@dataclass
class PredictionOutput:
    scores: np.ndarray
    topk: np.ndarray  # 1-based content ids
    p_hat: np.ndarray
    popular: np.ndarray
    mediocre: np.ndarray


def rank_desc(values):
    """Indices sorted by value descending, ties to the lower index."""
    values = np.asarray(values)
    return np.lexsort((np.arange(values.size), -values))


def categorize(topk, p_hat, n_popular, n_mediocre):
    """Split ``topk`` (1-based ids) by predicted probability into popular and mediocre."""
    topk = np.asarray(topk, dtype=np.int64)
    p_hat = np.asarray(p_hat, dtype=np.float64)
    order = np.lexsort((topk, -p_hat[topk - 1]))
    ranked = topk[order]
    return ranked[:n_popular], ranked[n_popular : n_popular + n_mediocre]


def predict_topk(model, x, k, n_popular=None, n_mediocre=None):
    """Top-K prediction for one raw-count sample (``N_c x L``)."""
    out = forward(model, prepare_inputs(x))
    scores = out.scores.data
    p_hat = out.p_hat.data
    total = p_hat.sum()
    p_hat = p_hat / total if total > 0 else p_hat
    topk = rank_desc(scores)[:k] + 1
    if n_popular is None:
        n_popular = k
    if n_mediocre is None:
        n_mediocre = max(k - n_popular, 0)
    popular, mediocre = categorize(topk, p_hat, n_popular, n_mediocre)
    return PredictionOutput(scores, topk, p_hat, popular, mediocre)


def placement_ranking(scores, p_hat, k):
    """Content ids for placement, most valuable first.

    The Top-K set from the fusion scores comes first, ordered by predicted
    request probability; the remaining contents follow in score order so
    that UAV and FAP capacities beyond K can still be filled.
    """
    order = rank_desc(scores) + 1
    popular, _ = categorize(order[:k], p_hat, k, 0)
    return np.concatenate([popular, order[k:]])


def predict_batch(model, x, batch_size=64):
    """Fusion scores and ``p_hat`` for raw-count samples ``B x N_c x L``."""
    scores, probs = [], []
    for lo in range(0, len(x), batch_size):
        out = forward(model, prepare_inputs(x[lo : lo + batch_size]))
        scores.append(out.scores.data)
        probs.append(out.p_hat.data)
    if not scores:
        return np.zeros((0, model.n_contents)), np.zeros((0, model.n_contents))
    return np.concatenate(scores), np.concatenate(probs)


def accuracy(predicted, true):
    """Top-K set overlap ``|predicted & true| / K``."""
    predicted, true = set(np.asarray(predicted).tolist()), set(np.asarray(true).tolist())
    if len(predicted) != len(true):
        raise ValueError("predicted and true Top-K sets differ in size")
    if not true:
        return 1.0
    return len(predicted & true) / len(true)


def topk_accuracy(scores, labels):
    """Mean :func:`accuracy` over samples, taking ``K`` from each label row."""
    accs = []
    for s, y in zip(scores, labels):
        k = int(y.sum())
        accs.append(accuracy(rank_desc(s)[:k], np.flatnonzero(y)))
    return float(np.mean(accs)) if accs else float("nan")


# ---------------------------------------------------------------- training


@dataclass
class History:
    rows: list = field(default_factory=list)
    best_epoch: int = -1

    def add(self, epoch, losses, val_accuracy):
        self.rows.append({"epoch": epoch, **losses, "val_accuracy": val_accuracy})

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def to_csv(self, header=""):
        out = io.StringIO()
        out.write(header)
        out.write("epoch,loss_total,loss_rpp,loss_c1,loss_c2,loss_f,val_accuracy\n")
        for r in self.rows:
            out.write(
                f"{r['epoch']},{r['total']:.10g},{r['rpp']:.10g},{r['c1']:.10g},"
                f"{r['c2']:.10g},{r['f']:.10g},{r['val_accuracy']:.10g}\n"
            )
        return out.getvalue()


def train(model, train_set, val_set=None, config=None, progress=None):
    """Mini-batch Adam on the composite loss.

    Records the epoch-mean of every loss term and the validation Top-K
    accuracy. When a validation set is given the parameters of the best
    validation epoch (earliest on ties) are restored at the end.
    """
    config = config or model.config
    history = History()
    if config.epochs == 0 or len(train_set) == 0:
        return model, history
    opt = Adam(model.store, lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed + 1)
    x_all = prepare_inputs(train_set.x)
    y_all = train_set.y.astype(np.float64)
    p_all = train_set.p_next
    has_val = val_set is not None and len(val_set) > 0
    best_acc, best_state = -np.inf, None
    m = len(train_set)

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(m)
        sums = dict.fromkeys(("total",) + LOSS_TERMS, 0.0)
        for lo in range(0, m, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            out = forward(model, x_all[idx])
            loss, parts = total_loss(out, y_all[idx], p_all[idx], config.loss_weights)
            if not np.isfinite(loss.data):
                raise NumericalError(
                    f"loss diverged at epoch {epoch}: " + ", ".join(f"{k}={v}" for k, v in parts.items())
                )
            model.store.zero_grad()
            loss.backward()
            opt.step()
            sums["total"] += float(loss.data) * len(idx)
            for k, v in parts.items():
                sums[k] += v * len(idx)
        losses = {k: v / m for k, v in sums.items()}
        val_acc = float("nan")
        if has_val:
            scores, _ = predict_batch(model, val_set.x)
            val_acc = topk_accuracy(scores, val_set.y)
            if val_acc > best_acc:
                best_acc, best_state = val_acc, model.store.state_dict()
                history.best_epoch = epoch
        history.add(epoch, losses, val_acc)
        if progress is not None:
            progress(epoch, losses, val_acc)
    if best_state is not None:
        model.store.load_state_dict(best_state)
    return model, history
