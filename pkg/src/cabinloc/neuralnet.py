"""From-scratch multilayer perceptron for range correction and direct localization.

Four heads share one architecture (two ReLU hidden layers + linear output):

==========  ================  ==========================  ==============
head        input             output                      loss
==========  ================  ==========================  ==============
range_1a    one anchor        range correction (1)        squared error
range_all   all anchors       range corrections (n_a)     squared error
coord       all anchors       tag (x, y)                  squared error
seat        all anchors       seat logits (n_seats)       cross-entropy
==========  ================  ==========================  ==============

Range heads learn the correction ``true - measured`` in standardized units and
add it back to the measured range at prediction time.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .channel_sim import Dataset, Record, RangingSample
from .localization import Method

log = logging.getLogger(__name__)

HEADS = ("range_1a", "range_all", "coord", "seat")
VARIANT_ALIASES = {"1a": "range_1a", "range": "range_all", "coord": "coord", "seat": "seat"}
METHOD_NAMES = {"range_1a": "nn-1a", "range_all": "nn-range", "coord": "nn-coord", "seat": "nn-seat"}
CHECKPOINT_FORMAT = "cabinloc-mlp/1"


class TrainingDiverged(RuntimeError):
    pass


def resolve_head(variant: str) -> str:
    head = VARIANT_ALIASES.get(variant, variant)
    if head not in HEADS:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANT_ALIASES)}")
    return head


# -- features -----------------------------------------------------------------

def cir_window(sample: RangingSample, length: int) -> np.ndarray:
    """``length`` taps from the first path on, scaled by the buffer maximum."""
    taps = sample.cir.taps
    out = np.zeros(length)
    w = taps[sample.cir.first_path_index:sample.cir.first_path_index + length]
    out[: w.size] = w
    peak = taps.max()
    return out / peak if peak > 0 else out


@dataclass
class FeatureSpec:
    """Feature layout and frozen normalization constants.

    Per-anchor block: ``[measured_range, first_path_power, cir[0:n_taps], present]``.
    ``range_1a`` vectors append a one-hot anchor id; all-anchor vectors
    concatenate blocks in ascending anchor-id order.
    """

    head: str
    anchor_ids: list[int]
    n_taps: int = 64
    fill_value: float = 0.0
    mean: list[float] | None = None
    scale: list[float] | None = None

    @property
    def block_size(self) -> int:
        return self.n_taps + 3

    @property
    def length(self) -> int:
        if self.head == "range_1a":
            return self.block_size + len(self.anchor_ids)
        return self.block_size * len(self.anchor_ids)

    @property
    def fitted(self) -> bool:
        return self.mean is not None

    def _block(self, s: RangingSample) -> np.ndarray:
        b = np.empty(self.block_size)
        b[0] = s.measured_range
        b[1] = s.first_path_power
        b[2:2 + self.n_taps] = cir_window(s, self.n_taps)
        b[-1] = 1.0
        return b

    def raw_rows(self, record: Record) -> np.ndarray:
        """Unnormalized feature rows (one per sample for range_1a, else one)."""
        if self.head == "range_1a":
            rows = []
            for s in sorted(record.samples, key=lambda s: s.anchor_id):
                onehot = np.zeros(len(self.anchor_ids))
                onehot[self.anchor_ids.index(s.anchor_id)] = 1.0
                rows.append(np.concatenate([self._block(s), onehot]))
            return np.array(rows)
        present = record.sample_map()
        v = np.full(self.length, np.nan)
        for k, aid in enumerate(self.anchor_ids):
            if aid in present:
                v[k * self.block_size:(k + 1) * self.block_size] = self._block(present[aid])
            else:
                v[(k + 1) * self.block_size - 1] = 0.0
        return v[None, :]

    def _tap_mask(self) -> np.ndarray:
        pos = np.arange(self.length)
        if self.head != "range_1a":
            pos = pos % self.block_size
        return (pos >= 2) & (pos < 2 + self.n_taps)

    def fit(self, records: Sequence[Record]) -> "FeatureSpec":
        if any(r.split != "train" for r in records):
            raise ValueError("normalization constants may only be fitted on train records")
        X = np.vstack([self.raw_rows(r) for r in records])
        mean = np.nanmean(X, axis=0)
        std = np.nanstd(X, axis=0)
        mean = np.where(np.isfinite(mean), mean, 0.0)
        # zero-variance features normalize to a constant 0
        scale = np.where(np.isfinite(std) & (std > 1e-12), std, 1.0)
        # CIR taps are already max-normalized magnitudes: center them but keep
        # unit scale, since per-tap scaling blows up near-empty late taps
        scale[self._tap_mask()] = 1.0
        self.mean, self.scale = mean.tolist(), scale.tolist()
        return self

    def transform(self, raw: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise ValueError("feature spec has no normalization constants; fit it first")
        out = (raw - np.asarray(self.mean)) / np.asarray(self.scale)
        out[np.isnan(out)] = self.fill_value
        if self.head != "range_1a":
            # presence flags stay 0/1 rather than standardized
            out[..., self.block_size - 1::self.block_size] = raw[..., self.block_size - 1::self.block_size]
        else:
            out[..., self.block_size - 1] = raw[..., self.block_size - 1]
        return out


def build_features(record: Record, spec: FeatureSpec) -> np.ndarray:
    """Normalized feature matrix for one record (rows as in :meth:`FeatureSpec.raw_rows`)."""
    return spec.transform(spec.raw_rows(record))


# -- model --------------------------------------------------------------------

@dataclass
class MlpModel:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    head: str
    feature_spec: FeatureSpec
    label_map: list[str] = field(default_factory=list)
    target_mean: list[float] = field(default_factory=list)
    target_scale: list[float] = field(default_factory=list)
    trained: bool = False
    summary: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if len(self.weights) != 3 or len(self.biases) != 3 or len(self.layer_dims) != 4:
            raise ValueError("model needs exactly three weight layers")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.layer_dims[i], self.layer_dims[i + 1]) or b.shape != (self.layer_dims[i + 1],):
                raise ValueError(f"layer {i} shape does not match layer_dims {self.layer_dims}")
        if self.head == "seat" and self.label_map and len(self.label_map) != self.layer_dims[-1]:
            raise ValueError("classification head size must equal the number of seats")

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out


def init_model(layer_dims: Sequence[int], head: str, feature_spec: FeatureSpec,
               rng: np.random.Generator) -> MlpModel:
    """He-normal weights for the ReLU layers, zero biases."""
    dims = [int(d) for d in layer_dims]
    weights, biases = [], []
    for i in range(3):
        std = math.sqrt(2.0 / dims[i]) if i < 2 else math.sqrt(1.0 / dims[i])
        weights.append(rng.standard_normal((dims[i], dims[i + 1])) * std)
        biases.append(np.zeros(dims[i + 1]))
    return MlpModel(dims, weights, biases, head, feature_spec)


def forward(model: MlpModel, features: np.ndarray, *, cache: list | None = None) -> np.ndarray:
    """Affine + ReLU stack; the last layer is linear (logits for the seat head)."""
    a = np.atleast_2d(np.asarray(features, dtype=float))
    if a.shape[1] != model.layer_dims[0]:
        raise ValueError(f"feature length {a.shape[1]} does not match model input {model.layer_dims[0]}")
    if cache is not None:
        cache.append(a)
    n = len(model.weights)
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W + b
        a = np.maximum(z, 0.0) if i < n - 1 else z
        if cache is not None:
            cache.append(a)
    return a


def _loss_and_grad_out(head: str, out: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    n = out.shape[0]
    if head == "seat":
        z = out - out.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        idx = np.asarray(target, dtype=int).ravel()
        loss = -float(logp[np.arange(n), idx].mean())
        grad = np.exp(logp)
        grad[np.arange(n), idx] -= 1.0
        return loss, grad / n
    diff = out - np.asarray(target, dtype=float).reshape(out.shape)
    return float((diff * diff).mean()), 2.0 * diff / diff.size


def loss_and_gradients(model: MlpModel, features: np.ndarray, target) -> tuple[float, list[np.ndarray]]:
    """Loss of the model's head and its gradient w.r.t. every parameter.

    Gradients come back in ``model.params`` order (W1, b1, W2, b2, W3, b3).
    """
    cache: list = []
    out = forward(model, features, cache=cache)
    loss, delta = _loss_and_grad_out(model.head, out, target)
    grads: list[np.ndarray] = []
    for i in range(len(model.weights) - 1, -1, -1):
        a_in = cache[i]
        grads.append(delta.sum(axis=0))
        grads.append(a_in.T @ delta)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (cache[i] > 0)
    grads.reverse()
    return loss, grads


def gradient_check(model: MlpModel, features: np.ndarray, target, epsilon: float = 1e-5) -> float:
    """Max relative deviation between backprop and central finite differences.

    Deviation per parameter is ``|g_a - g_n| / max(|g_a|, |g_n|, 1e-7)``; the
    floor keeps parameters with (near-)zero gradient from dominating through
    rounding noise.
    """
    if not 0 < epsilon <= 1e-3:
        raise ValueError("epsilon must lie in (0, 1e-3]")
    _, analytic = loss_and_gradients(model, features, target)
    worst = 0.0
    for p, g in zip(model.params, analytic):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            lp, _ = loss_and_gradients(model, features, target)
            flat[j] = orig - epsilon
            lm, _ = loss_and_gradients(model, features, target)
            flat[j] = orig
            num = (lp - lm) / (2 * epsilon)
            dev = abs(gflat[j] - num) / max(abs(gflat[j]), abs(num), 1e-7)
            worst = max(worst, dev)
    return worst


# -- training -----------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 200
    seed: int = 0
    hidden: tuple[int, int] = (256, 128)
    val_fraction: float = 0.1
    patience: int = 25
    plateau: int = 8  # epochs without improvement before the step size is cut
    lr_decay: float = 0.5
    weight_decay: float = 30.0  # decoupled weight shrinkage per epoch, in units of the step size
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    divergence_tol: float = 10.0  # allowed relative epoch-loss jump

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("learning_rate, batch_size and epochs must be positive")
        if len(self.hidden) != 2 or min(self.hidden) < 1:
            raise ValueError("hidden must give two positive layer sizes")
        if not 0 < self.lr_decay <= 1 or self.plateau < 1 or self.weight_decay < 0:
            raise ValueError("lr_decay must lie in (0, 1], plateau >= 1, weight_decay >= 0")
        if not 0 <= self.val_fraction < 1 or self.patience < 1 or self.divergence_tol <= 0:
            raise ValueError("invalid validation/early-stopping settings")


def _targets(records: Sequence[Record], dataset: Dataset, spec: FeatureSpec, head: str,
             label_map: list[str]) -> np.ndarray:
    if head == "range_1a":
        return np.array([[s.true_range - s.measured_range]
                         for r in records for s in sorted(r.samples, key=lambda s: s.anchor_id)])
    if head == "range_all":
        rows = []
        for r in records:
            m = r.sample_map()
            rows.append([m[a].true_range - m[a].measured_range if a in m else 0.0 for a in spec.anchor_ids])
        return np.array(rows)
    if head == "coord":
        return np.array([dataset.tag_position(r).xy for r in records])
    index = {lab: i for i, lab in enumerate(label_map)}
    return np.array([index[r.seat] for r in records])


def _matrix(records: Sequence[Record], spec: FeatureSpec) -> np.ndarray:
    return np.vstack([spec.raw_rows(r) for r in records])


def train(dataset: Dataset, variant: str, config: TrainConfig = TrainConfig(),
          history: list | None = None) -> MlpModel:
    """Mini-batch Adam on the train split with early stopping.

    A ``val_fraction`` share of train records is held out for early stopping;
    the weights with the best validation loss are kept. The step size is
    multiplied by ``lr_decay`` every ``plateau`` epochs without validation
    improvement. Weight matrices also shrink by ``lr * weight_decay`` per
    epoch (decoupled from the Adam update). Per-epoch losses are appended to
    ``history`` as dicts when given.

    Raises:
        TrainingDiverged: loss became non-finite or jumped by more than
            ``divergence_tol`` relative to the previous epoch (or to the
            untrained network for the first epoch).
    """
    head = resolve_head(variant)
    train_recs = dataset.split("train")
    if not train_recs:
        raise ValueError("train split is empty")
    rng = np.random.Generator(np.random.Philox(config.seed))

    spec = FeatureSpec(head, list(dataset.layout.anchor_ids)).fit(train_recs)
    label_map = sorted(s.label for s in dataset.layout.seats) if head == "seat" else []

    order = rng.permutation(len(train_recs))
    n_val = int(round(config.val_fraction * len(train_recs)))
    if n_val >= len(train_recs):
        n_val = 0
    val_recs = [train_recs[i] for i in sorted(order[:n_val])]
    fit_recs = [train_recs[i] for i in sorted(order[n_val:])]

    X = spec.transform(_matrix(fit_recs, spec))
    Y = _targets(fit_recs, dataset, spec, head, label_map)
    Xv = spec.transform(_matrix(val_recs, spec)) if val_recs else None
    Yv = _targets(val_recs, dataset, spec, head, label_map) if val_recs else None

    if head == "seat":
        t_mean, t_scale = [], []
        out_dim = len(label_map)
    else:
        Y = Y.astype(float)
        mu = Y.mean(axis=0)
        sd = Y.std(axis=0)
        if head == "coord":
            # one shared scale so the loss tracks Euclidean error in meters
            sd = np.full_like(sd, np.sqrt(np.mean(sd * sd)))
        sd = np.where(sd > 1e-12, sd, 1.0)
        t_mean, t_scale = mu.tolist(), sd.tolist()
        Y = (Y - mu) / sd
        if Yv is not None:
            Yv = (Yv - mu) / sd
        out_dim = Y.shape[1]

    model = init_model([spec.length, *config.hidden, out_dim], head, spec, rng)
    model.label_map, model.target_mean, model.target_scale = label_map, t_mean, t_scale

    params = model.params
    m_state = [np.zeros_like(p) for p in params]
    v_state = [np.zeros_like(p) for p in params]
    step = 0
    best = (math.inf, [p.copy() for p in params], 0)
    # loss of the untrained network: catches blow-ups inside the first epoch
    prev_loss = loss_and_gradients(model, X, Y)[0]
    stale = 0
    lr = config.learning_rate
    n = X.shape[0]
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            loss, grads = loss_and_gradients(model, X[idx], Y[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} (batch starting {start}); "
                                       f"try a lower learning rate than {config.learning_rate}")
            total += loss * idx.size
            step += 1
            # spread over the epoch so heads with more rows are not shrunk harder
            shrink = lr * config.weight_decay * idx.size / n
            c1 = 1 - config.beta1**step
            c2 = 1 - config.beta2**step
            for p, g, m, v in zip(params, grads, m_state, v_state):
                m *= config.beta1
                m += (1 - config.beta1) * g
                v *= config.beta2
                v += (1 - config.beta2) * g * g
                p -= lr * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
                if shrink and p.ndim == 2:
                    p *= 1 - shrink
        train_loss = total / n
        if train_loss > prev_loss * (1 + config.divergence_tol):
            raise TrainingDiverged(f"epoch {epoch} loss {train_loss:.4g} jumped from {prev_loss:.4g}")
        prev_loss = train_loss
        val_loss = loss_and_gradients(model, Xv, Yv)[0] if Xv is not None else train_loss
        if history is not None:
            history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        log.debug("%s epoch %d train %.5f val %.5f", head, epoch, train_loss, val_loss)
        if val_loss < best[0]:
            best = (val_loss, [p.copy() for p in params], epoch)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
            if stale % config.plateau == 0:
                lr *= config.lr_decay

    for p, b in zip(params, best[1]):
        p[...] = b
    model.trained = True
    model.summary = {
        "best_epoch": best[2],
        "epochs_run": epoch,
        "train_loss": loss_and_gradients(model, X, Y)[0],
        "val_loss": best[0] if Xv is not None else None,
    }
    test_recs = dataset.split("test")
    if test_recs:
        Xt = spec.transform(_matrix(test_recs, spec))
        Yt = _targets(test_recs, dataset, spec, head, label_map)
        if head != "seat":
            Yt = (Yt - np.asarray(t_mean)) / np.asarray(t_scale)
        model.summary["test_loss"] = loss_and_gradients(model, Xt, Yt)[0]
    return model


# -- prediction ---------------------------------------------------------------

def _require(model: MlpModel, *heads: str) -> None:
    if not model.trained:
        raise ValueError("model is not trained")
    if model.head not in heads:
        raise ValueError(f"model head {model.head!r} cannot serve this prediction (needs {heads})")


def _regress(model: MlpModel, record: Record) -> np.ndarray:
    out = forward(model, build_features(record, model.feature_spec))
    return out * np.asarray(model.target_scale) + np.asarray(model.target_mean)


def predict_ranges(model: MlpModel, record: Record) -> dict[int, float]:
    """Corrected range per anchor present in the record."""
    _require(model, "range_1a", "range_all")
    corr = _regress(model, record)
    samples = sorted(record.samples, key=lambda s: s.anchor_id)
    if model.head == "range_1a":
        return {s.anchor_id: s.measured_range + float(c) for s, c in zip(samples, corr[:, 0])}
    pos = {a: k for k, a in enumerate(model.feature_spec.anchor_ids)}
    return {s.anchor_id: s.measured_range + float(corr[0, pos[s.anchor_id]]) for s in samples}


def predict_coords(model: MlpModel, record: Record) -> tuple[float, float]:
    _require(model, "coord")
    out = _regress(model, record)[0]
    return float(out[0]), float(out[1])


def seat_logits(model: MlpModel, record: Record) -> np.ndarray:
    _require(model, "seat")
    return forward(model, build_features(record, model.feature_spec))[0]


def decide_seat(model: MlpModel, logits: np.ndarray) -> str:
    return model.label_map[int(np.argmax(logits))]


def predict_seat(model: MlpModel, record: Record) -> str:
    return decide_seat(model, seat_logits(model, record))


def nn_method(model: MlpModel, name: str | None = None) -> Method:
    """Wrap a trained network as an evaluation pipeline."""
    name = name or METHOD_NAMES[model.head]
    if model.head in ("range_1a", "range_all"):
        return Method(name, "ranges", lambda r: predict_ranges(model, r), trained=model.trained)
    if model.head == "coord":
        return Method(name, "coords", lambda r: predict_coords(model, r), trained=model.trained)
    return Method(name, "seat", lambda r: predict_seat(model, r), trained=model.trained)


# -- checkpoints --------------------------------------------------------------

def save_model(model: MlpModel, path: str | Path) -> Path:
    """Write ``<path>`` (JSON metadata) and ``<path stem>.bin`` (weights).

    The binary file is the little-endian float64 concatenation of W1, b1, W2,
    b2, W3, b3 (row-major); the JSON ``index`` lists each array's name, shape,
    element offset and count.
    """
    path = Path(path)
    bin_path = path.with_suffix(".bin")
    index, chunks, offset = [], [], 0
    names = ["W1", "b1", "W2", "b2", "W3", "b3"]
    for name, arr in zip(names, model.params):
        flat = np.ascontiguousarray(arr, dtype="<f8").reshape(-1)
        index.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(flat.size)})
        chunks.append(flat)
        offset += flat.size
    bin_path.write_bytes(np.concatenate(chunks).tobytes())
    meta = {
        "format": CHECKPOINT_FORMAT,
        "head": model.head,
        "layer_dims": model.layer_dims,
        "activation": "relu",
        "trained": model.trained,
        "feature_spec": asdict(model.feature_spec),
        "label_map": model.label_map,
        "target_mean": model.target_mean,
        "target_scale": model.target_scale,
        "summary": model.summary,
        "weights_file": bin_path.name,
        "dtype": "<f8",
        "index": index,
    }
    path.write_text(json.dumps(meta, indent=2) + "\n")
    return path


def load_model(path: str | Path) -> MlpModel:
    path = Path(path)
    meta = json.loads(path.read_text())
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    flat = np.frombuffer((path.parent / meta["weights_file"]).read_bytes(), dtype="<f8")
    arrays = {}
    for entry in meta["index"]:
        chunk = flat[entry["offset"]:entry["offset"] + entry["count"]]
        if chunk.size != entry["count"]:
            raise ValueError(f"{path}: weights file truncated at {entry['name']}")
        arrays[entry["name"]] = chunk.reshape(entry["shape"]).astype(float)
    spec = FeatureSpec(**meta["feature_spec"])
    return MlpModel(
        layer_dims=meta["layer_dims"],
        weights=[arrays["W1"], arrays["W2"], arrays["W3"]],
        biases=[arrays["b1"], arrays["b2"], arrays["b3"]],
        head=meta["head"],
        feature_spec=spec,
        label_map=meta["label_map"],
        target_mean=meta["target_mean"],
        target_scale=meta["target_scale"],
        trained=meta["trained"],
        summary=meta.get("summary", {}),
    )
