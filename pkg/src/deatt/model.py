"""End-to-end CTR model, ablation variants, Adam training and checkpoints."""

from __future__ import annotations

import contextlib
import copy
import io
import logging
import math
import os
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from . import metrics
from . import numeric_core as nc
from .codebook import GatedSiameseCodebook
from .collapse_attention import ThresholdState, collapse_scores, raw_scores
from .combo_attention import ReweightSubnet, combo_scores
from .config import ExperimentConfig
from .datagen import Dataset
from .feature_space import EmbeddingTable, FieldSchema, lookup_embeddings
from .fusion import FusionParams, fuse
from .hashing import derive_seed

log = logging.getLogger(__name__)

VARIANTS = ("Transformer", "TransformerNoDiag", "ComboOnly", "CollapseOnly", "Dual")

TABLE2_NAMES = {
    "Transformer": "Transformer",
    "TransformerNoDiag": "Transformer w/o diag",
    "ComboOnly": "Combo-ID Attention",
    "CollapseOnly": "Collapse-Avoiding Attention",
    "Dual": "Dual Enhanced Attention",
}

CHECKPOINT_VERSION = 1


class NumericAbort(RuntimeError):
    def __init__(self, step: int, message: str = "non-finite loss"):
        super().__init__(f"{message} at step {step}")
        self.step = step


@dataclass(frozen=True)
class VariantConfig:
    kind: str
    gsc_enabled: bool = True

    def __post_init__(self):
        if self.kind not in VARIANTS:
            raise ValueError(f"unknown variant {self.kind!r}; expected one of {VARIANTS}")

    @property
    def uses_combo(self) -> bool:
        return self.kind in ("ComboOnly", "Dual")

    @property
    def uses_collapse(self) -> bool:
        return self.kind in ("CollapseOnly", "Dual")


def component_rng(seed: int, name: str) -> np.random.Generator:
    """Independent stream per named component, so variants share init of shared parts."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def _xavier(rng, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


@dataclass
class AttentionLayer:
    index: int
    reweight: ReweightSubnet | None = None
    fusion: FusionParams | None = None
    threshold: ThresholdState | None = None
    gsc: GatedSiameseCodebook | None = None  # only when codebooks are per layer
    wq: nc.Tensor | None = None
    wk: nc.Tensor | None = None
    wv: nc.Tensor | None = None


@dataclass
class LayerState:
    """Intermediate matrices of one attention layer (a single batch)."""

    pre: np.ndarray
    weights: np.ndarray
    A_m: np.ndarray | None = None
    A_c: np.ndarray | None = None
    thresh: float | None = None


@dataclass
class ModelParams:
    config: ExperimentConfig
    variant: VariantConfig
    schemas: list[FieldSchema]
    tables: list[EmbeddingTable]
    gsc: GatedSiameseCodebook | None
    layers: list[AttentionLayer]
    head: list[tuple[nc.Tensor, nc.Tensor]]
    dtype: type = np.float64

    @property
    def n_fields(self) -> int:
        return len(self.tables)

    @property
    def dim(self) -> int:
        return self.tables[0].dim

    def codebook_for(self, layer: AttentionLayer) -> GatedSiameseCodebook | None:
        return layer.gsc if layer.gsc is not None else self.gsc

    def parameters(self) -> dict[str, nc.Tensor]:
        """Every trainable tensor, each registered once, in a stable order."""
        out: dict[str, nc.Tensor] = {}

        def put(t):
            if t is None:
                return
            if t.name in out:
                raise ValueError(f"parameter {t.name!r} registered twice")
            out[t.name] = t

        for t in self.tables:
            put(t.weights)
        if self.gsc is not None:
            for t in self.gsc.parameters().values():
                put(t)
        for layer in self.layers:
            for t in (layer.wq, layer.wk, layer.wv):
                put(t)
            if layer.gsc is not None:
                for t in layer.gsc.parameters().values():
                    put(t)
            if layer.reweight is not None:
                for t in layer.reweight.parameters().values():
                    put(t)
            if layer.fusion is not None:
                for t in layer.fusion.parameters().values():
                    put(t)
        for w, b in self.head:
            put(w)
            put(b)
        return out

    def threshold_states(self) -> list[ThresholdState]:
        return [layer.threshold for layer in self.layers if layer.threshold is not None]


def field_schemas(cfg: ExperimentConfig, n_fields: int) -> list[FieldSchema]:
    counts = cfg.data.bucket_count
    if isinstance(counts, int):
        counts = [counts] * n_fields
    if len(counts) != n_fields:
        raise ValueError(f"data.bucket_count lists {len(counts)} fields, data has {n_fields}")
    return [FieldSchema(i, f"f{i}", c) for i, c in enumerate(counts)]


def build_variant(kind: str, base_config: ExperimentConfig, n_fields: int,
                  gsc_enabled: bool | None = None, dtype=None) -> tuple[ModelParams, VariantConfig]:
    """Allocate parameters for one ablation variant.

    Every component draws from its own named random stream, so components
    shared by two variants start identical under the same seed.
    """
    cfg = base_config
    if gsc_enabled is None:
        gsc_enabled = cfg.codebook.gsc_enabled
    variant = VariantConfig(kind, gsc_enabled)
    if dtype is None:
        dtype = np.float64 if cfg.train.verify else np.float32
    seed = cfg.seed
    d = cfg.model.embed_dim
    schemas = field_schemas(cfg, n_fields)
    tables = [
        EmbeddingTable.init(
            s, d, component_rng(seed, f"embedding.{s.name}"),
            hash_seed=derive_seed(cfg.model.embedding_hash_seed, s.field_index),
            std=cfg.model.embed_std, dtype=dtype,
        )
        for s in schemas
    ]
    k = cfg.codebook.k_siamese if gsc_enabled else 0

    def make_gsc(prefix):
        return GatedSiameseCodebook.init(
            cfg.codebook.size, d, k, component_rng(seed, prefix),
            seed=cfg.codebook.hash_seed, prefix=prefix, std=cfg.codebook.init_std, dtype=dtype,
        )

    shared_gsc = None
    if variant.uses_combo and cfg.codebook.shared_across_layers:
        shared_gsc = make_gsc("codebook")
    hidden = cfg.combo.hidden_h or 2 * d
    layers = []
    for li in range(cfg.model.layers):
        layer = AttentionLayer(li)
        if cfg.model.qkv_projection:
            for role in ("wq", "wk", "wv"):
                name = f"layer{li}.{role}"
                setattr(layer, role, nc.parameter(_xavier(component_rng(seed, name), d, d, dtype), name))
        if variant.uses_combo:
            if not cfg.codebook.shared_across_layers:
                layer.gsc = make_gsc(f"layer{li}.codebook")
            layer.reweight = ReweightSubnet.init(
                d, hidden, component_rng(seed, f"layer{li}.reweight"),
                activation=cfg.combo.activation, prefix=f"layer{li}.reweight", dtype=dtype,
            )
        if variant.uses_collapse:
            layer.threshold = ThresholdState(ema_decay=cfg.collapse.ema_decay)
        if kind == "Dual":
            layer.fusion = FusionParams.init(
                cfg.fusion.mode, component_rng(seed, f"layer{li}.fusion"),
                gate_hidden=cfg.fusion.gate_hidden, prefix=f"layer{li}.fusion", dtype=dtype,
            )
        layers.append(layer)

    widths = [n_fields * d, *cfg.model.dnn_widths, 1]
    head = []
    for hi, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        rng = component_rng(seed, f"head{hi}")
        w = _xavier(rng, fan_in, fan_out, dtype)
        if cfg.model.zero_init_output and hi == len(widths) - 2:
            w = np.zeros_like(w)
        head.append((
            nc.parameter(w, f"head{hi}.w"),
            nc.parameter(np.zeros(fan_out, dtype=dtype), f"head{hi}.b"),
        ))
    params = ModelParams(cfg, variant, schemas, tables, shared_gsc, layers, head, dtype)
    return params, variant


def _layer_forward(params: ModelParams, layer: AttentionLayer, H: nc.Tensor, ids: np.ndarray,
                   training: bool, update_state: bool, keep_state: bool):
    cfg = params.config
    kind = params.variant.kind
    lz = cfg.diag.literal_zero
    if layer.wq is not None:
        Q, K, V = nc.matmul(H, layer.wq), nc.matmul(H, layer.wk), nc.matmul(H, layer.wv)
    else:
        Q = K = V = H
    A_m = A_c = thresh = None
    if kind == "Transformer":
        pre = raw_scores(Q, K, scale=True, mask=False)
    elif kind == "TransformerNoDiag":
        pre = raw_scores(Q, K, scale=True, mask=True, literal_zero=lz)
    else:
        if params.variant.uses_combo:
            A_m = combo_scores(ids, params.codebook_for(layer), layer.reweight, lz)
        if params.variant.uses_collapse:
            A_c, thresh = collapse_scores(
                Q, K, layer.threshold, training, mode=cfg.collapse.mode,
                scale=cfg.collapse.scale, include_diag_in_mean=cfg.collapse.include_diag_in_mean,
                literal_zero=lz, update_state=update_state,
            )
        if kind == "ComboOnly":
            pre = A_m
        elif kind == "CollapseOnly":
            pre = A_c
        else:
            pre = fuse(A_m, A_c, layer.fusion, lz)
    weights = nc.softmax_rows(pre)
    out = nc.matmul(weights, V)
    if cfg.model.residual:
        out = nc.add(out, H)
    if cfg.model.layer_norm:
        out = nc.layer_norm(out)
    state = None
    if keep_state:
        state = LayerState(
            pre=pre.data, weights=weights.data,
            A_m=None if A_m is None else A_m.data,
            A_c=None if A_c is None else A_c.data,
            thresh=thresh,
        )
    return out, state


def logits(params: ModelParams, ids: np.ndarray, training: bool = False,
           update_state: bool = True, keep_states: bool = False):
    """Pre-sigmoid scores (B,) for a batch of raw IDs (B, n)."""
    ids = np.asarray(ids, dtype=np.uint64)
    if ids.ndim != 2 or ids.shape[0] == 0:
        raise ValueError("forward needs a non-empty (B, n) batch")
    H = lookup_embeddings(ids, params.tables)
    states = []
    for layer in params.layers:
        H, st = _layer_forward(params, layer, H, ids, training, update_state, keep_states)
        states.append(st)
    x = nc.reshape(H, (ids.shape[0], -1))
    for hi, (w, b) in enumerate(params.head):
        x = nc.add(nc.matmul(x, w), b)
        if hi < len(params.head) - 1:
            x = nc.relu(x)
    z = nc.reshape(x, (ids.shape[0],))
    return (z, states) if keep_states else z


def _batch_ids(batch) -> np.ndarray:
    if isinstance(batch, Dataset):
        return batch.ids
    if isinstance(batch, np.ndarray):
        return batch
    return np.asarray([ex.feature_ids for ex in batch], dtype=np.uint64)


def forward(batch, params: ModelParams, variant: VariantConfig | None = None,
            training: bool = False, return_states: bool = False):
    """Click probabilities for a batch of examples (list, Dataset or ID array)."""
    if variant is not None and variant != params.variant:
        raise ValueError(f"params were built for {params.variant}, not {variant}")
    ids = _batch_ids(batch)
    z, states = logits(params, ids, training=training, keep_states=True)
    p = nc.sigmoid(z)
    return (p, states) if return_states else p


def loss(params: ModelParams, ids: np.ndarray, labels: np.ndarray, training: bool = True,
         update_state: bool = True) -> nc.Tensor:
    return nc.bce_with_logits(logits(params, ids, training, update_state), labels)


def predict(params: ModelParams, data, batch_size: int = 1024) -> np.ndarray:
    ids = _batch_ids(data)
    out = np.empty(len(ids), dtype=np.float64)
    with nc.no_tape():
        for a in range(0, len(ids), batch_size):
            z = logits(params, ids[a:a + batch_size], training=False)
            out[a:a + batch_size] = nc.sigmoid(z.data.astype(np.float64)).data
    return out


class Adam:
    def __init__(self, params: dict[str, nc.Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        # bias corrections folded into the step size; python floats keep float32 params float32
        step = self.lr * math.sqrt(c2) / c1
        eps = self.eps * math.sqrt(c2)
        for k, p in self.params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= (step * m / (np.sqrt(v) + eps)).astype(p.data.dtype)


@contextlib.contextmanager
def execution_mode(verify: bool):
    """Verification: single-threaded BLAS with finite checks.  Fast: DEATT_THREADS cap."""
    if verify:
        with threadpool_limits(limits=1), nc.checked():
            yield
        return
    threads = os.environ.get("DEATT_THREADS")
    if threads:
        with threadpool_limits(limits=int(threads)):
            yield
    else:
        yield


@dataclass
class EpochReport:
    epoch: int
    train_logloss: float
    test_logloss: float
    auc: float
    gauc: float


@dataclass
class TrainReport:
    epochs: list[EpochReport] = field(default_factory=list)
    wall_clock: float = 0.0
    steps: int = 0

    @property
    def final(self) -> EpochReport:
        return self.epochs[-1]


def evaluate(params: ModelParams, data: Dataset, batch_size: int = 1024) -> dict[str, float]:
    p = predict(params, data, batch_size)
    out = {"logloss": metrics.logloss(p, data.labels)}
    try:
        out["auc"] = metrics.auc(p, data.labels)
    except metrics.UndefinedMetricError:
        out["auc"] = float("nan")
    try:
        out["gauc"] = metrics.gauc(metrics.PredictionSet(p, data.labels, data.session_ids))
    except metrics.UndefinedMetricError:
        out["gauc"] = float("nan")
    return out


def train(params: ModelParams, train_data: Dataset, test_data: Dataset | None = None,
          on_epoch: Callable[[EpochReport], None] | None = None) -> TrainReport:
    """Adam on binary cross-entropy; held-out metrics after every epoch."""
    tc = params.config.train
    named = params.parameters()
    opt = Adam(named, lr=tc.lr)
    rng = np.random.default_rng([params.config.seed, 0x5EED])
    report = TrainReport()
    start = time.perf_counter()
    n = len(train_data)
    with execution_mode(tc.verify):
        for epoch in range(tc.epochs):
            order = rng.permutation(n) if tc.shuffle else np.arange(n)
            losses = []
            for a in range(0, n, tc.batch_size):
                idx = order[a:a + tc.batch_size]
                with nc.GradTape() as tape:
                    value = loss(params, train_data.ids[idx], train_data.labels[idx])
                lv = float(value.data)
                if not np.isfinite(lv):
                    raise NumericAbort(report.steps)
                grads = tape.gradient(value, named)
                opt.step(grads)
                report.steps += 1
                losses.append(lv * len(idx))
            held = test_data if test_data is not None else train_data
            ev = evaluate(params, held, tc.eval_batch_size)
            er = EpochReport(
                epoch=epoch,
                train_logloss=float(np.sum(losses) / max(n, 1)),
                test_logloss=ev["logloss"],
                auc=ev["auc"],
                gauc=ev["gauc"],
            )
            report.epochs.append(er)
            log.info("epoch %d: %s", epoch, er)
            if on_epoch is not None:
                on_epoch(er)
    report.wall_clock = time.perf_counter() - start
    return report


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: ModelParams) -> None:
    """Write all parameters, threshold states and the config hash as one .npz blob."""
    arrays = {f"param/{k}": p.data for k, p in params.parameters().items()}
    for layer in params.layers:
        if layer.threshold is not None:
            t = layer.threshold
            arrays[f"threshold/{layer.index}"] = np.array(
                [t.ema_thresh, t.ema_decay, float(t.observation_count)], dtype=np.float64
            )
    arrays["meta/version"] = np.array([CHECKPOINT_VERSION])
    arrays["meta/config_hash"] = np.array(params.config.config_hash())
    arrays["meta/variant"] = np.array(params.variant.kind)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


class CheckpointError(ValueError):
    pass


def load_checkpoint(path, params: ModelParams, check_config: bool = True) -> None:
    """Restore a checkpoint into already-built ``params`` (in place)."""
    with np.load(path, allow_pickle=False) as z:
        version = int(z["meta/version"][0])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        if str(z["meta/variant"]) != params.variant.kind:
            raise CheckpointError(f"checkpoint is for variant {z['meta/variant']}")
        if check_config and str(z["meta/config_hash"]) != params.config.config_hash():
            raise CheckpointError("checkpoint config hash does not match")
        for k, p in params.parameters().items():
            key = f"param/{k}"
            if key not in z:
                raise CheckpointError(f"checkpoint lacks {k}")
            if z[key].shape != p.shape:
                raise CheckpointError(f"shape mismatch for {k}: {z[key].shape} vs {p.shape}")
            p.data[...] = z[key]
        for layer in params.layers:
            if layer.threshold is not None:
                ema, decay, count = z[f"threshold/{layer.index}"]
                layer.threshold.ema_thresh = float(ema)
                layer.threshold.ema_decay = float(decay)
                layer.threshold.observation_count = int(count)


def clone_params(params: ModelParams) -> ModelParams:
    return copy.deepcopy(params)
