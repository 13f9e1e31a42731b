"""Multi-head predictor with relation-weighted consistency training.

One shared feature extractor feeds one output head per training domain.
Training combines two terms: each example's loss under its own domain's
head, and a consistency loss where the example must also be predicted by
the relation-weighted average of all OTHER domains' heads. At inference on
an unseen domain, head outputs are averaged with weights given by that
domain's relations to the training domains.

The gradient of the full objective is derived by hand, including the path
through the learned relation net, and is checked against central finite
differences in the test suite.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from ._version import __version__
from .data import TASK_CLASSIFICATION, DomainDataset
from .errors import ConfigError, DataError, NumericalError
from .fileio import atomic_writer
from .nn import (
    Layer,
    Mlp,
    adam_step,
    backward,
    forward,
    init_opt_state,
    loss_ce_batch,
    loss_mse,
    softmax,
)
from .relations import (
    RelationMatrix,
    RelationNet,
    learned_matrix,
    learned_matrix_backward,
    normalize_weights,
    relation_row,
)
from .rng import substream

REL_EPS = 1e-12
PROB_FLOOR = 1e-12

COMBINE_SPACES = ("logit", "prob")
RELATION_MODES = ("fused", "uniform")


@dataclass
class TrainConfig:
    """Hyperparameters; defaults follow the benchmark's reference setting."""

    lam: float = 0.5  # weight of the consistency term
    beta: float = 0.8  # share of the fixed relations in the fusion
    lr: float = 1e-5
    weight_decay: float = 5e-4
    batch_size: int = 10
    epochs: int = 30
    seed: int = 0
    hidden_width: int = 64
    relation_width: int = 32
    relation_heads: int = 4
    combine_space: str = "logit"
    relation_mode: str = "fused"  # "uniform" trains with equal consistency weights
    domain_balanced_sampling: bool = False
    eval_every: int = 1
    select_best: bool = True  # restore the best valid-split epoch after training
    finetune_epochs: int = 5  # used by rw_finetune only

    def validate(self) -> None:
        if self.lam < 0:
            raise ConfigError("lam must be nonnegative")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("beta must lie in [0, 1]")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")
        if self.batch_size < 1 or self.epochs < 0 or self.eval_every < 1:
            raise ConfigError("batch_size/epochs/eval_every out of range")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.hidden_width < 1 or self.relation_width < 1 or self.relation_heads < 1:
            raise ConfigError("network widths must be positive")
        if self.combine_space not in COMBINE_SPACES:
            raise ConfigError(f"combine_space must be one of {COMBINE_SPACES}")
        if self.relation_mode not in RELATION_MODES:
            raise ConfigError(f"relation_mode must be one of {RELATION_MODES}")
        if self.finetune_epochs < 0:
            raise ConfigError("finetune_epochs must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown config keys: {sorted(bad)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


@dataclass
class MultiHeadModel:
    """Shared extractor, one head per training domain, and a relation net."""

    extractor: Mlp
    heads: list[Mlp]
    relation_net: RelationNet
    head_domains: list[str]
    task: str
    combine_space: str = "logit"

    def __post_init__(self):
        if len(self.heads) != len(self.head_domains):
            raise ValueError("need exactly one head per training domain")

    def params(self) -> list[np.ndarray]:
        out = self.extractor.params()
        for h in self.heads:
            out.extend(h.params())
        out.extend(self.relation_net.params())
        return out

    def copy(self) -> "MultiHeadModel":
        return MultiHeadModel(
            self.extractor.copy(),
            [h.copy() for h in self.heads],
            self.relation_net.copy(),
            list(self.head_domains),
            self.task,
            self.combine_space,
        )

    def set_params(self, arrays: list[np.ndarray]) -> None:
        own = self.params()
        if len(own) != len(arrays):
            raise ValueError("parameter list length mismatch")
        for p, a in zip(own, arrays):
            np.copyto(p, a)


def _out_dim(dataset: DomainDataset) -> int:
    return dataset.n_classes if dataset.task == TASK_CLASSIFICATION else 1


def build_model(dataset: DomainDataset, config: TrainConfig) -> MultiHeadModel:
    config.validate()
    train_ids = dataset.ids_for_split("train")
    if len(train_ids) < 2:
        raise ConfigError("need at least two training domains")
    out = _out_dim(dataset)
    extractor = Mlp.init(
        [dataset.n_features, config.hidden_width],
        ["relu"],
        substream(config.seed, "init", "extractor"),
    )
    heads = [
        Mlp.init([config.hidden_width, out], ["identity"], substream(config.seed, "init", "head", k))
        for k in range(len(train_ids))
    ]
    net = RelationNet.init(
        dataset.meta_dim,
        substream(config.seed, "init", "relations"),
        width=config.relation_width,
        n_heads=config.relation_heads,
    )
    return MultiHeadModel(extractor, heads, net, train_ids, dataset.task, config.combine_space)


def predict_head(model: MultiHeadModel, domain_id: str, x) -> np.ndarray:
    """Raw output of one domain's head on extractor features."""
    if domain_id not in model.head_domains:
        raise ValueError(f"unknown training domain {domain_id!r}")
    phi, _ = forward(model.extractor, x)
    out, _ = forward(model.heads[model.head_domains.index(domain_id)], phi)
    return out


# -- loss terms ---------------------------------------------------------------


def _stack_heads(model: MultiHeadModel, x: np.ndarray):
    phi, e_tape = forward(model.extractor, x)
    outs, tapes = [], []
    for h in model.heads:
        o, t = forward(h, phi)
        outs.append(o)
        tapes.append(t)
    return phi, e_tape, np.stack(outs), tapes  # outs: (K, n, c)


def _relation_rows(relations, head_domains: list[str]) -> np.ndarray | None:
    """Normalize the accepted relation argument to a (K, K) array or None."""
    if relations is None or (isinstance(relations, str) and relations == "uniform"):
        return None
    if isinstance(relations, RelationMatrix):
        if relations.ids != list(head_domains):
            raise ValueError("relation matrix domains do not match the model heads")
        return relations.fused
    a = np.asarray(relations, dtype=np.float64)
    k = len(head_domains)
    if a.shape != (k, k):
        raise ValueError(f"expected a ({k}, {k}) relation matrix, got {a.shape}")
    return a


def _consistency_weights(a: np.ndarray | None, dom: np.ndarray, k: int):
    """Per-example weights over heads, self excluded, rows summing to one.

    Returns (u, s, fallback) where s is the pre-normalization row sum and
    fallback marks rows that degraded to uniform weights (no gradient flows
    into the relations there).
    """
    n = dom.shape[0]
    if k < 2:
        raise ValueError("consistency needs at least two heads")
    if a is None:
        u = np.full((n, k), 1.0 / (k - 1))
        u[np.arange(n), dom] = 0.0
        return u, None, None
    rows = a[dom].copy()
    rows[np.arange(n), dom] = 0.0
    s = rows.sum(axis=1)
    fallback = s <= REL_EPS
    u = np.zeros_like(rows)
    np.divide(rows, s[:, None], out=u, where=~fallback[:, None])
    if fallback.any():
        u[fallback] = 1.0 / (k - 1)
        u[np.arange(n)[fallback], dom[fallback]] = 0.0
    return u, s, fallback


def _batch_arrays(batch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, y, dom = batch
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    dom = np.asarray(dom, dtype=np.int64)
    if x.ndim != 2 or y.shape != (x.shape[0],) or dom.shape != (x.shape[0],):
        raise ValueError("batch must be (x (n,p), y (n,), domain (n,))")
    return x, y, dom


def loss_pred(model: MultiHeadModel, batch) -> float:
    """Mean loss of each example under its own domain's head."""
    x, y, dom = _batch_arrays(batch)
    _, _, outs, _ = _stack_heads(model, x)
    o_self = outs[dom, np.arange(len(y))]
    if model.task == TASK_CLASSIFICATION:
        return loss_ce_batch(o_self, y)[0]
    return loss_mse(o_self, y[:, None])[0]


def _mixture_forward(model, outs, u, y):
    """Consistency prediction and loss for a batch; returns backward context."""
    if model.task == TASK_CLASSIFICATION and model.combine_space == "prob":
        p = softmax(outs, axis=2)  # (K, n, c)
        mix = np.einsum("nk,knc->nc", u, p)
        n = len(y)
        labels = np.asarray(y).astype(np.int64)
        picked = np.maximum(mix[np.arange(n), labels], PROB_FLOOR)
        loss = float(-np.mean(np.log(picked)))
        g_mix = np.zeros_like(mix)
        g_mix[np.arange(n), labels] = -1.0 / (n * picked)
        return loss, g_mix, mix, p
    mix = np.einsum("nk,knc->nc", u, outs)
    if model.task == TASK_CLASSIFICATION:
        loss, g_mix = loss_ce_batch(mix, y)
    else:
        loss, g_mix = loss_mse(mix, np.asarray(y, dtype=np.float64)[:, None])
    return loss, g_mix, mix, None


def loss_rel(model: MultiHeadModel, batch, relations) -> float:
    """Mean loss of the relation-weighted average of the other heads.

    relations may be a RelationMatrix, a (K, K) array in head order, or
    "uniform" for equal weights. Each example's own head is excluded, and
    an all-zero relation row falls back to uniform weights.
    """
    x, y, dom = _batch_arrays(batch)
    a = _relation_rows(relations, model.head_domains)
    _, _, outs, _ = _stack_heads(model, x)
    u, _, _ = _consistency_weights(a, dom, len(model.heads))
    return _mixture_forward(model, outs, u, y)[0]


def total_loss(model: MultiHeadModel, batch, relations, lam: float) -> float:
    """Prediction loss plus lam times the consistency loss."""
    if lam < 0:
        raise ConfigError("lam must be nonnegative")
    base = loss_pred(model, batch)
    if lam == 0.0:
        return base
    return base + lam * loss_rel(model, batch, relations)


def total_loss_and_grads(
    model: MultiHeadModel,
    batch,
    fixed: np.ndarray | None,
    metas: np.ndarray | None,
    lam: float,
    beta: float,
    relation_mode: str = "fused",
):
    """Training objective with exact gradients for every parameter.

    The relation matrix is rebuilt from the current relation-net parameters
    on every call so the gradients through the learned similarities are
    exact. Returns (loss, (loss_pred, loss_rel), grads) with grads aligned
    to model.params().
    """
    x, y, dom = _batch_arrays(batch)
    n = len(y)
    k = len(model.heads)
    net = model.relation_net
    classification = model.task == TASK_CLASSIFICATION

    cache = None
    pre = None
    if relation_mode == "uniform":
        a = None
    elif beta == 1.0:
        pre = np.asarray(fixed, dtype=np.float64)
        a = np.maximum(pre, 0.0)
    else:
        a_l, cache = learned_matrix(net, metas)
        pre = beta * np.asarray(fixed, dtype=np.float64) + (1.0 - beta) * a_l
        a = np.maximum(pre, 0.0)

    phi, e_tape, outs, tapes = _stack_heads(model, x)

    o_self = outs[dom, np.arange(n)]
    if classification:
        lp, g_self = loss_ce_batch(o_self, y)
    else:
        lp, g_self = loss_mse(o_self, y[:, None])

    u, s, fallback = _consistency_weights(a, dom, k)
    lrel, g_mix, mix, p = _mixture_forward(model, outs, u, y)
    g_mix = lam * g_mix

    # gradients w.r.t. head outputs (in mixture space first)
    g_heads = u.T[:, :, None] * g_mix[None, :, :]  # (K, n, c)
    if p is not None:
        # mixture was over probabilities: pull back through each softmax
        inner = (g_heads * p).sum(axis=2, keepdims=True)
        g_heads = p * (g_heads - inner)
    g_heads[dom, np.arange(n)] += g_self

    # gradients w.r.t. the relation entries actually used
    net_grads = [np.zeros_like(q) for q in net.params()]
    if a is not None and s is not None and cache is not None:
        src = p if p is not None else outs
        tk = np.einsum("nc,knc->nk", g_mix, src)
        mm = np.einsum("nc,nc->n", g_mix, mix)
        contrib = np.zeros_like(u)
        ok = ~fallback
        np.divide(tk - mm[:, None], s[:, None], out=contrib, where=ok[:, None])
        contrib[np.arange(n), dom] = 0.0
        d_a = np.zeros((k, k))
        np.add.at(d_a, dom, contrib)
        d_a *= pre > 0.0  # clamp subgradient
        np.fill_diagonal(d_a, 0.0)
        net_grads = learned_matrix_backward(net, cache, (1.0 - beta) * d_a)

    d_phi = np.zeros_like(phi)
    head_grads: list[np.ndarray] = []
    for j in range(k):
        hg, d_phi_j = backward(model.heads[j], tapes[j], g_heads[j])
        head_grads.extend(hg)
        d_phi += d_phi_j
    e_grads, _ = backward(model.extractor, e_tape, d_phi)

    loss = lp + lam * lrel
    grads = e_grads + head_grads + net_grads
    return loss, (lp, lrel), grads


# -- training loops -----------------------------------------------------------


def _epoch_order(n: int, dom: np.ndarray, config: TrainConfig, epoch: int) -> np.ndarray:
    if not config.domain_balanced_sampling:
        return substream(config.seed, "train", "shuffle", epoch).permutation(n)
    rng = substream(config.seed, "train", "balance", epoch)
    groups = [np.flatnonzero(dom == d) for d in np.unique(dom)]
    m = max(len(g) for g in groups)
    idx = np.concatenate([rng.choice(g, size=m, replace=True) for g in groups])
    rng.shuffle(idx)
    return idx


def _metric_better(candidate: float, best: float, task: str) -> bool:
    if task == TASK_CLASSIFICATION:
        return candidate > best
    return candidate < best


def train(model: MultiHeadModel, dataset: DomainDataset, config: TrainConfig) -> list[dict]:
    """Optimize the model on the dataset's training domains.

    Per epoch: seeded shuffle, mini-batches, one Adam step per batch; the
    relation matrix is rebuilt inside every batch so relation-net gradients
    stay exact. If validation domains exist, the valid-split metric is
    recorded every eval_every epochs and the best parameters are restored
    at the end (config.select_best). Returns the per-epoch history.
    """
    config.validate()
    if model.head_domains != dataset.ids_for_split("train"):
        raise ValueError("model heads do not match the dataset's training domains")
    if len(model.head_domains) < 2:
        raise ConfigError("need at least two training domains")
    x, y, dom = dataset.arrays_for(model.head_domains)
    metas = dataset.meta_for(model.head_domains)
    fixed = dataset.fixed_matrix(model.head_domains)
    params = model.params()
    opt = init_opt_state(params)
    n = len(y)
    has_valid = bool(dataset.ids_for_split("valid"))
    eval_mode = "uniform" if config.relation_mode == "uniform" else "fused"

    history: list[dict] = []
    best_metric: float | None = None
    best_params: list[np.ndarray] | None = None
    for epoch in range(config.epochs):
        idx = _epoch_order(n, dom, config, epoch)
        sums = np.zeros(3)
        seen = 0
        for start in range(0, len(idx), config.batch_size):
            b = idx[start : start + config.batch_size]
            loss, (lp, lrel), grads = total_loss_and_grads(
                model,
                (x[b], y[b], dom[b]),
                fixed,
                metas,
                config.lam,
                config.beta,
                config.relation_mode,
            )
            if not np.isfinite(loss):
                raise NumericalError(
                    f"non-finite training loss at epoch {epoch}, batch {start // config.batch_size}"
                    f" (pred={lp!r}, consistency={lrel!r})"
                )
            adam_step(params, grads, opt, config.lr, config.weight_decay)
            sums += np.array([loss, lp, lrel]) * len(b)
            seen += len(b)
        entry = {
            "epoch": epoch,
            "loss": sums[0] / seen,
            "loss_pred": sums[1] / seen,
            "loss_rel": sums[2] / seen,
        }
        if has_valid and ((epoch + 1) % config.eval_every == 0 or epoch == config.epochs - 1):
            report = evaluate(
                relational_predictor(model, dataset, config.beta, eval_mode),
                dataset,
                "valid",
            )
            entry["valid"] = report.mean
            if config.select_best and (
                best_metric is None or _metric_better(report.mean, best_metric, model.task)
            ):
                best_metric = report.mean
                best_params = [q.copy() for q in params]
        history.append(entry)
    if best_params is not None:
        model.set_params(best_params)
    return history


# -- inference ----------------------------------------------------------------


def combine_heads(model: MultiHeadModel, weights, x) -> np.ndarray:
    """Relation-weighted combination of head outputs on x.

    Weights are normalized to a simplex (all-zero rows fall back to uniform
    with a logged warning). In "prob" combine space the heads' softmax
    outputs are averaged instead of raw logits.
    """
    w = normalize_weights(weights)
    if w.shape[0] != len(model.heads):
        raise ValueError("need one weight per head")
    xb = np.asarray(x, dtype=np.float64)
    single = xb.ndim == 1
    phi, _ = forward(model.extractor, xb if not single else xb[None, :])
    outs = np.stack([forward(h, phi)[0] for h in model.heads])
    if model.task == TASK_CLASSIFICATION and model.combine_space == "prob":
        outs = softmax(outs, axis=2)
    combined = np.einsum("k,knc->nc", w, outs)
    return combined[0] if single else combined


def infer(model: MultiHeadModel, weights, x) -> np.ndarray | float | int:
    """Final prediction under relation weights: argmax label or value."""
    combined = combine_heads(model, weights, x)
    single = combined.ndim == 1
    block = combined[None, :] if single else combined
    if model.task == TASK_CLASSIFICATION:
        pred = block.argmax(axis=1)
        return int(pred[0]) if single else pred
    pred = block[:, 0]
    return float(pred[0]) if single else pred


def infer_uniform(model: MultiHeadModel, x):
    """Prediction with equal weight on every head (no-relations variant)."""
    return infer(model, np.ones(len(model.heads)), x)


def relational_predictor(
    model: MultiHeadModel,
    dataset: DomainDataset,
    beta: float,
    mode: str = "fused",
):
    """Build predict(domain_id, x) using the domain's relation row.

    mode selects the weights: "fused" (fixed and learned, fused with beta),
    "fixed", "learned", or "uniform".
    """
    if mode not in ("fused", "fixed", "learned", "uniform"):
        raise ConfigError(f"unknown relation mode {mode!r}")
    train_ids = model.head_domains
    metas = dataset.meta_for(train_ids)
    rows: dict[str, np.ndarray] = {}

    def row_for(domain_id: str) -> np.ndarray:
        if domain_id not in rows:
            if mode == "uniform":
                rows[domain_id] = np.ones(len(train_ids))
            else:
                fixed_row = dataset.fixed_between([domain_id], train_ids)[0]
                eff_beta = {"fused": beta, "fixed": 1.0, "learned": 0.0}[mode]
                rows[domain_id] = relation_row(
                    model.relation_net,
                    dataset.meta_for([domain_id])[0],
                    metas,
                    fixed_row,
                    eff_beta,
                )
        return rows[domain_id]

    def predict(domain_id: str, x):
        return infer(model, row_for(domain_id), x)

    return predict


# -- pooled baseline and reweighted fine-tuning --------------------------------


@dataclass
class ErmModel:
    """Single-head baseline trained on pooled data, meta-data as features."""

    extractor: Mlp
    head: Mlp
    task: str
    meta_dim: int

    def params(self) -> list[np.ndarray]:
        return self.extractor.params() + self.head.params()

    def copy(self) -> "ErmModel":
        return ErmModel(self.extractor.copy(), self.head.copy(), self.task, self.meta_dim)

    def predict_raw(self, x, meta_row) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        feats = np.hstack([x, np.tile(np.asarray(meta_row, dtype=np.float64), (x.shape[0], 1))])
        phi, _ = forward(self.extractor, feats)
        out, _ = forward(self.head, phi)
        return out

    def predict(self, x, meta_row):
        out = self.predict_raw(x, meta_row)
        if self.task == TASK_CLASSIFICATION:
            return out.argmax(axis=1)
        return out[:, 0]


def _pooled_features(dataset: DomainDataset, ids: list[str]):
    x, y, dom = dataset.arrays_for(ids)
    metas = dataset.meta_for(ids)
    return np.hstack([x, metas[dom]]), y, dom


def _plain_loss(net_out, y, task):
    if task == TASK_CLASSIFICATION:
        return loss_ce_batch(net_out, y)
    return loss_mse(net_out, np.asarray(y, dtype=np.float64)[:, None])


def train_erm(
    dataset: DomainDataset,
    config: TrainConfig,
    model: ErmModel | None = None,
) -> tuple[ErmModel, list[dict]]:
    """Pooled training over all training domains with one shared head.

    Domain meta-data is appended to the input features so the baseline sees
    the same information the relation-weighted model gets through its
    relation net. The extractor architecture matches build_model. Pass an
    existing model to continue training it in place.
    """
    config.validate()
    train_ids = dataset.ids_for_split("train")
    if not train_ids:
        raise ConfigError("no training domains")
    feats, y, dom = _pooled_features(dataset, train_ids)
    out = _out_dim(dataset)
    if model is None:
        model = ErmModel(
            extractor=Mlp.init(
                [feats.shape[1], config.hidden_width],
                ["relu"],
                substream(config.seed, "init", "erm-extractor"),
            ),
            head=Mlp.init(
                [config.hidden_width, out], ["identity"], substream(config.seed, "init", "erm-head")
            ),
            task=dataset.task,
            meta_dim=dataset.meta_dim,
        )
    elif model.extractor.in_dim != feats.shape[1] or model.head.out_dim != out:
        raise ConfigError(
            f"model expects {model.extractor.in_dim} input features and "
            f"{model.head.out_dim} outputs; dataset provides {feats.shape[1]} and {out}"
        )
    history = _erm_loop(model, feats, y, dom, config, dataset)
    return model, history


def _erm_loop(
    model: ErmModel,
    feats: np.ndarray,
    y: np.ndarray,
    dom: np.ndarray,
    config: TrainConfig,
    dataset: DomainDataset | None,
    example_weights: np.ndarray | None = None,
    stream: str = "train",
) -> list[dict]:
    params = model.params()
    opt = init_opt_state(params)
    n = len(y)
    has_valid = dataset is not None and bool(dataset.ids_for_split("valid"))
    history: list[dict] = []
    best_metric: float | None = None
    best_params: list[np.ndarray] | None = None
    for epoch in range(config.epochs if example_weights is None else config.finetune_epochs):
        idx = _epoch_order(n, dom, config, epoch) if stream == "train" else substream(
            config.seed, stream, "shuffle", epoch
        ).permutation(n)
        total = 0.0
        seen = 0
        for start in range(0, len(idx), config.batch_size):
            b = idx[start : start + config.batch_size]
            phi, e_tape = forward(model.extractor, feats[b])
            out, h_tape = forward(model.head, phi)
            loss, g = _plain_loss(out, y[b], model.task)
            if example_weights is not None:
                g = g * example_weights[b][:, None]
                loss = float(np.sum(example_weights[b] * _per_example(out, y[b], model.task)) / len(b))
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite pooled-training loss at epoch {epoch}")
            h_grads, d_phi = backward(model.head, h_tape, g)
            e_grads, _ = backward(model.extractor, e_tape, d_phi)
            adam_step(params, e_grads + h_grads, opt, config.lr, config.weight_decay)
            total += loss * len(b)
            seen += len(b)
        entry = {"epoch": epoch, "loss": total / seen}
        if has_valid and ((epoch + 1) % config.eval_every == 0 or epoch == config.epochs - 1):
            report = evaluate(erm_predictor(model, dataset), dataset, "valid")
            entry["valid"] = report.mean
            if config.select_best and (
                best_metric is None or _metric_better(report.mean, best_metric, model.task)
            ):
                best_metric = report.mean
                best_params = [q.copy() for q in params]
        history.append(entry)
    if best_params is not None:
        for p, q in zip(params, best_params):
            np.copyto(p, q)
    return history


def _per_example(out: np.ndarray, y, task: str) -> np.ndarray:
    if task == TASK_CLASSIFICATION:
        labels = np.asarray(y).astype(np.int64)
        m = out.max(axis=1)
        lse = m + np.log(np.exp(out - m[:, None]).sum(axis=1))
        return lse - out[np.arange(len(labels)), labels]
    return ((out[:, 0] - np.asarray(y, dtype=np.float64)) ** 2)


def erm_predictor(model: ErmModel, dataset: DomainDataset):
    def predict(domain_id: str, x):
        return model.predict(x, dataset.meta_for([domain_id])[0])

    return predict


def rw_finetune(
    erm: ErmModel,
    dataset: DomainDataset,
    relation_weights,
    config: TrainConfig,
) -> ErmModel:
    """Fine-tune a copy of the pooled model on relation-reweighted data.

    relation_weights holds one nonnegative weight per training domain (in
    ids_for_split("train") order); each example's loss is scaled by its
    domain's weight, normalized to mean one over the training set, so
    zero-weight domains contribute nothing. With finetune_epochs == 0 the
    returned model equals the input.
    """
    config.validate()
    train_ids = dataset.ids_for_split("train")
    w = normalize_weights(relation_weights)
    if w.shape[0] != len(train_ids):
        raise ValueError("need one relation weight per training domain")
    feats, y, dom = _pooled_features(dataset, train_ids)
    q = w[dom]
    q = q * (len(q) / q.sum())
    tuned = erm.copy()
    _erm_loop(tuned, feats, y, dom, config, None, example_weights=q, stream="rwft")
    return tuned


def rwft_predictor(erm: ErmModel, dataset: DomainDataset, config: TrainConfig):
    """Per-domain prediction after fine-tuning on fixed-relation weights.

    The pooled baseline has no trained relation net, so the reweighting
    uses the dataset's fixed relations to the target domain.
    """
    train_ids = dataset.ids_for_split("train")
    tuned: dict[str, ErmModel] = {}

    def predict(domain_id: str, x):
        if domain_id not in tuned:
            row = dataset.fixed_between([domain_id], train_ids)[0]
            tuned[domain_id] = rw_finetune(erm, dataset, row, config)
        return tuned[domain_id].predict(x, dataset.meta_for([domain_id])[0])

    return predict


# -- evaluation ----------------------------------------------------------------


@dataclass
class MetricsReport:
    """Per-domain metric values plus their mean and worst case."""

    metric: str  # "accuracy" or "mse"
    split: str
    per_domain: dict[str, float]
    mean: float
    worst: float
    n_examples: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "split": self.split,
            "per_domain": dict(self.per_domain),
            "mean": self.mean,
            "worst": self.worst,
            "n_examples": dict(self.n_examples),
        }


def evaluate(predict_fn, dataset: DomainDataset, split: str, task: str | None = None) -> MetricsReport:
    """Apply predict(domain_id, x) to every domain of a split.

    The mean is the unweighted mean over domains; "worst" is the minimum
    accuracy for classification and the maximum error for regression.
    """
    if not callable(predict_fn):
        raise ValueError(
            "evaluate takes a predictor, not a model; wrap it with "
            "relational_predictor(...) or erm_predictor(...) first"
        )
    task = task or dataset.task
    ids = dataset.ids_for_split(split)
    if not ids:
        raise DataError(f"no domains in split {split!r}")
    per: dict[str, float] = {}
    counts: dict[str, int] = {}
    for d in ids:
        x, y = dataset.domain_arrays(d)
        if x.shape[0] == 0:
            raise DataError(f"domain {d!r} has no examples")
        pred = np.asarray(predict_fn(d, x))
        if task == TASK_CLASSIFICATION:
            per[d] = float(np.mean(pred.astype(np.int64) == y.astype(np.int64)))
        else:
            per[d] = float(np.mean((pred - y) ** 2))
        counts[d] = int(x.shape[0])
    values = np.array([per[d] for d in ids])
    if task == TASK_CLASSIFICATION:
        return MetricsReport("accuracy", split, per, float(values.mean()), float(values.min()), counts)
    return MetricsReport("mse", split, per, float(values.mean()), float(values.max()), counts)


# -- checkpoints ----------------------------------------------------------------

CHECKPOINT_SCHEMA = "relgen-checkpoint/1"


def _mlp_entries(prefix: str, mlp: Mlp, arrays: dict, acts: list[str]) -> None:
    for i, layer in enumerate(mlp.layers):
        arrays[f"{prefix}/{i}/w"] = layer.w
        arrays[f"{prefix}/{i}/b"] = layer.b
        acts.append(layer.act)


def _mlp_from_entries(prefix: str, arrays, acts: list[str]) -> Mlp:
    layers = []
    i = 0
    while f"{prefix}/{i}/w" in arrays:
        layers.append(Layer(arrays[f"{prefix}/{i}/w"], arrays[f"{prefix}/{i}/b"], acts[i]))
        i += 1
    return Mlp(layers)


def save_checkpoint(path: str, model, config: TrainConfig, extra: dict | None = None) -> None:
    """Write a self-describing checkpoint (npz with a JSON header entry)."""
    if not isinstance(model, (MultiHeadModel, ErmModel)):
        raise ValueError(f"cannot checkpoint object of type {type(model).__name__}")
    arrays: dict[str, np.ndarray] = {}
    header: dict = {
        "schema": CHECKPOINT_SCHEMA,
        "version": __version__,
        "task": model.task,
        "config": config.to_dict(),
        "extra": extra or {},
    }
    if isinstance(model, MultiHeadModel):
        header["kind"] = "multi_head"
        header["head_domains"] = list(model.head_domains)
        header["combine_space"] = model.combine_space
        acts: dict[str, list[str]] = {"extractor": [], "relation_g": []}
        _mlp_entries("extractor", model.extractor, arrays, acts["extractor"])
        head_acts: list[str] = []
        for k, h in enumerate(model.heads):
            local: list[str] = []
            _mlp_entries(f"head/{k}", h, arrays, local)
            head_acts = local
        acts["head"] = head_acts
        _mlp_entries("relation/g", model.relation_net.g, arrays, acts["relation_g"])
        arrays["relation/w"] = model.relation_net.w
        header["acts"] = acts
    elif isinstance(model, ErmModel):
        header["kind"] = "erm"
        header["meta_dim"] = model.meta_dim
        acts = {"extractor": [], "head": []}
        _mlp_entries("extractor", model.extractor, arrays, acts["extractor"])
        _mlp_entries("head", model.head, arrays, acts["head"])
        header["acts"] = acts
    else:
        raise ValueError(f"cannot checkpoint object of type {type(model).__name__}")
    tmp, commit = atomic_writer(path)
    with open(tmp, "wb") as fh:
        np.savez(fh, __header__=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8), **arrays)
    commit()


def load_checkpoint(path: str):
    """Read a checkpoint; returns (model, header dict)."""
    if not os.path.exists(path):
        raise ConfigError(f"checkpoint not found: {path}")
    with np.load(path) as z:
        arrays = {k: z[k] for k in z.files}
    if "__header__" not in arrays:
        raise DataError(f"{path}: not a checkpoint (missing header)")
    header = json.loads(arrays.pop("__header__").tobytes().decode())
    if header.get("schema") != CHECKPOINT_SCHEMA:
        raise DataError(f"{path}: unsupported checkpoint schema {header.get('schema')!r}")
    acts = header["acts"]
    if header["kind"] == "multi_head":
        heads = []
        for k in range(len(header["head_domains"])):
            heads.append(_mlp_from_entries(f"head/{k}", arrays, acts["head"]))
        model = MultiHeadModel(
            extractor=_mlp_from_entries("extractor", arrays, acts["extractor"]),
            heads=heads,
            relation_net=RelationNet(
                _mlp_from_entries("relation/g", arrays, acts["relation_g"]),
                arrays["relation/w"],
            ),
            head_domains=list(header["head_domains"]),
            task=header["task"],
            combine_space=header["combine_space"],
        )
        return model, header
    if header["kind"] == "erm":
        model = ErmModel(
            extractor=_mlp_from_entries("extractor", arrays, acts["extractor"]),
            head=_mlp_from_entries("head", arrays, acts["head"]),
            task=header["task"],
            meta_dim=int(header["meta_dim"]),
        )
        return model, header
    raise DataError(f"{path}: unknown checkpoint kind {header['kind']!r}")
