"""Training and evaluation loops.

A batch is a list of dialogues. Each batch builds one fresh tape: the
parameters are bound as leaves, every dialogue runs forward, and the
objective is the mean cross-entropy over all utterances in the batch
(utterance mean, not dialogue mean, so long dialogues weigh more). One
backward sweep per batch, then an Adam step on the raw numpy parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DiffValue, Tape
from .corpus import Dialogue, EmbeddingStore
from .graph import DiscourseGraph, build_graph
from .metrics import MetricsReport, weighted_f1
from .model import ModelParams, bind_params, forward, infer_logits


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-5
    batch_size: int = 16
    epochs: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = None
    seed: int = 0
    shuffle: bool = True
    class_weighted: bool = False   # inverse-frequency loss weights from the train split

    def validate(self) -> None:
        if self.lr < 0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        for name, beta in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0.0 <= beta < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {beta}")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm}")


@dataclass
class AdamState:
    """First/second moment accumulators, keyed like the parameter dict."""
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def fresh(cls, params: ModelParams) -> "AdamState":
        return cls(step=0,
                   m={k: np.zeros_like(a) for k, a in params.values.items()},
                   v={k: np.zeros_like(a) for k, a in params.values.items()})


def adam_step(params: ModelParams, grads: Mapping[str, np.ndarray],
              state: AdamState, config: TrainConfig) -> None:
    """In-place Adam update with bias correction."""
    state.step += 1
    t = state.step
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * g * g
        m_hat = m / (1.0 - config.beta1 ** t)
        v_hat = v / (1.0 - config.beta2 ** t)
        params.values[name] -= config.lr * m_hat / (np.sqrt(v_hat) + config.eps)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place if their global L2 norm exceeds max_norm."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


def dialogue_graphs(dialogues: Sequence[Dialogue],
                    ignore_edges: bool = False) -> list[DiscourseGraph]:
    """Build each dialogue's graph once; optionally drop all edges."""
    return [build_graph(len(d), () if ignore_edges else d.edge_pairs())
            for d in dialogues]


def cross_entropy(logit_rows: Sequence[DiffValue], labels: Sequence[int],
                  class_weights: Sequence[float] | None = None) -> DiffValue:
    """Mean negative log-softmax of the true class over the given rows.

    With class weights the mean is weighted: sum(w_y * nll) / sum(w_y),
    so the loss scale stays comparable to the unweighted case.
    """
    if len(logit_rows) != len(labels):
        raise ad.ShapeError(f"cross_entropy: {len(logit_rows)} rows for {len(labels)} labels")
    if not labels:
        raise ValueError("cross_entropy: no utterances")
    nlls = [ad.nll_logits(row, label) for row, label in zip(logit_rows, labels)]
    if class_weights is None:
        return ad.scalar_mean(ad.concat(*nlls))
    scaled = [ad.scale(nll, float(class_weights[label]))
              for nll, label in zip(nlls, labels)]
    total = sum(float(class_weights[label]) for label in labels)
    if total <= 0:
        raise ValueError("cross_entropy: class weights sum to zero over this batch")
    return ad.scale(ad.scalar_mean(ad.concat(*scaled)), len(labels) / total)


def inverse_frequency_weights(dialogues: Sequence[Dialogue], num_classes: int) -> np.ndarray:
    """w_c = total/(num_classes * count_c); absent classes get weight 0."""
    counts = np.zeros(num_classes)
    for dialogue in dialogues:
        for label in dialogue.labels():
            counts[label] += 1
    weights = np.zeros(num_classes)
    present = counts > 0
    weights[present] = counts.sum() / (num_classes * counts[present])
    return weights


def batch_loss(tape: Tape, binding: Mapping[str, DiffValue], params: ModelParams,
               dialogues: Sequence[Dialogue], graphs: Sequence[DiscourseGraph],
               store: EmbeddingStore,
               class_weights: Sequence[float] | None = None) -> DiffValue:
    """Mean cross-entropy over every utterance in the batch, on one tape."""
    rows: list[DiffValue] = []
    labels: list[int] = []
    for dialogue, graph in zip(dialogues, graphs):
        emb = store.matrix(dialogue.id)
        utterances = [tape.leaf(emb[i]) for i in range(len(dialogue))]
        rows.extend(forward(binding, params.config, utterances, graph))
        labels.extend(dialogue.labels())
    return cross_entropy(rows, labels, class_weights)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    dev_wf1: float | None = None


@dataclass
class TrainHistory:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int | None = None   # 1-based; None when no dev split was given

    def last_loss(self) -> float:
        if not self.epochs:
            raise ValueError("no epochs recorded")
        return self.epochs[-1].train_loss


def train(params: ModelParams, dialogues: Sequence[Dialogue], store: EmbeddingStore,
          config: TrainConfig, dev_dialogues: Sequence[Dialogue] = (),
          ignore_edges: bool = False,
          log: Callable[[EpochStats], None] | None = None) -> TrainHistory:
    """Run the full loop, mutating ``params`` in place.

    Dialogue order is reshuffled every epoch from a generator seeded once
    with ``config.seed``, so the whole run is a deterministic function of
    (initial params, data, config). With a dev split, ``params`` ends at
    the epoch with the highest dev weighted F1 (first such epoch on ties);
    without one it ends at the final epoch.
    """
    config.validate()
    if not dialogues:
        raise ValueError("train: no dialogues")
    graphs = dialogue_graphs(dialogues, ignore_edges=ignore_edges)
    dev_graphs = dialogue_graphs(dev_dialogues, ignore_edges=ignore_edges)
    class_weights = (inverse_frequency_weights(dialogues, params.config.num_classes)
                     if config.class_weighted else None)
    state = AdamState.fresh(params)
    rng = np.random.default_rng(config.seed)
    history = TrainHistory()
    best_values: dict[str, np.ndarray] | None = None
    best_score = -np.inf

    order = np.arange(len(dialogues))
    for epoch in range(1, config.epochs + 1):
        if config.shuffle:
            rng.shuffle(order)
        losses: list[float] = []
        for start in range(0, len(order), config.batch_size):
            chosen = order[start:start + config.batch_size]
            tape = Tape()
            binding = bind_params(tape, params)
            loss = batch_loss(tape, binding, params,
                              [dialogues[i] for i in chosen],
                              [graphs[i] for i in chosen], store, class_weights)
            tape.backward(loss)
            grads = {name: binding[name].grad for name in binding}
            if config.clip_norm is not None:
                clip_gradients(grads, config.clip_norm)
            adam_step(params, grads, state, config)
            losses.append(float(loss.data))
        dev_score = None
        if dev_dialogues:
            dev_score = evaluate(params, dev_dialogues, store,
                                 graphs=dev_graphs).weighted_f1
            if dev_score > best_score:
                best_score = dev_score
                best_values = {k: v.copy() for k, v in params.values.items()}
                history.best_epoch = epoch
        stats = EpochStats(epoch=epoch, train_loss=float(np.mean(losses)),
                           dev_wf1=dev_score)
        history.epochs.append(stats)
        if log is not None:
            log(stats)
    if best_values is not None:
        params.values = best_values
    return history


def predict_dialogue(params: ModelParams, dialogue: Dialogue, store: EmbeddingStore,
                     graph: DiscourseGraph | None = None,
                     ignore_edges: bool = False) -> list[int]:
    if graph is None:
        graph = build_graph(len(dialogue), () if ignore_edges else dialogue.edge_pairs())
    logits = infer_logits(params, store.matrix(dialogue.id), graph)
    return [int(np.argmax(row)) for row in logits]


def evaluate(params: ModelParams, dialogues: Sequence[Dialogue], store: EmbeddingStore,
             ignore_edges: bool = False,
             graphs: Sequence[DiscourseGraph] | None = None) -> MetricsReport:
    """Weighted F1 over every utterance of every dialogue."""
    if graphs is None:
        graphs = dialogue_graphs(dialogues, ignore_edges=ignore_edges)
    preds: list[int] = []
    golds: list[int] = []
    for dialogue, graph in zip(dialogues, graphs):
        preds.extend(predict_dialogue(params, dialogue, store, graph=graph))
        golds.extend(dialogue.labels())
    return weighted_f1(preds, golds, params.config.num_classes)
