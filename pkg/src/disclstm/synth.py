"""Synthetic dialogue corpora for desk-scale verification.

Two tasks:

* ``local``: each utterance's label is a deterministic function of its own
  embedding (nearest class prototype by dot product), so a memoryless
  classifier can solve it.
* ``discourse``: every non-root utterance gets exactly one edge from a
  uniformly sampled earlier utterance, and its label is the rule applied to
  that predecessor's embedding. Its own embedding is drawn independently of
  its label, so solving the task requires moving information along edges.

Generation is bit-deterministic given the seed, and the labeling rule is
re-derivable from (dim, num_classes, seed) so tests can audit emitted
corpora exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Dialogue, EmbeddingStore, Utterance

# Distinct sub-streams of the seed, so prototypes can be re-derived
# without replaying dialogue generation.
_PROTO_STREAM = 101
_DIALOGUE_STREAM = 202


@dataclass(frozen=True)
class SynthConfig:
    n_dialogues: int                    # train split size
    len_range: tuple[int, int] = (4, 8)
    dim: int = 16
    num_classes: int = 3
    task: str = "local"                 # "local" | "discourse"
    n_dev: int = 0
    n_test: int = 0
    noise: float = 0.1
    speakers: int = 2

    def validate(self) -> None:
        if self.dim < 2:
            raise ValueError(f"dim must be >= 2, got {self.dim}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        lo, hi = self.len_range
        if lo < 2 or hi < lo:
            raise ValueError(f"len_range must satisfy 2 <= min <= max, got {self.len_range}")
        if self.task not in ("local", "discourse"):
            raise ValueError(f"task must be 'local' or 'discourse', got {self.task!r}")
        if self.n_dialogues < 1 or self.n_dev < 0 or self.n_test < 0:
            raise ValueError("split sizes must be n_dialogues >= 1, n_dev >= 0, n_test >= 0")
        if self.noise < 0:
            raise ValueError(f"noise must be >= 0, got {self.noise}")
        if self.speakers < 1:
            raise ValueError(f"speakers must be >= 1, got {self.speakers}")


def class_prototypes(dim: int, num_classes: int, seed: int) -> np.ndarray:
    """Unit prototype directions, one per class, shape (num_classes, dim).

    Orthonormal when num_classes <= dim. Deterministic in (dim,
    num_classes, seed) only, so auditors can re-derive the labeling rule.
    """
    rng = np.random.default_rng([seed, _PROTO_STREAM])
    raw = rng.standard_normal((dim, num_classes))
    if num_classes <= dim:
        q, r = np.linalg.qr(raw)
        protos = (q * np.sign(np.diag(r))).T
    else:
        protos = raw.T / np.linalg.norm(raw.T, axis=1, keepdims=True)
    return protos


def label_rule(embedding: np.ndarray, prototypes: np.ndarray) -> int:
    """Class of the nearest prototype by dot product; ties take the lowest index."""
    return int(np.argmax(prototypes @ embedding))


def generate_synthetic(cfg: SynthConfig, seed: int) -> tuple[Corpus, EmbeddingStore]:
    cfg.validate()
    protos = class_prototypes(cfg.dim, cfg.num_classes, seed)
    rng = np.random.default_rng([seed, _DIALOGUE_STREAM])
    lo, hi = cfg.len_range

    splits: dict[str, tuple[Dialogue, ...]] = {}
    rows: dict[str, np.ndarray] = {}
    for split, count in (("train", cfg.n_dialogues), ("dev", cfg.n_dev), ("test", cfg.n_test)):
        dialogues = []
        for k in range(count):
            did = f"synth-{split}-{k:03d}"
            n = int(rng.integers(lo, hi + 1))
            content = rng.integers(0, cfg.num_classes, size=n)
            embs = protos[content] + cfg.noise * rng.standard_normal((n, cfg.dim))

            edges: list[tuple[int, int, str | None]] = []
            if cfg.task == "discourse":
                predecessors = [int(rng.integers(0, i)) for i in range(1, n)]
                edges = [(p, i + 1, None) for i, p in enumerate(predecessors)]
                labels = [label_rule(embs[0], protos)]
                labels += [label_rule(embs[p], protos) for p in predecessors]
            else:
                labels = [label_rule(embs[i], protos) for i in range(n)]

            speakers = rng.integers(0, cfg.speakers, size=n)
            utterances = tuple(
                Utterance(index=i, speaker=f"spk{int(speakers[i])}", label=labels[i])
                for i in range(n))
            dialogues.append(Dialogue(id=did, utterances=utterances, edges=tuple(edges)))
            rows[did] = embs
        splits[split] = tuple(dialogues)

    corpus = Corpus(
        splits=splits,
        num_classes=cfg.num_classes,
        label_names=tuple(f"class{c}" for c in range(cfg.num_classes)),
    )
    return corpus, EmbeddingStore(dim=cfg.dim, rows=rows)
