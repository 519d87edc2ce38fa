"""Dialogue corpus data model, file ingestion and manifest validation.

On-disk layout of a corpus directory:

* ``train.jsonl`` / ``dev.jsonl`` / ``test.jsonl``: one dialogue per line,
  ``{"id": ..., "utterances": [{"speaker", "text"?, "label"}], "edges": [[src, tgt, relation?]]}``
  with 0-based utterance indices and every edge pointing earlier -> later.
* optional ``corpus.json`` with ``{"label_names": [...]}`` for non-MELD label sets.

Utterance embeddings live next to the corpus as a little-endian float32
binary plus a JSON manifest ``{"dim", "dtype": "f32", "order": [{"dialogue_id",
"rows"}]}``; rows are concatenated in manifest order. Values are widened to
float64 on load. Corpus and EmbeddingStore are immutable once loaded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

# Canonical MELD emotion order; other corpora supply their own list.
MELD_LABELS = ("anger", "disgust", "sadness", "joy", "neutral", "surprise", "fear")

SPLIT_NAMES = ("train", "dev", "test")


class CorpusError(ValueError):
    """Malformed corpus, embedding, or manifest input."""


@dataclass(frozen=True)
class Utterance:
    index: int
    speaker: str
    label: int
    text: str | None = None


@dataclass(frozen=True)
class Dialogue:
    id: str
    utterances: tuple[Utterance, ...]
    edges: tuple[tuple[int, int, str | None], ...]

    def __len__(self) -> int:
        return len(self.utterances)

    def edge_pairs(self) -> list[tuple[int, int]]:
        """Edges with relation types discarded."""
        return [(src, tgt) for src, tgt, _ in self.edges]

    def labels(self) -> list[int]:
        return [u.label for u in self.utterances]


@dataclass(frozen=True)
class Corpus:
    splits: Mapping[str, tuple[Dialogue, ...]]
    num_classes: int
    label_names: tuple[str, ...]

    def dialogues(self) -> list[Dialogue]:
        """All dialogues across splits, train/dev/test order."""
        return [d for name in SPLIT_NAMES for d in self.splits.get(name, ())]


class EmbeddingStore:
    """Per-utterance embedding rows keyed by (dialogue id, utterance index)."""

    def __init__(self, dim: int, rows: Mapping[str, np.ndarray]):
        self.dim = dim
        self._rows = dict(rows)

    def __contains__(self, dialogue_id: str) -> bool:
        return dialogue_id in self._rows

    def matrix(self, dialogue_id: str) -> np.ndarray:
        """All rows for one dialogue, shape (n, dim)."""
        try:
            return self._rows[dialogue_id]
        except KeyError:
            raise CorpusError(f"no embeddings for dialogue id {dialogue_id!r}") from None

    def vector(self, dialogue_id: str, index: int) -> np.ndarray:
        rows = self.matrix(dialogue_id)
        if not 0 <= index < rows.shape[0]:
            raise CorpusError(f"embedding row {index} out of range for dialogue {dialogue_id!r}")
        return rows[index]

    def items(self):
        return self._rows.items()

    @property
    def total_rows(self) -> int:
        return sum(r.shape[0] for r in self._rows.values())


# ---------------------------------------------------------------------------
# dialogue JSONL
# ---------------------------------------------------------------------------

def _parse_dialogue(record, num_classes: int, where: str) -> Dialogue:
    if not isinstance(record, dict):
        raise CorpusError(f"{where}: dialogue record must be an object")
    try:
        did = record["id"]
        raw_utts = record["utterances"]
    except KeyError as e:
        raise CorpusError(f"{where}: missing field {e.args[0]!r}") from None
    if not isinstance(did, str) or not did:
        raise CorpusError(f"{where}: dialogue id must be a non-empty string")
    if not isinstance(raw_utts, list) or not raw_utts:
        raise CorpusError(f"{where}: dialogue {did!r} needs at least one utterance")

    utterances = []
    for i, u in enumerate(raw_utts):
        if not isinstance(u, dict):
            raise CorpusError(f"{where}: utterance {i} of {did!r} must be an object")
        speaker = u.get("speaker")
        label = u.get("label")
        if not isinstance(speaker, str):
            raise CorpusError(f"{where}: utterance {i} of {did!r}: speaker must be a string")
        if not isinstance(label, int) or isinstance(label, bool):
            raise CorpusError(f"{where}: utterance {i} of {did!r}: label must be an integer")
        if not 0 <= label < num_classes:
            raise CorpusError(
                f"{where}: utterance {i} of {did!r}: label {label} out of range [0, {num_classes})")
        text = u.get("text")
        if text is not None and not isinstance(text, str):
            raise CorpusError(f"{where}: utterance {i} of {did!r}: text must be a string or null")
        utterances.append(Utterance(index=i, speaker=speaker, label=label, text=text))

    n = len(utterances)
    edges: list[tuple[int, int, str | None]] = []
    seen_pairs: set[tuple[int, int]] = set()
    for e in record.get("edges", []):
        if not isinstance(e, list) or len(e) not in (2, 3):
            raise CorpusError(f"{where}: dialogue {did!r}: edge must be [src, tgt] or [src, tgt, relation]")
        src, tgt = e[0], e[1]
        relation = e[2] if len(e) == 3 else None
        if not isinstance(src, int) or not isinstance(tgt, int):
            raise CorpusError(f"{where}: dialogue {did!r}: edge endpoints must be integers")
        if not (0 <= src < n and 0 <= tgt < n):
            raise CorpusError(f"{where}: dialogue {did!r}: edge ({src}, {tgt}) out of range for n={n}")
        if src >= tgt:
            raise CorpusError(f"{where}: dialogue {did!r}: edge src must precede tgt, got ({src}, {tgt})")
        if (src, tgt) in seen_pairs:
            raise CorpusError(f"{where}: dialogue {did!r}: duplicate edge ({src}, {tgt})")
        seen_pairs.add((src, tgt))
        if relation is not None and not isinstance(relation, str):
            raise CorpusError(f"{where}: dialogue {did!r}: relation must be a string or null")
        edges.append((src, tgt, relation))

    return Dialogue(id=did, utterances=tuple(utterances), edges=tuple(edges))


def load_split(path: Path, num_classes: int,
               seen_ids: set[str] | None = None) -> tuple[Dialogue, ...]:
    """Load one JSONL split file; ``seen_ids`` detects cross-split id reuse."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"split file not found: {path}")
    seen = seen_ids if seen_ids is not None else set()
    dialogues = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{where}: malformed JSON ({e.msg})") from None
            dialogue = _parse_dialogue(record, num_classes, where)
            if dialogue.id in seen:
                raise CorpusError(f"{where}: duplicate dialogue id {dialogue.id!r}")
            seen.add(dialogue.id)
            dialogues.append(dialogue)
    return tuple(dialogues)


def load_corpus(path: Path, label_names: Sequence[str] | None = None) -> Corpus:
    """Load a corpus directory with train/dev/test JSONL splits.

    Label names come from, in order of precedence: the ``label_names``
    argument, a ``corpus.json`` file in the directory, the MELD-7 default.
    Missing split files load as empty splits; ``train.jsonl`` must exist.
    """
    root = Path(path)
    if not root.is_dir():
        raise CorpusError(f"corpus directory not found: {root}")
    if label_names is None:
        meta_path = root / "corpus.json"
        if meta_path.exists():
            try:
                meta = json.loads(meta_path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as e:
                raise CorpusError(f"{meta_path}: malformed JSON ({e.msg})") from None
            label_names = meta.get("label_names")
            if (not isinstance(label_names, list) or len(label_names) < 2
                    or not all(isinstance(s, str) for s in label_names)):
                raise CorpusError(f"{meta_path}: label_names must be a list of >= 2 strings")
        else:
            label_names = MELD_LABELS
    names = tuple(label_names)
    num_classes = len(names)

    if not (root / "train.jsonl").exists():
        raise CorpusError(f"missing train split: {root / 'train.jsonl'}")
    seen_ids: set[str] = set()
    splits = {}
    for split in SPLIT_NAMES:
        split_path = root / f"{split}.jsonl"
        splits[split] = (load_split(split_path, num_classes, seen_ids)
                         if split_path.exists() else ())
    return Corpus(splits=splits, num_classes=num_classes, label_names=names)


def dialogue_to_record(dialogue: Dialogue) -> dict:
    utts = []
    for u in dialogue.utterances:
        rec = {"speaker": u.speaker, "label": u.label}
        if u.text is not None:
            rec["text"] = u.text
        utts.append(rec)
    edges = [[src, tgt] if relation is None else [src, tgt, relation]
             for src, tgt, relation in dialogue.edges]
    return {"id": dialogue.id, "utterances": utts, "edges": edges}


def save_corpus(corpus: Corpus, path: Path) -> None:
    """Write split JSONL files plus corpus.json into a directory."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for split in SPLIT_NAMES:
        with (root / f"{split}.jsonl").open("w", encoding="utf-8") as fh:
            for dialogue in corpus.splits.get(split, ()):
                fh.write(json.dumps(dialogue_to_record(dialogue), separators=(",", ":")))
                fh.write("\n")
    meta = {"label_names": list(corpus.label_names)}
    (root / "corpus.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------

def load_embeddings(bin_path: Path, manifest_path: Path) -> EmbeddingStore:
    bin_path, manifest_path = Path(bin_path), Path(manifest_path)
    if not manifest_path.exists():
        raise CorpusError(f"embedding manifest not found: {manifest_path}")
    if not bin_path.exists():
        raise CorpusError(f"embedding binary not found: {bin_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CorpusError(f"{manifest_path}: malformed JSON ({e.msg})") from None

    dim = manifest.get("dim")
    if not isinstance(dim, int) or dim < 1:
        raise CorpusError(f"{manifest_path}: dim must be a positive integer")
    if manifest.get("dtype") != "f32":
        raise CorpusError(f"{manifest_path}: unsupported dtype {manifest.get('dtype')!r}, expected 'f32'")
    order = manifest.get("order")
    if not isinstance(order, list) or not order:
        raise CorpusError(f"{manifest_path}: order must be a non-empty list")

    entries: list[tuple[str, int]] = []
    total_rows = 0
    for k, entry in enumerate(order):
        did = entry.get("dialogue_id") if isinstance(entry, dict) else None
        rows = entry.get("rows") if isinstance(entry, dict) else None
        if not isinstance(did, str) or not isinstance(rows, int) or rows < 1:
            raise CorpusError(f"{manifest_path}: order[{k}] needs a dialogue_id and a positive rows count")
        entries.append((did, rows))
        total_rows += rows

    blob = bin_path.read_bytes()
    expected = total_rows * dim * 4
    if len(blob) != expected:
        raise CorpusError(
            f"{bin_path}: size mismatch, expected {expected} bytes "
            f"({total_rows} rows x {dim} x 4), found {len(blob)}")

    flat = np.frombuffer(blob, dtype="<f4").astype(np.float64).reshape(total_rows, dim)
    rows_by_id: dict[str, np.ndarray] = {}
    offset = 0
    for did, rows in entries:
        if did in rows_by_id:
            raise CorpusError(f"{manifest_path}: duplicate dialogue_id {did!r} in order")
        block = flat[offset:offset + rows]
        bad = np.argwhere(~np.isfinite(block))
        if bad.size:
            r, c = bad[0]
            raise CorpusError(
                f"{bin_path}: non-finite value at dialogue {did!r}, row {int(r)}, column {int(c)}")
        rows_by_id[did] = block
        offset += rows
    return EmbeddingStore(dim=dim, rows=rows_by_id)


def save_embeddings(store: EmbeddingStore, bin_path: Path, manifest_path: Path,
                    order: Sequence[str] | None = None) -> None:
    """Write the store as a float32 binary plus manifest.

    ``order`` fixes the dialogue sequence (defaults to store insertion order).
    """
    ids = list(order) if order is not None else [did for did, _ in store.items()]
    manifest = {
        "dim": store.dim,
        "dtype": "f32",
        "order": [{"dialogue_id": did, "rows": int(store.matrix(did).shape[0])} for did in ids],
    }
    with Path(bin_path).open("wb") as fh:
        for did in ids:
            fh.write(store.matrix(did).astype("<f4").tobytes())
    Path(manifest_path).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def verify_coverage(corpus: Corpus, store: EmbeddingStore) -> None:
    """Every utterance has exactly one embedding row, and vice versa."""
    store_ids = {did for did, _ in store.items()}
    for dialogue in corpus.dialogues():
        if dialogue.id not in store_ids:
            raise CorpusError(f"no embeddings for dialogue id {dialogue.id!r}")
        rows = store.matrix(dialogue.id).shape[0]
        if rows != len(dialogue):
            raise CorpusError(
                f"dialogue {dialogue.id!r}: {rows} embedding rows for {len(dialogue)} utterances")
        store_ids.discard(dialogue.id)
    if store_ids:
        extra = sorted(store_ids)[0]
        raise CorpusError(f"embedding store has rows for unknown dialogue id {extra!r}")


# ---------------------------------------------------------------------------
# manifest validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExpectedCounts:
    dialogues: Mapping[str, int]
    utterances: Mapping[str, int]


# Published split statistics for the M-MELD corpora, usable as
# validate_manifest expectations when the real data is on disk.
MMELD_EXPECTED: dict[str, ExpectedCounts] = {
    "french": ExpectedCounts(
        dialogues={"train": 633, "dev": 97, "test": 224},
        utterances={"train": 6537, "dev": 964, "test": 2198}),
    "greek": ExpectedCounts(
        dialogues={"train": 870, "dev": 103, "test": 240},
        utterances={"train": 9003, "dev": 1062, "test": 2366}),
    "spanish": ExpectedCounts(
        dialogues={"train": 769, "dev": 111, "test": 268},
        utterances={"train": 7890, "dev": 1064, "test": 2546}),
    "polish": ExpectedCounts(
        dialogues={"train": 858, "dev": 96, "test": 235},
        utterances={"train": 8928, "dev": 989, "test": 2324}),
}


@dataclass(frozen=True)
class ManifestReport:
    dialogue_counts: Mapping[str, int]
    utterance_counts: Mapping[str, int]
    dialogue_deltas: Mapping[str, int]     # actual - expected
    utterance_deltas: Mapping[str, int]
    label_histogram: tuple[int, ...]
    passed: bool

    def lines(self) -> list[str]:
        out = []
        for split in SPLIT_NAMES:
            dd = self.dialogue_deltas.get(split, 0)
            ud = self.utterance_deltas.get(split, 0)
            mark = "ok" if dd == 0 and ud == 0 else f"MISMATCH (dialogues {dd:+d}, utterances {ud:+d})"
            out.append(f"{split:>5}: {self.dialogue_counts.get(split, 0):5d} dialogues, "
                       f"{self.utterance_counts.get(split, 0):6d} utterances  [{mark}]")
        out.append(f"label histogram: {list(self.label_histogram)}")
        out.append("manifest check: " + ("PASS" if self.passed else "FAIL"))
        return out


def validate_manifest(corpus: Corpus, expected: ExpectedCounts) -> ManifestReport:
    """Compare actual per-split counts against expected values.

    Mismatches are reported (with actual-minus-expected deltas), never raised.
    """
    dialogue_counts = {s: len(corpus.splits.get(s, ())) for s in SPLIT_NAMES}
    utterance_counts = {s: sum(len(d) for d in corpus.splits.get(s, ())) for s in SPLIT_NAMES}
    dialogue_deltas = {s: dialogue_counts[s] - expected.dialogues.get(s, 0) for s in SPLIT_NAMES}
    utterance_deltas = {s: utterance_counts[s] - expected.utterances.get(s, 0) for s in SPLIT_NAMES}

    histogram = [0] * corpus.num_classes
    for dialogue in corpus.dialogues():
        for u in dialogue.utterances:
            histogram[u.label] += 1

    passed = (all(v == 0 for v in dialogue_deltas.values())
              and all(v == 0 for v in utterance_deltas.values()))
    return ManifestReport(
        dialogue_counts=dialogue_counts,
        utterance_counts=utterance_counts,
        dialogue_deltas=dialogue_deltas,
        utterance_deltas=utterance_deltas,
        label_histogram=tuple(histogram),
        passed=passed,
    )
