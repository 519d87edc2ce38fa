"""The discourse-aware recurrent architecture.

Pipeline per dialogue: down-project the utterance embeddings, run them
through a stack of graph-attention layers over the discourse graph, feed
embedding + graph state into a modified LSTM cell in both directions,
concatenate the two hidden states, and classify each utterance.

The graph-attention layers update nodes in utterance order, so a node
attends over predecessors that are already at the current layer while
mixing in its own previous-layer state as a residual. Nodes without
predecessors pass through unchanged.

The cell extends a vanilla LSTM with the graph state: it enters the
forget and output gates, and a separately gated tanh candidate of the
graph state is added into the cell state. Zeroing those extra weights
reduces the cell to the vanilla LSTM (see ``vanilla_lstm_reference``).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DiffValue, Tape
from .graph import DiscourseGraph


class ConfigError(ValueError):
    """Inconsistent model dimensions or checkpoint metadata."""


@dataclass(frozen=True)
class ModelConfig:
    dim_u: int = 1024       # utterance embedding width
    dim_g: int = 300        # graph state width
    dim_h: int = 300        # recurrent hidden width
    gat_layers: int = 2
    num_classes: int = 7

    def validate(self) -> None:
        for name, value in asdict(self).items():
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")


# Input kernels W_* consume the utterance embedding, recurrent kernels U_*
# the previous hidden state, graph kernels Q_* the graph-encoded state.
_W_GATES = ("forget", "output", "input", "ggate", "cand", "gcand")
_U_GATES = ("forget", "output", "input", "cand")
_Q_GATES = ("forget", "output", "ggate", "gcand")
_DIRECTIONS = ("fwd", "bwd")


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical parameter order and shapes; checkpoints serialize in this order."""
    config.validate()
    shapes: dict[str, tuple[int, ...]] = {
        "down.W": (config.dim_g, config.dim_u),
        "down.b": (config.dim_g,),
    }
    for layer in range(config.gat_layers):
        shapes[f"gat{layer}.attn"] = (1, 2 * config.dim_g)
    for direction in _DIRECTIONS:
        for gate in _W_GATES:
            shapes[f"{direction}.W_{gate}"] = (config.dim_h, config.dim_u)
        for gate in _U_GATES:
            shapes[f"{direction}.U_{gate}"] = (config.dim_h, config.dim_h)
        for gate in _Q_GATES:
            shapes[f"{direction}.Q_{gate}"] = (config.dim_h, config.dim_g)
        for gate in _W_GATES:
            shapes[f"{direction}.b_{gate}"] = (config.dim_h,)
    shapes["head.W"] = (config.num_classes, 2 * config.dim_h)
    shapes["head.b"] = (config.num_classes,)
    return shapes


@dataclass
class ModelParams:
    config: ModelConfig
    values: dict[str, np.ndarray]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.values.items()})


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases except forget-gate biases at 1."""
    rng = np.random.default_rng(seed)
    values: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 2:
            fan_out, fan_in = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            values[name] = rng.uniform(-limit, limit, size=shape)
        elif name.split(".")[1] == "b_forget":
            values[name] = np.ones(shape)
        else:
            values[name] = np.zeros(shape)
    return ModelParams(config=config, values=values)


def bind_params(tape: Tape, params: ModelParams) -> dict[str, DiffValue]:
    """Register every parameter as a leaf on the tape."""
    return {name: tape.leaf(arr) for name, arr in params.values.items()}


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------

def down_project(binding: Mapping[str, DiffValue],
                 utterances: Sequence[DiffValue]) -> list[DiffValue]:
    """First graph-layer states: one affine map per utterance embedding."""
    w, b = binding["down.W"], binding["down.b"]
    return [ad.matmul(w, u) + b for u in utterances]


def gat_layer(states_prev: Sequence[DiffValue], graph: DiscourseGraph,
              attn_row: DiffValue) -> list[DiffValue]:
    """One graph-attention layer over the discourse graph.

    Nodes update in utterance order: node i scores each predecessor j by a
    linear map of [current-layer state of j || previous-layer state of i],
    softmax-normalizes the scores, and adds the weighted predecessor states
    to its previous-layer state. No predecessors -> state passes through.
    """
    if len(states_prev) != graph.n:
        raise ad.ShapeError(f"gat_layer: {len(states_prev)} states for {graph.n} nodes")
    current: list[DiffValue] = []
    for i in range(graph.n):
        previous = states_prev[i]
        preds = graph.predecessors[i]
        if not preds:
            current.append(previous)
            continue
        scores = ad.concat(*[ad.matmul(attn_row, ad.concat(current[j], previous))
                             for j in preds])
        alpha = ad.softmax_masked(scores, range(len(preds)))
        state = previous
        for k, j in enumerate(preds):
            state = state + ad.scale(current[j], ad.row_select(alpha, k))
        current.append(state)
    return current


def gat_encode(binding: Mapping[str, DiffValue], config: ModelConfig,
               utterances: Sequence[DiffValue], graph: DiscourseGraph) -> list[DiffValue]:
    """Down-projection followed by the full graph-attention stack."""
    states = down_project(binding, utterances)
    for layer in range(config.gat_layers):
        states = gat_layer(states, graph, binding[f"gat{layer}.attn"])
    return states


def disclstm_cell(binding: Mapping[str, DiffValue], direction: str,
                  u: DiffValue, g: DiffValue,
                  h_prev: DiffValue, c_prev: DiffValue) -> tuple[DiffValue, DiffValue]:
    """One step of the graph-conditioned cell; returns (h, c)."""
    def p(name: str) -> DiffValue:
        return binding[f"{direction}.{name}"]

    forget = ad.sigmoid(p("W_forget") @ u + p("U_forget") @ h_prev + p("Q_forget") @ g + p("b_forget"))
    out_gate = ad.sigmoid(p("W_output") @ u + p("U_output") @ h_prev + p("Q_output") @ g + p("b_output"))
    in_gate = ad.sigmoid(p("W_input") @ u + p("U_input") @ h_prev + p("b_input"))
    graph_gate = ad.sigmoid(p("W_ggate") @ u + p("Q_ggate") @ g + p("b_ggate"))
    cell_cand = ad.tanh(p("W_cand") @ u + p("U_cand") @ h_prev + p("b_cand"))
    graph_cand = ad.tanh(p("W_gcand") @ u + p("Q_gcand") @ g + p("b_gcand"))
    c = forget * c_prev + in_gate * cell_cand + graph_gate * graph_cand
    h = out_gate * ad.tanh(c)
    return h, c


def vanilla_lstm_reference(u: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray,
                           weights: Mapping[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Plain-numpy standard LSTM step, used as a reduction oracle.

    ``weights`` keys: W_/U_/b_ for forget, output, input, cand.
    """
    def sig(x: np.ndarray) -> np.ndarray:
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    forget = sig(weights["W_forget"] @ u + weights["U_forget"] @ h_prev + weights["b_forget"])
    out_gate = sig(weights["W_output"] @ u + weights["U_output"] @ h_prev + weights["b_output"])
    in_gate = sig(weights["W_input"] @ u + weights["U_input"] @ h_prev + weights["b_input"])
    cand = np.tanh(weights["W_cand"] @ u + weights["U_cand"] @ h_prev + weights["b_cand"])
    c = forget * c_prev + in_gate * cand
    h = out_gate * np.tanh(c)
    return h, c


def run_bidirectional(binding: Mapping[str, DiffValue], config: ModelConfig, tape: Tape,
                      utterances: Sequence[DiffValue],
                      graph_states: Sequence[DiffValue]) -> list[DiffValue]:
    """Both recurrent passes from zero state; row i is [h_fwd_i ; h_bwd_i].

    The same graph states feed both directions; only the cell parameters
    differ per direction.
    """
    n = len(utterances)
    if len(graph_states) != n:
        raise ad.ShapeError(f"run_bidirectional: {len(graph_states)} graph states for {n} utterances")

    def sweep(direction: str, order: Sequence[int]) -> dict[int, DiffValue]:
        h = tape.leaf(np.zeros(config.dim_h))
        c = tape.leaf(np.zeros(config.dim_h))
        states: dict[int, DiffValue] = {}
        for t in order:
            h, c = disclstm_cell(binding, direction, utterances[t], graph_states[t], h, c)
            states[t] = h
        return states

    h_fwd = sweep("fwd", range(n))
    h_bwd = sweep("bwd", range(n - 1, -1, -1))
    return [ad.concat(h_fwd[i], h_bwd[i]) for i in range(n)]


def classify(binding: Mapping[str, DiffValue],
             hidden_rows: Sequence[DiffValue]) -> list[DiffValue]:
    w, b = binding["head.W"], binding["head.b"]
    return [ad.matmul(w, h) + b for h in hidden_rows]


def forward(binding: Mapping[str, DiffValue], config: ModelConfig,
            utterances: Sequence[DiffValue], graph: DiscourseGraph) -> list[DiffValue]:
    """Per-utterance logits for one dialogue; pure in inputs and parameters."""
    if len(utterances) != graph.n:
        raise ad.ShapeError(f"forward: {len(utterances)} utterances for a {graph.n}-node graph")
    tape = utterances[0].tape
    graph_states = gat_encode(binding, config, utterances, graph)
    hidden = run_bidirectional(binding, config, tape, utterances, graph_states)
    return classify(binding, hidden)


def predictions(logit_rows: Sequence[DiffValue]) -> list[int]:
    """Argmax per row; ties break to the lowest class index."""
    return [int(np.argmax(row.data)) for row in logit_rows]


def infer_logits(params: ModelParams, emb_rows: np.ndarray,
                 graph: DiscourseGraph) -> np.ndarray:
    """Convenience forward on a fresh tape; returns an (n, d) logits array."""
    tape = Tape()
    binding = bind_params(tape, params)
    utterances = [tape.leaf(row) for row in emb_rows]
    rows = forward(binding, params.config, utterances, graph)
    return np.stack([r.data for r in rows])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(params: ModelParams, stem: Path, meta: dict | None = None) -> None:
    """Write ``<stem>.json`` (config, order, shapes, meta) + ``<stem>.bin`` blob.

    The blob is every parameter's float64 little-endian bytes concatenated
    in canonical order, so identical parameters give identical files.
    """
    stem = Path(stem)
    shapes = param_shapes(params.config)
    header = {
        "config": asdict(params.config),
        "order": list(shapes),
        "shapes": {name: list(shape) for name, shape in shapes.items()},
        "dtype": "<f8",
        "meta": meta or {},
    }
    stem.parent.mkdir(parents=True, exist_ok=True)
    stem.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
    with stem.with_suffix(".bin").open("wb") as fh:
        for name in shapes:
            fh.write(params.values[name].astype("<f8").tobytes())


def load_checkpoint(stem: Path) -> tuple[ModelParams, dict]:
    stem = Path(stem)
    header_path = stem.with_suffix(".json")
    blob_path = stem.with_suffix(".bin")
    if not header_path.exists() or not blob_path.exists():
        raise ConfigError(f"checkpoint not found at {stem}(.json/.bin)")
    header = json.loads(header_path.read_text(encoding="utf-8"))
    config = ModelConfig(**header["config"])
    shapes = param_shapes(config)
    if header["order"] != list(shapes):
        raise ConfigError(f"{header_path}: parameter order does not match config")

    blob = blob_path.read_bytes()
    expected = sum(int(np.prod(s)) for s in shapes.values()) * 8
    if len(blob) != expected:
        raise ConfigError(f"{blob_path}: size mismatch, expected {expected} bytes, found {len(blob)}")
    values: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in shapes.items():
        count = int(np.prod(shape))
        chunk = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        values[name] = chunk.astype(np.float64).reshape(shape)
        offset += count * 8
    return ModelParams(config=config, values=values), header.get("meta", {})
