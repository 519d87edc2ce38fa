"""Primary acceptance checks for the whole package.

One test per criterion, each printing a single PASS/FAIL summary line
(visible with ``pytest -s`` or in the captured output of a failure).
Thresholds and runtime budgets are asserted, not just reported.
"""

from __future__ import annotations

import time
from itertools import product

import numpy as np

from disclstm.cli import main
from disclstm.corpus import (Corpus, Dialogue, MELD_LABELS, MMELD_EXPECTED,
                             Utterance, save_corpus)
from disclstm.graph import build_graph
from disclstm.metrics import weighted_f1
from disclstm.model import (ModelConfig, ModelParams, Tape, bind_params,
                            disclstm_cell, down_project, gat_encode, gat_layer,
                            init_params, param_shapes, vanilla_lstm_reference)
from disclstm.synth import SynthConfig, generate_synthetic
from disclstm.training import TrainConfig, evaluate, train

HALF_TANH_HALF = 0.23105857863000487925    # 0.5 * tanh(0.5), frozen at 20 places


def report(capsys, name: str, ok: bool, detail: str) -> None:
    """One always-visible summary line per criterion."""
    with capsys.disabled():
        print(f"\n[acceptance] {name}: {'PASS' if ok else 'FAIL'} ({detail})")


# 1 ------------------------------------------------------------------------

def test_01_gradient_correctness(capsys):
    start = time.perf_counter()
    code = main(["gradcheck"])          # pinned: dim_u 8, dim_g 6, dim_h 4,
    elapsed = time.perf_counter() - start   # 2 layers, 3 classes, 4 nodes, 3 edges
    out = capsys.readouterr().out.strip()
    ok = code == 0 and elapsed < 60.0
    report(capsys, "gradient correctness", ok, f"{out}; {elapsed:.1f}s")
    assert code == 0, out
    assert elapsed < 60.0


# 2 ------------------------------------------------------------------------

def test_02_lstm_reduction_oracle(capsys):
    config = ModelConfig(dim_u=5, dim_g=3, dim_h=4, gat_layers=1, num_classes=2)
    rng = np.random.default_rng(202)
    worst = 0.0
    for trial in range(10):
        params = ModelParams(config, {n: rng.standard_normal(s)
                                      for n, s in param_shapes(config).items()})
        for name in ("Q_forget", "Q_output", "W_gcand", "Q_gcand", "b_gcand"):
            for direction in ("fwd", "bwd"):
                params.values[f"{direction}.{name}"][:] = 0.0
        vanilla = {f"{k}_{g}": params.values[f"fwd.{k}_{g}"]
                   for g in ("forget", "output", "input", "cand") for k in ("W", "U", "b")}
        tape = Tape()
        binding = bind_params(tape, params)
        for _ in range(100):
            u = rng.standard_normal(5)
            g = rng.standard_normal(3) * 5.0
            h_prev = rng.uniform(-1, 1, 4)
            c_prev = rng.standard_normal(4)
            h, c = disclstm_cell(binding, "fwd", tape.leaf(u), tape.leaf(g),
                                 tape.leaf(h_prev), tape.leaf(c_prev))
            h_ref, c_ref = vanilla_lstm_reference(u, h_prev, c_prev, vanilla)
            worst = max(worst, float(np.abs(h.data - h_ref).max()),
                        float(np.abs(c.data - c_ref).max()))
    ok = worst <= 1e-12
    report(capsys, "vanilla-LSTM reduction", ok, f"1000 inputs, worst coordinate diff {worst:.2e}")
    assert ok


# 3 ------------------------------------------------------------------------

def test_03_gat_invariants(capsys):
    dim_g = 4
    layers = 2
    rng = np.random.default_rng(303)
    graphs = checked_neighborhoods = edgeless = 0
    worst_sum = 0.0

    for trial in range(200):
        n = int(rng.integers(1, 11))
        edges = [(i, j) for i in range(n) for j in range(i + 1, n)
                 if rng.random() < 0.35]
        graph = build_graph(n, edges)
        tape = Tape()
        attn_rows = [tape.leaf(rng.standard_normal((1, 2 * dim_g))) for _ in range(layers)]
        states = [tape.leaf(rng.standard_normal(dim_g)) for _ in range(n)]

        for attn in attn_rows:
            out = gat_layer(states, graph, attn)
            for i in range(n):
                preds = graph.predecessors[i]
                if not preds:
                    assert out[i] is states[i]      # untouched, same node
                    continue
                # replay the layer's arithmetic to recover its attention
                scores = np.array([(attn.data @ np.concatenate([out[j].data,
                                                                states[i].data]))[0]
                                   for j in preds])
                e = np.exp(scores - np.max(scores))
                alpha = e / np.sum(e)
                worst_sum = max(worst_sum, abs(float(alpha.sum()) - 1.0))
                assert np.all(alpha > 0)
                recon = states[i].data
                for k, j in enumerate(preds):
                    recon = recon + alpha[k] * out[j].data
                assert np.array_equal(out[i].data, recon)
                checked_neighborhoods += 1
            states = out
        graphs += 1
        if not edges:
            edgeless += 1

    # an edgeless graph leaves the whole stack at the first-layer states
    config = ModelConfig(dim_u=6, dim_g=dim_g, dim_h=3, gat_layers=layers, num_classes=2)
    params = init_params(config, seed=303)
    tape = Tape()
    binding = bind_params(tape, params)
    utts = [tape.leaf(rng.standard_normal(6)) for _ in range(5)]
    stacked = gat_encode(binding, config, utts, build_graph(5, []))
    projected = down_project(binding, utts)
    assert all(np.array_equal(s.data, p.data) for s, p in zip(stacked, projected))

    ok = worst_sum <= 1e-12
    report(capsys, "graph-attention invariants", ok,
           f"{graphs} graphs ({edgeless} edgeless), {checked_neighborhoods} neighborhoods, "
           f"worst |sum(alpha)-1| {worst_sum:.2e}")
    assert ok


# 4 ------------------------------------------------------------------------

def test_04_cell_output_range(capsys):
    config = ModelConfig(dim_u=5, dim_g=3, dim_h=4, gat_layers=1, num_classes=2)
    rng = np.random.default_rng(404)

    def sig(x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    cells = 0
    for seed in range(10):
        params = init_params(config, seed=seed)
        tape = Tape()
        binding = bind_params(tape, params)
        v = params.values
        for _ in range(100):
            u = rng.standard_normal(5)
            g = rng.standard_normal(3)
            h_prev = rng.uniform(-1, 1, 4)
            c_prev = rng.standard_normal(4) * 3.0
            h, _ = disclstm_cell(binding, "fwd", tape.leaf(u), tape.leaf(g),
                                 tape.leaf(h_prev), tape.leaf(c_prev))
            assert np.all(np.abs(h.data) < 1.0)
            gates = [
                sig(v["fwd.W_forget"] @ u + v["fwd.U_forget"] @ h_prev
                    + v["fwd.Q_forget"] @ g + v["fwd.b_forget"]),
                sig(v["fwd.W_output"] @ u + v["fwd.U_output"] @ h_prev
                    + v["fwd.Q_output"] @ g + v["fwd.b_output"]),
                sig(v["fwd.W_input"] @ u + v["fwd.U_input"] @ h_prev + v["fwd.b_input"]),
                sig(v["fwd.W_ggate"] @ u + v["fwd.Q_ggate"] @ g + v["fwd.b_ggate"]),
            ]
            for gate in gates:
                assert np.all(gate > 0.0) and np.all(gate < 1.0)
            cells += 1
    report(capsys, "cell output range", True,
           f"{cells} cells: h strictly inside (-1,1), gates strictly inside (0,1)")


# 5 ------------------------------------------------------------------------

def test_05_zero_parameter_analytic_value(capsys):
    config = ModelConfig(dim_u=5, dim_g=3, dim_h=4, gat_layers=1, num_classes=2)
    params = ModelParams(config, {n: np.zeros(s) for n, s in param_shapes(config).items()})
    tape = Tape()
    binding = bind_params(tape, params)
    h, _ = disclstm_cell(binding, "fwd", tape.leaf(np.zeros(5)), tape.leaf(np.zeros(3)),
                         tape.leaf(np.zeros(4)), tape.leaf(np.ones(4)))
    worst = float(np.abs(h.data - HALF_TANH_HALF).max())
    ok = worst < 1e-9
    report(capsys, "zero-parameter cell value", ok,
           f"h within {worst:.2e} of 0.5*tanh(0.5)")
    assert ok


# 6 ------------------------------------------------------------------------

def test_06_overfit_harness(capsys):
    start = time.perf_counter()
    corpus, store = generate_synthetic(
        SynthConfig(n_dialogues=20, dim=16, num_classes=3, task="local"), seed=0)
    config = ModelConfig(dim_u=16, dim_g=16, dim_h=16, gat_layers=2, num_classes=3)
    params = init_params(config, seed=0)
    train(params, corpus.splits["train"], store,
          TrainConfig(lr=1e-3, epochs=200, batch_size=16, seed=0))
    score = evaluate(params, corpus.splits["train"], store).weighted_f1
    elapsed = time.perf_counter() - start
    ok = score >= 0.95 and elapsed < 300.0
    report(capsys, "overfit harness", ok,
           f"train wF1 {score:.3f} after 200 epochs at lr 1e-3, {elapsed:.0f}s")
    assert score >= 0.95
    assert elapsed < 300.0


# 7 ------------------------------------------------------------------------

def test_07_mechanism_edges_carry_the_signal(capsys):
    from sklearn.linear_model import LogisticRegression

    def flatten(dialogues, store):
        X, y = [], []
        for d in dialogues:
            X.append(store.matrix(d.id))
            y.extend(d.labels())
        return np.vstack(X), np.array(y)

    start = time.perf_counter()
    scores = []
    for seed in range(5):
        corpus, store = generate_synthetic(
            SynthConfig(n_dialogues=40, n_dev=12, dim=16, num_classes=3,
                        task="discourse"), seed=seed)
        train_split, dev_split = corpus.splits["train"], corpus.splits["dev"]
        config = ModelConfig(dim_u=16, dim_g=16, dim_h=16, gat_layers=2, num_classes=3)
        params = init_params(config, seed=seed)
        train(params, train_split, store,
              TrainConfig(lr=1e-3, epochs=120, batch_size=8, seed=seed),
              dev_dialogues=dev_split)
        with_edges = evaluate(params, dev_split, store).weighted_f1
        ablated = evaluate(params, dev_split, store, ignore_edges=True).weighted_f1
        X_train, y_train = flatten(train_split, store)
        X_dev, y_dev = flatten(dev_split, store)
        clf = LogisticRegression(max_iter=1000).fit(X_train, y_train)
        logistic = weighted_f1(clf.predict(X_dev), y_dev, 3).weighted_f1
        scores.append((with_edges, ablated, logistic))

    mean_edges, mean_ablated, mean_logistic = np.array(scores).mean(axis=0)
    elapsed = time.perf_counter() - start
    margin_ablated = mean_edges - mean_ablated
    margin_logistic = mean_edges - mean_logistic
    ok = margin_ablated >= 0.10 and margin_logistic >= 0.10 and elapsed < 900.0
    report(capsys, "mechanism (edges carry the signal)", ok,
           f"5-seed dev wF1 means: with edges {mean_edges:.3f}, ablated {mean_ablated:.3f} "
           f"(+{margin_ablated:.3f}), logistic {mean_logistic:.3f} (+{margin_logistic:.3f}); "
           f"{elapsed:.0f}s")
    assert margin_ablated >= 0.10
    assert margin_logistic >= 0.10
    assert elapsed < 900.0


# 8 ------------------------------------------------------------------------

def test_08_metric_oracle_exhaustive(capsys):
    def oracle(preds, golds, d):
        # independent route: F1 = 2*tp / (predicted + support), no P/R step
        total = len(golds)
        out = 0.0
        for c in range(d):
            tp = sum(1 for p, g in zip(preds, golds) if p == c and g == c)
            pred_c = sum(1 for p in preds if p == c)
            gold_c = sum(1 for g in golds if g == c)
            f1 = 2.0 * tp / (pred_c + gold_c) if pred_c + gold_c else 0.0
            out += gold_c * f1
        return out / total

    worst = 0.0
    checked = 0
    for d in (2, 3):
        for n in range(1, 7):
            for golds in product(range(d), repeat=n):
                for preds in product(range(d), repeat=n):
                    got = weighted_f1(preds, golds, d).weighted_f1
                    worst = max(worst, abs(got - oracle(preds, golds, d)))
                    checked += 1
    hand = weighted_f1([0, 1, 1], [0, 0, 1], 2).weighted_f1
    ok = worst <= 1e-12 and hand == 2 / 3
    report(capsys, "metric oracle", ok,
           f"{checked} exhaustive (pred, gold) pairs, worst |diff| {worst:.2e}; "
           f"hand case = 2/3 exactly: {hand == 2 / 3}")
    assert worst <= 1e-12
    assert hand == 2 / 3


# 9 ------------------------------------------------------------------------

def test_09_training_determinism(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth", "--out", str(data), "--task", "discourse",
                 "--n-dialogues", "6", "--n-dev", "2", "--n-test", "2",
                 "--dim", "8", "--num-classes", "3", "--seed", "0"]) == 0
    flags = ["--dim-g", "4", "--dim-h", "4", "--gat-layers", "1",
             "--lr", "1e-3", "--batch-size", "2", "--epochs", "3", "--seed", "7"]
    runs = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert main(["train", "--data", str(data), "--out", str(out)] + flags) == 0
        runs.append(out)
    same = all((runs[0] / f).read_bytes() == (runs[1] / f).read_bytes()
               for f in ("checkpoint.bin", "checkpoint.json", "history.json"))
    report(capsys, "training determinism", same,
           "two identical runs: checkpoint.bin, checkpoint.json, history.json bit-identical")
    assert same


# 10 -----------------------------------------------------------------------

def make_sized_corpus(dialogue_counts: dict, utterance_counts: dict) -> Corpus:
    """A format-conformant corpus hitting exact per-split counts."""
    splits = {}
    for split in ("train", "dev", "test"):
        n_dialogues = dialogue_counts[split]
        n_utterances = utterance_counts[split]
        base = n_utterances // n_dialogues
        extra = n_utterances - base * n_dialogues   # this many dialogues get +1
        dialogues = []
        for k in range(n_dialogues):
            length = base + (1 if k < extra else 0)
            utts = tuple(Utterance(index=i, speaker=f"s{i % 3}", label=i % 7)
                         for i in range(length))
            edges = tuple((i, i + 1, None) for i in range(length - 1))
            dialogues.append(Dialogue(id=f"{split}-{k:04d}", utterances=utts, edges=edges))
        splits[split] = tuple(dialogues)
    return Corpus(splits=splits, num_classes=7, label_names=MELD_LABELS)


def test_10_manifest_validation_self_test(tmp_path, capsys):
    expected = MMELD_EXPECTED["french"]
    corpus = make_sized_corpus(expected.dialogues, expected.utterances)
    root = tmp_path / "french-shaped"
    save_corpus(corpus, root)

    code_ok = main(["validate-manifest", "--data", str(root),
                    "--language", "french"])

    # negative control: drop one training dialogue and re-check
    smaller = Corpus(splits={**corpus.splits, "train": corpus.splits["train"][:-1]},
                     num_classes=7, label_names=MELD_LABELS)
    root_bad = tmp_path / "short-one"
    save_corpus(smaller, root_bad)
    code_bad = main(["validate-manifest", "--data", str(root_bad),
                     "--language", "french"])

    ok = code_ok == 0 and code_bad == 1
    report(capsys, "manifest validation", ok,
           f"exact-count corpus: exit {code_ok}; one dialogue short: exit {code_bad}")
    assert code_ok == 0
    assert code_bad == 1
