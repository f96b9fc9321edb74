"""Acceptance criteria: one numbered check per test, one PASS/FAIL line each.

Desk-scale training runs are shared through module-scoped fixtures and go
through the full pipeline (synthetic digit set written to and re-read from
IDX files). Criteria 7b and 8b encode directional expectations that this
implementation measurably does not meet at the pinned step budget; they are
kept red on purpose with the analysis in the assertion message (see also the
README benchmark notes).
"""

import time
from itertools import product

import numpy as np
import pytest

from subsample_nn import analysis, cli, mc, nn
from subsample_nn.alsh import (AlshParams, build_index, collision_probability,
                               query_active, transform_data, transform_query)
from subsample_nn.data import load_idx, split, synth_blobs, synth_digits, write_idx
from subsample_nn.linalg import FLOPS, stream
from subsample_nn.nn import Optimizer, init_weights
from subsample_nn.policies import (AdaptiveDropoutPolicy, AlshPolicy,
                                   DropoutPolicy, ExactPolicy,
                                   McBackpropPolicy, backward_with_policy,
                                   forward_with_policy, make_policy)
from subsample_nn.train import train

DATA_SEED = 101
RUN_SEED = 7


def report(num, ok, detail=""):
    print(f"[criterion {num:>3}] {'PASS' if ok else 'FAIL'} {detail}")


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


# ---------------------------------------------------------------------------
# Desk-scale fixtures: one synthetic digit benchmark through the IDX pipeline,
# trained once per configuration the criteria need.
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def digit_split(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("idx")
    raw = synth_digits(7000, seed=DATA_SEED)
    write_idx(raw, tmp / "images.idx", tmp / "labels.idx")
    ds = load_idx(tmp / "images.idx", tmp / "labels.idx")
    return split(ds, 5000, 1000, 1000, seed=DATA_SEED)


def desk_run(digit_split, hidden_layers, policy_kind, batch_size, **params):
    dims = [784] + [128] * hidden_layers + [10]
    model = init_weights(dims, seed=RUN_SEED)
    policy = make_policy(policy_kind, **params)
    return train(model, digit_split, policy, Optimizer("adam", 1e-3),
                 epochs=5, batch_size=batch_size, seed=RUN_SEED)


@pytest.fixture(scope="module")
def exact_shallow(digit_split):
    with Timer() as t:
        rep = desk_run(digit_split, 1, "exact", 1)
    return rep, t.seconds


@pytest.fixture(scope="module")
def alsh_shallow(digit_split):
    with Timer() as t:
        rep = desk_run(digit_split, 1, "alsh", 1)
    return rep, t.seconds


@pytest.fixture(scope="module")
def alsh_deep(digit_split):
    with Timer() as t:
        rep = desk_run(digit_split, 7, "alsh", 1)
    return rep, t.seconds


# ---------------------------------------------------------------------------
# 1. Exponential error-growth table
# ---------------------------------------------------------------------------


def test_c01_error_growth_table(capsys):
    reference = [0.2, 0.44, 0.72, 1.07, 1.48, 1.98]
    with Timer() as t:
        model, sets = analysis.build_theorem1_network(c=5, depth=6, width=12)
        rows = analysis.theorem1_check(model, sets, c=5)
    table_ok = all(abs(row["ratio"] - ref) <= 0.01
                   for row, ref in zip(rows, reference))
    closed_ok = all(
        abs(row["ratio"] - ((6 / 5) ** row["k"] - 1)) <= 1e-9 * ((6 / 5) ** row["k"] - 1)
        for row in rows)
    cli_ok = cli.main(["verify-theory", "--c", "5", "--depth", "6"]) == 0
    capsys.readouterr()
    ok = table_ok and closed_ok and cli_ok and t.seconds < 1.0
    report(1, ok, f"ratios {[round(r['ratio'], 4) for r in rows]} in {t.seconds:.3f}s")
    assert table_ok and closed_ok and cli_ok
    assert t.seconds < 1.0


# ---------------------------------------------------------------------------
# 2. Error-recursion identity on random linear fixtures
# ---------------------------------------------------------------------------


def test_c02_error_recursion():
    with Timer() as t:
        worst = 0.0
        for i in range(100):
            rng = stream(1000 + i, "acc-lemma")
            depth = int(rng.integers(1, 5))
            dims = [int(rng.integers(2, 17)) for _ in range(depth + 1)]
            model = init_weights(dims, seed=2000 + i)
            model.hidden_activation = "linear"
            sets = analysis.random_active_sets(
                model, seed=3000 + i, keep_fraction=float(rng.uniform(0.3, 0.9)))
            profile = analysis.lemma1_error(model, rng.standard_normal(dims[0]), sets)
            for direct, rec in zip(profile.direct, profile.recursion):
                scale = max(np.abs(direct).max(), 1.0)
                worst = max(worst, np.abs(direct - rec).max() / scale)
    ok = worst <= 1e-10 and t.seconds < 5.0
    report(2, ok, f"worst relative deviation {worst:.2e} in {t.seconds:.2f}s")
    assert worst <= 1e-10
    assert t.seconds < 5.0


# ---------------------------------------------------------------------------
# 3. Unbiasedness by exhaustive enumeration
# ---------------------------------------------------------------------------


class _ForcedUniforms:
    def __init__(self, values):
        self.values = list(values)

    def random(self, n):
        out = np.array(self.values[:n])
        self.values = self.values[n:]
        return out


def test_c03_unbiasedness_enumeration():
    with Timer() as t:
        worst = 0.0
        rng = stream(50, "acc-enum")
        for _ in range(20):
            a = rng.standard_normal((3, 3))
            b = rng.standard_normal((3, 3))
            exact = a @ b

            probs = mc.optimal_probs_bernoulli(a, b, 2)
            mean = np.zeros((3, 3))
            for zs in product((0, 1), repeat=3):
                weight = float(np.prod([p if z else 1 - p
                                        for z, p in zip(zs, probs)]))
                if weight == 0.0:
                    continue
                uniforms = [0.0 if z else 1 - 1e-12 for z in zs]
                est, _ = mc.approx_matmul_bernoulli(
                    a, b, 2, _ForcedUniforms(uniforms), probs=probs)
                mean += weight * est
            worst = max(worst, np.abs(mean - exact).max())

            cr_probs = mc.optimal_probs_cr(a, b)
            mean = np.zeros((3, 3))
            for draws in product(range(3), repeat=2):
                weight = float(np.prod(cr_probs[list(draws)]))
                est, _ = mc.approx_matmul_cr(a, b, 2, None, probs=cr_probs,
                                             indices=np.array(draws))
                mean += weight * est
            worst = max(worst, np.abs(mean - exact).max())
    ok = worst <= 1e-12 and t.seconds < 5.0
    report(3, ok, f"max |E[estimate] - AB| = {worst:.2e} in {t.seconds:.2f}s")
    assert worst <= 1e-12
    assert t.seconds < 5.0


# ---------------------------------------------------------------------------
# 4. Optimality of the clipped keep probabilities
# ---------------------------------------------------------------------------


def random_feasible(rng, n, k):
    """Random distribution with sum k and entries in (0, 1]."""
    raw = rng.uniform(0.05, 1.0, n)
    p = np.minimum(raw * (k / raw.sum()), 1.0)
    for _ in range(50):
        slack = k - p.sum()
        if abs(slack) <= 1e-12:
            break
        room = p < 1.0
        p[room] = np.minimum(p[room] + slack / room.sum(), 1.0)
    return p


def test_c04_optimal_probabilities():
    with Timer() as t:
        rng = stream(60, "acc-opt")
        checked = 0
        for _ in range(50):
            n = int(rng.integers(4, 9))
            k = int(rng.integers(1, n))
            a = rng.standard_normal((5, n))
            b = rng.standard_normal((n, 5))
            optimal = mc.optimal_probs_bernoulli(a, b, k)
            best = mc.bernoulli_error(a, b, optimal)
            for _ in range(1000):
                candidate = random_feasible(rng, n, k)
                if abs(candidate.sum() - k) > 1e-9:
                    continue
                err = mc.bernoulli_error(a, b, candidate)
                assert best <= err + 1e-12
                if err - best <= 1e-12:
                    assert np.abs(candidate - optimal).max() <= 1e-9
                checked += 1
    ok = t.seconds < 30.0
    report(4, ok, f"{checked} candidate distributions dominated in {t.seconds:.1f}s")
    assert checked > 45_000
    assert t.seconds < 30.0


# ---------------------------------------------------------------------------
# 5. Transform distance identity and top-1 retrieval rate
# ---------------------------------------------------------------------------


def test_c05_distance_identity_and_recall():
    with Timer() as t:
        m = 3
        rng = stream(70, "acc-dist")
        worst = 0.0
        for _ in range(10_000):
            a = rng.standard_normal(8)
            w = rng.standard_normal(8)
            w *= rng.uniform(0.01, 0.83) / np.linalg.norm(w)
            q, p = transform_query(a, m), transform_data(w, m)
            lhs = float(((q - p) ** 2).sum())
            rhs = (1 + m / 4 + np.linalg.norm(w) ** (2.0 ** (m + 1))
                   - 2 * np.dot(a / np.linalg.norm(a), w))
            worst = max(worst, abs(lhs - rhs))
        identity_ok = worst <= 1e-12

        params = AlshParams()  # K=6, L=5
        inst = stream(71, "acc-mips")
        cols = inst.standard_normal((64, 32))
        query = inst.standard_normal(32)
        top1 = int(np.argmax(cols @ query))
        probe = build_index(cols, params, seed=0)
        p_query = transform_query(query, params.pad_terms)
        p_data = transform_data(cols[top1], params.pad_terms, probe.scale)
        cos = np.dot(p_query, p_data) / (np.linalg.norm(p_query) * np.linalg.norm(p_data))
        p1 = 1.0 - np.arccos(np.clip(cos, -1, 1)) / np.pi
        bound = collision_probability(p1, params.bits, params.tables)
        trials = 10_000
        hits = sum(
            top1 in query_active(build_index(cols, params, seed=9000 + i), query).node_ids
            for i in range(trials))
        sigma = np.sqrt(bound * (1 - bound) / trials)
        recall_ok = hits / trials >= bound - 3 * sigma
    ok = identity_ok and recall_ok and t.seconds < 60.0
    report(5, ok, f"identity dev {worst:.1e}; recall {hits / trials:.4f} vs bound "
                  f"{bound:.4f} - 3sigma in {t.seconds:.1f}s")
    assert identity_ok
    assert recall_ok
    assert t.seconds < 60.0


# ---------------------------------------------------------------------------
# 6. Gradient correctness for exact and degenerate-parameter policies
# ---------------------------------------------------------------------------


def _fd_max_rel_error(model, policy, x, target, h=1e-5):
    policy.bind(model, seed=0)
    trace = forward_with_policy(model, x, policy)
    grads = backward_with_policy(model, trace, target, policy)

    def loss():
        return nn.nll_loss(forward_with_policy(model, x, policy), target)

    worst = 0.0
    for arr, g in (list(zip(model.weights, grads.weights))
                   + list(zip(model.biases, grads.biases))):
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = arr[ix]
            arr[ix] = orig + h
            up = loss()
            arr[ix] = orig - h
            down = loss()
            arr[ix] = orig
            numeric = (up - down) / (2 * h)
            worst = max(worst, abs(g[ix] - numeric) / max(abs(numeric), 1e-6))
    return worst


def test_c06_gradient_correctness():
    with Timer() as t:
        results = {}
        model = init_weights([6, 12, 4], seed=80)
        x = stream(81, "acc-fd").standard_normal(6)
        results["exact"] = _fd_max_rel_error(model.copy(), ExactPolicy(), x, 2)
        results["dropout(p=1)"] = _fd_max_rel_error(
            model.copy(), DropoutPolicy(p_keep=1.0), x, 2)
        results["adaptive(sat)"] = _fd_max_rel_error(
            model.copy(), AdaptiveDropoutPolicy(alpha=0.0, beta=1000.0), x, 2)

        deep = init_weights([5, 8, 8, 3], seed=82)
        results["mc(k=width)"] = _fd_max_rel_error(
            deep, McBackpropPolicy(k_samples=8),
            stream(83, "acc-fd2").standard_normal(5), 1)

        # all-active hash policy: near-parallel columns saturate a 1-bit index
        rng = stream(84, "acc-fd3")
        base = rng.standard_normal(6)
        base /= np.linalg.norm(base)
        cols = np.stack([0.5 * base + 0.01 * rng.standard_normal(6)
                         for _ in range(4)])
        toy = nn.MlpModel([6, 4, 3],
                          [cols.T.copy(), rng.standard_normal((4, 3)) * 0.3],
                          [np.zeros(4), np.zeros(3)])
        alsh_policy = AlshPolicy(AlshParams(bits=1, tables=50))
        alsh_policy.bind(toy, seed=85)
        assert forward_with_policy(toy, base, alsh_policy) is not None
        assert alsh_policy._step_masks[0].all(), "toy index must saturate"
        results["alsh(all-active)"] = _fd_max_rel_error(toy, alsh_policy, base, 1)
        worst = max(results.values())
    ok = worst <= 1e-4 and t.seconds < 30.0
    report(6, ok, " ".join(f"{k}={v:.1e}" for k, v in results.items())
           + f" in {t.seconds:.1f}s")
    assert worst <= 1e-4
    assert t.seconds < 30.0


# ---------------------------------------------------------------------------
# 7. Desk-scale shallow accuracy
# ---------------------------------------------------------------------------


def test_c07a_exact_shallow_accuracy(exact_shallow):
    rep, seconds = exact_shallow
    ok = rep.test_accuracy >= 0.90 and seconds < 600
    report("7a", ok, f"exact 1x128: {rep.test_accuracy:.4f} in {seconds:.0f}s")
    assert rep.test_accuracy >= 0.90
    assert seconds < 600


def test_c07b_alsh_within_six_points(exact_shallow, alsh_shallow):
    rep_exact, s1 = exact_shallow
    rep_alsh, s2 = alsh_shallow
    gap = rep_exact.test_accuracy - rep_alsh.test_accuracy
    ok = gap <= 0.06 and (s1 + s2) < 600
    report("7b", ok, f"alsh 1x128: {rep_alsh.test_accuracy:.4f} vs exact "
                     f"{rep_exact.test_accuracy:.4f} (gap {gap:.3f})")
    assert (s1 + s2) < 600
    assert gap <= 0.06, (
        f"hash-selected training trails exact by {gap:.3f} (> 0.06) at the "
        "pinned budget of 5 epochs x 5000 samples. Measured causes: top-12 "
        "selection recall of the sign-projection index is ~20-30% at width "
        "128 (K=6, L=5), and 5%-sparse updates need several times more steps "
        "to converge (a counterfactual oracle top-12 selector reaches parity; "
        "random 5% dropout is far worse). Kept red on purpose; see README "
        "benchmark notes.")


# ---------------------------------------------------------------------------
# 8. Depth collapse of hash-selected training
# ---------------------------------------------------------------------------


def test_c08a_alsh_depth_collapse(alsh_shallow, alsh_deep):
    rep1, s1 = alsh_shallow
    rep7, s7 = alsh_deep
    drop = rep1.test_accuracy - rep7.test_accuracy
    ok = drop >= 0.25 and s7 < 1200
    report("8a", ok, f"alsh accuracy 1 layer {rep1.test_accuracy:.4f} -> "
                     f"7 layers {rep7.test_accuracy:.4f} (drop {drop:.3f})")
    assert drop >= 0.25
    assert s7 < 1200


def test_c08b_label_concentration(alsh_shallow, alsh_deep):
    rep1, _ = alsh_shallow
    rep7, _ = alsh_deep
    hist7 = np.asarray(rep7.label_histogram, dtype=np.float64)
    top3 = np.sort(hist7 / hist7.sum())[-3:].sum()
    ok = rep7.distinct_predicted_labels < rep1.distinct_predicted_labels
    report("8b", ok, f"distinct labels {rep1.distinct_predicted_labels} -> "
                     f"{rep7.distinct_predicted_labels}; top-3 label mass at "
                     f"depth 7 = {top3:.2f}")
    assert ok, (
        f"predictions do concentrate (top-3 labels carry {top3:.0%} of 1000 "
        f"test predictions at depth 7 vs ~30% when uniform) but no label's "
        f"count reaches exactly zero, so the strict distinct-label count "
        f"({rep7.distinct_predicted_labels}) does not drop below the 1-layer "
        f"value ({rep1.distinct_predicted_labels}) at this desk-scale budget. "
        "Kept red on purpose; see README benchmark notes.")


# ---------------------------------------------------------------------------
# 9. Mini-batch Monte-Carlo parity
# ---------------------------------------------------------------------------


def test_c09_mc_minibatch_parity(digit_split):
    with Timer() as t:
        rep_exact = desk_run(digit_split, 3, "exact", 20)
        rep_mc = desk_run(digit_split, 3, "mc", 20, k_samples=10)
    gap = abs(rep_exact.test_accuracy - rep_mc.test_accuracy)
    ok = gap <= 0.03 and t.seconds < 900
    report(9, ok, f"mc {rep_mc.test_accuracy:.4f} vs exact "
                  f"{rep_exact.test_accuracy:.4f} (|gap| {gap:.3f}) in {t.seconds:.0f}s")
    assert gap <= 0.03
    assert t.seconds < 900


# ---------------------------------------------------------------------------
# 10. FLOP accounting
# ---------------------------------------------------------------------------


def test_c10_flop_accounting():
    with Timer() as t:
        n, k = 512, 10
        rng = stream(90, "acc-flops")
        a = rng.standard_normal((16, n))
        b = rng.standard_normal((n, 16))
        probs = mc.optimal_probs_bernoulli(a, b, k)
        exact_flops = 2 * 16 * n * 16
        draws = stream(91, "acc-flop-draws")
        ratios = []
        for _ in range(50):
            before = FLOPS.value()
            mc.approx_matmul_bernoulli(a, b, k, draws, probs=probs)
            ratios.append((FLOPS.value() - before) / exact_flops)
        ratio = float(np.mean(ratios))
        band_ok = 0.8 * k / n <= ratio <= 1.3 * k / n

        # two hidden layers so the width-512 delta propagation genuinely
        # samples (saves > 0); at batch 1 the weight-gradient products save
        # nothing while their norm passes still cost a full sweep over W
        blob = synth_blobs(80, 512, 4, separation=6.0, seed=92)
        sp = split(blob, 50, 20, 10, seed=92)
        model = init_weights([512, 512, 512, 4], seed=93)
        rep = train(model, sp, make_policy("mc", k_samples=10),
                    Optimizer("adam", 1e-4), epochs=1, batch_size=1, seed=94)
        saved = rep.replaced_exact_flops - rep.sampled_product_flops
        overhead_ok = rep.phase_flops["policy_overhead"] > saved > 0
    ok = band_ok and overhead_ok and t.seconds < 120
    report(10, ok, f"product flop ratio {ratio:.4f} (k/n={k / n:.4f}); "
                   f"sgd overhead {rep.phase_flops['policy_overhead']} > saved {saved}")
    assert band_ok
    assert overhead_ok
    assert t.seconds < 120


# ---------------------------------------------------------------------------
# 11. Determinism of a full training run
# ---------------------------------------------------------------------------


def test_c11_determinism(tmp_path):
    with Timer() as t:
        config = {
            "dataset": {"kind": "synth_digits", "train_n": 400, "test_n": 100,
                        "val_n": 100},
            "architecture": {"hidden_layers": 1, "hidden_width": 64},
            "policy": {"kind": "alsh"},
            "epochs": 1,
            "seed": 17,
        }
        blobs = []
        for name in ("a", "b"):
            cfg = cli.load_config(None, [])
            cfg = cli._merge(cfg, config)
            cli.run_training(cfg, tmp_path / name)
            blobs.append((tmp_path / name / "summary.json").read_bytes())
    ok = blobs[0] == blobs[1]
    report(11, ok, f"summary.json identical across reruns ({len(blobs[0])} bytes) "
                   f"in {t.seconds:.0f}s")
    assert ok
