"""End-to-end acceptance checks, one test per criterion.

A PASS/FAIL line per criterion is printed in the terminal summary.
"""

import time

import numpy as np
import pytest

from sigfuse import lsap
from sigfuse.benchmark import run_benchmark
from sigfuse.dataset import SynthConfig, generate_synthetic, load_dataset
from sigfuse.embedding import EmbeddingModel, TrainConfig, Trainer, genuine_images
from sigfuse.evaluation import (
    DEFAULT_GRID,
    RANDOM,
    SKILLED,
    PairwiseCache,
    Protocol,
    compute_eer,
    det_curve,
    grid_search_costs,
    run_protocol,
    split_counts,
    split_protocol,
)
from sigfuse.ged import CostParams, dissimilarity_ged, ged
from sigfuse.scoring import decide

from helpers import gradcheck, hinges, random_inputs, small_model
from oracles import exact_ged, lsap_brute_force
from test_ged import random_graph


def report(label, ok, detail=""):
    print(f"{label}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())


@pytest.mark.criterion(1, "LSAP cost equals exhaustive minimum (n = 2..7, 1000 each, < 30 s)")
def test_criterion_01_lsap_exactness():
    start = time.perf_counter()
    mismatches = 0
    for n in range(2, 8):
        rng = np.random.default_rng(100 + n)
        for k in range(1000):
            if k % 2:
                m = rng.integers(0, 10, size=(n, n)).astype(float)
            else:
                m = rng.uniform(0, 100, size=(n, n))
            mismatches += lsap.solve(m).total_cost != lsap_brute_force(m)
    elapsed = time.perf_counter() - start
    report("criterion 1", mismatches == 0 and elapsed < 30, f"mismatches={mismatches} time={elapsed:.1f}s")
    assert mismatches == 0
    assert elapsed < 30


@pytest.mark.criterion(2, "GED bound <= exact GED and <= ged_max, normalized in [0, 1] (200 pairs, < 2 min)")
def test_criterion_02_ged_lower_bound():
    costs = CostParams(25.0, 45.0)
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    failures = 0
    for _ in range(200):
        g1, g2 = random_graph(rng, 6), random_graph(rng, 6)
        res = ged(g1, g2, costs)
        exact = exact_ged(g1.labels.tolist(), g1.edges, g2.labels.tolist(), g2.edges, 25.0, 45.0)
        ok = res.lower_bound <= exact + 1e-9 and res.lower_bound <= res.max_ged + 1e-9
        ok = ok and 0.0 <= res.normalized <= 1.0
        failures += not ok
    elapsed = time.perf_counter() - start
    report("criterion 2", failures == 0 and elapsed < 120, f"failures={failures} time={elapsed:.1f}s")
    assert failures == 0
    assert elapsed < 120


@pytest.mark.criterion(3, "d_GED(r, r) = 0 and symmetric within 1e-9 over 50 image pairs")
def test_criterion_03_ged_metric_sanity(tmp_path):
    ds = generate_synthetic(SynthConfig(users=10, genuine_per_user=5, skilled_per_user=1, seed=31), tmp_path)
    ids = [i for u in ds.users for i in u.genuine + u.forgeries]
    rng = np.random.default_rng(3)
    worst, self_max = 0.0, 0.0
    for _ in range(50):
        a, b = rng.choice(len(ids), 2, replace=False)
        r, t = ds.image(ids[a]), ds.image(ids[b])
        worst = max(worst, abs(dissimilarity_ged(r, t) - dissimilarity_ged(t, r)))
        self_max = max(self_max, dissimilarity_ged(r, r))
    report("criterion 3", self_max == 0.0 and worst <= 1e-9, f"max |d(r,t)-d(t,r)|={worst:.2e}")
    assert self_max == 0.0
    assert worst <= 1e-9


@pytest.mark.criterion(4, "triplet gradients match central differences for >= 99% of parameters")
def test_criterion_04_gradient_check():
    rng = np.random.default_rng(44)
    model = small_model(seed=7)
    a, p, n = (random_inputs(rng, 6) for _ in range(3))
    h0 = hinges(model, a, p, n, 0.0)
    cases = {
        "active": (a, p, n, float(-h0.min()) + 1.0),
        "inactive": (a, p, n + 5.0, 0.01),
        "mixed": (a, p, n, float(-np.median(h0))),
    }
    fractions = {}
    for name, (ca, cp, cn, margin) in cases.items():
        h = hinges(model, ca, cp, cn, margin)
        if name == "active":
            assert (h > 0).all()
        elif name == "inactive":
            assert (h < 0).all()
        else:
            assert (h > 0).any() and (h < 0).any()
        fractions[name], _ = gradcheck(model, ca, cp, cn, margin, step=1e-4)
    ok = all(f >= 0.99 for f in fractions.values())
    report("criterion 4", ok, " ".join(f"{k}={v:.4f}" for k, v in fractions.items()))
    assert ok


@pytest.fixture(scope="module")
def training_users(tmp_path_factory):
    ds = generate_synthetic(
        SynthConfig(users=10, genuine_per_user=24, skilled_per_user=0, seed=5), tmp_path_factory.mktemp("train")
    )
    return genuine_images(ds)


@pytest.mark.criterion(5, "validation loss drops >= 50% within 50 epochs; bitwise reproducible")
def test_criterion_05_trainability(training_users):
    cfg = TrainConfig(epochs=50, train_per_user=16, val_per_user=8, seed=0)
    trainer = Trainer(training_users, cfg)
    initial = trainer.validation_loss()
    history = [initial]
    for _ in range(cfg.epochs):
        for batch in trainer.batches(trainer.epoch_triplets()):
            trainer.step(batch)
        history.append(trainer.validation_loss())
        if history[-1] <= 0.5 * initial:
            break
    dropped = history[-1] <= 0.5 * initial

    runs = []
    for _ in range(2):
        t = Trainer(training_users, TrainConfig(epochs=2, seed=0))
        model = t.fit()
        runs.append((model.params.copy(), model.meta["val_loss"], model.meta["train_loss"]))
    reproducible = np.array_equal(runs[0][0], runs[1][0]) and runs[0][1:] == runs[1][1:]
    report(
        "criterion 5",
        dropped and reproducible,
        f"val loss {initial:.4f} -> {history[-1]:.4f} after {len(history) - 1} epoch(s), reproducible={reproducible}",
    )
    assert dropped
    assert reproducible


@pytest.mark.criterion(6, "75 users x 24 genuine x 30 forgeries, R10 split: 750 / 1050 / 2250 / 5550")
def test_criterion_06_protocol_counts(tmp_path):
    cfg = SynthConfig(users=75, genuine_per_user=24, skilled_per_user=30, canvas=(32, 64), strokes=(1, 2), seed=75)
    generate_synthetic(cfg, tmp_path)
    ds = load_dataset(tmp_path)
    sf = split_counts(split_protocol(ds, Protocol(10, SKILLED)))
    rf = split_counts(split_protocol(ds, Protocol(10, RANDOM)))
    got = (sf["references"], sf["genuine"], sf["forgeries"], rf["forgeries"])
    report("criterion 6", got == (750, 1050, 2250, 5550), f"counts={got}")
    assert got == (750, 1050, 2250, 5550)
    assert rf["references"] == 750 and rf["genuine"] == 1050


@pytest.mark.criterion(7, "EER 0 when separated, 0.5 +- 0.02 on equal draws, monotone invariance, DET monotone")
def test_criterion_07_eer_properties():
    rng = np.random.default_rng(77)
    separated = compute_eer(rng.uniform(0, 1, 500), rng.uniform(2, 3, 500)).eer
    gen, forg = rng.normal(size=10_000), rng.normal(size=10_000)
    same = compute_eer(gen, forg).eer
    g, f = rng.gamma(2.0, size=300), rng.gamma(3.0, size=300)
    base = compute_eer(g, f).eer
    transforms = (np.log, np.sqrt, lambda v: v**3 + v, lambda v: 1 / (1 + np.exp(-v)), np.arctan)
    invariant = all(compute_eer(fn(g), fn(f)).eer == base for fn in transforms)
    det_ok = True
    for k in range(50):
        det = det_curve(rng.normal(0, 1, 40 + k).round(1), rng.normal(1, 1, 30 + k).round(1))
        det_ok &= bool((np.diff(det.far) >= 0).all() and (np.diff(det.frr) <= 0).all())
    ok = separated == 0.0 and abs(same - 0.5) <= 0.02 and invariant and det_ok
    report("criterion 7", ok, f"separated={separated} same={same:.4f} invariant={invariant} det={det_ok}")
    assert separated == 0.0
    assert abs(same - 0.5) <= 0.02
    assert invariant
    assert det_ok


@pytest.mark.slow
@pytest.mark.criterion(8, "fused EER <= best single EER + 2 pp in >= 3 of 4 cells (< 10 min)")
def test_criterion_08_fusion_trend(tmp_path):
    start = time.perf_counter()
    result = run_benchmark(tmp_path)
    elapsed = time.perf_counter() - start
    within = result.fusion_within(0.02)
    print()
    print(result.table())
    passed = sum(within.values())
    report("criterion 8", passed >= 3 and elapsed < 600, f"cells={passed}/4 time={elapsed:.0f}s")
    assert passed >= 3
    assert elapsed < 600


@pytest.mark.criterion(9, "default 11 x 11 grid gives 121 evaluations, deterministic argmin, complete grid.csv")
def test_criterion_09_grid_search(tmp_path):
    ds = generate_synthetic(
        SynthConfig(users=3, genuine_per_user=7, skilled_per_user=0, canvas=(48, 96), jitter=3.0, seed=9),
        tmp_path / "data",
    )
    protocol = Protocol(5, RANDOM)
    cache = PairwiseCache(ds)
    first = grid_search_costs(ds, DEFAULT_GRID, DEFAULT_GRID, protocol=protocol, cache=cache)
    second = grid_search_costs(ds, DEFAULT_GRID, DEFAULT_GRID, protocol=protocol, cache=PairwiseCache(ds))
    first.write_csv(tmp_path / "grid.csv")
    lines = (tmp_path / "grid.csv").read_text().splitlines()
    cells = {(float(r.split(",")[0]), float(r.split(",")[1])) for r in lines[1:]}
    expected_cells = {(float(a), float(b)) for a in DEFAULT_GRID for b in DEFAULT_GRID}
    best_eer = min(r[2] for r in first.rows)
    argmin = min((r[0], r[1]) for r in first.rows if r[2] == best_eer)
    distinct = len({r[2] for r in first.rows})
    ok = (
        distinct > 1
        and len(first.rows) == 121
        and cells == expected_cells
        and len(lines) == 122
        and first.best == second.best == argmin
        and first.rows == second.rows
    )
    report(
        "criterion 9",
        ok,
        f"evaluations={len(first.rows)} distinct EERs={distinct} best={first.best} eer={first.best_eer:.4f}",
    )
    assert distinct > 1
    assert len(first.rows) == 121
    assert cells == expected_cells and len(lines) == 122
    assert first.best == second.best == argmin
    assert first.rows == second.rows


class ScaledCache(PairwiseCache):
    def __init__(self, base, factor):
        self.__dict__.update(base.__dict__)
        self.base, self.factor = base, factor

    def prefetch_ged(self, pairs):
        self.base.prefetch_ged(pairs)

    def d_ged(self, a, b):
        return self.factor * self.base.d_ged(a, b)

    def d_neural(self, a, b):
        return self.factor * self.base.d_neural(a, b)


def _midpoints(values):
    v = np.unique(values)
    return (v[:-1] + v[1:]) / 2 if len(v) > 1 else v


@pytest.mark.criterion(10, "scaling dissimilarities by 7.3 changes no decision and no normalized score (1e-9)")
def test_criterion_10_scale_invariance(small_dataset):
    factor = 7.3
    base = PairwiseCache(small_dataset, model=EmbeddingModel(seed=10))
    scaled = ScaledCache(base, factor)
    worst, flips = 0.0, 0
    for mode in (SKILLED, RANDOM):
        protocol = Protocol(5, mode)
        a = run_protocol(small_dataset, protocol, "mcs", cache=base).rows
        b = run_protocol(small_dataset, protocol, "mcs", cache=scaled).rows
        for name in ("score_ged", "score_neural", "score_mcs"):
            x = np.array([getattr(r, name) for r in a])
            y = np.array([getattr(r, name) for r in b])
            worst = max(worst, float(np.abs(x - y).max()))
            for theta in _midpoints(x):
                flips += sum(decide(u, theta) != decide(v, theta) for u, v in zip(x, y))
        for name in ("d_ged", "d_neural"):
            x = np.array([getattr(r, name) for r in a])
            y = np.array([getattr(r, name) for r in b])
            for tau in _midpoints(x):
                flips += sum(decide(u, tau) != decide(v, factor * tau) for u, v in zip(x, y))
    report("criterion 10", worst <= 1e-9 and flips == 0, f"max score change={worst:.2e} decision flips={flips}")
    assert worst <= 1e-9
    assert flips == 0
