"""Acceptance criteria 1-12.

Each test records a PASS/FAIL line that is printed in the terminal summary.
The desk-scale learning runs (criteria 8, 9, 10, 11) share one curated 11 x 11
synthetic dataset and a per-session cache of trained models.
"""
import itertools
import json
import time

import numpy as np
import pytest

from platewave import analysis as an
from platewave import autodiff as ad
from platewave import cli, layers, models, training as tr
from platewave import dihedral as d4
from platewave.autodiff import Tensor
from platewave.signals import compress as cmp
from platewave.signals import curate as cur
from platewave.signals import dataset as dsm
from platewave.signals import synth
from platewave.signals.config import PlateConfig, SymmetryBreakSpec

from conftest import ACCEPTANCE, numeric_grad, rel_err
from test_autodiff import BINARY, UNARY

G = d4.elements()

DESK_PLATE = PlateConfig(grid=11)
DESK_SYM = SymmetryBreakSpec(anisotropy=0.02, gain_jitter=0.03, phase_jitter=0.05, boundary_irregularity=0.05)
DESK_DATA_SEED = 1
DESK_EPOCHS = 100
DESK_SEEDS = (0, 1, 2)
DESK_WIDTHS = {"ordinary": (8, 8, 8, 8, 8, 16), "exact": (4, 4, 4, 4, 4, 16),
               "approximate": (4, 4, 4, 4, 4, 16)}


def record(n, ok, detail):
    ACCEPTANCE[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[n])
    assert ok, ACCEPTANCE[n]


# shared desk-scale state

@pytest.fixture(scope="session")
def desk_data():
    return cur.curate(dsm.generate(DESK_PLATE, DESK_SYM, DESK_DATA_SEED))


_RUNS: dict = {}


def desk_run(data, variant, seed, task="locate"):
    key = (variant, seed, task)
    if key not in _RUNS:
        model = models.build(models.ModelSpec(variant, task, DESK_WIDTHS[variant], seed=seed))
        cfg = tr.TrainConfig(task=task, epochs=DESK_EPOCHS, seed=seed, eval_every=0)
        t0 = time.perf_counter()
        _RUNS[key] = tr.train(model, data, cfg)
        _RUNS[key].seconds = time.perf_counter() - t0
    return _RUNS[key]


# 1. group algebra

def _oracle_matrices():
    """Point matrices built from first principles, in the order e, r, r2, r3, s_v, s_h, s13, s24."""
    rot = np.array([[0, -1], [1, 0]])
    return [np.eye(2, dtype=int), rot, rot @ rot, rot @ rot @ rot,
            np.diag([-1, 1]), np.diag([1, -1]), np.array([[0, 1], [1, 0]]), np.array([[0, -1], [-1, 0]])]


def _corner_permutation(M):
    corners = [(-1, -1), (1, -1), (1, 1), (-1, 1)]
    P = np.zeros((4, 4), dtype=int)
    for k, c in enumerate(corners):
        P[corners.index(tuple(M @ np.array(c))), k] = 1
    return P


def test_criterion_01_group_algebra():
    t0 = time.perf_counter()
    perms = [_corner_permutation(M) for M in _oracle_matrices()]
    table_ok = all(
        [i for i in range(8) if np.array_equal(perms[i], perms[a] @ perms[b])] == [d4.CAYLEY[a, b]]
        for a, b in itertools.product(range(8), range(8)))
    rep_ok = all(np.array_equal(d4.PERMUTATION_REP[i], perms[i]) for i in range(8))
    F = np.random.default_rng(0).normal(size=(8, 5))
    homs = {"vector": 0, "permutation": 0, "regular": 0}
    for a, b in itertools.product(G, G):
        ab = d4.compose(a, b)
        homs["vector"] += np.array_equal(d4.VECTOR_REP[ab.index], d4.VECTOR_REP[a.index] @ d4.VECTOR_REP[b.index])
        homs["permutation"] += np.array_equal(d4.PERMUTATION_REP[ab.index],
                                              d4.PERMUTATION_REP[a.index] @ d4.PERMUTATION_REP[b.index])
        homs["regular"] += np.array_equal(d4.act_on_regular(ab, F), d4.act_on_regular(a, d4.act_on_regular(b, F)))
    elapsed = time.perf_counter() - t0
    ok = table_ok and rep_ok and all(v == 64 for v in homs.values()) and elapsed < 1.0
    record(1, ok, f"cayley={table_ok} reps={rep_ok} homomorphism pairs={homs} time={elapsed:.3f}s")


# 2. exact equivariance

def _equivariance_stat(model, X):
    base = model.predict(X)
    worst = 0.0
    for g in G:
        moved = model.predict(d4.act_on_adjacency(g, X, axes=(1, 2)))
        err = np.linalg.norm(base @ d4.VECTOR_REP[g.index].T - moved, axis=1) / np.linalg.norm(base, axis=1)
        worst = max(worst, float(err.max()))
    return worst


def test_criterion_02_exact_equivariance():
    t0 = time.perf_counter()
    X = np.random.default_rng(7).normal(size=(10, 4, 4, 158))
    exact = _equivariance_stat(models.build(models.ModelSpec("exact", "locate", seed=3)), X)
    ordinary = _equivariance_stat(models.build(models.ModelSpec("ordinary", "locate", seed=3)), X)
    elapsed = time.perf_counter() - t0
    ok = exact <= 1e-8 and ordinary > 1e-2 and elapsed < 10.0
    record(2, ok, f"exact={exact:.2e} ordinary={ordinary:.2e} time={elapsed:.2f}s")


# 3. omega identity

def test_criterion_03_omega_identity():
    X = np.random.default_rng(8).normal(size=(6, 4, 4, 158))
    same = True
    for task in models.TASKS:
        ex = models.build(models.ModelSpec("exact", task, seed=5))
        ap = models.build(models.ModelSpec("approximate", task, seed=5))
        same &= bool(np.array_equal(ex.predict(X), ap.predict(X)))
    rng = np.random.default_rng(9)
    worst = max(abs(float(layers.symmetry_weights(rng.normal(size=8)).data.sum()) - 8.0) for _ in range(1000))
    record(3, same and worst <= 1e-12, f"bitwise_equal={same} max|sum(omega)-8|={worst:.1e}")


# 4. gradient integrity

def _grad_ok(build, inputs, seed, tol):
    rng = np.random.default_rng(10_000 + seed)
    params = [ad.parameter(x.copy()) for x in inputs]
    out = build(*params)
    R = rng.normal(size=out.shape)
    (out * Tensor(R)).sum().backward()
    for i, p in enumerate(params):
        def f(v, i=i):
            args = [Tensor(x.copy()) for x in inputs]
            args[i] = Tensor(v)
            return float((build(*args).data * R).sum())
        if rel_err(p.grad, numeric_grad(f, inputs[i].copy())) >= tol:
            return False
    return True


def _primitive_cases(seed):
    rng = np.random.default_rng(seed)
    cases = {name: (fn, [rng.normal(size=(2, 3, 4))]) for name, fn in UNARY.items()}
    cases.update({name: (fn, [rng.normal(size=(3, 4)), rng.normal(size=(1, 4))]) for name, fn in BINARY.items()})
    cases["matmul"] = (ad.matmul, [rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))])
    cases["dense"] = (ad.dense, [rng.normal(size=(4, 3)), rng.normal(size=(2, 3)), rng.normal(size=2)])
    cases["layernorm_affine"] = (lambda x, g, b: ad.layernorm(x, (1, 3), g, b),
                                 [rng.normal(size=(2, 3, 2, 4)), rng.normal(size=(3, 1, 4)),
                                  rng.normal(size=(3, 1, 4))])
    cases["dropout"] = (lambda a: ad.dropout(a, 0.3, np.random.default_rng(seed), True),
                        [rng.normal(size=(4, 6, 3))])
    for method in ("direct", "fft"):
        cases[f"conv1d_{method}"] = (
            lambda x, k, m=method: ad.conv1d(x, k, stride=2, padding=3, method=m),
            [rng.normal(size=(2, 3, 23)), rng.normal(size=(4, 3, 9))])
    return cases


def test_criterion_04_gradient_integrity():
    failures = []
    n_prim = 0
    for seed in range(20):
        for name, (fn, inputs) in _primitive_cases(seed).items():
            n_prim += 1
            if not _grad_ok(fn, inputs, seed, 1e-5):
                failures.append(f"{name}@{seed}")
    loss_checks = 0
    for seed in range(20):
        for overlap in ("face", "iou"):
            rng = np.random.default_rng(seed)
            x = rng.uniform(-100, 100, size=(6, 2))
            p = x + rng.normal(size=(6, 2)) * np.array([1.0, 5.0, 20.0, 35.0, 60.0, 2.0])[:, None]
            t = Tensor(p, requires_grad=True)
            tr.locate_loss(t, x, overlap=overlap).backward()
            num = numeric_grad(lambda q: tr.locate_error(q, x, overlap=overlap).mean(), p, h=1e-5)
            loss_checks += 1
            if rel_err(t.grad, num) >= 1e-4:
                failures.append(f"locate_loss[{overlap}]@{seed}")
    record(4, not failures, f"primitive checks={n_prim} loss checks={loss_checks} failures={failures}")


# 5. loss geometry

def _rect_oracle(p, x, side=40.0):
    w = min(p[0], x[0]) + side / 2 - (max(p[0], x[0]) - side / 2)
    h = min(p[1], x[1]) + side / 2 - (max(p[1], x[1]) - side / 2)
    area = max(w, 0.0) * max(h, 0.0)
    d2 = (p[0] - x[0]) ** 2 + (p[1] - x[1]) ** 2
    return max(d2, 3.35 ** 2) * (1 - area / side ** 2)


def test_criterion_05_loss_geometry():
    x = np.array([-17.0, 44.0])
    examples = {(0.0, 0.0): 0.0, (100.0, 0.0): 10000.0, (2.0, 0.0): 11.2225 * 0.05}
    errs = []
    for delta, expected in examples.items():
        p = x + np.array(delta)
        errs.append(max(abs(tr.locate_error(p, x) - expected), abs(_rect_oracle(p, x) - expected),
                        abs(tr.locate_loss(Tensor(p), x).item() - expected)))
    rng = np.random.default_rng(11)
    exact_pairs = 0
    for _ in range(100):
        p, q = rng.uniform(-150, 150, size=(2, 2))
        q = p + rng.normal(scale=20, size=2) if rng.random() < 0.5 else q
        e = tr.locate_error(p, q)
        exact_pairs += all(tr.locate_error(d4.act_on_points(g, p), d4.act_on_points(g, q)) == e for g in G)
    ok = max(errs) <= 1e-6 and exact_pairs == 100
    record(5, ok, f"example errors={[f'{e:.1e}' for e in errs]} invariant pairs={exact_pairs}/100")


# 6. signal pipeline

def test_criterion_06_signal_pipeline():
    plate = PlateConfig()
    t = np.arange(plate.n_samples) * plate.dt_us
    rms = lambda v: float(np.sqrt(np.mean(v ** 2)))  # noqa: E731
    x300 = np.sin(2 * np.pi * 0.3 * t)
    x100 = np.sin(2 * np.pi * 0.1 * t)
    passthrough = rms(cmp.compress(x300)) / rms(x300)
    rejection = rms(cmp.compress(x100)) / rms(x100)
    rng = np.random.default_rng(12)
    X, Y = rng.normal(size=(2, plate.n_samples))
    a, b = rng.normal(size=2)
    lin = float(np.abs(cmp.compress(a * X + b * Y) - a * cmp.compress(X) - b * cmp.compress(Y)).max())
    lin /= max(1.0, float(np.abs(cmp.compress(X)).max()))
    y = cmp.compress(X + 3.0)
    dc = abs(float(y.mean())) / rms(y)
    ok = abs(passthrough - 1) <= 0.01 and rejection < 0.01 and lin <= 1e-12 and y.shape == (158,) and dc < 1e-12
    record(6, ok, f"300kHz gain={passthrough:.4f} 100kHz gain={rejection:.1e} linearity={lin:.1e} "
                  f"length={y.shape[0]} dc/rms={dc:.1e}")


# 7. synthetic covariance

def test_criterion_07_synthetic_covariance():
    plate = PlateConfig(noise=0.0)
    rng = np.random.default_rng(13)
    pos = plate.grid_positions()[rng.choice(len(plate.grid_positions()), 25, replace=False)]
    worst = 0.0
    for x in pos:
        V = cmp.compress(synth.synthesize(plate, x))
        for g in G:
            W = cmp.compress(synth.synthesize(plate, d4.act_on_points(g, x)))
            worst = max(worst, float(np.abs(W - d4.act_on_adjacency(g, V)).max() / np.abs(V).max()))
    ds = dsm.generate(PlateConfig(grid=7, noise=0.0), SymmetryBreakSpec(), seed=0)
    r0 = an.baseline_equivariance_error(ds.baselines)[0]
    rx = float(np.nanmax(an.input_equivariance_field(ds).values))
    ok = worst <= 1e-12 and r0 <= 1e-12 and rx <= 1e-12
    record(7, ok, f"orbit max rel err={worst:.1e} R0={r0:.1e} max R(x)={rx:.1e}")


# 8. desk-scale learning

def test_criterion_08_desk_learning(desk_data):
    t0 = time.perf_counter()
    rows = {}
    for seed in DESK_SEEDS:
        for variant in models.VARIANTS:
            m = desk_run(desk_data, variant, seed).metrics["test"]
            rows[(variant, seed)] = (m["mde"], m["rmse"])
    elapsed = time.perf_counter() - t0
    mde_ok = all(v[0] < 20.0 for v in rows.values())
    mean_rmse = {v: float(np.mean([rows[(v, s)][1] for s in DESK_SEEDS])) for v in models.VARIANTS}
    mean_mde = {v: float(np.mean([rows[(v, s)][0] for s in DESK_SEEDS])) for v in models.VARIANTS}
    ok = mde_ok and mean_rmse["approximate"] <= mean_rmse["ordinary"]
    record(8, ok, f"locations={len(desk_data)} max MDE={max(v[0] for v in rows.values()):.2f} mm "
                  f"mean MDE={ {k: round(v, 2) for k, v in mean_mde.items()} } "
                  f"mean RMSE={ {k: round(v, 3) for k, v in mean_rmse.items()} } time={elapsed / 60:.1f} min")


# 9. desk-scale detection

def test_criterion_09_desk_detection(desk_data):
    acc = {v: desk_run(desk_data, v, 0, "detect").metrics["test"]["accuracy"] for v in models.VARIANTS}
    record(9, all(a >= 0.95 for a in acc.values()), f"test accuracy={ {k: round(a, 4) for k, a in acc.items()} }")


# 10. window ablation

def test_criterion_10_window_ablation(desk_data):
    spec = models.ModelSpec("ordinary", "locate", DESK_WIDTHS["ordinary"], seed=0)
    rows = tr.ablate_windows(spec, desk_data, tr.TrainConfig(epochs=DESK_EPOCHS, seed=0, eval_every=0))
    mde = [r["mde"] for r in rows]
    ok = int(np.argmin(mde)) == 0
    record(10, ok, "MDE by window " + ", ".join(f"{w[0]:.2f}-{w[1]:.2f}ms={m:.2f}"
                                                  for w, m in zip(tr.WINDOWS_MS, mde)))


# 11. equivariance reports

def test_criterion_11_equivariance_reports(desk_data):
    q = max(float(an.learned_equivariance_field(desk_run(desk_data, "exact", s).model, desk_data).values.max())
            for s in DESK_SEEDS)
    trend = []
    for s in DESK_SEEDS:
        rep = an.symmetry_weight_report(desk_run(desk_data, "approximate", s).model)
        trend.append((rep["first"], rep["last"]))
    below = sum(last < first for first, last in trend)
    ok = q <= 1e-8 and below >= 2
    record(11, ok, f"exact max Q={q:.1e} (first, last) max|omega-1| per seed="
                   f"{[(round(f, 5), round(la, 5)) for f, la in trend]} last<first in {below}/3")


# 12. determinism

def test_criterion_12_determinism(tmp_path, capsys):
    data = tmp_path / "d.pwds"
    assert cli.main(["synth", "--out", str(data), "--grid", "5", "--seed", "6"]) == 0
    for run in ("a", "b"):
        assert cli.main(["train", "--dataset", str(data), "--out", str(tmp_path / run), "--variant", "approx",
                         "--seeds", "0,1", "--epochs", "3", "--widths", "2,2,2,2,2,4"]) == 0
    capsys.readouterr()
    same = [(tmp_path / "a" / f"seed-{s}" / "history.jsonl").read_bytes() ==
            (tmp_path / "b" / f"seed-{s}" / "history.jsonl").read_bytes() for s in (0, 1)]
    rows = [json.loads(x) for x in (tmp_path / "a" / "seed-0" / "history.jsonl").read_text().splitlines()]
    record(12, all(same) and len(rows) == 3, f"identical history files={same} epochs logged={len(rows)}")
