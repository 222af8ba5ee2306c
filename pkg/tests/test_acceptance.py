"""Acceptance gate. Each test prints one ``CRITERION n: PASS|FAIL`` line with
the measured numbers, then asserts. The experiment criteria run through the
CLI twice so the same artifacts also feed the determinism check."""

import itertools
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats
from scipy.special import log_expit

from balms.cli import main
from balms.datagen import ClassCounts, build_meta_set, gen_gaussian_mixture
from balms.io import read_rows
from balms.losses import (
    LossSpec,
    balanced_softmax_loss,
    binary_logistic_balanced_loss,
    margin_objective,
    optimal_margins,
    overbalance_ratio,
    sigmoid_ce,
    softmax_ce,
    softmax_probs,
)
from balms.meta import MetaConfig, meta_step
from balms.model import Batch, forward, init_params
from balms.sampler import SamplerState, gumbel_st_sample
from balms.toy2d import TOY_BBOX
from balms.train import TrainConfig, train_end_to_end

from oracles import central_fd, gaussian_posterior_1d, naive_ce, rel_err, relaxed_meta_objective

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SEEDS = range(5)
RESOLUTION = 100


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def _cli(*argv):
    assert main([str(a) for a in argv]) == 0


def _csvs(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(Path(root).rglob("*.csv"))}


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """Ablation grid, boundary toy and meta demo, each run twice."""
    root = tmp_path_factory.mktemp("acceptance")
    timing = {}
    for rep in ("a", "b"):
        t = time.perf_counter()
        _cli("ablate", "--config", CONFIGS / "ablation.json", "--out", root / rep / "ablate")
        timing.setdefault("ablate", time.perf_counter() - t)
        t = time.perf_counter()
        _cli("toy2d", "--seed", 0, "--resolution", RESOLUTION, "--out", root / rep / "toy2d")
        timing.setdefault("toy2d", time.perf_counter() - t)
        t = time.perf_counter()
        for seed in SEEDS:
            _cli("meta-demo", "--seed", seed, "--batch", 60, "--cycles", 200,
                 "--out", root / rep / "meta" / str(seed))
        timing.setdefault("meta", time.perf_counter() - t)
        t = time.perf_counter()
        _cli("train", "--config", CONFIGS / "balms.json", "--out", root / rep / "train")
        timing.setdefault("train", time.perf_counter() - t)
    return root, timing


GRAD_LOSSES = [
    LossSpec.softmax(),
    LossSpec.balanced([40, 8, 2], 1.0),
    LossSpec.balanced([40, 8, 2], 0.25),
    LossSpec("binary_logistic_balanced", [40, 8, 2]),
    LossSpec("softmax_ce_cbw", [40, 8, 2]),
]


def test_criterion_1_gradients(capsys):
    from balms.model import backward

    t = time.perf_counter()
    worst = 0.0
    for loss, hidden, seed in itertools.product(GRAD_LOSSES, [(), (6,)], range(10)):
        rng = np.random.default_rng(seed)
        p = init_params(3, 4, seed, hidden)
        p = p.with_flat(p.flat() + 0.1 * rng.normal(size=p.flat().size))
        batch = Batch(rng.normal(size=(5, 4)), rng.integers(0, 3, 5))
        _, dl = loss.batch(forward(p, batch), batch.labels)
        g = backward(p, batch.features, dl).flat()
        fd = central_fd(lambda v: loss.batch(forward(p.with_flat(v), batch), batch.labels)[0], p.flat())
        worst = max(worst, rel_err(g, fd))
    dt = time.perf_counter() - t
    report(capsys, 1, worst < 1e-6 and dt < 10, f"max rel err {worst:.2e} (< 1e-6), {dt:.1f}s (< 10s)")


def test_criterion_2_posterior_oracle(capsys):
    t = time.perf_counter()
    ds = gen_gaussian_mixture(2, 1, ClassCounts([4500, 500]), 1.0, seed=0)  # means -1, +1
    xs = np.linspace(-3, 3, 601)
    balanced = gaussian_posterior_1d(xs, [-1, 1], [0.5, 0.5])
    mae = {}
    for loss in ("balanced_softmax", "softmax_ce"):
        cfg = TrainConfig(loss=loss, iters=3000, batch=500, lr_max=0.1, lr_min=0.1, weight_decay=0.0)
        params, _ = train_end_to_end(cfg, ds)
        mae[loss] = float(np.mean(np.abs(softmax_probs(forward(params, xs[:, None])) - balanced)))
    dt = time.perf_counter() - t
    ok = mae["balanced_softmax"] < 0.05 and mae["softmax_ce"] > mae["balanced_softmax"] and dt < 30
    report(capsys, 2, ok, f"MAE balanced {mae['balanced_softmax']:.4f} (< 0.05), "
                          f"softmax {mae['softmax_ce']:.4f}, {dt:.1f}s")


def test_criterion_3_reductions(capsys):
    rng = np.random.default_rng(0)
    z = 5 * rng.normal(size=(100, 4))
    y = rng.integers(0, 4, 100)
    eq = [25, 25, 25, 25]
    d_bs = np.max(np.abs(balanced_softmax_loss(z, y, eq) - naive_ce(z, y)))
    d_ce = np.max(np.abs(softmax_ce(z, y) - naive_ce(z, y)))
    d_bl = np.max(np.abs(binary_logistic_balanced_loss(z, y, eq) - sigmoid_ce(z, y)))
    # sigmoid CE from its definition, via scipy's log-sigmoid
    onehot = np.eye(4)[y]
    ref = -(onehot * log_expit(z) + (1 - onehot) * log_expit(-z)).sum(1)
    d_sig = np.max(np.abs(sigmoid_ce(z, y) - ref))
    worst = max(d_bs, d_ce, d_bl, d_sig)
    report(capsys, 3, worst <= 1e-12, f"max |diff| {worst:.1e} (<= 1e-12)")


def _simplex(k, step=0.01):
    m = round(1 / step)
    for c in itertools.product(range(1, m), repeat=k - 1):
        if sum(c) < m:
            yield np.array([*c, m - sum(c)]) / m


def test_criterion_4_margin_optimality(capsys):
    t = time.perf_counter()
    ok, notes = True, []
    for counts, want in (([16, 1], [1 / 3, 2 / 3]), ([256, 16, 1], [1 / 7, 2 / 7, 4 / 7])):
        g = optimal_margins(counts, 1.0)
        best = margin_objective(g, counts)
        grid_min = min(margin_objective(p, counts) for p in _simplex(len(counts)))
        err = np.max(np.abs(g - want))
        ok &= best <= grid_min and err <= 1e-9
        notes.append(f"{counts}: opt {best:.6f} vs grid {grid_min:.6f}, err {err:.1e}")
    dt = time.perf_counter() - t
    report(capsys, 4, ok and dt < 5, "; ".join(notes) + f", {dt:.1f}s")


def test_criterion_5_overbalance_limit(capsys):
    r = overbalance_ratio([30.0, 0.0], [100, 1], y=0, j=1)
    rel = abs(r - 0.01) / 0.01
    report(capsys, 5, rel <= 1e-6, f"ratio {r!r}, rel err {rel:.1e} (<= 1e-6)")


def test_criterion_6_gumbel(capsys):
    rng = np.random.default_rng(0)
    pvals, one_hot = [], True
    for n in range(2, 11):
        rho = rng.dirichlet(np.ones(n))
        s = gumbel_st_sample(rho, 100_000, 1.0, seed=n)
        one_hot &= bool(np.all(s.hard.sum(1) == 1) and np.all((s.hard == 0) | (s.hard == 1)))
        pvals.append(stats.chisquare(np.bincount(s.chosen, minlength=n), rho * 100_000).pvalue)

    errs = []
    for seed in range(3):
        train = gen_gaussian_mixture(3, 2, ClassCounts([6, 2, 1]), 1.0, seed=seed)
        meta = build_meta_set(train, 12, seed)
        theta = init_params(3, 2, seed, (3,))
        psi0 = np.array([0.3, -0.2, 0.6])
        loss = LossSpec.balanced(train.counts)
        cfg = MetaConfig(inner_lr=0.5, batch=8)
        step = meta_step(theta, SamplerState(psi0), train, meta, cfg, seed, loss)
        fd = central_fd(lambda psi: relaxed_meta_objective(
            psi, psi0, theta, train, meta, loss, cfg.inner_lr, step.sample.gumbel), psi0)
        errs.append(rel_err(step.hypergrad, fd))
    ok = min(pvals) > 0.001 and one_hot and max(errs) < 1e-3
    report(capsys, 6, ok, f"min chi2 p {min(pvals):.3g} (> 0.001), one-hot {one_hot}, "
                          f"hypergrad rel err {max(errs):.1e} (< 1e-3)")


def test_criterion_7_bilevel(capsys, runs):
    root, timing = runs
    drops, var = [], {"balanced_softmax": [], "softmax": []}
    for seed in SEEDS:
        base = root / "a" / "meta" / str(seed)
        ml = [float(r["meta_loss"]) for r in read_rows(base / "balanced_softmax" / "meta_history.csv")]
        drops.append(np.mean(ml[-20:]) - np.mean(ml[:20]))
        for name in var:
            rates = [float(r["pi"]) for r in read_rows(base / name / "rates.csv")]
            var[name].append(np.var(rates))
    v_bs, v_sm = np.median(var["balanced_softmax"]), np.median(var["softmax"])
    ok = np.median(drops) < 0 and v_bs < v_sm and timing["meta"] < 120
    report(capsys, 7, ok, f"median meta-loss change {np.median(drops):+.4f} (< 0), rate variance "
                          f"BS {v_bs:.4f} < softmax {v_sm:.4f}, {timing['meta']:.1f}s")


def test_criterion_8_ordering(capsys, runs):
    root, timing = runs
    rows = read_rows(root / "a" / "ablate" / "ablation.csv")
    assert all(r["status"] == "ok" for r in rows)
    acc = {}
    for r in rows:
        acc.setdefault(r["name"], []).append(float(r["overall"]))
    med = {n: float(np.median(v)) for n, v in acc.items()}
    sm, bs4, bs, balms = (med["(1) Softmax"], med["(2) Balanced Softmax 1/4"],
                          med["(3) Balanced Softmax"], med["(10) BALMS"])
    checks = {"softmax < BS": sm < bs, "BS <= BALMS": bs <= balms, "BS(1) > BS(1/4)": bs > bs4,
              "runtime": timing["ablate"] < 300}
    failed = [k for k, v in checks.items() if not v]
    report(capsys, 8, not failed, f"median acc softmax {sm:.4f}, BS1/4 {bs4:.4f}, BS {bs:.4f}, "
                                  f"BALMS {balms:.4f}; failed: {failed or 'none'}")


def _toy(root, name):
    rows = read_rows(root / "a" / "toy2d" / name / "boundary_distances.csv")
    out = {}
    for r in rows:
        out.setdefault(int(r["iter"]), {})[(int(r["minority"]), int(r["other"]))] = (
            float(r["distance"]), float(r["minority_area"]))
    return out


def test_criterion_9_boundaries(capsys, runs):
    root, timing = runs
    sm, sm_cbs = _toy(root, "softmax"), _toy(root, "softmax_cbs")
    bs, bs_cbs = _toy(root, "balanced_softmax"), _toy(root, "balanced_softmax_cbs")
    last = max(sm)
    cell = (TOY_BBOX[1] - TOY_BBOX[0]) / (RESOLUTION - 1)
    # (a) every pairwise boundary of the two softmax runs within one grid cell
    gap = max(abs(sm[last][p][0] - sm_cbs[last][p][0]) for p in sm[last])
    a = gap <= cell
    # (b) minority anchor (class 2) against the head: boundary farther away under BS
    b = bs[last][(2, 0)][0] > sm[last][(2, 0)][0]
    # (c) minority region larger with CBS at every shared snapshot
    c = all(bs_cbs[t][(2, 0)][1] > bs[t][(2, 0)][1] for t in bs)
    ok = a and b and c and timing["toy2d"] < 60
    report(capsys, 9, ok,
           f"(a) {'ok' if a else 'FAIL'} max boundary gap {gap:.3f} vs cell {cell:.4f}; "
           f"(b) {'ok' if b else 'FAIL'} BS {bs[last][(2, 0)][0]:.3f} > softmax {sm[last][(2, 0)][0]:.3f}; "
           f"(c) {'ok' if c else 'FAIL'} areas "
           + ", ".join(f"{bs_cbs[t][(2, 0)][1]:.3f}>{bs[t][(2, 0)][1]:.3f}" for t in sorted(bs))
           + f"; {timing['toy2d']:.1f}s")


def test_criterion_10_determinism(capsys, runs):
    root, _ = runs
    a, b = _csvs(root / "a"), _csvs(root / "b")
    differ = sorted(str(k) for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    report(capsys, 10, bool(a) and not differ, f"{len(a)} CSV files compared, {len(differ)} differ")
