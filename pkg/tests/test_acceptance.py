"""Acceptance checks. Each test records a one-line verdict, printed in the terminal summary."""
import itertools
import json
import time

import numpy as np
import pytest
from PIL import Image

from conftest import ACCEPTANCE, assert_fidelity_gram
from qadv import cli
from qadv.adversary import AttackConfig, attack, augment
from qadv.alignment import AlignmentConfig, align, spsa_minimize, target_alignment
from qadv.featuremap import compact_map, large_map
from qadv.pipeline import synth_dataset, stratified_split
from qadv.qkernel import (GradientMode, ShotConfig, cross_kernel, decision_gradient, embed,
                          gram_from_states, gram_matrix, kernel_value, qke_sample)
from qadv.svm import (KKT_TOL, dual_objective, fit, fit_kernel, kfold_select_C, kkt_violations,
                      solve_dual)

DESK = compact_map(4, 2)


def record(n: int, ok: bool, detail: str):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def toy_instances(count=20):
    for i in range(count):
        rng = np.random.default_rng([7, i])
        X = rng.uniform(-np.pi, np.pi, (6, 16))
        y = np.array([1.0, -1.0] * 3)
        model = fit(DESK, rng.uniform(0, 2 * np.pi, 8), X, y, C=1.0)
        yield model, rng.uniform(-np.pi, np.pi, 16)


def test_1_gradient_matches_finite_differences():
    start = time.perf_counter()
    worst = 0.0
    for model, x in toy_instances():
        g = decision_gradient(model, x, GradientMode.EXACT_SHIFT)
        fd = decision_gradient(model, x, GradientMode.FINITE_DIFF)
        worst = max(worst, float(np.max(np.abs(g - fd) / np.abs(fd))))
    elapsed = time.perf_counter() - start
    record(1, worst < 1e-6 and elapsed < 60,
           f"max componentwise relative error {worst:.2e} (< 1e-6), {elapsed:.2f}s")


def test_2_quarter_pi_shift_ratio():
    worst = 0.0
    for model, x in toy_instances():
        exact = decision_gradient(model, x, GradientMode.EXACT_SHIFT)
        quarter = decision_gradient(model, x, GradientMode.PAPER_SHIFT)
        fd = decision_gradient(model, x, GradientMode.FINITE_DIFF)
        assert np.allclose(exact, fd, rtol=1e-6)
        worst = max(worst, float(np.max(np.abs(quarter / exact - np.sqrt(2)))))
    record(2, worst < 1e-6, f"max |ratio - sqrt(2)| = {worst:.2e} (< 1e-6)")


def _oracle(K, y, C):
    """Exact optimum by active-set enumeration, cross-checked against a projected grid."""
    m = y.size
    Q = np.outer(y, y) * K
    best = -np.inf
    for assign in itertools.product((0, 1, 2), repeat=m):
        assign = np.array(assign)
        F, U = np.flatnonzero(assign == 2), np.flatnonzero(assign == 1)
        a = np.where(assign == 1, C, 0.0)
        if F.size:
            A = np.zeros((F.size + 1, F.size + 1))
            A[:F.size, :F.size] = Q[np.ix_(F, F)]
            A[:F.size, -1] = A[-1, :F.size] = y[F]
            rhs = np.r_[1.0 - Q[np.ix_(F, U)].sum(axis=1) * C, -C * y[U].sum()]
            sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
            if np.linalg.norm(A @ sol - rhs) > 1e-9:
                continue
            a[F] = sol[:-1]
            if np.any(a[F] < -1e-12) or np.any(a[F] > C + 1e-12):
                continue
            a = np.clip(a, 0, C)
        elif abs(y @ a) > 1e-12:
            continue
        best = max(best, dual_objective(a, K, y))
    grid = np.linspace(0, C, 13)
    for head in itertools.product(grid, repeat=min(m - 1, 3)):
        a = np.zeros(m)
        a[:len(head)] = head
        a[m - 1] = -y[m - 1] * (y[:m - 1] @ a[:m - 1])
        if 0 <= a[m - 1] <= C:
            assert dual_objective(a, K, y) <= best + 1e-9
    return best


def test_3_solver_oracle_equivalence():
    start = time.perf_counter()
    worst_gap, kkt_bad = 0.0, 0
    for i in range(50):
        rng = np.random.default_rng([3, i])
        m = int(rng.integers(2, 7))
        y = rng.choice((-1.0, 1.0), m)
        y[:2] = (1.0, -1.0)
        if i % 2:
            K = gram_from_states(embed(DESK, rng.uniform(0, 6, 8), rng.uniform(-2, 2, (m, 16))))
        else:
            Z = rng.normal(size=(m, 3))
            K = np.exp(-0.5 * np.sum((Z[:, None] - Z[None]) ** 2, axis=-1))
        C = float(rng.choice((0.1, 1.0, 10.0)))
        alphas, report = solve_dual(K, y, C)
        worst_gap = max(worst_gap, abs(report.dual_objective - _oracle(K, y, C)))
        kkt_bad += kkt_violations(alphas, K, y, C, report.solver_bias, KKT_TOL).size
    elapsed = time.perf_counter() - start
    record(3, worst_gap < 1e-6 and kkt_bad == 0 and elapsed < 120,
           f"max |dual - oracle| {worst_gap:.2e}, KKT violations {kkt_bad}, {elapsed:.1f}s")


class LinearModel:
    """SVM with the linear kernel; its gradient is the constant weight vector."""

    def __init__(self, X, y, C=1.0):
        K = X @ X.T
        self.alphas, self.bias, _ = fit_kernel(K, y, C, bias_mode="support")
        self.w = (self.alphas * y) @ X

    def decision(self, x):
        return float(self.w @ x + self.bias)


def test_4_adaptive_step_lands_on_surface():
    worst = 0.0
    for i in range(20):
        rng = np.random.default_rng([4, i])
        X = np.vstack([rng.normal(1, 1, (10, 5)), rng.normal(-1, 1, (10, 5))])
        y = np.r_[np.ones(10), -np.ones(10)]
        model = LinearModel(X, y)
        x = rng.normal(size=5)
        y_pred = 1.0 if model.decision(x) >= 0 else -1.0
        r = attack(model, x, y_pred, AttackConfig(max_iterations=1), grad_fn=lambda v: model.w)
        worst = max(worst, abs(r.f_trace[-1]))
    record(4, worst <= 1e-8, f"max |f| after one adaptive step {worst:.2e} (<= 1e-8)")


def desk_pipeline(seed: int):
    ds = synth_dataset(40, 16, 8.0, seed=seed, intrinsic_dim=2, floor_noise=0.1)
    train, test = stratified_split(ds, 20, seed=seed)
    theta, _ = align(DESK, train.samples, train.labels, AlignmentConfig(iterations=30, seed=seed))
    C, _ = kfold_select_C(DESK, theta, train.samples, train.labels)
    model = fit(DESK, theta, train.samples, train.labels, C)
    pred = model.predict(test.samples)
    acc = float(np.mean(pred == test.labels))

    correct = np.flatnonzero(pred == test.labels)
    cfg = AttackConfig(max_iterations=50, eta_constant=0.01)
    results = [attack(model, test.samples[i], test.labels[i], cfg) for i in correct]
    ok = [r for r in results if r.success]
    flip = len(ok) / len(results)

    n_train = int(round(0.8 * len(ok)))
    tx, ty, sx, sy, _, held = augment(train.samples, train.labels, ok, test.samples, test.labels,
                                      (n_train, len(ok) - n_train), seed=seed)
    pre = float(np.mean(model.predict(sx) == sy))
    C2, _ = kfold_select_C(DESK, theta, tx, ty)
    model2 = fit(DESK, theta, tx, ty, C2)
    post = float("nan")
    if held.size:
        held_x = np.stack([ok[i].x_adv for i in held])
        held_y = np.array([ok[i].y_true for i in held])
        post = float(np.mean(model2.predict(held_x) == held_y))
    iters = max((r.iterations_used for r in ok), default=0)
    return acc, flip, acc - pre, post, iters


@pytest.mark.slow
def test_5_desk_scale_end_to_end():
    start = time.perf_counter()
    acc, flip, drop, post, iters = desk_pipeline(seed=0)
    elapsed = time.perf_counter() - start
    ok = acc >= 0.95 and flip >= 0.9 and drop >= 0.05 and post >= 0.9 and elapsed < 600
    record(5, ok, f"(a) test acc {acc:.2f} (b) flipped {flip:.2f} in <= {iters} it "
                  f"(c) drop {drop:.2f} (d) held-out adversarial acc {post:.2f}; {elapsed:.1f}s")


def test_6_alignment_metric_and_spsa():
    rng = np.random.default_rng(6)
    y = rng.choice((-1.0, 1.0), 9)
    ideal = abs(target_alignment(np.outer(y, y), y) - 1.0)
    X = rng.normal(size=(9, 16))
    K = gram_matrix(DESK, rng.normal(size=8), X).values
    scale = abs(target_alignment(7.3 * K, y) - target_alignment(K, y))
    trace = spsa_minimize(lambda t: float(t @ t), np.array([1.0, 1.0]), AlignmentConfig(iterations=200))
    final = float(np.linalg.norm(trace.final_theta))
    record(6, ideal < 1e-12 and scale < 1e-12 and final < 0.1,
           f"|A(yy^T) - 1| {ideal:.1e}, scale drift {scale:.1e}, ||theta|| after 200 SPSA steps {final:.3f}")


def test_7_kernel_properties():
    count = 0
    cases = [(DESK, 8, 16, 1.0), (compact_map(), 20, 80, 1.0), (large_map(), 30, 260, 0.3)]
    for spec, p, d, spread in cases:
        for seed in range(3):
            rng = np.random.default_rng([7, seed])
            K = gram_matrix(spec, rng.uniform(0, 2 * np.pi, p), rng.uniform(-spread, spread, (10, d)))
            assert_fidelity_gram(K)
            count += 1
    record(7, True, f"{count} Gram matrices symmetric/unit-diagonal/PSD/in [0,1] "
                    "(every Gram built in the suite is also audited)")


def test_8_shot_noise():
    worst = 0.0
    for i in range(20):
        rng = np.random.default_rng([8, i])
        theta = rng.uniform(0, 2 * np.pi, 8)
        x1, x2 = rng.uniform(-1, 1, (2, 16))
        k = kernel_value(DESK, theta, x1, x2)
        shots = 100_000
        est = qke_sample(DESK, theta, x1, x2, ShotConfig(shots, seed=i))
        se = np.sqrt(max(k * (1 - k), 1e-12) / shots)
        worst = max(worst, abs(est - k) / se)
    rng = np.random.default_rng(88)
    x1, x2 = rng.uniform(-1, 1, (2, 16))
    a = qke_sample(DESK, np.zeros(8), x1, x2, ShotConfig(1024, 5))
    b = qke_sample(DESK, np.zeros(8), x1, x2, ShotConfig(1024, 5))
    X = rng.uniform(-1, 1, (4, 16))
    m1 = cross_kernel(DESK, np.zeros(8), X, X, shots=ShotConfig(1024, 5))
    m2 = cross_kernel(DESK, np.zeros(8), X, X, shots=ShotConfig(1024, 5))
    same = np.float64(a).tobytes() == np.float64(b).tobytes() and m1.tobytes() == m2.tobytes()
    record(8, worst < 4 and same, f"max deviation {worst:.2f} standard errors (< 4); seeded repeat identical: {same}")


def test_9_manifest_replay(tmp_path):
    run = lambda *a: cli.main([str(v) for v in a])  # noqa: E731
    assert run("synth", "--per-class", 20, "--dim", 16, "--intrinsic-dim", 2, "--floor-noise", 0.1,
               "--n-test", 10, "--out", tmp_path / "data") == 0
    steps = [
        ("theta.manifest.json", ["align", "--data", tmp_path / "data/train.csv", "--qubits", 4,
                                 "--blocks", 2, "--iters", 5, "--out", tmp_path / "theta.json"]),
        ("model.manifest.json", ["train", "--theta", tmp_path / "theta.json", "--data",
                                 tmp_path / "data/train.csv", "--out", tmp_path / "model.json"]),
        ("adv/manifest.json", ["attack", "--model", tmp_path / "model.json", "--data",
                               tmp_path / "data/test.csv", "--only-correct", "--out", tmp_path / "adv"]),
        ("model2.manifest.json", ["defend", "--model", tmp_path / "model.json", "--adv", tmp_path / "adv",
                                  "--test", tmp_path / "data/test.csv", "--split", "0.8",
                                  "--out", tmp_path / "model2.json"]),
    ]
    for _, argv in steps:
        assert run(*argv) == 0
    outputs = sorted(p for p in tmp_path.rglob("*") if p.suffix in (".csv", ".json", ".pgm")
                     and "manifest" not in p.name and "timing" not in p.name and "data" not in p.parts)
    before = {p: p.read_bytes() for p in outputs}
    codes = [run("replay", tmp_path / m) for m, _ in steps]
    n_listed = sum(len(json.loads((tmp_path / m).read_text())["artifacts"]) for m, _ in steps)
    identical = all(p.read_bytes() == b for p, b in before.items())
    record(9, codes == [0] * 4 and identical,
           f"replay exit codes {codes}; {n_listed} manifest artifacts and {len(before)} output files byte-identical")


@pytest.mark.slow
def test_10_accepts_image_corpus(tmp_path):
    # stand-in corpus with the real layout: one directory per class, 64x64 grayscale PNGs
    rng = np.random.default_rng(10)
    yy, xx = np.mgrid[:64, :64]
    shapes = {"BreastMRI": np.exp(-((xx - 32) ** 2 + (yy - 32) ** 2) / 300.0),
              "Hand": ((xx // 8 + yy // 8) % 2).astype(float)}
    for name, base in shapes.items():
        (tmp_path / "corpus" / name).mkdir(parents=True)
        for i in range(45):
            img = np.clip(base * 200 + rng.normal(0, 25, base.shape) + 20, 0, 255).astype(np.uint8)
            Image.fromarray(img).save(tmp_path / "corpus" / name / f"{i:03d}.png")
    corpus = tmp_path / "corpus"
    run = lambda *a: cli.main([str(v) for v in a])  # noqa: E731
    codes = [
        run("align", "--map", "compact", "--data", corpus, "--iters", 1, "--out", tmp_path / "c.json"),
        run("align", "--map", "large", "--data", corpus, "--iters", 1, "--out", tmp_path / "l.json"),
        run("train", "--theta", tmp_path / "c.json", "--data", corpus, "--out", tmp_path / "cm.json"),
        run("attack", "--model", tmp_path / "cm.json", "--data", corpus, "--count", 1, "--max-iters", 5,
            "--out", tmp_path / "adv"),
    ]
    theta_c = json.loads((tmp_path / "c.json").read_text())
    theta_l = json.loads((tmp_path / "l.json").read_text())
    pca = theta_c["preprocess"]["pca"]
    shapes_ok = (theta_c["preprocess"]["input_dim"] == 256 and len(pca["components"]) == 80
                 and theta_l["preprocess"]["output_dim"] == 260 and theta_l["preprocess"]["pca"] is None)
    ok = codes[:3] == [0, 0, 0] and codes[3] in (0, cli.EXIT_NO_ADV) and shapes_ok
    record(10, ok, "image corpus accepted end to end (256 -> PCA 80 for the compact map, "
                   "256 -> pad 260 for the large map); full-scale table numbers need the real "
                   "corpus and hours of compute and are not run here")
