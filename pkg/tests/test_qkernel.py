import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import assert_fidelity_gram
from qadv.featuremap import Block, DimensionError, FeatureMapSpec, bind, compact_map, large_map
from qadv.qkernel import (GradientMode, GramCache, KernelMatrix, KernelPropertyError, ShotConfig,
                          cross_kernel, decision_gradient, embed, gram_from_states, gram_matrix,
                          kernel_value, qke_sample)
from qadv.qstate import overlap_sq, run_circuit
from qadv.svm import fit

SPEC = compact_map(4, 2)


def naive_kernel(spec, theta, x1, x2):
    return overlap_sq(run_circuit(bind(spec, x2, theta)), run_circuit(bind(spec, x1, theta)))


class TestKernelValue:
    def test_matches_naive_overlap(self, rng):
        theta = rng.uniform(0, 2 * np.pi, SPEC.param_dim)
        for _ in range(5):
            x1, x2 = rng.normal(size=(2, 16))
            assert kernel_value(SPEC, theta, x1, x2) == pytest.approx(
                naive_kernel(SPEC, theta, x1, x2), abs=1e-12)

    def test_self_kernel_is_one(self, rng):
        x = rng.normal(size=16)
        assert kernel_value(SPEC, np.zeros(8), x, x) == pytest.approx(1.0, abs=1e-12)

    def test_two_qubit_rx_layer(self):
        spec = FeatureMapSpec(2, (Block(1, 0),), ())
        rx = lambda t: np.array([[np.cos(t / 2), -1j * np.sin(t / 2)], [-1j * np.sin(t / 2), np.cos(t / 2)]])
        rng = np.random.default_rng(5)
        for x1, x2 in [((0.0, 0.0), (np.pi, np.pi))] + [tuple(rng.uniform(-3, 3, (2, 2)))]:
            a = np.kron(rx(x1[1]), rx(x1[0]))[:, 0]
            b = np.kron(rx(x2[1]), rx(x2[0]))[:, 0]
            expected = abs(np.vdot(b, a)) ** 2
            assert kernel_value(spec, np.zeros(0), np.array(x1), np.array(x2)) == pytest.approx(expected, abs=1e-12)
        assert kernel_value(spec, np.zeros(0), np.zeros(2), np.full(2, np.pi)) == pytest.approx(0.0, abs=1e-12)

    def test_dimension_error(self):
        with pytest.raises(DimensionError):
            kernel_value(SPEC, np.zeros(8), np.zeros(16), np.zeros(15))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_symmetric_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        theta = rng.uniform(0, 2 * np.pi, 8)
        x1, x2 = rng.uniform(-3, 3, size=(2, 16))
        k12 = kernel_value(SPEC, theta, x1, x2)
        assert 0.0 <= k12 <= 1.0
        assert k12 == pytest.approx(kernel_value(SPEC, theta, x2, x1), abs=1e-14)


class TestGram:
    def test_properties_and_entries(self, rng, backend):
        X = rng.normal(size=(12, 16))
        theta = rng.normal(size=8)
        K = KernelMatrix(gram_from_states(embed(SPEC, theta, X, backend=backend)))
        assert_fidelity_gram(K)
        K.check()
        assert K.values[2, 7] == pytest.approx(naive_kernel(SPEC, theta, X[2], X[7]), abs=1e-12)

    def test_large_map_gram(self, rng):
        X = rng.uniform(0, 0.2, size=(5, 260))
        assert_fidelity_gram(gram_matrix(large_map(), rng.normal(size=30), X))

    @pytest.mark.parametrize("workers", [2, 3, 7])
    def test_workers_bitwise_identical(self, rng, workers):
        states = embed(SPEC, np.zeros(8), rng.normal(size=(17, 16)))
        serial = gram_from_states(states, 1)
        assert np.array_equal(serial, gram_from_states(states, workers))

    def test_ids_kept(self, rng):
        K = gram_matrix(SPEC, np.zeros(8), rng.normal(size=(3, 16)), ids=["a", "b", "c"])
        assert K.sample_ids == ["a", "b", "c"]

    def test_single_and_duplicated(self, rng):
        x = rng.normal(size=16)
        assert gram_matrix(SPEC, np.zeros(8), x[None]).values.tolist() == [[1.0]]
        np.testing.assert_allclose(gram_matrix(SPEC, np.zeros(8), np.stack([x, x])).values, 1.0, atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            gram_matrix(SPEC, np.zeros(8), np.zeros((0, 16)))

    def test_check_flags_bad_matrix(self):
        with pytest.raises(KernelPropertyError):
            KernelMatrix(np.array([[1.0, 2.0], [2.0, 1.0]])).check()

    def test_csv_and_pgm(self, rng, tmp_path):
        K = gram_matrix(SPEC, np.zeros(8), rng.normal(size=(4, 16)))
        K.save_csv(tmp_path / "k.csv")
        K.save_pgm(tmp_path / "k.pgm")
        back = np.loadtxt(tmp_path / "k.csv", delimiter=",")
        assert np.array_equal(back, K.values)
        assert (tmp_path / "k.pgm").read_bytes().startswith(b"P5\n4 4\n255\n")

    def test_cross_kernel_matches_gram_block(self, rng):
        X = rng.normal(size=(6, 16))
        theta = rng.normal(size=8)
        K = gram_matrix(SPEC, theta, X).values
        np.testing.assert_allclose(cross_kernel(SPEC, theta, X[:4], X[4:]), K[:4, 4:], atol=1e-14)


class TestCache:
    def test_hit_returns_same_values(self, rng, tmp_path):
        cache = GramCache(tmp_path)
        X = rng.normal(size=(5, 16))
        first = gram_matrix(SPEC, np.ones(8), X, cache=cache)
        assert len(list(tmp_path.glob("gram-*.npy"))) == 1
        second = gram_matrix(SPEC, np.ones(8), X, cache=cache)
        assert np.array_equal(first.values, second.values)

    def test_key_depends_on_inputs(self, rng, tmp_path):
        cache = GramCache(tmp_path)
        X = rng.normal(size=(3, 16))
        keys = {cache.key(SPEC, np.zeros(8), X), cache.key(SPEC, np.ones(8), X),
                cache.key(SPEC, np.zeros(8), X + 1), cache.key(compact_map(4, 2, 2, 1), np.zeros(4), X)}
        assert len(keys) == 4

    def test_from_env(self, tmp_path, monkeypatch):
        monkeypatch.delenv("QADV_CACHE_DIR", raising=False)
        assert GramCache.from_env() is None
        monkeypatch.setenv("QADV_CACHE_DIR", str(tmp_path / "c"))
        assert GramCache.from_env().directory == tmp_path / "c"

    def test_corrupt_entry_ignored(self, rng, tmp_path):
        cache = GramCache(tmp_path)
        X = rng.normal(size=(3, 16))
        key = cache.key(SPEC, np.zeros(8), X)
        (tmp_path / f"gram-{key}.npy").write_bytes(b"junk")
        assert cache.get(key) is None


class TestShots:
    def test_deterministic(self, rng):
        x1, x2 = rng.normal(size=(2, 16))
        cfg = ShotConfig(1024, seed=7)
        assert qke_sample(SPEC, np.zeros(8), x1, x2, cfg) == qke_sample(SPEC, np.zeros(8), x1, x2, cfg)

    def test_identical_inputs_give_one(self, rng):
        x = rng.normal(size=16)
        assert qke_sample(SPEC, np.zeros(8), x, x, ShotConfig(100)) == 1.0

    def test_resolution(self, rng):
        x1, x2 = rng.normal(size=(2, 16))
        v = qke_sample(SPEC, np.zeros(8), x1, x2, ShotConfig(64, 3))
        assert (v * 64) == int(v * 64)

    @pytest.mark.parametrize("shots", [0, -5])
    def test_bad_shots(self, shots):
        with pytest.raises(ValueError):
            ShotConfig(shots)

    def test_sampled_cross_kernel(self, rng):
        X = rng.normal(size=(4, 16))
        exact = cross_kernel(SPEC, np.zeros(8), X, X)
        noisy = cross_kernel(SPEC, np.zeros(8), X, X, shots=ShotConfig(20000, 1))
        assert np.max(np.abs(noisy - exact)) < 0.02
        again = cross_kernel(SPEC, np.zeros(8), X, X, shots=ShotConfig(20000, 1))
        assert np.array_equal(noisy, again)


def toy_model(rng, n_train=8):
    X = rng.uniform(-1, 1, size=(n_train, 16))
    y = np.array([1.0, -1.0] * (n_train // 2))
    return fit(SPEC, rng.uniform(0, 2 * np.pi, 8), X, y, C=1.0)


class TestDecisionGradient:
    def test_exact_matches_finite_differences(self, rng):
        model = toy_model(rng)
        x = rng.uniform(-1, 1, 16)
        g = decision_gradient(model, x, GradientMode.EXACT_SHIFT)
        fd = decision_gradient(model, x, GradientMode.FINITE_DIFF)
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)

    def test_quarter_pi_shift_ratio(self, rng):
        model = toy_model(rng)
        x = rng.uniform(-1, 1, 16)
        g = decision_gradient(model, x, "exact_shift")
        p = decision_gradient(model, x, "paper_shift")
        np.testing.assert_allclose(p, np.sqrt(2) * g, rtol=1e-9, atol=1e-13)

    def test_matches_manual_derivative(self, rng):
        model = toy_model(rng)
        x = rng.uniform(-1, 1, 16)
        e = np.zeros(16)
        e[5] = 1e-6
        manual = (model.decision(x + e) - model.decision(x - e)) / 2e-6
        assert decision_gradient(model, x)[5] == pytest.approx(manual, rel=1e-5, abs=1e-8)

    def test_flat_component_has_zero_gradient(self, rng):
        # the leading RZ layer acts on |0>, so its inputs only change a global phase
        spec = FeatureMapSpec(2, (Block(2, 1),), (), first_axis="RZ")
        X = rng.uniform(-1, 1, (6, 4))
        model = fit(spec, np.zeros(0), X, np.array([1.0, -1.0] * 3), C=1.0)
        g = decision_gradient(model, rng.uniform(-1, 1, 4))
        assert np.all(np.abs(g[:2]) < 1e-9)
        assert np.any(np.abs(g[2:]) > 1e-6)

    def test_untrained(self):
        class Empty:
            alphas = None
        with pytest.raises(ValueError):
            decision_gradient(Empty(), np.zeros(16))
