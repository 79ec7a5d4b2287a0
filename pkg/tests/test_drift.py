import dataclasses

import numpy as np
import pytest

from xbm.data import load_matrix, synth_clusters
from xbm.drift import (
    FeatureSnapshot,
    ProbeSet,
    drift_csv,
    drift_experiment,
    drift_schedule,
    feature_drift,
    lemma1_check,
    lemma_csv,
    lemma_experiment,
    sample_probes,
    save_feature_snapshot,
    take_snapshot,
)
from xbm.errors import ConfigError, ContractError
from xbm.tensor import init_params, l2_normalize, net_forward
from xbm.train import TrainConfig

from conftest import unit_rows


def snap(t, rows, ids=None):
    rows = np.asarray(rows, dtype=float)
    return FeatureSnapshot(t, rows, np.arange(len(rows)) if ids is None else np.asarray(ids))


@pytest.fixture
def tiny():
    return synth_clusters(8, 6, 5, 1.0, 0.2, seed=3)


class TestSnapshots:
    def test_same_t_identical(self, tiny):
        net = init_params([5, 7, 3], seed=0)
        probes = sample_probes(tiny, 16, seed=1)
        a, b = take_snapshot(net, probes, 5), take_snapshot(net, probes, 5)
        np.testing.assert_array_equal(a.embeddings, b.embeddings)
        np.testing.assert_allclose(np.linalg.norm(a.embeddings, axis=1), 1.0, atol=1e-12)

    def test_single_probe_matches_forward(self, tiny):
        net = init_params([5, 3], seed=2)
        probes = ProbeSet([4], [tiny.labels[4]], tiny.features[4:5])
        np.testing.assert_array_equal(take_snapshot(net, probes, 0).embeddings, net_forward(net, tiny.features[4:5])[0])

    def test_probe_sampling_seeded(self, tiny):
        np.testing.assert_array_equal(sample_probes(tiny, 10, 4).ids, sample_probes(tiny, 10, 4).ids)
        assert len(sample_probes(tiny, 1000, 0)) == len(tiny)

    def test_empty_probe_set(self):
        with pytest.raises(ConfigError):
            ProbeSet([], [], np.zeros((0, 3)))

    def test_saved_layout(self, tmp_path, tiny):
        probes = sample_probes(tiny, 4, 0)
        s = take_snapshot(init_params([5, 3], seed=0), probes, 1)
        save_feature_snapshot(tmp_path / "s.bin", s)
        mat = load_matrix(tmp_path / "s.bin")
        np.testing.assert_array_equal(mat[:, 0], probes.ids)
        np.testing.assert_array_equal(mat[:, 1], probes.labels)
        np.testing.assert_array_equal(mat[:, 2:], s.embeddings)


class TestFeatureDrift:
    def test_identical(self, rng):
        rows = unit_rows(rng, 5, 3)
        rec = feature_drift(snap(10, rows), snap(0, rows))
        assert not rec.drift.any()
        assert rec.delta_t == 10

    def test_antipodal(self):
        assert feature_drift(snap(1, [[1.0, 0.0]]), snap(0, [[-1.0, 0.0]])).drift[0] == 4.0

    def test_orthogonal(self):
        assert feature_drift(snap(1, [[1.0, 0.0]]), snap(0, [[0.0, 1.0]])).drift[0] == 2.0

    def test_swap(self, rng):
        a, b = snap(30, unit_rows(rng, 6, 4)), snap(20, unit_rows(rng, 6, 4))
        ab, ba = feature_drift(a, b), feature_drift(b, a)
        np.testing.assert_array_equal(ab.drift, ba.drift)
        assert (ab.delta_t, ba.delta_t) == (10, -10)
        assert np.all((ab.drift >= 0) & (ab.drift <= 4))

    def test_summary_statistics(self):
        rec = feature_drift(snap(1, [[1.0, 0.0], [1.0, 0.0]]), snap(0, [[0.0, 1.0], [1.0, 0.0]]))
        assert rec.mean_drift == 1.0
        assert rec.p50_drift == 1.0

    def test_probe_mismatch(self, rng):
        with pytest.raises(ContractError):
            feature_drift(snap(1, unit_rows(rng, 3, 2)), snap(0, unit_rows(rng, 3, 2), ids=[0, 1, 5]))

    def test_csv(self):
        text = drift_csv([feature_drift(snap(5, [[1.0, 0.0]]), snap(0, [[0.0, 1.0]]))])
        assert text.splitlines() == ["t,delta_t,mean_drift,p50_drift,p95_drift", "5,5,2.0,2.0,2.0"]


class TestLemmaCheck:
    @pytest.fixture
    def setup(self, rng):
        net = init_params([6, 9, 4], seed=7)
        x_i = rng.standard_normal(6)
        v_j = l2_normalize(rng.standard_normal(4))
        return net, x_i, v_j

    def test_no_perturbation(self, setup):
        net, x_i, v_j = setup
        assert lemma1_check(net, x_i, v_j, v_j.copy()) is None

    def test_error_is_quadratic(self, setup, rng):
        net, x_i, v_j = setup
        for _ in range(20):
            d = rng.standard_normal(4) * rng.uniform(1e-3, 1.0)
            full = lemma1_check(net, x_i, v_j, v_j + d)
            half = lemma1_check(net, x_i, v_j, v_j + d / 2)
            assert full.epsilon / half.epsilon == pytest.approx(4.0, abs=1e-9)
            assert full.grad_error_sq / half.grad_error_sq == pytest.approx(4.0, abs=1e-9)

    def test_ratio_bounded_over_perturbations(self, setup):
        net, x_i, v_j = setup
        records = lemma_experiment(net, x_i, v_j, trials=100, seed=1)
        assert len(records) == 100
        c = max(r.ratio for r in records)
        assert np.isfinite(c)
        assert all(r.grad_error_sq <= c * r.epsilon * (1 + 1e-12) for r in records)

    def test_shape_mismatch(self, setup):
        net, x_i, v_j = setup
        with pytest.raises(ContractError):
            lemma1_check(net, x_i, v_j, np.ones(3))

    def test_csv(self, setup):
        net, x_i, v_j = setup
        lines = lemma_csv(lemma_experiment(net, x_i, v_j, trials=3)).splitlines()
        assert lines[0] == "epsilon,grad_error_sq,ratio"
        assert len(lines) == 4


class TestExperiment:
    def config(self, **kw):
        base = TrainConfig(P=4, K=2, iterations=60, warmup_iterations=10, lr=1e-2, hidden_dims=(8,), embedding_dim=4)
        return dataclasses.replace(base, **kw)

    def test_frozen_parameters_do_not_drift(self, tiny):
        records, _ = drift_experiment(tiny, self.config(lr=0.0, weight_decay=0.0), steps=(5, 20), schedule=[20, 40, 60])
        assert all(not r.drift.any() for r in records)

    def test_requested_steps(self, tiny):
        records, _ = drift_experiment(tiny, self.config(), steps=(5, 20), schedule=[20, 40, 60])
        assert sorted({r.delta_t for r in records}) == [5, 20]
        assert [(r.t, r.delta_t) for r in records][:2] == [(20, 5), (20, 20)]
        assert all(r.drift.max() <= 4 for r in records)

    def test_drift_matches_retraining(self, tiny):
        # stored snapshots reflect the actual trajectory: a shorter run ends where the snapshot was taken
        cfg = self.config()
        records, _ = drift_experiment(tiny, cfg, steps=(20,), schedule=[40], probe_size=10)
        probes = sample_probes(tiny, 10, 0)
        from xbm.train import train

        a = take_snapshot(train(tiny, dataclasses.replace(cfg, iterations=40)).net, probes, 40)
        b = take_snapshot(train(tiny, dataclasses.replace(cfg, iterations=20)).net, probes, 20)
        np.testing.assert_array_equal(records[0].drift, feature_drift(a, b).drift)

    def test_schedule_past_end(self, tiny):
        with pytest.raises(ConfigError):
            drift_experiment(tiny, self.config(), steps=(5,), schedule=[100])

    def test_no_point_late_enough(self, tiny):
        with pytest.raises(ConfigError):
            drift_experiment(tiny, self.config(), steps=(5, 100), schedule=[20, 40])

    def test_default_schedule(self):
        assert drift_schedule(3000, [10, 100, 1000]) == list(range(1000, 3001, 100))
        assert drift_schedule(250, [30], every=100) == [100, 200]
