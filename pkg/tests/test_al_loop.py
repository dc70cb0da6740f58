import dataclasses

import numpy as np
import pytest

from range_al import al_loop, dataset_io, scorer
from range_al.al_loop import AlConfig, AlData, PoolState, analyze_tt_da, init_pools, run, run_step
from range_al.augmentation import AugKind, AugmentationSpec
from range_al.errors import EmptyPool, PoolTooLarge
from range_al.projection import SensorConfig, project
from range_al.scorer import ScorerConfig
from range_al.synth_data import SceneSpec, generate_cloud
from range_al.uncertainty import HeuristicKind

TINY_SENSOR = SensorConfig(width=64, height=16)


def tiny_data(pool=20, test=8, seed=0):
    spec = SceneSpec(seed=seed, duplicates=4, sensor=SensorConfig(width=128, height=16))
    clouds = [generate_cloud(spec, i) for i in range(pool + test)]
    images = [project(c, TINY_SENSOR) for c in clouds]
    return AlData(pool_images=images[:pool], test_images=images[pool:], num_classes=4)


def tiny_config(heuristic=HeuristicKind.RANDOM, steps=3, budget=4, init=4, da=(), seed=0):
    return AlConfig(
        init_size=init,
        budget=budget,
        steps=steps,
        heuristic=heuristic,
        da=da,
        scorer=ScorerConfig(mc_iterations=3, max_iterations=60, eval_period=20, patience=2,
                            learning_rate=1.0, pixels_per_image=128, batch_size=4),
        seed=seed,
    )


class TestInitPools:
    def test_sizes(self):
        state = init_pools(range(6000), 240, seed=1)
        assert len(state.labeled) == 240
        assert len(state.unlabeled) == 5760
        state.check()

    def test_init_equals_universe(self):
        state = init_pools(range(10), 10, seed=1)
        assert state.unlabeled == set()

    def test_deterministic(self):
        a = init_pools(range(100), 10, seed=5)
        b = init_pools(range(100), 10, seed=5)
        assert a.labeled == b.labeled

    def test_too_large(self):
        with pytest.raises(PoolTooLarge):
            init_pools(range(5), 6, seed=1)


class TestRunStep:
    def test_pool_invariants_and_budget(self):
        data = tiny_data()
        cfg = tiny_config()
        state = init_pools(range(20), 4, seed=0)
        model = scorer.make_scorer(4, cfg.scorer, seed=1)
        new_state, record, model, _ = run_step(state, cfg, model, data, step=0)
        new_state.check()
        assert len(record.selected_ids) == 4
        assert len(new_state.labeled) == 8
        assert set(record.selected_ids) <= state.unlabeled

    def test_budget_clamps_to_pool(self):
        data = tiny_data()
        cfg = tiny_config(budget=50)
        state = init_pools(range(20), 4, seed=0)
        model = scorer.make_scorer(4, cfg.scorer, seed=1)
        new_state, record, _, _ = run_step(state, cfg, model, data, step=0)
        assert len(record.selected_ids) == 16
        assert not new_state.unlabeled

    def test_empty_pool_raises(self):
        data = tiny_data()
        cfg = tiny_config()
        state = PoolState(labeled=set(range(20)), unlabeled=set(), universe=frozenset(range(20)))
        model = scorer.make_scorer(4, cfg.scorer, seed=1)
        with pytest.raises(EmptyPool):
            run_step(state, cfg, model, data, step=0)


class TestRun:
    def test_zero_steps_gives_single_evaluation_row(self):
        record = run(tiny_config(steps=0), tiny_data())
        assert len(record.steps) == 1
        assert record.steps[0].selected_ids == []
        assert record.steps[0].n_labeled == 4

    def test_labeled_grows_linearly(self):
        record = run(tiny_config(steps=3), tiny_data())
        assert [s.n_labeled for s in record.steps] == [4, 8, 12]

    def test_pool_exhaustion_terminates_cleanly(self):
        record = run(tiny_config(steps=10, budget=8), tiny_data())
        # 4 init + 8 + 8 = 20: third row trains on everything then stops.
        assert [s.n_labeled for s in record.steps] == [4, 12, 20]
        assert record.steps[-1].selected_ids == []

    def test_selected_ids_disjoint_across_steps(self):
        record = run(tiny_config(steps=4, heuristic=HeuristicKind.BALD), tiny_data())
        seen = set()
        for s in record.steps:
            ids = set(s.selected_ids)
            assert not ids & seen
            seen |= ids

    def test_identical_seeds_identical_selection(self):
        a = run(tiny_config(steps=3, heuristic=HeuristicKind.ENTROPY, seed=9), tiny_data())
        b = run(tiny_config(steps=3, heuristic=HeuristicKind.ENTROPY, seed=9), tiny_data())
        assert [s.selected_ids for s in a.steps] == [s.selected_ids for s in b.steps]

    def test_byte_identical_record_csv(self, tmp_path):
        data = tiny_data()
        cfg = tiny_config(steps=3, heuristic=HeuristicKind.VARIANCE, seed=4)
        al_loop.run_and_write(cfg, data, tmp_path / "a")
        al_loop.run_and_write(cfg, data, tmp_path / "b")
        assert (tmp_path / "a/record.csv").read_bytes() == (tmp_path / "b/record.csv").read_bytes()
        assert (tmp_path / "a/scores.csv").read_bytes() == (tmp_path / "b/scores.csv").read_bytes()

    def test_score_rows_cover_unlabeled_pool(self):
        record = run(tiny_config(steps=2, heuristic=HeuristicKind.BALD), tiny_data())
        step0_rows = [r for r in record.score_rows if r[0] == 0]
        assert len(step0_rows) == 16  # 20 - 4 init
        assert all(r[2] == "bald" for r in step0_rows)

    def test_random_runs_skip_scoring(self):
        record = run(tiny_config(steps=2, heuristic=HeuristicKind.RANDOM), tiny_data())
        assert record.score_rows == []

    def test_record_round_trips_through_disk(self, tmp_path):
        data = tiny_data()
        cfg = tiny_config(steps=2, heuristic=HeuristicKind.BALD, seed=2)
        record = al_loop.run_and_write(cfg, data, tmp_path)
        again = dataset_io.read_run_record(tmp_path / "record.csv")
        assert again == record
        rebuilt = AlConfig.from_dict(again.config)
        assert rebuilt == cfg


class TestAnalyzeTtDa:
    def da_specs(self):
        return [
            AugmentationSpec(AugKind.GAUSSIAN_DEPTH_NOISE, probability=1.0),
            AugmentationSpec(AugKind.CYCLIC_SHIFT, probability=1.0),
        ]

    def trained_setup(self):
        data = tiny_data()
        cfg = tiny_config(steps=1, heuristic=HeuristicKind.BALD)
        state = init_pools(range(20), 6, seed=0)
        model = scorer.make_scorer(4, cfg.scorer, seed=1)
        model, _ = scorer.train(model, [data.pool_images[i] for i in sorted(state.labeled)], [])
        return data, cfg, state, model

    def test_identity_da_reproduces_l_curve(self):
        data, cfg, state, model = self.trained_setup()
        identity = [AugmentationSpec(AugKind.CYCLIC_SHIFT, probability=0.0)]
        curves = analyze_tt_da(model, data, state, identity, cfg, step=0)
        np.testing.assert_allclose(curves.curves["TTDA_L"], curves.curves["L"], atol=1e-12)

    def test_curves_sorted_descending(self):
        data, cfg, state, model = self.trained_setup()
        curves = analyze_tt_da(model, data, state, self.da_specs(), cfg, step=0)
        for name in ("L", "U", "TTDA_L", "TTDA_U"):
            arr = curves.curves[name]
            assert np.all(np.diff(arr) <= 1e-12)

    def test_pool_sizes(self):
        data, cfg, state, model = self.trained_setup()
        curves = analyze_tt_da(model, data, state, self.da_specs(), cfg, step=0)
        assert curves.curves["L"].size == 6
        assert curves.curves["U"].size == 14
        # |TTDA(U)| + |U| equals the pool size
        assert curves.curves["TTDA_U"].size + curves.curves["U"].size == 20
        assert curves.budget_cutoff == cfg.budget
