"""Training loop determinism, schedule plumbing, and the CSV log."""

import numpy as np
import pytest

from topodesc import data, train
from topodesc.config import RunConfig
from topodesc.errors import InvalidArgumentError
from topodesc.net import embed


def tiny_dataset(seed=0, scenes=40, dim=6):
    return data.generate(seed=seed, scenes=scenes, dim=dim, noise_sigma=0.05, distortion=0.2)


def tiny_config(**kw):
    base = dict(
        net_widths=(6, 16, 8),
        batch_size=8,
        iterations=12,
        k=3,
        lambda_n0=4,
        lambda_N=2,
        seed=1,
    )
    base.update(kw)
    return RunConfig(**base)


class TestLearningRate:
    def test_endpoints(self):
        cfg = RunConfig(lr_start=0.1, lr_end=0.0)
        assert train.learning_rate(0, cfg) == 0.1
        assert train.learning_rate(cfg.iterations, cfg) == 0.0

    def test_midpoint(self):
        cfg = RunConfig(lr_start=0.2, lr_end=0.1, iterations=100)
        assert train.learning_rate(50, cfg) == pytest.approx(0.15, abs=1e-15)

    def test_constant_when_equal(self):
        cfg = RunConfig(lr_start=0.05, lr_end=0.05)
        assert train.learning_rate(1234, cfg) == 0.05


class TestResolveLambda:
    def test_dynamic_follows_schedule(self):
        cfg = tiny_config()
        from topodesc.loss import lambda_schedule

        for i in (0, 4, 5, 7, 11):
            assert train.resolve_lambda(i, cfg, "dynamic") == lambda_schedule(i, cfg.loss_config())

    def test_fixed_value(self):
        cfg = tiny_config()
        assert train.resolve_lambda(3, cfg, "fixed:0.75") == 0.75
        assert train.resolve_lambda(3, cfg, "fixed:1.0") == 1.0

    def test_off_mode_pins_lambda_to_one(self):
        cfg = tiny_config(topology_gradient_mode="off")
        assert train.resolve_lambda(9999, cfg, "dynamic") == 1.0
        assert train.resolve_lambda(9999, cfg, "fixed:0.25") == 1.0

    def test_fixed_out_of_range(self):
        cfg = tiny_config()
        with pytest.raises(InvalidArgumentError):
            train.resolve_lambda(0, cfg, "fixed:1.5")

    def test_unknown_mode(self):
        cfg = tiny_config()
        with pytest.raises(InvalidArgumentError, match="lambda_mode"):
            train.resolve_lambda(0, cfg, "sometimes")


class TestRunTraining:
    def test_produces_one_row_per_iteration(self):
        result = train.run_training(tiny_config(), dataset=tiny_dataset())
        assert len(result.rows) == 12
        assert all(np.isfinite(r.loss) for r in result.rows)
        assert result.net.widths == (6, 16, 8)

    def test_repeat_run_is_bit_identical(self):
        ds = tiny_dataset()
        a = train.run_training(tiny_config(), dataset=ds)
        b = train.run_training(tiny_config(), dataset=ds)
        for wa, wb in zip(a.net.weights, b.net.weights):
            np.testing.assert_array_equal(wa, wb)
        assert [r.loss for r in a.rows] == [r.loss for r in b.rows]

    def test_seed_changes_the_run(self):
        ds = tiny_dataset()
        a = train.run_training(tiny_config(seed=1), dataset=ds)
        b = train.run_training(tiny_config(seed=2), dataset=ds)
        assert [r.loss for r in a.rows] != [r.loss for r in b.rows]

    def test_lambda_column_follows_schedule(self):
        result = train.run_training(tiny_config(), dataset=tiny_dataset())
        cfg = tiny_config()
        from topodesc.loss import lambda_schedule

        for i, row in enumerate(result.rows):
            assert row.lam == lambda_schedule(i, cfg.loss_config())

    def test_training_improves_the_loss(self):
        cfg = tiny_config(iterations=80, seed=3)
        result = train.run_training(cfg, dataset=tiny_dataset(seed=1, scenes=60))
        head = np.mean([r.loss for r in result.rows[:10]])
        tail = np.mean([r.loss for r in result.rows[-10:]])
        assert tail < head

    def test_trained_descriptors_stay_unit_norm(self):
        ds = tiny_dataset()
        result = train.run_training(tiny_config(), dataset=ds)
        d = embed(result.net, ds.views_a[:16])
        np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-6)

    def test_width_mismatch_rejected(self):
        with pytest.raises(InvalidArgumentError, match="dataset dim"):
            train.run_training(tiny_config(net_widths=(5, 8, 4)), dataset=tiny_dataset())

    def test_divergence_reports_last_good_iteration(self):
        cfg = tiny_config(lr_start=1e300, lr_end=1e300)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(train.TrainingDivergenceError) as info:
                train.run_training(cfg, dataset=tiny_dataset())
        assert info.value.last_good_iteration == 0

    def test_batch_larger_than_train_split_rejected(self):
        ds = tiny_dataset(scenes=10)  # train split keeps 8 scenes
        with pytest.raises(InvalidArgumentError, match="batch_size"):
            train.run_training(tiny_config(batch_size=9), dataset=ds)


class TestLog:
    def test_header_and_round_trip(self, tmp_path):
        result = train.run_training(tiny_config(), dataset=tiny_dataset())
        path = tmp_path / "train_log.csv"
        train.write_log(result.rows, str(path))
        first = path.read_text().splitlines()[0]
        assert first == "iteration,lambda,loss,mean_d_pos_euclid,mean_d_pos_topo,mean_d_neg,active_triplets"
        back = train.read_log(str(path))
        assert len(back) == len(result.rows)
        for i, (row, rep) in enumerate(zip(back, result.rows)):
            assert row["iteration"] == i
            # repr-encoded floats survive the round trip exactly
            assert row["loss"] == rep.loss
            assert row["lambda"] == rep.lam
            assert row["mean_d_neg"] == rep.mean_d_neg
            assert row["active_triplets"] == rep.active_triplets
