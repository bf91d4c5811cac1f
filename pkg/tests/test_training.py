import math

import numpy as np
import pandas as pd
import pytest

from yt8m_lab.errors import EmptyDatasetError, EmptyLabelRowError, NonFiniteLossError, ShapeMismatchError
from yt8m_lab.models.specs import OptimizerConfig, SyntheticConfig, TrainConfig
from yt8m_lab.services import modelzoo
from yt8m_lab.services.ingest import DatasetHandle, generate_synthetic
from yt8m_lab.services.metrics import gap_from_scores
from yt8m_lab.services.training import Trainer, default_loss, loss_and_grad, predict_scores, train


def _cfg(steps=50, lr=0.01, batch=16, **fields):
    return TrainConfig(
        optimizer=OptimizerConfig(base_learning_rate=lr, batch_size=batch, max_steps=steps),
        **fields,
    )


def _logreg(dataset, seed=0):
    return modelzoo.build_named("logreg", dataset.feature_dim, dataset.vocab.num_classes, seed=seed)


class TestLoss:

    def test_half_scores_give_ln2(self, rng):
        labels = (rng.random((4, 5)) < 0.5).astype(float)
        loss, _ = loss_and_grad(np.full((4, 5), 0.5), labels, "sigmoid_ce")
        assert loss == pytest.approx(math.log(2), abs=1e-12)

    def test_perfect_scores_are_clipped(self):
        labels = np.array([[1.0, 0.0], [0.0, 1.0]])
        loss, _ = loss_and_grad(labels.copy(), labels, "sigmoid_ce")
        assert 0 <= loss <= 1e-11

    @pytest.mark.parametrize("kind", ["sigmoid_ce", "softmax_ce"])
    def test_gradient_matches_finite_differences(self, kind, rng):
        labels = (rng.random((4, 5)) < 0.4).astype(float)
        labels[:, 0] = 1.0
        scores = rng.uniform(0.05, 0.95, size=(4, 5))
        _, grad = loss_and_grad(scores, labels, kind)
        numeric = np.zeros_like(scores)
        for idx in np.ndindex(scores.shape):
            up, down = scores.copy(), scores.copy()
            up[idx] += 1e-6
            down[idx] -= 1e-6
            numeric[idx] = (loss_and_grad(up, labels, kind)[0] - loss_and_grad(down, labels, kind)[0]) / 2e-6
        np.testing.assert_allclose(grad, numeric, rtol=1e-6, atol=1e-10)

    def test_softmax_target_is_normalized(self):
        scores = np.array([[0.5, 0.5, 1e-12]])
        labels = np.array([[1.0, 1.0, 0.0]])
        loss, _ = loss_and_grad(scores, labels, "softmax_ce")
        assert loss == pytest.approx(math.log(2), abs=1e-12)

    def test_softmax_empty_row(self):
        with pytest.raises(EmptyLabelRowError) as info:
            loss_and_grad(np.full((2, 3), 1 / 3), np.array([[1.0, 0, 0], [0, 0, 0]]), "softmax_ce")
        assert info.value.row == 1

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            loss_and_grad(np.zeros((2, 3)), np.zeros((3, 2)))

    def test_default_loss_follows_head(self):
        assert default_loss(modelzoo.build_named("mlp2000", 4, 3, hidden_sizes=[2, 2])) == "softmax_ce"
        assert default_loss(modelzoo.build_named("logreg", 4, 3)) == "sigmoid_ce"


class TestTrainLoop:

    def test_zero_steps_leave_parameters(self, small_dataset):
        graph = _logreg(small_dataset)
        before = {k: v.copy() for k, v in graph.parameters().items()}
        _, report = train(graph, small_dataset, None, _cfg(steps=0))
        assert report.steps_run == 0 and report.loss_curve == [] and report.train_gap_curve == []
        for key, value in graph.parameters().items():
            np.testing.assert_array_equal(value, before[key])

    def test_same_seed_same_report(self, small_dataset):
        cfg = _cfg(steps=30, eval_every=10, shuffle_seed=5)
        _, a = train(_logreg(small_dataset), small_dataset, None, cfg)
        _, b = train(_logreg(small_dataset), small_dataset, None, cfg)
        assert a.loss_curve == b.loss_curve
        assert a.train_gap_curve == b.train_gap_curve

    def test_dropout_model_is_deterministic(self, small_dataset):
        cfg = _cfg(steps=10, eval_every=5)

        def run():
            graph = modelzoo.build_named("mlp_e", 12, 5, seed=2, hidden_sizes=[8, 6, 6])
            return train(graph, small_dataset, None, cfg)[1].loss_curve

        assert run() == run()

    def test_tiny_learning_rate_keeps_loss_flat(self, small_dataset):
        _, report = train(_logreg(small_dataset), small_dataset, None, _cfg(steps=6, lr=1e-12, batch=64))
        losses = [loss for _, loss in report.loss_curve]
        assert max(losses) - min(losses) <= 1e-9

    def test_loss_improves(self, small_dataset):
        _, report = train(_logreg(small_dataset), small_dataset, None, _cfg(steps=200, batch=32))
        assert report.loss_curve[-1][1] < report.loss_curve[0][1]

    def test_gap_recorded_every_eval_every(self, small_dataset):
        _, report = train(_logreg(small_dataset), small_dataset, None, _cfg(steps=25, eval_every=10))
        assert [s for s, _ in report.train_gap_curve] == [10, 20]
        assert len(report.loss_curve) == 25

    def test_empty_validation_equals_no_validation(self, small_dataset, vocab):
        empty = DatasetHandle.from_examples([], vocab, 8, 4)
        cfg = _cfg(steps=20, eval_every=5)
        merged = cfg.model_copy(update={"include_validation": True})
        _, a = train(_logreg(small_dataset), small_dataset, empty, merged)
        _, b = train(_logreg(small_dataset), small_dataset, None, cfg)
        assert a.loss_curve == b.loss_curve
        assert a.train_gap_curve == b.train_gap_curve

    def test_prefetch_delivers_same_batches(self, small_dataset):
        cfg = _cfg(steps=20, eval_every=5)
        _, plain = train(_logreg(small_dataset), small_dataset, None, cfg)
        _, prefetched = train(_logreg(small_dataset), small_dataset, None, cfg.model_copy(update={"prefetch": 3}))
        assert plain.loss_curve == prefetched.loss_curve

    def test_empty_dataset(self, vocab):
        empty = DatasetHandle.from_examples([], vocab, 8, 4)
        graph = modelzoo.build_named("logreg", 12, 5)
        with pytest.raises(EmptyDatasetError):
            train(graph, empty, None, _cfg())

    def test_non_finite_loss_keeps_partial_report(self):
        class ExplodingModel:
            output_activation = "sigmoid"
            output_dim = 2

            def __init__(self):
                self.calls = 0

            def trainable_keys(self):
                return []

            def parameters(self):
                return {}

            def regularization_loss(self):
                return 0.0

            def forward(self, batch, mode=None, reuse_masks=False):
                self.calls += 1
                value = np.nan if self.calls > 2 else 0.5
                return np.full((batch.shape[0], 2), value)

            def backward(self, grad):
                return {}

        X = np.zeros((4, 3))
        Y = np.array([[1.0, 0.0]] * 4)
        with pytest.raises(NonFiniteLossError) as info:
            Trainer(ExplodingModel(), _cfg(steps=5, batch=4)).fit(X, Y)
        assert info.value.step == 3
        assert [s for s, _ in info.value.report.loss_curve] == [1, 2]

    def test_checkpoint_written(self, small_dataset, tmp_path):
        path = tmp_path / "model.ytck"
        train(_logreg(small_dataset), small_dataset, None, _cfg(steps=3, checkpoint_path=str(path)))
        assert path.read_bytes()[:4] == b"YTCK"


class TestTrainReport:

    def test_csv_columns(self, small_dataset, tmp_path):
        _, report = train(_logreg(small_dataset), small_dataset, None, _cfg(steps=4, eval_every=2))
        path = tmp_path / "report.csv"
        report.to_csv(path)
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["step", "loss", "gap"]
        assert frame["step"].tolist() == [1, 2, 3, 4]
        assert frame["gap"].isna().tolist() == [True, False, True, False]


class TestSyntheticTeacherRegression:
    """Logistic regression recovers the hidden linear teacher on a fresh split."""

    def test_logreg_held_out_gap(self):
        base = dict(num_classes=25, rgb_dim=64, audio_dim=16, seed=1, teacher_sparsity=0.3, noise_std=0.1)
        train_set = generate_synthetic(SyntheticConfig(num_videos=2000, split=0, **base))
        test_set = generate_synthetic(SyntheticConfig(num_videos=500, split=1, **base))
        graph = modelzoo.build_named("logreg", 80, 25, seed=1)
        cfg = TrainConfig(
            optimizer=OptimizerConfig(kind="adam", base_learning_rate=0.01, batch_size=128, max_steps=1500),
            eval_every=500,
            shuffle_seed=1,
        )
        train(graph, train_set, None, cfg)
        _, X, Y = test_set.to_arrays()
        assert gap_from_scores(predict_scores(graph, X), Y, 20) >= 0.95
