import numpy as np
import pytest

from parsepool.datasets import gen_classification_corpus, gen_ring
from parsepool.graphs import Graph, build_graph
from parsepool.layers import MLPParams, PoolParams, identity_mlp
from parsepool.models import GraphModel, ReconstructionModel, graph_forward
from parsepool.tape import Value
from parsepool.training import (
    AdamState,
    TrainConfig,
    adam_step,
    evaluate,
    fit,
    load_adam_state,
    save_adam_state,
    write_history_csv,
)


def scalar_param(value):
    return {"p": Value(np.array([[value]]))}


class TestAdam:
    def test_zero_gradient_zero_update(self):
        params = scalar_param(1.5)
        params["p"].grad = np.zeros((1, 1))
        state = AdamState()
        assert adam_step(params, state, lr=0.1)
        assert params["p"].data[0, 0] == 1.5

    def test_constant_gradient_approaches_signed_step(self):
        params = scalar_param(0.0)
        state = AdamState()
        lr = 0.01
        prev = params["p"].data[0, 0]
        for _ in range(300):
            params["p"].grad = np.array([[2.5]])
            adam_step(params, state, lr=lr)
        step = params["p"].data[0, 0] - prev
        # After warmup every step has magnitude ~lr against the gradient sign.
        last = params["p"].data[0, 0]
        params["p"].grad = np.array([[2.5]])
        adam_step(params, state, lr=lr)
        assert np.isclose(params["p"].data[0, 0] - last, -lr, rtol=1e-3)

    def test_non_finite_gradient_skips_step(self):
        params = scalar_param(1.0)
        params["p"].grad = np.array([[np.nan]])
        state = AdamState()
        assert not adam_step(params, state, lr=0.1)
        assert params["p"].data[0, 0] == 1.0
        assert state.t == 0

    def test_state_round_trip_lossless(self, tmp_path):
        params = {"a": Value(np.array([[1.0, -2.0]])), "b": Value(np.array([[0.5]]))}
        state = AdamState()
        rng = np.random.default_rng(0)
        for _ in range(5):
            for p in params.values():
                p.grad = rng.standard_normal(p.data.shape)
            adam_step(params, state, lr=0.05)
        path = tmp_path / "adam.json"
        save_adam_state(path, state)
        loaded = load_adam_state(path)
        assert loaded.t == state.t
        for k in state.m:
            assert np.array_equal(loaded.m[k], state.m[k])
            assert np.array_equal(loaded.v[k], state.v[k])


class TestTrainConfig:
    def test_rejects_unknown_key(self):
        with pytest.raises(ValueError, match="mystery"):
            TrainConfig.from_dict({"mystery": 1})

    def test_rejects_bad_ranges(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=-1.0)
        with pytest.raises(ValueError):
            TrainConfig(dropedge=1.0)


def tiny_corpus_and_config(per_class=6, **overrides):
    dataset = gen_classification_corpus(per_class, 11)
    defaults = dict(learning_rate=5e-3, batch_size=8, max_epochs=8,
                    patience=10, seed=1, width=8)
    defaults.update(overrides)
    config = TrainConfig(**defaults)
    return dataset, config


class TestFit:
    def test_loss_decreases_and_history_schema(self):
        dataset, config = tiny_corpus_and_config()
        rng = np.random.default_rng(config.seed)
        model = GraphModel.build(rng, dataset.feature_dim, config.width,
                                 dataset.num_classes)
        train = dataset.graphs[::2]
        valid = dataset.graphs[1::2]
        result = fit(model, train, valid, config)
        assert result.history[-1]["train_loss"] < result.history[0]["train_loss"]
        for key in ("epoch", "train_loss", "valid_loss", "metric",
                    "mean_height", "wallclock_ms"):
            assert key in result.history[0]

    def test_best_checkpoint_has_minimal_valid_loss(self):
        dataset, config = tiny_corpus_and_config(max_epochs=12)
        rng = np.random.default_rng(config.seed)
        model = GraphModel.build(rng, dataset.feature_dim, config.width,
                                 dataset.num_classes)
        result = fit(model, dataset.graphs[::2], dataset.graphs[1::2], config)
        losses = [row["valid_loss"] for row in result.history]
        assert result.best_valid_loss == min(losses)
        assert losses[result.best_epoch] == result.best_valid_loss

    def test_fixed_seed_reproducible(self):
        outs = []
        for _ in range(2):
            dataset, config = tiny_corpus_and_config(max_epochs=4)
            rng = np.random.default_rng(config.seed)
            model = GraphModel.build(rng, dataset.feature_dim, config.width,
                                     dataset.num_classes)
            result = fit(model, dataset.graphs[::2], dataset.graphs[1::2], config)
            outs.append((result.history, model.named_params()))
        h1, p1 = outs[0]
        h2, p2 = outs[1]
        assert [r["train_loss"] for r in h1] == [r["train_loss"] for r in h2]
        for k in p1:
            assert np.array_equal(p1[k].data, p2[k].data)

    def test_patience_zero_stops_at_first_non_improvement(self):
        dataset, config = tiny_corpus_and_config(max_epochs=40, patience=0,
                                                 learning_rate=0.05)
        rng = np.random.default_rng(config.seed)
        model = GraphModel.build(rng, dataset.feature_dim, config.width,
                                 dataset.num_classes)
        result = fit(model, dataset.graphs[::2], dataset.graphs[1::2], config)
        if len(result.history) < config.max_epochs:
            # Stopped: exactly one epoch after the best.
            assert len(result.history) == result.best_epoch + 2

    def test_empty_train_split_rejected(self):
        dataset, config = tiny_corpus_and_config()
        model = GraphModel.build(np.random.default_rng(0), dataset.feature_dim,
                                 8, dataset.num_classes)
        with pytest.raises(ValueError, match="empty"):
            fit(model, [], dataset.graphs, config)

    def test_reconstruction_without_validation(self):
        ring = gen_ring(12)
        config = TrainConfig(learning_rate=5e-3, batch_size=1, max_epochs=5,
                             patience=5, seed=0, width=8)
        model = ReconstructionModel.build(np.random.default_rng(0), 2, 8)
        result = fit(model, [ring], None, config)
        assert len(result.history) == 5
        assert result.history[0]["valid_loss"] == result.history[0]["train_loss"]


class TestEvaluate:
    def perfect_model(self):
        # Edgeless single-node graphs with one-hot features: with identity
        # readout the logits equal the feature sums, so prediction is exact.
        pool = PoolParams(gcn=MLPParams([], []), score=identity_mlp(2),
                          set_inner=identity_mlp(2), set_outer=identity_mlp(2))
        return GraphModel(stem=identity_mlp(2), pool=pool,
                          readout_inner=identity_mlp(2),
                          readout_head=identity_mlp(2))

    def one_hot_graphs(self):
        graphs = []
        for label in (0, 1, 0, 1):
            feats = np.zeros((1, 2))
            feats[0, label] = 1.0
            graphs.append(build_graph(1, [], features=feats, label=label))
        return graphs

    def test_perfect_predictor_accuracy_one(self):
        metrics = evaluate(self.perfect_model(), self.one_hot_graphs())
        assert metrics["accuracy"] == 1.0
        assert metrics["per_class_accuracy"] == {0: 1.0, 1: 1.0}

    def test_constant_predictor_hits_class_share(self):
        model = self.perfect_model()
        model.readout_head = MLPParams([Value(np.zeros((2, 2)))],
                                       [Value(np.zeros((1, 2)))])
        metrics = evaluate(model, self.one_hot_graphs())
        assert metrics["accuracy"] == 0.5

    def test_zero_predictor_mse_equals_variance(self):
        ring = gen_ring(32)
        model = ReconstructionModel.build(np.random.default_rng(0), 2, 8)
        model.head = MLPParams([Value(np.zeros((8, 2)))], [Value(np.zeros((1, 2)))])
        metrics = evaluate(model, [ring])
        variance = float(np.mean((ring.features - ring.features.mean(axis=0)) ** 2))
        assert np.isclose(metrics["mse"], variance)


class TestHistoryCsv:
    def test_round_trip_fields(self, tmp_path):
        rows = [{"epoch": 0, "train_loss": 1.0, "valid_loss": 2.0,
                 "metric": 0.5, "mean_height": 1.5, "wallclock_ms": 3.0}]
        path = tmp_path / "h.csv"
        write_history_csv(path, rows)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "epoch,train_loss,valid_loss,metric,mean_height,wallclock_ms"
        assert lines[1].startswith("0,1.0,2.0,0.5,1.5")
