import csv
import dataclasses

import numpy as np
import pytest

from dsgrl.autodiff import Tensor
from dsgrl.errors import ConfigError, FormatError, NumericError, ShapeError
from dsgrl.graph import Graph, batch_graphs, build_graph, generate_sbm
from dsgrl.objective import CSV_FIELDS, LossWeights
from dsgrl.trainer import (
    AdamState, Checkpoint, Model, TrainConfig, adam_step, embed, embed_views, load_checkpoint,
    save_checkpoint, train,
)

SMALL = dict(aug_dim=8, out_dim=4, epochs=30)


@pytest.fixture(scope="module")
def sbm():
    return generate_sbm((10, 10, 10), 0.4, 0.05, feature_noise=0.5, seed=0)


def reference_adam(p, grads, lr, b1, b2, eps):
    """Textbook Adam written out step by step."""
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    p = p.copy()
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return p


class TestAdam:
    def test_zero_gradient(self):
        fresh = np.array([[1.0, -2.0]])
        adam_step([fresh], [np.zeros((1, 2))], AdamState())
        assert fresh.tolist() == [[1.0, -2.0]]

        p = np.array([[1.0, -2.0]])
        state = AdamState()
        adam_step([p], [np.array([[0.5, 0.5]])], state)
        m, v = state.m[0].copy(), state.v[0].copy()
        adam_step([p], [np.zeros((1, 2))], state)
        assert np.array_equal(state.m[0], 0.9 * m) and np.array_equal(state.v[0], 0.999 * v)

    def test_first_step(self):
        g = np.array([[0.3, -4.0, 1e-3]])
        p = np.zeros((1, 3))
        adam_step([p], [g], AdamState(), lr=0.01, eps_opt=1e-8)
        assert np.allclose(-p, 0.01 * g / (np.abs(g) + 1e-8), rtol=0, atol=1e-15)

    def test_matches_reference(self, rng):
        grads = [rng.standard_normal((2, 3)) for _ in range(25)]
        p = rng.standard_normal((2, 3))
        want = reference_adam(p, grads, 3e-3, 0.8, 0.99, 1e-7)
        state = AdamState()
        got = p.copy()
        for g in grads:
            adam_step([got], [g], state, 3e-3, 0.8, 0.99, 1e-7)
        assert np.allclose(got, want, atol=1e-14)

    def test_deterministic(self, rng):
        g = rng.standard_normal((3, 3))
        a, b = np.ones((3, 3)), np.ones((3, 3))
        adam_step([a], [g], AdamState())
        adam_step([b], [g], AdamState())
        assert np.array_equal(a, b)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            adam_step([np.zeros((2, 2))], [np.zeros((2, 3))], AdamState())


class TestConfig:
    def test_invariants(self):
        for bad in (dict(epochs=-1), dict(lr=0), dict(out_dim=0), dict(aug_dim=0), dict(mode="x"),
                    dict(latent_reg="pca"), dict(batch_size=1), dict(mode="topology", batch_size=8)):
            with pytest.raises(ConfigError):
                TrainConfig(**bad)

    def test_dict_round_trip(self):
        cfg = TrainConfig(mode="combined", weights=LossWeights(alpha=0.5), seed=7)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_keys(self):
        with pytest.raises(ConfigError, match="bogus"):
            TrainConfig.from_dict({"bogus": 1})
        with pytest.raises(ConfigError, match="weights.delta"):
            TrainConfig.from_dict({"weights": {"delta": 1}})

    def test_hidden_default(self):
        assert TrainConfig(out_dim=5).hidden == 10


class TestTrain:
    def test_untrained_equals_zero_epochs(self, sbm):
        _, z0 = train(sbm, TrainConfig(**dict(SMALL, epochs=0)))
        ck, zu = train(sbm, TrainConfig(**dict(SMALL, untrained=True)))
        assert np.array_equal(z0.data, zu.data) and ck.epoch == 0
        model = Model.init(dataclasses.replace(ck.config, untrained=False), sbm.num_features)
        for k, t in model.named_parameters().items():
            assert np.array_equal(t.data, ck.params[k])

    def test_deterministic(self, sbm):
        cfg = TrainConfig(**SMALL)
        a, b = train(sbm, cfg)[1], train(sbm, cfg)[1]
        assert np.array_equal(a.data, b.data)

    def test_joint_training_moves_both_groups(self, sbm):
        cfg = TrainConfig(**SMALL)
        ck, _ = train(sbm, cfg)
        init = Model.init(cfg, sbm.num_features).named_parameters()
        for prefix in ("encoder.", "f1.", "f2."):
            moved = max(np.abs(ck.params[k] - init[k].data).max() for k in init if k.startswith(prefix))
            assert moved > 1e-6

    def test_loss_trend(self):
        g = generate_sbm((50, 50, 50), 0.1, 0.01, 0.5, seed=0)
        ck, _ = train(g, TrainConfig())
        totals = np.array([h.total for h in ck.history])
        windows = totals.reshape(10, 20).mean(axis=1)
        assert totals[-1] <= totals[0]
        assert np.all(np.diff(windows) <= 0)

    def test_log_file(self, sbm, tmp_path):
        path = tmp_path / "log.csv"
        ck, _ = train(sbm, TrainConfig(**SMALL), log_path=path)
        rows = list(csv.reader(path.open()))
        assert tuple(rows[0]) == ("epoch",) + CSV_FIELDS
        assert len(rows) == 1 + SMALL["epochs"]
        last = rows[-1]
        assert float(last[-1]) == ck.history[-1].total

    def test_embed_matches_train(self, sbm):
        ck, z = train(sbm, TrainConfig(**SMALL))
        assert np.array_equal(embed(sbm, ck).data, z.data)
        assert z.shape == (sbm.n, 2 * SMALL["out_dim"])

    def test_permuted_graph(self, sbm, rng):
        ck, z = train(sbm, TrainConfig(**SMALL))
        perm = rng.permutation(sbm.n)
        zp = embed(sbm.permuted(perm), ck)
        assert np.max(np.abs(zp.data - z.data[perm])) < 1e-10

    def test_graph_level(self, rng):
        graphs = []
        for k in range(6):
            n = 4 + k % 3
            iu = np.triu_indices(n, 1)
            hit = rng.random(iu[0].size) < 0.5
            g = build_graph(n, iu[0][hit], iu[1][hit], rng.standard_normal((n, 3)))
            graphs.append(Graph(g.adjacency, g.features, graph_label=k % 2))
        batch = batch_graphs(graphs)
        ck, z = train(batch, TrainConfig(**SMALL))
        assert z.shape == (6, 2 * SMALL["out_dim"])
        assert np.array_equal(embed(batch, ck).data, z.data)

    def test_topology_and_combined_modes(self, sbm):
        for mode in ("topology", "combined"):
            ck, z = train(sbm, TrainConfig(**dict(SMALL, mode=mode, epochs=5)))
            assert np.all(np.isfinite(z.data))
            roles = {k.split(".")[0] for k in ck.params}
            assert roles == ({"encoder", "topo"} if mode == "topology" else {"encoder", "topo", "f1", "f2"})

    def test_minibatch(self, sbm):
        ck, z = train(sbm, TrainConfig(**dict(SMALL, batch_size=8)))
        assert len(ck.history) == SMALL["epochs"] and np.all(np.isfinite(z.data))

    def test_refresh_interval(self, sbm):
        ck, _ = train(sbm, TrainConfig(**dict(SMALL, mode="topology", epochs=4, topology_refresh=3)))
        assert len(ck.history) == 4

    def test_nan_abort_names_term(self, sbm):
        huge = Graph(sbm.adjacency, Tensor(sbm.features.data * 1e300), sbm.labels)
        # the scaled Frobenius norm survives 1e300 inputs; squared covariances do not
        with np.errstate(all="ignore"), pytest.raises(NumericError, match="term 'cov1'"):
            train(huge, TrainConfig(**SMALL))

    def test_width_mismatch(self, sbm):
        ck, _ = train(sbm, TrainConfig(**dict(SMALL, epochs=0)))
        other = build_graph(3, [0], [1], np.zeros((3, 7)))
        with pytest.raises(ConfigError):
            embed(other, ck)
        with pytest.raises(ConfigError):
            train(other, TrainConfig(**dict(SMALL, in_dim=3)))


class TestCheckpoint:
    def test_round_trip_bitwise(self, sbm, tmp_path):
        ck, z = train(sbm, TrainConfig(**SMALL))
        path = tmp_path / "m.dsgc"
        save_checkpoint(ck, path)
        back = load_checkpoint(path)
        assert back.config == ck.config and back.epoch == ck.epoch
        assert np.array_equal(embed(sbm, back).data, z.data)
        z1, z2 = embed_views(sbm, back)
        assert np.array_equal(np.hstack([z1.data, z2.data]), z.data)

    def test_toy_byte_compare(self, tmp_path):
        g = build_graph(2, [0], [1], np.eye(2))
        ck, _ = train(g, TrainConfig(aug_dim=2, out_dim=2, epochs=3))
        a, b = tmp_path / "a.dsgc", tmp_path / "b.dsgc"
        save_checkpoint(ck, a)
        save_checkpoint(load_checkpoint(a), b)
        assert a.read_bytes() == b.read_bytes()
        back = load_checkpoint(a)
        assert back.params.keys() == ck.params.keys()
        for k in ck.params:
            assert back.params[k].tobytes() == ck.params[k].tobytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.dsgc"
        p.write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(p)

    def test_bad_version(self, sbm, tmp_path):
        p = tmp_path / "x.dsgc"
        save_checkpoint(train(sbm, TrainConfig(**dict(SMALL, epochs=0)))[0], p)
        raw = bytearray(p.read_bytes())
        raw[4:8] = (99).to_bytes(4, "little")
        p.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="version"):
            load_checkpoint(p)

    def test_truncated(self, sbm, tmp_path):
        p = tmp_path / "x.dsgc"
        save_checkpoint(train(sbm, TrainConfig(**dict(SMALL, epochs=0)))[0], p)
        p.write_bytes(p.read_bytes()[:-5])
        with pytest.raises(FormatError, match="truncated"):
            load_checkpoint(p)

    def test_requires_encoder(self):
        with pytest.raises(FormatError):
            Checkpoint(TrainConfig(), {"f1.0": np.eye(2)}).model()
