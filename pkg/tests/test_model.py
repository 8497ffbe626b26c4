import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imgbk import autodiff as ad
from imgbk.errors import ConfigError
from imgbk.graph import SplitMasks, build_graph, permute_graph
from imgbk.model import (
    GateMode,
    GateTable,
    LossKind,
    Model,
    ModelConfig,
    fast_gate_table,
    gbk_layer,
    gcn_operator,
    init_params,
    learned_gate,
    model_forward,
    param_names,
)


def masks_for(n, train_idx):
    train = np.zeros(n, bool)
    train[list(train_idx)] = True
    return SplitMasks(train, np.zeros(n, bool), ~train)


class TestConfig:
    def test_roundtrip(self):
        c = ModelConfig((4, 8, 3), GateMode.FAST, epsilon=0.2, loss_kind=LossKind.BAL_SOFTMAX)
        assert ModelConfig.from_dict(c.to_dict()) == c

    @pytest.mark.parametrize("kw", [{"epsilon": 0.5}, {"lam": -1.0}, {"homophily_source": "val"}, {"activation": "relu6"}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            ModelConfig((4, 3), **kw)

    def test_param_names(self):
        assert param_names(ModelConfig((4, 8, 3), GateMode.NONE)) == ["layer0.W", "layer1.W"]
        assert param_names(ModelConfig((4, 3), GateMode.LEARNED)) == [
            "layer0.W_f", "layer0.W_s", "layer0.W_d", "layer0.W_g"
        ]


def test_gcn_operator_path():
    g = build_graph([(0, 1), (1, 2)], np.zeros((3, 1)), [0, 1, 0])
    a = gcn_operator(g).toarray()
    d = np.array([2.0, 3.0, 2.0])
    expect = (np.eye(3) + np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]])) / np.sqrt(np.outer(d, d))
    assert np.allclose(a, expect, atol=1e-15)
    assert np.array_equal(a, a.T)


class TestGateAlgebra:
    @settings(max_examples=40, deadline=None)
    @given(c=st.floats(0.0, 1.0), seed=st.integers(0, 10_000))
    def test_constant_gate_collapses_to_single_kernel(self, c, seed):
        rng = np.random.default_rng(seed)
        toy12 = build_graph([(i, (i * 5 + 1) % 12) for i in range(12)] + [(0, 6), (3, 9)], np.zeros((12, 1)), np.arange(12) % 3)
        agg = ad.Aggregator(toy12.csr_offsets, toy12.csr_neighbors)
        h = ad.Tensor(rng.normal(size=(12, 4)))
        w_f, w_s, w_d = (ad.Tensor(rng.normal(size=(4, 3))) for _ in range(3))
        out = gbk_layer(h, agg, w_f, w_s, w_d, np.full(agg.n_slots, c)).value
        w_mix = c * w_s.value + (1 - c) * w_d.value
        mean = agg.matrix(np.ones(agg.n_slots)) @ h.value
        expect = h.value @ w_f.value + mean @ w_mix
        assert np.max(np.abs(out - expect)) < 1e-12

    def test_fast_table_categories(self, path4):
        # train nodes 0,1,2: edge 0-1 same label, 1-2 different, 2-3 touches test
        t = fast_gate_table(path4, masks_for(4, [0, 1, 2]), epsilon=0.1)
        src, dst = path4.edge_sources, path4.csr_neighbors
        got = {(int(u), int(v)): float(a) for u, v, a in zip(src, dst, t.values)}
        assert t.homophily == 0.5
        assert got[(0, 1)] == got[(1, 0)] == 0.9
        assert got[(1, 2)] == got[(2, 1)] == 0.1
        assert got[(2, 3)] == got[(3, 2)] == 0.5

    def test_fast_table_all_edges_source(self, path4):
        t = fast_gate_table(path4, masks_for(4, [0, 1, 2]), homophily_source="all")
        assert t.homophily == pytest.approx(2 / 3)

    def test_fast_table_symmetric(self, toy12):
        t = fast_gate_table(toy12, masks_for(12, [0, 1, 2, 5, 6, 9, 10, 11]))
        assert np.array_equal(t.values[toy12.reverse_slots()], t.values)

    def test_fast_table_no_train_edges(self, path4):
        with pytest.raises(ConfigError, match="no edge"):
            fast_gate_table(path4, masks_for(4, [0, 2]))

    def test_learned_gate_range_and_shape(self, toy12):
        rng = np.random.default_rng(0)
        agg = ad.Aggregator(toy12.csr_offsets, toy12.csr_neighbors)
        z, alpha = learned_gate(ad.Tensor(rng.normal(size=(12, 4))), agg, ad.Tensor(rng.normal(size=(8, 1))))
        assert z.shape == alpha.shape == (agg.n_slots, 1)
        assert np.all((alpha.value > 0) & (alpha.value < 1))

    def test_fast_model_equals_explicit_layer(self, toy12):
        masks = masks_for(12, [0, 1, 2, 5, 6, 9, 10, 11])
        table = fast_gate_table(toy12, masks)
        cfg = ModelConfig((4, 5, 3), GateMode.FAST)
        store = init_params(cfg, 3)
        out = model_forward(toy12, cfg, store, table).logits.value
        agg = ad.Aggregator(toy12.csr_offsets, toy12.csr_neighbors)
        p = lambda k: ad.Tensor(store.params[k])
        h = ad.tanh(gbk_layer(ad.Tensor(toy12.features), agg, p("layer0.W_f"), p("layer0.W_s"), p("layer0.W_d"), table.values))
        ref = gbk_layer(h, agg, p("layer1.W_f"), p("layer1.W_s"), p("layer1.W_d"), table.values).value
        assert np.max(np.abs(out - ref)) < 1e-12


@pytest.mark.parametrize("mode", list(GateMode))
def test_permutation_equivariance(toy12, mode):
    perm = np.random.default_rng(5).permutation(12)
    masks = masks_for(12, [0, 1, 2, 5, 6, 9, 10, 11])
    g2 = permute_graph(toy12, perm)
    moved = []
    for name in ("train", "val", "test"):
        a = np.zeros(12, bool)
        a[perm] = getattr(masks, name)
        moved.append(a)
    m2 = SplitMasks(*moved)
    cfg = ModelConfig((4, 6, 3), mode)
    store = init_params(cfg, 1)
    t1 = fast_gate_table(toy12, masks) if mode is GateMode.FAST else None
    t2 = fast_gate_table(g2, m2) if mode is GateMode.FAST else None
    out1 = model_forward(toy12, cfg, store, t1).logits.value
    out2 = model_forward(g2, cfg, store, t2).logits.value
    assert np.max(np.abs(out2[perm] - out1)) < 1e-12


class TestModelChecks:
    def test_dimension_mismatch(self, toy12):
        with pytest.raises(ConfigError, match="feature"):
            Model(toy12, ModelConfig((5, 3)))
        with pytest.raises(ConfigError, match="classes"):
            Model(toy12, ModelConfig((4, 2)))

    def test_fast_requires_table(self, toy12):
        with pytest.raises(ConfigError):
            Model(toy12, ModelConfig((4, 3), GateMode.FAST))

    def test_misaligned_table(self, toy12):
        with pytest.raises(ConfigError, match="aligned"):
            Model(toy12, ModelConfig((4, 3), GateMode.FAST), GateTable(np.zeros(3), 0.5))

    def test_wrong_params(self, toy12):
        store = init_params(ModelConfig((4, 3), GateMode.NONE), 0)
        with pytest.raises(ConfigError):
            model_forward(toy12, ModelConfig((4, 3), GateMode.LEARNED), store)

    def test_init_deterministic(self):
        cfg = ModelConfig((4, 6, 3), GateMode.LEARNED)
        a, b = init_params(cfg, 9), init_params(cfg, 9)
        assert all(np.array_equal(a.params[k], b.params[k]) for k in a.names())

    def test_learned_forward_emits_gate_logits(self, toy12):
        cfg = ModelConfig((4, 6, 3), GateMode.LEARNED)
        res = model_forward(toy12, cfg, init_params(cfg, 0))
        assert res.logits.shape == (12, 3)
        assert len(res.gate_logits) == 2


def test_identity_weights_half_gate_on_path():
    g = build_graph([(0, 1), (1, 2)], np.zeros((3, 1)), [0, 1, 0])
    x = np.array([[1.0, 2.0], [3.0, 5.0], [7.0, 11.0]])
    agg = ad.Aggregator(g.csr_offsets, g.csr_neighbors)
    eye = ad.Tensor(np.eye(2))
    out = gbk_layer(ad.Tensor(x), agg, eye, eye, eye, np.full(agg.n_slots, 0.5)).value
    assert np.allclose(out[1], x[1] + (x[0] + x[2]) / 2, atol=1e-15)
    assert np.allclose(out[0], x[0] + x[1], atol=1e-15)
