import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imgbk import autodiff as ad
from imgbk.errors import ConfigError
from imgbk.losses import (
    ClassPriors,
    balanced_softmax_loss,
    class_priors,
    cross_entropy,
    gate_consistency_loss,
    gate_targets,
    imbalance_loss,
    logit_adjusted_loss,
    reweighted_cross_entropy,
    total_loss,
)
from imgbk.model import GateMode, LossKind, ModelConfig


def ce_loops(z, y, w=None):
    """Per-row softmax cross-entropy written with plain Python math."""
    w = [1.0] * len(y) if w is None else w
    tot = 0.0
    for row, label, wi in zip(z, y, w):
        mx = max(row)
        lse = mx + math.log(sum(math.exp(v - mx) for v in row))
        tot += wi * (lse - row[label])
    return tot / sum(w)


def inputs(seed, n=7, m=4):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, m)) * 3, rng.integers(0, m, size=n), rng.integers(1, 40, size=m).astype(float)


class TestValues:
    def test_ce_matches_loops(self):
        z, y, _ = inputs(0)
        assert cross_entropy(ad.Tensor(z), y).item() == pytest.approx(ce_loops(z.tolist(), y), abs=1e-13)

    def test_reweighted_matches_loops(self):
        z, y, c = inputs(1)
        w = [(c.sum() / c.size) / c[k] for k in y]
        got = reweighted_cross_entropy(ad.Tensor(z), y, c).item()
        assert got == pytest.approx(ce_loops(z.tolist(), y, w), abs=1e-13)

    def test_logit_adjusted_hand_value(self):
        z = ad.Tensor(np.zeros((1, 2)))
        got = logit_adjusted_loss(z, [0], ClassPriors(np.array([0.25, 0.75]), np.array([1, 3])), tau=1.0)
        assert got.item() == pytest.approx(math.log(4), abs=1e-12)  # 1.3863

    def test_balanced_softmax_hand_values(self):
        z = ad.Tensor(np.zeros((1, 2)))
        assert balanced_softmax_loss(z, [0], [1, 3]).item() == pytest.approx(1.3862943611198906, abs=1e-12)
        assert balanced_softmax_loss(z, [1], [1, 3]).item() == pytest.approx(0.2876820724517809, abs=1e-12)

    def test_reweight_single_minority_row(self):
        # only class-0 rows with counts [1, 3]: weighted mean equals the plain mean
        z, _, _ = inputs(2, m=2)
        y = np.zeros(len(z), dtype=int)
        rw = reweighted_cross_entropy(ad.Tensor(z), y, [1, 3]).item()
        assert rw == pytest.approx(cross_entropy(ad.Tensor(z), y).item(), abs=1e-13)

    def test_reweight_weights_minority_twice(self):
        # one row per class, counts [1, 3]: weights 2 and 2/3
        z = np.array([[0.3, -0.2], [1.0, 0.5]])
        y = [0, 1]
        expect = ce_loops(z.tolist(), y, [2.0, 2 / 3])
        assert reweighted_cross_entropy(ad.Tensor(z), y, [1, 3]).item() == pytest.approx(expect, abs=1e-13)

    def test_logit_adjust_with_train_priors_equals_balanced(self):
        z, y, c = inputs(3)
        la = imbalance_loss(LossKind.LOGIT_ADJ, ad.Tensor(z), y, c, tau=1.0).item()
        bs = balanced_softmax_loss(ad.Tensor(z), y, c).item()
        assert la == pytest.approx(bs, abs=1e-12)


class TestDegeneracy:
    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 100_000), k=st.floats(0.5, 50.0), tau=st.floats(0.1, 3.0))
    def test_uniform_priors_and_counts_reduce_to_ce(self, seed, k, tau):
        z, y, _ = inputs(seed)
        m = z.shape[1]
        ce = cross_entropy(ad.Tensor(z), y).item()
        la = logit_adjusted_loss(ad.Tensor(z), y, ClassPriors(np.full(m, 1 / m), np.ones(m)), tau).item()
        bs = balanced_softmax_loss(ad.Tensor(z), y, np.full(m, k)).item()
        rw = reweighted_cross_entropy(ad.Tensor(z), y, np.full(m, k)).item()
        assert abs(la - ce) < 1e-12
        assert abs(bs - ce) < 1e-12
        assert abs(rw - ce) < 1e-12

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 100_000), shift=st.floats(-50, 50))
    def test_row_shift_invariance(self, seed, shift):
        z, y, c = inputs(seed)
        for kind in LossKind:
            a = imbalance_loss(kind, ad.Tensor(z), y, c).item()
            b = imbalance_loss(kind, ad.Tensor(z + shift), y, c).item()
            assert abs(a - b) < 1e-10

    def test_lambda_zero_total_is_l_im(self):
        z, y, c = inputs(4)
        l_im = balanced_softmax_loss(ad.Tensor(z), y, c)
        g = ad.Tensor([[0.7]])
        cfg = ModelConfig((3, 4), GateMode.LEARNED, lam=0.0)
        assert total_loss(cfg, l_im, [g]).item() == l_im.item()
        cfg1 = ModelConfig((3, 4), GateMode.LEARNED, lam=2.0)
        assert total_loss(cfg1, l_im, [g, g]).item() == pytest.approx(l_im.item() + 2.8, abs=1e-12)

    def test_gate_loss_rejected_outside_learned(self):
        l_im = ad.Tensor([[1.0]])
        with pytest.raises(ConfigError):
            total_loss(ModelConfig((3, 4), GateMode.FAST), l_im, [ad.Tensor([[0.1]])])
        assert total_loss(ModelConfig((3, 4), GateMode.NONE), l_im, []).item() == 1.0


class TestGateLoss:
    def test_targets(self, path4):
        train = np.array([True, True, True, False])
        slots, target = gate_targets(path4.edge_sources, path4.csr_neighbors, path4.labels, train)
        pairs = [(int(path4.edge_sources[s]), int(path4.csr_neighbors[s])) for s in slots]
        assert pairs == [(0, 1), (1, 0), (1, 2), (2, 1)]
        assert target.tolist() == [1.0, 1.0, 0.0, 0.0]

    def test_zero_when_no_train_edges(self, path4):
        z = ad.Tensor(np.ones((path4.n_edge_directions, 1)))
        out = gate_consistency_loss(z, path4.edge_sources, path4.csr_neighbors, path4.labels, np.array([1, 0, 1, 0], bool))
        assert out.item() == 0.0

    def test_value(self, path4):
        z = np.linspace(-1, 1, path4.n_edge_directions)[:, None]
        train = np.ones(4, bool)
        got = gate_consistency_loss(ad.Tensor(z), path4.edge_sources, path4.csr_neighbors, path4.labels, train).item()
        same = path4.labels[path4.edge_sources] == path4.labels[path4.csr_neighbors]
        p = 1 / (1 + np.exp(-z[:, 0]))
        expect = -np.mean(np.where(same, np.log(p), np.log(1 - p)))
        assert got == pytest.approx(expect, abs=1e-14)


class TestPriors:
    def test_counts_and_pi(self):
        pri = class_priors([0, 1, 1, 1, 2, 2], [True, True, True, False, True, True], 3)
        assert pri.source_counts.tolist() == [1, 2, 2]
        assert pri.pi.tolist() == [0.2, 0.4, 0.4]

    def test_missing_class(self):
        with pytest.raises(ConfigError):
            class_priors([0, 1, 2], [True, True, False], 3)

    def test_non_positive_counts(self):
        with pytest.raises(ConfigError):
            balanced_softmax_loss(ad.Tensor(np.zeros((1, 2))), [0], [0, 3])
