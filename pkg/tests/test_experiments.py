import numpy as np
import pytest

from imgbk.experiments import (
    EXTREME_SBM,
    N_MINORITY,
    coauthor_scale_spec,
    extreme_sbm,
    geometric_sizes,
    sbm_for_targets,
    suite_config,
)
from imgbk.graph import smallest_classes
from imgbk.synth import expected_homophily


def test_geometric_sizes():
    sizes = geometric_sizes(18333, 15, 35.0)
    assert sum(sizes) == 18333
    assert list(sizes) == sorted(sizes, reverse=True)
    assert sizes[0] / sizes[-1] == pytest.approx(35.0, rel=0.01)


def test_targets_hit_expectations():
    spec = sbm_for_targets((50, 30, 20), 400, 0.7, feature_dim=3)
    sizes = np.array(spec.class_sizes, dtype=float)
    within = sizes * (sizes - 1) / 2
    cross = (sizes.sum() ** 2 - (sizes**2).sum()) / 2
    assert float(np.dot(spec.p_in, within) + spec.p_out * cross) == pytest.approx(400)
    assert expected_homophily(spec) == pytest.approx(0.7)


def test_coauthor_scale_shape():
    spec = coauthor_scale_spec()
    assert spec.n_nodes == 18333 and len(spec.class_sizes) == 15


def test_extreme_suite_minorities_are_sparse():
    b = extreme_sbm(0)
    minority = smallest_classes(b.graph, N_MINORITY)
    assert sorted(minority) == [4, 5, 6]
    p_in = EXTREME_SBM["p_in"]
    assert max(p_in[c] for c in minority) < min(p_in[c] for c in range(4))
    cfg = suite_config(b, "im-gbk+balanced", seed=0)
    assert cfg.extreme_classes == (4, 5, 6) and cfg.extreme_k == 5
