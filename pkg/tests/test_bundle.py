import numpy as np
import pytest

from ptformer.bundle import (
    GraphBundle,
    Split,
    edge_homophily,
    load_bundle,
    make_splits,
    save_bundle,
    sbm_generate,
)
from ptformer.errors import ConfigError, ParseError
from ptformer.graph import from_edge_list


def small_bundle(n=100, c=4, seed=0):
    return sbm_generate(n, c, 0.2, 0.05, c, 0.3, np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# SBM generation


def test_sbm_pure_intra_edges_have_homophily_one():
    b = sbm_generate(80, 4, 0.3, 0.0, 4, 0.0, np.random.default_rng(0))
    assert edge_homophily(b) == 1.0


def test_sbm_equal_probabilities_homophily_near_one_over_c():
    # Monte-Carlo oracle: with p_in == p_out, edges ignore labels, so the
    # expected homophily is the same-label pair fraction, about 1/c.
    values = [
        edge_homophily(sbm_generate(1000, 4, 0.01, 0.01, 4, 0.0, np.random.default_rng(seed)))
        for seed in range(20)
    ]
    assert abs(float(np.mean(values)) - 0.25) < 0.05


def test_sbm_expected_degree():
    # Binomial expectation: 0.05 * 99 intra-candidates + 0.005 * 300 inter.
    b = sbm_generate(400, 4, 0.05, 0.005, 4, 0.0, np.random.default_rng(1))
    mean_degree = b.graph.nnz / b.n
    assert abs(mean_degree - 6.45) < 1.0


def test_sbm_balanced_classes():
    b = small_bundle(n=102, c=4)
    counts = np.bincount(b.labels)
    assert counts.tolist() == [26, 26, 25, 25]


def test_sbm_separable_features_are_class_centroids():
    b = sbm_generate(40, 4, 0.2, 0.0, 4, 0.0, np.random.default_rng(2))
    # 1-NN on the centroids classifies perfectly: features are exact one-hots.
    predicted = b.features.argmax(axis=1)
    assert (predicted == b.labels).all()
    np.testing.assert_array_equal(np.sort(np.unique(b.features)), [0.0, 1.0])


def test_sbm_rejects_bad_parameters():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        sbm_generate(10, 4, 1.5, 0.0, 4, 0.0, rng)
    with pytest.raises(ConfigError):
        sbm_generate(6, 4, 0.1, 0.0, 4, 0.0, rng)  # fewer than 2 nodes per class
    with pytest.raises(ConfigError):
        sbm_generate(40, 4, 0.1, 0.0, 2, 0.0, rng)  # feat_dim < classes


# ---------------------------------------------------------------------------
# splits


def test_splits_exact_proportions_on_n_100():
    b = small_bundle(n=100)
    make_splits(b, [0])
    s = b.splits[0]
    assert (len(s.train), len(s.val), len(s.test)) == (48, 32, 20)


def test_splits_deterministic_per_seed():
    b1, b2 = small_bundle(), small_bundle()
    make_splits(b1, [7])
    make_splits(b2, [7])
    for name in ("train", "val", "test"):
        np.testing.assert_array_equal(b1.splits[7].part(name), b2.splits[7].part(name))


def test_splits_differ_across_seeds():
    b = small_bundle(n=1000)
    make_splits(b, [0, 1])
    assert not np.array_equal(b.splits[0].train, b.splits[1].train)


def test_splits_are_disjoint_and_exhaustive():
    b = small_bundle(n=137, c=4)
    make_splits(b, [0, 1, 2])
    for seed in (0, 1, 2):
        s = b.splits[seed]
        merged = np.concatenate([s.train, s.val, s.test])
        np.testing.assert_array_equal(np.sort(merged), np.arange(b.n))


def test_splits_are_stratified():
    b = small_bundle(n=200, c=4)
    make_splits(b, [3])
    s = b.splits[3]
    for k in range(4):
        class_size = (b.labels == k).sum()
        in_train = (b.labels[s.train] == k).sum()
        assert abs(in_train - 0.48 * class_size) <= 1.0


def test_splits_tiny_class_falls_back_with_warning():
    g = from_edge_list(10, [(i, (i + 1) % 10) for i in range(10)])
    labels = np.array([0] * 8 + [1] * 2)  # class 1 has fewer than 3 nodes
    b = GraphBundle(g, np.eye(10), labels)
    with pytest.warns(UserWarning, match="unstratified"):
        make_splits(b, [0])
    s = b.splits[0]
    assert len(s.train) + len(s.val) + len(s.test) == 10


# ---------------------------------------------------------------------------
# save / load round trip


def test_bundle_round_trip(tmp_path):
    b = small_bundle(n=60)
    make_splits(b, [0, 1])
    save_bundle(b, tmp_path / "bundle")
    loaded = load_bundle(tmp_path / "bundle")

    assert loaded.graph.structure_equal(b.graph)
    np.testing.assert_array_equal(loaded.features, b.features)  # bit-exact
    np.testing.assert_array_equal(loaded.labels, b.labels)
    assert sorted(loaded.splits) == [0, 1]
    for seed in (0, 1):
        for name in ("train", "val", "test"):
            np.testing.assert_array_equal(loaded.splits[seed].part(name), b.splits[seed].part(name))


def test_truncated_features_file_is_parse_error(tmp_path):
    b = small_bundle(n=30)
    make_splits(b, [0])
    save_bundle(b, tmp_path / "bundle")
    features = (tmp_path / "bundle" / "features").read_text().splitlines()
    (tmp_path / "bundle" / "features").write_text("\n".join(features[:-3]) + "\n")
    with pytest.raises(ParseError, match="expected 30 rows"):
        load_bundle(tmp_path / "bundle")


def test_malformed_meta_is_parse_error(tmp_path):
    b = small_bundle(n=20)
    save_bundle(b, tmp_path / "bundle")
    (tmp_path / "bundle" / "meta").write_text("n=20\nd=4\n")  # missing c and seeds
    with pytest.raises(ParseError, match="missing field"):
        load_bundle(tmp_path / "bundle")


def test_missing_bundle_directory_is_parse_error(tmp_path):
    with pytest.raises(ParseError, match="not found"):
        load_bundle(tmp_path / "nope")


def test_split_role_typo_is_parse_error(tmp_path):
    b = small_bundle(n=20)
    make_splits(b, [0])
    save_bundle(b, tmp_path / "bundle")
    sfile = tmp_path / "bundle" / "splits" / "seed_0"
    lines = sfile.read_text().splitlines()
    lines[3] = "validation"
    sfile.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError, match="unknown role"):
        load_bundle(tmp_path / "bundle")
