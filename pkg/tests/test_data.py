import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msml.data import (
    SyntheticSpec,
    gen_synthetic,
    load_features,
    save_features,
    split,
    split_indices,
)
from msml.errors import (
    InconsistentDimension,
    InsufficientIdentities,
    NonFiniteFeature,
    ParseError,
)
from msml.sampling import LabeledDataset


def test_synthetic_layout():
    ds = gen_synthetic(SyntheticSpec(num_ids=2, samples_per_id=3, input_dim=4))
    assert ds.features.shape == (6, 4)
    assert ds.ids.tolist() == [0, 0, 0, 1, 1, 1]


def test_vanishing_spread_collapses_identities():
    ds = gen_synthetic(SyntheticSpec(num_ids=3, samples_per_id=4, within_spread=1e-300))
    for ident in range(3):
        rows = ds.features[ds.ids == ident]
        assert np.all(rows == rows[0])


def test_separable_regime():
    ds = gen_synthetic(SyntheticSpec(16, 8, 16, centroid_scale=10.0, within_spread=0.1, seed=3))
    centroids = np.array([ds.features[ds.ids == i].mean(axis=0) for i in range(16)])
    within = max(
        np.linalg.norm(ds.features[ds.ids == i] - centroids[i], axis=1).max() for i in range(16)
    )
    between = min(
        np.linalg.norm(centroids[i] - centroids[j]) for i in range(16) for j in range(i + 1, 16)
    )
    assert within * 10 < between


def test_synthetic_is_deterministic():
    a = gen_synthetic(SyntheticSpec(seed=5))
    b = gen_synthetic(SyntheticSpec(seed=5))
    assert a.features.tobytes() == b.features.tobytes()
    with pytest.raises(ValueError):
        SyntheticSpec(samples_per_id=1)
    with pytest.raises(ValueError):
        SyntheticSpec(within_spread=0.0)


def test_load_well_formed(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text(
        "# three rows\n"
        "id,camera,f0,f1\n"
        "1,0,0.5,1e-3\n"
        "\n"
        "1,1,-2,3.25E+2\n"
        "# trailing comment\n"
        "7,0,0,0\n"
    )
    ds = load_features(path)
    assert len(ds) == 3
    assert ds.ids.tolist() == [1, 1, 7]
    assert ds.cameras.tolist() == [0, 1, 0]
    np.testing.assert_array_equal(ds.features[1], [-2.0, 325.0])


def test_load_without_cameras(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("id,f0\n0,1.0\n1,2.0\n")
    ds = load_features(path)
    assert ds.cameras is None and ds.dim == 1
    path.write_text("id,camera,f0\n0,,1.0\n1,,2.0\n")
    assert load_features(path).cameras is None
    path.write_text("id,camera,f0\n0,,1.0\n1,3,2.0\n")
    with pytest.raises(ParseError):
        load_features(path)


def test_load_errors(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("id,f0,f1\n0,1,2\n1,2\n")
    with pytest.raises(InconsistentDimension) as info:
        load_features(path)
    assert info.value.line == 3 and "line 3" in str(info.value)

    path.write_text("id,f0\n0,nan\n")
    with pytest.raises(NonFiniteFeature):
        load_features(path)
    path.write_text("id,f0\n0,inf\n")
    with pytest.raises(NonFiniteFeature):
        load_features(path)

    path.write_text("id,f0,f1\n0,1,abc\n")
    with pytest.raises(ParseError) as info:
        load_features(path)
    assert (info.value.line, info.value.column) == (2, 3)

    path.write_text("id,f0,f2\n")
    with pytest.raises(ParseError):
        load_features(path)
    path.write_text("# nothing\n")
    with pytest.raises(ParseError):
        load_features(path)


def test_round_trip(tmp_path):
    ds = gen_synthetic(SyntheticSpec(5, 3, 7, seed=11))
    path = tmp_path / "rt.csv"
    save_features(ds, path)
    back = load_features(path)
    np.testing.assert_allclose(back.features, ds.features, atol=1e-9)
    assert back.ids.tolist() == ds.ids.tolist()

    cams = LabeledDataset(ds.features, ds.ids, np.arange(len(ds)) % 2)
    save_features(cams, path)
    assert load_features(path).cameras.tolist() == cams.cameras.tolist()


def test_split_example():
    ds = gen_synthetic(SyntheticSpec(10, 4, 3, seed=0))
    sp = split(ds, 0.5, np.random.default_rng(0))
    assert len(sp.train.identities()) == 5
    assert len(sp.query) == 5
    assert set(sp.train.ids.tolist()).isdisjoint(sp.query.ids.tolist())
    assert set(sp.query.ids.tolist()) == set(sp.gallery.ids.tolist())
    again = split(ds, 0.5, np.random.default_rng(0))
    assert sp.query.features.tobytes() == again.query.features.tobytes()
    with pytest.raises(InsufficientIdentities):
        split(ds, 0.0, np.random.default_rng(0))
    with pytest.raises(InsufficientIdentities):
        split(ds, 1.0, np.random.default_rng(0))


@settings(max_examples=100, deadline=None)
@given(
    st.integers(2, 12),
    st.integers(2, 5),
    st.floats(0.05, 0.95),
    st.integers(0, 2**32 - 1),
)
def test_split_partitions_rows(n_ids, per_id, frac, seed):
    ds = gen_synthetic(SyntheticSpec(n_ids, per_id, 2, seed=seed % 1000))
    n_train = int(round(frac * n_ids))
    rng = np.random.default_rng(seed)
    if n_train < 1 or n_train >= n_ids:
        with pytest.raises(InsufficientIdentities):
            split_indices(ds, frac, rng)
        return
    idx = split_indices(ds, frac, rng)
    rows = np.concatenate([idx.train, idx.query, idx.gallery])
    assert sorted(rows.tolist()) == list(range(len(ds)))
    train_ids = set(ds.ids[idx.train].tolist())
    test_ids = set(ds.ids[idx.query].tolist())
    assert train_ids.isdisjoint(test_ids)
    assert len(idx.query) == len(test_ids)
