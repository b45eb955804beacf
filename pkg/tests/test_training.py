import io

import numpy as np
import pytest

import xrv
from xrv import FormatError, PatchPair, PatchSpec, ValidationError, Volume

from conftest import random_volume


def origins_oracle(n, p, stride):
    """Independent window enumeration: step until the edge, then flush."""
    out = []
    x = 0
    while x + p <= n:
        out.append(x)
        x += stride
    if out[-1] + p < n:
        out.append(n - p)
    return out


def make_pairs(rng, count, p=5, h=2):
    pairs = []
    for i in range(count):
        pairs.append(
            PatchPair(
                feature=rng.normal(size=p * p),
                mu=float(rng.uniform(0, 100)),
                sigma=float(rng.uniform(0.1, 50)),
                stack=rng.normal(size=(p, h, p)),
                source=(0, i, 0),
            )
        )
    return pairs


def scan_oracle(features, q, k):
    d2 = [float(np.sum((features[i] - q) ** 2)) for i in range(len(features))]
    order = sorted(range(len(features)), key=lambda i: (d2[i], i))
    return [(i, d2[i]) for i in order[:k]]


def test_window_origins_examples():
    assert xrv.training.window_origins(9, 5, 4) == [0, 4]
    assert len(xrv.training.window_origins(64, 5, 4)) == 16
    assert xrv.training.window_origins(5, 5, 4) == [0]
    with pytest.raises(ValidationError):
        xrv.training.window_origins(4, 5, 4)


def test_window_origins_match_enumeration_oracle():
    rng = np.random.default_rng(21)
    for _ in range(50):
        p = int(rng.integers(1, 8))
        n = int(rng.integers(p, 40))
        stride = int(rng.integers(1, p + 1))
        assert xrv.training.window_origins(n, p, stride) == origins_oracle(n, p, stride)


def test_extract_pairs_grid_examples():
    rng = np.random.default_rng(22)
    spec = PatchSpec(p=5, h=4, stride=4, k=1)
    v9 = random_volume(rng, 9, 8, 9)
    assert len(xrv.extract_pairs(v9, spec)) == 4
    v64 = random_volume(rng, 64, 8, 64)
    assert len(xrv.extract_pairs(v64, spec)) == 16 * 16


def test_extract_pairs_constant_volume_gives_zero_features():
    spec = PatchSpec(p=3, h=2, stride=2, k=1)
    v = Volume(data=np.full((6, 4, 6), 42.0), spacing=(1, 1, 1))
    for pair in xrv.extract_pairs(v, spec):
        assert np.array_equal(pair.feature, np.zeros(9))
        assert pair.mu == 42.0
        assert pair.sigma == 0.0


def test_extract_pairs_fields_match_manual_computation():
    rng = np.random.default_rng(23)
    spec = PatchSpec(p=3, h=2, stride=2, k=1, epsilon=1e-6)
    v = random_volume(rng, 7, 6, 7)
    img = xrv.project_y(v)
    target = xrv.downsample_y(v, 3)
    pairs = xrv.extract_pairs(v, spec, volume_id=9)
    xs = xrv.training.window_origins(7, 3, 2)
    zs = xrv.training.window_origins(7, 3, 2)
    assert len(pairs) == len(xs) * len(zs)
    k = 0
    for z0 in zs:
        for x0 in xs:
            pair = pairs[k]
            k += 1
            assert pair.source == (9, x0, z0)
            raw = img.data[z0 : z0 + 3, x0 : x0 + 3]
            assert abs(pair.mu - raw.mean()) <= 1e-12
            assert abs(pair.sigma - raw.std()) <= 1e-12
            denom = pair.sigma + spec.epsilon
            assert np.max(np.abs(pair.feature - ((raw - pair.mu) / denom).ravel())) <= 1e-12
            block = target.data[z0 : z0 + 3, :, x0 : x0 + 3]
            assert np.max(np.abs(pair.stack * denom + pair.mu - block)) <= 1e-9
            # normalized feature folds back to the raw patch mean
            assert abs(pair.feature.mean() * denom + pair.mu - raw.mean()) <= 1e-9


def test_normalization_round_trip():
    rng = np.random.default_rng(24)
    spec = PatchSpec(p=5, h=4, stride=4, k=1)
    v = random_volume(rng, 12, 8, 12)
    for pair in xrv.extract_pairs(v, spec):
        denom = pair.sigma + spec.epsilon
        denorm = pair.stack * denom + pair.mu
        renorm = (denorm - pair.mu) / denom
        assert np.max(np.abs(renorm - pair.stack)) <= 1e-6


def test_extract_pairs_preconditions():
    rng = np.random.default_rng(25)
    v = random_volume(rng, 6, 6, 6)
    with pytest.raises(ValidationError):
        xrv.extract_pairs(v, PatchSpec(p=3, h=4, stride=2, k=1))  # 4 does not divide 6
    with pytest.raises(ValidationError):
        xrv.extract_pairs(v, PatchSpec(p=7, h=2, stride=2, k=1))  # patch exceeds image


def test_patch_spec_validation():
    with pytest.raises(ValidationError):
        PatchSpec(p=5, stride=6)
    with pytest.raises(ValidationError):
        PatchSpec(stride=0)
    with pytest.raises(ValidationError):
        PatchSpec(h=0)
    with pytest.raises(ValidationError):
        PatchSpec(k=0)
    with pytest.raises(ValidationError):
        PatchSpec(epsilon=0.0)
    spec = PatchSpec()
    assert (spec.p, spec.h, spec.stride, spec.k) == (5, 4, 4, 8)
    assert spec.overlap == 1


def test_build_index_validation():
    rng = np.random.default_rng(26)
    with pytest.raises(ValidationError):
        xrv.build_index([])
    mixed = make_pairs(rng, 2, p=5) + make_pairs(rng, 1, p=3)
    with pytest.raises(ValidationError):
        xrv.build_index(mixed)


def test_single_pair_is_universal_nearest():
    rng = np.random.default_rng(27)
    pairs = make_pairs(rng, 1)
    index = xrv.build_index(pairs)
    for _ in range(5):
        hits = xrv.query(index, rng.normal(size=25), 3)
        assert len(hits) == 1
        assert hits[0][0] == 0


def test_query_of_stored_feature_is_exact_hit():
    rng = np.random.default_rng(28)
    index = xrv.build_index(make_pairs(rng, 50))
    for j in (0, 7, 49):
        hits = xrv.query(index, index.pairs[j].feature, 3)
        assert hits[0] == (j, 0.0)


def test_query_matches_linear_scan_oracle():
    rng = np.random.default_rng(29)
    index = xrv.build_index(make_pairs(rng, 200))
    features = [pr.feature for pr in index.pairs]
    for _ in range(50):
        q = rng.normal(size=25)
        got = xrv.query(index, q, 5)
        assert got == scan_oracle(features, q, 5)


def test_query_edge_cases():
    rng = np.random.default_rng(30)
    index = xrv.build_index(make_pairs(rng, 4))
    assert len(xrv.query(index, rng.normal(size=25), 10)) == 4
    with pytest.raises(ValidationError):
        xrv.query(index, rng.normal(size=9), 2)
    with pytest.raises(ValidationError):
        xrv.query(index, rng.normal(size=25), 0)


def test_query_deterministic_across_runs():
    rng = np.random.default_rng(31)
    pairs = make_pairs(rng, 60)
    q = rng.normal(size=25)
    a = xrv.query(xrv.build_index(pairs), q, 8)
    b = xrv.query(xrv.build_index(pairs), q, 8)
    assert a == b


def test_rankings_invariant_under_intensity_scaling():
    rng = np.random.default_rng(32)
    spec = PatchSpec(p=5, h=4, stride=4, k=6)
    v = random_volume(rng, 16, 8, 16, lo=50, hi=950)
    patch = rng.uniform(50, 950, size=(5, 5))
    for alpha in (0.5, 3.0):
        scaled = Volume(data=alpha * v.data, spacing=v.spacing)
        idx_base = xrv.build_index(xrv.extract_pairs(v, spec), spec)
        idx_scaled = xrv.build_index(xrv.extract_pairs(scaled, spec), spec)

        def feat(raw):
            mu, sigma = raw.mean(), raw.std()
            return ((raw - mu) / (sigma + spec.epsilon)).ravel()

        base_hits = xrv.query(idx_base, feat(patch), 6)
        scaled_hits = xrv.query(idx_scaled, feat(alpha * patch), 6)
        assert [i for i, _ in base_hits] == [i for i, _ in scaled_hits]


def test_index_container_round_trip():
    rng = np.random.default_rng(33)
    spec = PatchSpec(p=4, h=2, stride=3, k=5, epsilon=1e-6)
    v = random_volume(rng, 10, 8, 10)
    index = xrv.build_index(xrv.extract_pairs(v, spec, volume_id=3), spec)

    buf = io.BytesIO()
    xrv.write_index(index, buf)
    first_bytes = buf.getvalue()
    loaded = xrv.read_index(io.BytesIO(first_bytes))

    assert (loaded.spec.p, loaded.spec.h, loaded.spec.stride, loaded.spec.k) == (4, 2, 3, 5)
    assert abs(loaded.spec.epsilon - spec.epsilon) <= 1e-12
    assert len(loaded) == len(index)
    for a, b in zip(index.pairs, loaded.pairs):
        assert a.source == b.source
        assert abs(a.mu - b.mu) <= 1e-4
        assert np.max(np.abs(a.feature - b.feature)) <= 1e-6

    # after one pass through float32, the container is a fixed point:
    # write(read(bytes)) == bytes and read(write(index)) is field-exact
    buf2 = io.BytesIO()
    xrv.write_index(loaded, buf2)
    assert buf2.getvalue() == first_bytes
    again = xrv.read_index(io.BytesIO(buf2.getvalue()))
    for a, b in zip(loaded.pairs, again.pairs):
        assert a.mu == b.mu and a.sigma == b.sigma
        assert np.array_equal(a.feature, b.feature)
        assert np.array_equal(a.stack, b.stack)


def test_index_container_errors():
    with pytest.raises(FormatError):
        xrv.read_index(io.BytesIO(b"NOPE" + b"\0" * 40))
    rng = np.random.default_rng(34)
    index = xrv.build_index(make_pairs(rng, 3))
    buf = io.BytesIO()
    xrv.write_index(index, buf)
    whole = buf.getvalue()
    with pytest.raises(FormatError):
        xrv.read_index(io.BytesIO(whole[: len(whole) - 5]))
