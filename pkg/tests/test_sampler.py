import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqdropnet.errors import InvalidSpecError
from seqdropnet.sampler import PatchSpec, draw_center, extract_patch, patch_origin, sample_patch_center
from seqdropnet.volume import LabelVolume, MultiChannelVolume, Volume

from conftest import make_labels, make_stack


def test_single_lesion_forced():
    lab = np.zeros((9, 9, 9))
    lab[4, 5, 3] = 1.0
    spec = PatchSpec((3, 3, 3), 1.0)
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert sample_patch_center(LabelVolume(lab), spec, rng) == (4, 5, 3)


def test_no_lesion_fallback():
    lab = np.zeros((5, 5, 5))
    lab[0, 0, 0] = 0.5
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(2000):
        c, lesion = draw_center(LabelVolume(lab), PatchSpec((1, 1, 1), 1.0), rng)
        assert not lesion
        seen.add(c)
    # uniform over all 125 non-lesion voxels, 0.5 voxels included
    assert len(seen) == 125


def test_lesion_fraction_p099():
    labels = LabelVolume(np.random.default_rng(5).choice([0.0, 1.0], size=(16, 16, 16), p=[0.9, 0.1]))
    spec = PatchSpec((8, 8, 8), 0.99)
    rng = np.random.default_rng(42)
    n = 10_000
    hits = 0
    for _ in range(n):
        c, _ = draw_center(labels, spec, rng)
        hits += labels.data[c] == 1.0
    frac = hits / n
    assert 0.985 <= frac <= 0.995
    sigma = np.sqrt(0.99 * 0.01 / n)
    assert abs(frac - 0.99) <= 4 * sigma


def test_p1_precamp_center_is_lesion(rng):
    labels = make_labels(rng, (10, 9, 8))
    spec = PatchSpec((4, 4, 4), 1.0)
    for _ in range(500):
        c, _ = draw_center(labels, spec, rng)
        assert labels.data[c] == 1.0


def test_volume_smaller_than_patch():
    with pytest.raises(InvalidSpecError):
        sample_patch_center(LabelVolume(np.zeros((4, 4, 4))), PatchSpec((5, 4, 4)), np.random.default_rng(0))


def test_bad_spec():
    with pytest.raises(InvalidSpecError):
        PatchSpec((4, 0, 4))
    with pytest.raises(InvalidSpecError):
        PatchSpec((4, 4, 4), 1.5)


def test_whole_volume_patch(rng):
    img, lab = make_stack(rng), make_labels(rng)
    spec = PatchSpec(img.dims)
    p, l = extract_patch(img, lab, (0, 4, 2), spec)
    assert p == img and l == lab


def test_single_voxel_patch(rng):
    img, lab = make_stack(rng), make_labels(rng)
    p, l = extract_patch(img, lab, (3, 2, 1), PatchSpec((1, 1, 1)))
    assert p.dims == (1, 1, 1)
    for ch in img.names:
        assert p[ch].data[0, 0, 0] == img[ch].data[3, 2, 1]
    assert l.data[0, 0, 0] == lab.data[3, 2, 1]


def test_offset_convention(rng):
    img, lab = make_stack(rng, (10, 10, 10)), make_labels(rng, (10, 10, 10))
    spec = PatchSpec((4, 3, 2))
    center = (5, 5, 5)
    p, l = extract_patch(img, lab, center, spec)
    origin = (5 - 2, 5 - 1, 5 - 1)
    assert np.array_equal(p.array(), img.array()[:, 3:7, 4:7, 4:6])
    assert np.array_equal(l.data, lab.data[3:7, 4:7, 4:6])
    assert patch_origin(center, spec.size, img.dims) == origin


def test_determinism(rng):
    img, lab = make_stack(rng, (12, 12, 12)), make_labels(rng, (12, 12, 12))
    spec = PatchSpec((4, 4, 4), 0.7)
    out = []
    for _ in range(2):
        r = np.random.default_rng(9)
        c = sample_patch_center(lab, spec, r)
        out.append((c, extract_patch(img, lab, c, spec)))
    assert out[0][0] == out[1][0]
    assert out[0][1][0] == out[1][1][0] and out[0][1][1] == out[1][1][1]


@settings(max_examples=200, deadline=None)
@given(
    st.tuples(*(st.integers(1, 9),) * 3),
    st.tuples(*(st.integers(1, 9),) * 3),
    st.floats(0, 1),
    st.integers(0, 2**32 - 1),
)
def test_never_out_of_bounds(dims, size, p, seed):
    size = tuple(min(s, d) for s, d in zip(size, dims))
    r = np.random.default_rng(seed)
    labels = LabelVolume(r.choice([0.0, 0.5, 1.0], size=dims))
    img = MultiChannelVolume((Volume(r.random(dims), "a"),))
    spec = PatchSpec(size, p)
    c = sample_patch_center(labels, spec, r)
    o = patch_origin(c, size, dims)
    assert all(0 <= oi and oi + si <= di for oi, si, di in zip(o, size, dims))
    patch, lab = extract_patch(img, labels, c, spec)
    assert patch.dims == size and lab.dims == size
    # an arbitrary (even out-of-range) center is clamped inside
    far = tuple(int(v) for v in r.integers(-20, 30, size=3))
    patch, _ = extract_patch(img, labels, far, spec)
    assert patch.dims == size
