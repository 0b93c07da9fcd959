import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from seqdropnet.errors import InvalidDimensionsError, SizeMismatchError, UnsupportedDtypeError
from seqdropnet.volume import (
    LabelVolume,
    MultiChannelVolume,
    Volume,
    normalize,
    read_stack,
    read_volume,
    write_stack,
    write_volume,
    zero_like,
)

from conftest import make_stack


def test_normalize_identity_on_unit_range():
    v = Volume.from_voxels((2, 1, 1), [0.0, 1.0])
    assert np.array_equal(normalize(v).voxels, [0.0, 1.0])


def test_normalize_constant_is_zero():
    out = normalize(Volume(np.full((3, 2, 2), 5.0)))
    assert np.all(out.data == 0.0)
    assert out.dims == (3, 2, 2)


def test_normalize_min_max_formula():
    v = Volume.from_voxels((3, 1, 1), [2.0, 4.0, 6.0])
    assert np.array_equal(normalize(v).voxels, [0.0, 0.5, 1.0])


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(*(st.integers(1, 4),) * 3), elements=finite))
def test_normalize_properties(data):
    v = Volume(data)
    n = normalize(v)
    if data.max() == data.min():
        assert np.all(n.data == 0)
        return
    assert n.data.min() == pytest.approx(0.0, abs=1e-12)
    assert n.data.max() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(normalize(n).data, n.data, atol=1e-12)


@pytest.mark.parametrize("dims", [(2, 2, 2), (1, 1, 1), (3, 1, 5)])
def test_zero_like(dims):
    v = zero_like(dims, "x")
    assert v.voxels.size == np.prod(dims)
    assert v.voxels.sum() == 0 and np.all(v.voxels == 0.0)


@pytest.mark.parametrize("dims", [(0, 2, 2), (2, 2), (1, -1, 1)])
def test_zero_like_rejects_bad_dims(dims):
    with pytest.raises(InvalidDimensionsError):
        zero_like(dims)


def test_voxels_are_x_fastest():
    data = np.arange(24.0).reshape(2, 3, 4)
    v = Volume(data)
    # voxel (x, y, z) sits at x + nx*(y + ny*z)
    for x in range(2):
        for y in range(3):
            for z in range(4):
                assert v.voxels[x + 2 * (y + 3 * z)] == data[x, y, z]
    assert Volume.from_voxels((2, 3, 4), v.voxels) == v


def test_round_trip_bit_exact(tmp_path, rng):
    data = rng.normal(size=(5, 4, 3)).astype(np.float32).astype(np.float64)
    v = Volume(data, "FLAIR")
    write_volume(v, tmp_path / "FLAIR")
    back = read_volume(tmp_path / "FLAIR.json")
    assert back.name == "FLAIR" and back.dims == v.dims
    assert back.voxels.astype("<f4").tobytes() == v.voxels.astype("<f4").tobytes()
    assert np.array_equal(back.data, v.data)


def test_header_fields(tmp_path):
    write_volume(zero_like((2, 3, 4), "T1"), tmp_path / "T1")
    header = json.loads((tmp_path / "T1.json").read_text())
    assert header == {"dims": [2, 3, 4], "dtype": "f32le", "order": "x-fastest", "channel": "T1"}
    assert (tmp_path / "T1.raw").stat().st_size == 2 * 3 * 4 * 4


def test_size_mismatch(tmp_path):
    write_volume(zero_like((2, 2, 2), "a"), tmp_path / "a")
    (tmp_path / "a.raw").write_bytes(np.zeros(7, "<f4").tobytes())
    with pytest.raises(SizeMismatchError):
        read_volume(tmp_path / "a")


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_volume(tmp_path / "nope")


def test_unsupported_dtype(tmp_path):
    write_volume(zero_like((1, 1, 1), "a"), tmp_path / "a")
    h = json.loads((tmp_path / "a.json").read_text())
    h["dtype"] = "f64le"
    (tmp_path / "a.json").write_text(json.dumps(h))
    with pytest.raises(UnsupportedDtypeError):
        read_volume(tmp_path / "a")


def test_stack_round_trip(tmp_path, rng):
    stack = make_stack(rng)
    stack = MultiChannelVolume.from_array(stack.array().astype(np.float32), stack.names)
    write_stack(stack, tmp_path / "case")
    assert json.loads((tmp_path / "case" / "stack.json").read_text()) == {"channels": list(stack.names)}
    assert read_stack(tmp_path / "case") == stack
    assert read_stack(tmp_path / "case", ["FLAIR", "T1"]).names == ("FLAIR", "T1")


def test_multichannel_invariants(rng):
    with pytest.raises(InvalidDimensionsError):
        MultiChannelVolume(())
    with pytest.raises(SizeMismatchError):
        MultiChannelVolume((Volume(np.zeros((2, 2, 2)), "a"), Volume(np.zeros((2, 2, 3)), "b")))
    with pytest.raises(ValueError):
        MultiChannelVolume((Volume(np.zeros((2, 2, 2)), "a"), Volume(np.zeros((2, 2, 2)), "a")))


def test_label_values_restricted():
    LabelVolume(np.array([0.0, 0.5, 1.0]).reshape(3, 1, 1))
    with pytest.raises(ValueError):
        LabelVolume(np.array([0.0, 0.25, 1.0]).reshape(3, 1, 1))


def test_volumes_are_immutable(rng):
    v = Volume(rng.random((2, 2, 2)))
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 1.0
