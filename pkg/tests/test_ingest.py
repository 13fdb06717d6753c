import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from optloss.core import Dataset
from optloss.errors import DataError, FormatError, IoError, SpecError
from optloss.ingest import (
    SyntheticSpec,
    dold_bytes,
    fnv1a64,
    generate,
    load_dataset,
    read_dold_bytes,
    save_dataset,
)


def _header(n, d, magic=b"DOLD", version=1):
    return struct.pack("<4sIQQ", magic, version, n, d)


def test_dold_load_example(tmp_path):
    path = tmp_path / "a.dold"
    path.write_bytes(_header(2, 2) + np.array([1, 0, 0, 1], "<f4").tobytes())
    ds = load_dataset(path)
    assert (ds.n_samples, ds.dim) == (2, 2)
    np.testing.assert_array_equal(ds.values, [[1, 0], [0, 1]])


def test_single_value_file_is_28_bytes(tmp_path):
    path = tmp_path / "one.dold"
    save_dataset(Dataset(np.array([[0.5]])), path)
    assert path.stat().st_size == 28


@pytest.mark.parametrize(
    "blob",
    [
        _header(1, 1, magic=b"DOLX") + b"\0" * 4,
        _header(1, 1, version=2) + b"\0" * 4,
        _header(3, 2) + b"\0" * 20,
        _header(1, 1) + b"\0" * 8,
        b"DOLD",
    ],
)
def test_dold_format_errors(blob):
    with pytest.raises(FormatError):
        read_dold_bytes(blob)


def test_dold_nan_is_data_error():
    payload = np.array([1.0, np.nan], "<f4").tobytes()
    with pytest.raises(DataError, match="row 1"):
        read_dold_bytes(_header(2, 1) + payload)


def test_csv_parse(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("1.0, 2.0\n 3.0,4.0\n")
    ds = load_dataset(path, "csv")
    np.testing.assert_array_equal(ds.values, [[1, 2], [3, 4]])


@pytest.mark.parametrize("text", ["1,2\n3\n", "a,b\n1,2\n", ""])
def test_csv_rejects_bad_input(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(FormatError):
        load_dataset(path, "csv")


def test_io_errors(tmp_path):
    with pytest.raises(IoError):
        load_dataset(tmp_path / "missing.dold")
    with pytest.raises(IoError):
        save_dataset(Dataset(np.zeros((1, 1))), "")


@given(arrays(np.float32, st.tuples(st.integers(1, 20), st.integers(1, 5)),
              elements=st.floats(allow_nan=False, allow_infinity=False, width=32)))
def test_dold_round_trip_bit_exact(values):
    ds = Dataset(values)
    back = read_dold_bytes(dold_bytes(ds))
    assert back == ds
    assert back.values.tobytes() == ds.values.tobytes()


def test_fnv1a64_reference_vectors():
    # Published FNV-1a 64 test vectors.
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_two_point_support():
    ds = generate(SyntheticSpec.two_point(4, 1, a=-1.0, b=1.0, seed=3))
    assert set(np.unique(ds.values)) <= {-1.0, 1.0}


def test_gaussian_mean_clt():
    ds = generate(SyntheticSpec.isotropic_gaussian(10_000, 4, seed=1))
    assert np.all(np.abs(ds.x.mean(axis=0)) < 0.05)


def test_generate_deterministic():
    spec = SyntheticSpec.isotropic_gaussian(50, 3, mean=1.0, scale=2.0, seed=9)
    assert generate(spec) == generate(spec)
    assert generate(spec) != generate(SyntheticSpec.isotropic_gaussian(50, 3, 1.0, 2.0, seed=10))


def test_mixture_draws_only_points():
    pts = [[0.0, 0.0], [1.0, 2.0]]
    ds = generate(SyntheticSpec.finite_mixture(200, pts, [0.25, 0.75], seed=2))
    rows = {tuple(r) for r in ds.values.tolist()}
    assert rows <= {(0.0, 0.0), (1.0, 2.0)}


@pytest.mark.parametrize(
    "spec",
    [
        SyntheticSpec("isotropic_gaussian", 10, 2, 0, {"mean": 0.0, "scale": 0.0}),
        SyntheticSpec("finite_mixture", 10, 1, 0, {"points": [[0.0], [1.0]], "probs": [0.5, 0.6]}),
        SyntheticSpec("bogus", 10, 1, 0, {}),
    ],
)
def test_invalid_specs(spec):
    with pytest.raises(SpecError):
        generate(spec)
