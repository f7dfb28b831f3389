import numpy as np
import pytest

from mcfront import SpeakerEmbedding, load_embedding, load_raster, save_embedding, save_raster


@pytest.mark.parametrize(
    "dtype", [np.float32, np.float64, np.complex64, np.complex128]
)
def test_round_trip_dtypes(tmp_path, dtype):
    rng = np.random.default_rng(0)
    arr = rng.standard_normal((3, 4, 5))
    if np.issubdtype(dtype, np.complexfloating):
        arr = arr + 1j * rng.standard_normal((3, 4, 5))
    arr = arr.astype(dtype)
    path = tmp_path / "a.ras"
    save_raster(arr, path)
    loaded = load_raster(path)
    assert loaded.dtype == dtype
    np.testing.assert_array_equal(loaded, arr)


def test_round_trip_1d(tmp_path):
    arr = np.arange(7, dtype=np.float64)
    save_raster(arr, tmp_path / "v.ras")
    np.testing.assert_array_equal(load_raster(tmp_path / "v.ras"), arr)


def test_unsupported_dtype(tmp_path):
    with pytest.raises(ValueError, match="dtype"):
        save_raster(np.zeros(3, dtype=np.int32), tmp_path / "x.ras")


def test_bad_magic(tmp_path):
    (tmp_path / "x.ras").write_bytes(b"NOPE" + b"\0" * 10)
    with pytest.raises(ValueError, match="magic"):
        load_raster(tmp_path / "x.ras")


def test_truncated_payload(tmp_path):
    arr = np.ones((4, 4), dtype=np.float32)
    path = tmp_path / "t.ras"
    save_raster(arr, path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_raster(path)


def test_embedding_sidecar_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    emb = SpeakerEmbedding(rng.standard_normal(128).astype(np.float32), "alice")
    path = tmp_path / "alice.emb"
    save_embedding(emb, path)
    loaded = load_embedding(path)
    np.testing.assert_array_equal(loaded.vector, emb.vector)
    assert loaded.source_id == "alice"


def test_embedding_sidecar_size_validated(tmp_path):
    (tmp_path / "bad.emb").write_bytes(b"\0" * 100)
    with pytest.raises(ValueError, match="128"):
        load_embedding(tmp_path / "bad.emb")
