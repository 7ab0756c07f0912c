import io
import struct
import zipfile

import numpy as np
import pytest

from dideeponet import npyio
from dideeponet.errors import FormatError


def test_npy_round_trip_bit_identical(tmp_path, rng):
    for arr in (rng.normal(size=(2, 3, 4)), rng.normal(size=5).astype(np.float32), np.zeros((0, 3))):
        p = tmp_path / "a.npy"
        npyio.write_npy(p, arr)
        back = npyio.read_npy(p)
        assert back.dtype == arr.dtype and back.shape == arr.shape
        assert back.tobytes() == arr.tobytes()


def test_npy_matches_numpy_reader(tmp_path, rng):
    arr = rng.normal(size=(3, 4))
    p = tmp_path / "a.npy"
    npyio.write_npy(p, arr)
    assert np.array_equal(np.load(p, allow_pickle=False), arr)
    np.save(tmp_path / "b.npy", arr)
    assert np.array_equal(npyio.read_npy(tmp_path / "b.npy"), arr)


def test_fortran_order_and_version_2_header():
    arr = np.asfortranarray(np.arange(12.0).reshape(3, 4))
    buf = io.BytesIO()
    np.lib.format.write_array(buf, arr, version=(2, 0))
    buf.seek(0)
    out = npyio._read_npy_stream(buf)
    assert np.array_equal(out, arr)


def test_bad_magic_offset(tmp_path):
    p = tmp_path / "bad.npy"
    p.write_bytes(b"\x93NUMPX" + npyio.npy_bytes(np.zeros(2))[6:])
    with pytest.raises(FormatError) as exc:
        npyio.read_npy(p)
    assert exc.value.offset == 0


def test_bad_version_offset(tmp_path):
    raw = bytearray(npyio.npy_bytes(np.zeros(2)))
    raw[6] = 9
    p = tmp_path / "v.npy"
    p.write_bytes(bytes(raw))
    with pytest.raises(FormatError) as exc:
        npyio.read_npy(p)
    assert exc.value.offset == 6


def test_truncated_data_offset(tmp_path):
    raw = npyio.npy_bytes(np.arange(4.0))
    header_len = len(raw) - 32
    p = tmp_path / "t.npy"
    p.write_bytes(raw[:-5])
    with pytest.raises(FormatError) as exc:
        npyio.read_npy(p)
    assert exc.value.offset == header_len + 27


def test_malformed_header(tmp_path):
    raw = bytearray(npyio.npy_bytes(np.zeros(2)))
    raw[10:14] = b"!!!!"
    p = tmp_path / "h.npy"
    p.write_bytes(bytes(raw))
    with pytest.raises(FormatError) as exc:
        npyio.read_npy(p)
    assert exc.value.offset == 8


def test_dtype_whitelist(tmp_path):
    p = tmp_path / "i.npy"
    npyio.write_npy(p, np.arange(3, dtype=np.int32))
    with pytest.raises(FormatError, match="dtype"):
        npyio.read_npy(p, allowed=npyio.FLOAT_DTYPES)
    big = tmp_path / "be.npy"
    np.save(big, np.zeros(3, dtype=">f8"))
    with pytest.raises(FormatError):
        npyio.read_npy(big, allowed=npyio.FLOAT_DTYPES)


def test_object_arrays_refused(tmp_path):
    p = tmp_path / "o.npy"
    np.save(p, np.array([None, 1], dtype=object), allow_pickle=True)
    with pytest.raises(FormatError, match="object"):
        npyio.read_npy(p)


@pytest.mark.parametrize("compress", [True, False])
def test_npz_round_trip_and_determinism(tmp_path, rng, compress):
    arrays = {"a": rng.normal(size=(2, 2)), "b": rng.normal(size=3).astype(np.float32)}
    p1, p2 = tmp_path / "1.npz", tmp_path / "2.npz"
    npyio.write_npz(p1, arrays, {"meta.json": '{"x": 1}'}, compress=compress)
    npyio.write_npz(p2, arrays, {"meta.json": '{"x": 1}'}, compress=compress)
    assert p1.read_bytes() == p2.read_bytes()
    back, texts = npyio.read_npz(p1)
    assert texts == {"meta.json": '{"x": 1}'}
    for k in arrays:
        assert back[k].tobytes() == arrays[k].tobytes() and back[k].dtype == arrays[k].dtype


def test_npz_readable_by_numpy(tmp_path, rng):
    arr = rng.normal(size=(1, 2, 8, 8, 8))
    p = tmp_path / "x.npz"
    npyio.write_npz(p, {"data": arr})
    with np.load(p, allow_pickle=False) as z:
        assert z.files == ["data"]
        assert z["data"].tobytes() == arr.tobytes()


def test_numpy_written_npz_readable(tmp_path, rng):
    arr = rng.normal(size=(2, 3))
    p = tmp_path / "np.npz"
    np.savez_compressed(p, arr_0=arr, other=arr * 2)
    back, _ = npyio.read_npz(p)
    assert np.array_equal(back["arr_0"], arr) and np.array_equal(back["other"], 2 * arr)


def test_npz_not_a_zip(tmp_path):
    p = tmp_path / "z.npz"
    p.write_bytes(b"not a zip at all")
    with pytest.raises(FormatError) as exc:
        npyio.read_npz(p)
    assert exc.value.offset == 0


def test_stored_member_offset_is_absolute(tmp_path):
    p = tmp_path / "s.npz"
    with zipfile.ZipFile(p, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr("data.npy", b"\x93NUMPX" + npyio.npy_bytes(np.zeros(2))[6:])
    raw = p.read_bytes()
    with pytest.raises(FormatError) as exc:
        npyio.read_npz(p)
    # local header is 30 bytes + name; the bad magic sits right after it
    assert exc.value.offset == 30 + len("data.npy")
    assert raw[exc.value.offset:exc.value.offset + 6] == b"\x93NUMPX"
    assert struct.unpack_from("<I", raw, 0)[0] == 0x04034B50
