import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nrc import imageio


def ramp(h=3, w=5):
    return np.arange(h * w * 3, dtype=np.float32).reshape(h, w, 3) / 7.0


class TestPfm:
    def test_roundtrip(self, tmp_path):
        img = ramp()
        imageio.write_pfm(tmp_path / "a.pfm", img)
        np.testing.assert_array_equal(imageio.read_pfm(tmp_path / "a.pfm"), img)

    def test_layout(self, tmp_path):
        img = ramp(2, 3)
        imageio.write_pfm(tmp_path / "a.pfm", img)
        raw = (tmp_path / "a.pfm").read_bytes()
        header = b"PF\n3 2\n-1.0\n"
        assert raw.startswith(header)
        body = np.frombuffer(raw[len(header):], dtype="<f4").reshape(2, 3, 3)
        # first stored scanline is the bottom row
        np.testing.assert_array_equal(body[0], img[1])

    def test_big_endian_input(self, tmp_path):
        img = ramp(2, 2)
        (tmp_path / "b.pfm").write_bytes(b"PF\n2 2\n1.0\n" + img[::-1].astype(">f4").tobytes())
        np.testing.assert_array_equal(imageio.read_pfm(tmp_path / "b.pfm"), img)

    def test_truncated(self, tmp_path):
        imageio.write_pfm(tmp_path / "a.pfm", ramp())
        raw = (tmp_path / "a.pfm").read_bytes()
        (tmp_path / "t.pfm").write_bytes(raw[:-4])
        with pytest.raises(ValueError):
            imageio.read_pfm(tmp_path / "t.pfm")

    def test_rejects_grey(self, tmp_path):
        (tmp_path / "g.pfm").write_bytes(b"Pf\n1 1\n-1.0\n" + b"\0" * 4)
        with pytest.raises(ValueError):
            imageio.read_pfm(tmp_path / "g.pfm")

    def test_rejects_bad_shape(self, tmp_path):
        with pytest.raises(ValueError):
            imageio.write_pfm(tmp_path / "x.pfm", np.zeros((4, 4)))

    @settings(max_examples=20)
    @given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**31))
    def test_roundtrip_property(self, h, w, seed):
        import tempfile
        from pathlib import Path

        img = np.random.default_rng(seed).normal(size=(h, w, 3)).astype(np.float32)
        with tempfile.TemporaryDirectory() as d:
            imageio.write_pfm(Path(d) / "p.pfm", img)
            np.testing.assert_array_equal(imageio.read_pfm(Path(d) / "p.pfm"), img)


class TestPpm:
    @pytest.mark.parametrize("value, expected", [(0.0, 0), (1.0, 255), (0.5, 186), (2.0, 255),
                                                 (-1.0, 0), (np.nan, 0)])
    def test_encoding(self, value, expected):
        assert imageio.to_8bit(np.full((1, 1, 3), value))[0, 0, 0] == expected

    def test_roundtrip(self, tmp_path):
        img = np.random.default_rng(0).random((4, 6, 3))
        imageio.write_ppm(tmp_path / "a.ppm", img)
        np.testing.assert_array_equal(imageio.read_ppm(tmp_path / "a.ppm"), imageio.to_8bit(img))

    def test_header(self, tmp_path):
        imageio.write_ppm(tmp_path / "a.ppm", np.zeros((2, 3, 3)))
        raw = (tmp_path / "a.ppm").read_bytes()
        assert raw == b"P6\n3 2\n255\n" + bytes(18)
