import numpy as np
import pytest
from PIL import Image

from occface import labels as L
from occface.fileio import (FormatError, format_landmarks, overlay, parse_landmarks, read_label_png,
                            read_landmarks, read_rgb_png, to_uint8, write_label_png, write_landmarks,
                            write_rgb_png)


def test_landmark_round_trip(tmp_path):
    lmk = L.template_landmarks((64, 64), 40) + 0.1234567
    p = tmp_path / "l.txt"
    write_landmarks(p, lmk)
    np.testing.assert_allclose(read_landmarks(p), lmk, atol=5e-7)
    assert p.read_text().count("\n") == 68


def test_short_landmark_file_reports_count(tmp_path):
    text = format_landmarks(L.template_landmarks((64, 64), 40))
    short = "".join(text.splitlines(keepends=True)[:67])
    p = tmp_path / "short.txt"
    p.write_text(short)
    with pytest.raises(FormatError, match=r"expected 68 landmark lines, found 67") as exc:
        read_landmarks(p)
    assert f"byte offset {len(short.encode())}" in str(exc.value)
    assert str(p) in str(exc.value)


def test_bad_landmark_line_reports_line_and_offset():
    lines = ["1 2\n", "\n", "3 x\n"]
    with pytest.raises(FormatError, match=r"line 3 \(byte offset 5\)"):
        parse_landmarks("".join(lines))
    with pytest.raises(FormatError, match="line 1"):
        parse_landmarks("1 2 3\n")
    with pytest.raises(FormatError):
        parse_landmarks("nan 2\n")


def test_blank_lines_are_skipped():
    text = format_landmarks(np.arange(136.0).reshape(68, 2))
    np.testing.assert_array_equal(parse_landmarks("\n" + text.replace("\n", "\n\n")), np.arange(136.0).reshape(68, 2))


def test_rgb_png_round_trip(tmp_path, rng):
    img = rng.uniform(0, 1, (9, 7, 3))
    p = tmp_path / "a.png"
    write_rgb_png(p, img)
    back = read_rgb_png(p)
    assert back.shape == (9, 7, 3)
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12
    write_rgb_png(p, to_uint8(back))
    np.testing.assert_array_equal(read_rgb_png(p), back)
    with pytest.raises(ValueError):
        write_rgb_png(p, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        to_uint8([np.nan])


def test_label_png_round_trip_and_validation(tmp_path, rng):
    m = rng.integers(0, 12, (5, 6)).astype(np.uint8)
    p = tmp_path / "m.png"
    write_label_png(p, m)
    np.testing.assert_array_equal(read_label_png(p), m)
    Image.fromarray(np.full((3, 3), 200, np.uint8), mode="L").save(tmp_path / "bad.png")
    with pytest.raises(FormatError):
        read_label_png(tmp_path / "bad.png")
    Image.fromarray(np.zeros((3, 3, 3), np.uint8), mode="RGB").save(tmp_path / "rgb.png")
    with pytest.raises(FormatError, match="single-channel"):
        read_label_png(tmp_path / "rgb.png")
    (tmp_path / "junk.png").write_bytes(b"not a png")
    with pytest.raises(FormatError):
        read_rgb_png(tmp_path / "junk.png")


def test_overlay():
    a = np.ones((2, 2, 3))
    b = np.zeros((2, 2, 3))
    cov = np.array([[True, False], [False, False]])
    out = overlay(a, b, cov)
    assert out[0, 0, 0] == 0.5 and out[1, 1, 0] == 0.0
    np.testing.assert_array_equal(overlay(a, b, alpha=1.0), a)
