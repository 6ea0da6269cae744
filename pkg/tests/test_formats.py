import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from idforge import formats
from idforge.errors import ParseError
from idforge.story import StorySpec

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite))
def test_text_round_trip_exact(values):
    back, labels = formats.loads_embeddings_text(formats.dumps_embeddings_text(values))
    assert labels is None
    assert np.array_equal(back, values)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(allow_nan=False, allow_infinity=False, width=32)))
def test_binary_round_trip_exact_for_float32_values(values):
    back = formats.loads_embeddings_bin(formats.dumps_embeddings_bin(values.astype(np.float64)))
    assert np.array_equal(back, values.astype(np.float64))


def test_binary_layout():
    data = formats.dumps_embeddings_bin([[1.0, 2.0, 3.0]])
    assert data[:4] == b"EMBF" and data[4] == 1
    assert struct.unpack_from("<II", data, 5) == (1, 3)
    assert struct.unpack_from("<3f", data, 13) == (1.0, 2.0, 3.0)
    assert len(data) == 13 + 12


def test_text_layout_and_labels():
    text = formats.dumps_embeddings_text([[0.5, -1.0], [2.0, 3.0]], [True, False])
    assert text.splitlines()[0] == "EMB v1 2 2"
    assert text.splitlines()[-1] == "LABELS 1 0"
    values, labels = formats.loads_embeddings_text(text)
    assert list(labels) == [True, False]


def test_file_round_trips(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 7))
    lab = rng.random(5) < 0.5
    t = tmp_path / "a.emb"
    formats.write_embeddings(t, x, lab, "text")
    back, bl = formats.read_embeddings(t)
    assert np.array_equal(back, x) and np.array_equal(bl, lab)
    b = tmp_path / "a.embf"
    written = formats.write_embeddings(b, x, lab, "bin")
    assert written == [b, tmp_path / "a.embf.labels"]
    back, bl = formats.read_embeddings(b)
    assert np.array_equal(back, x.astype(np.float32).astype(np.float64)) and np.array_equal(bl, lab)


def test_latent_and_mask_round_trip(tmp_path):
    g = np.random.default_rng(1).standard_normal((8, 8)).astype(np.float32).astype(np.float64)
    formats.write_latent(tmp_path / "z.embf", g)
    assert np.array_equal(formats.read_latent(tmp_path / "z.embf"), g)
    formats.write_latent(tmp_path / "z.emb", g, "text")
    assert np.array_equal(formats.read_latent(tmp_path / "z.emb"), g)
    m = np.random.default_rng(2).random((9, 9)) < 0.5
    formats.write_mask(tmp_path / "m.pgm", m)
    assert np.array_equal(formats.read_mask(tmp_path / "m.pgm"), m)
    with pytest.raises(ValueError):
        formats.write_latent(tmp_path / "bad.embf", np.zeros((2, 3)))


def test_pgm_threshold_and_comments():
    data = b"P5\n# made by hand\n3 1\n255\n" + bytes([0, 127, 128])
    assert list(formats.loads_pgm(data)[0]) == [False, False, True]


def test_story_round_trip(tmp_path):
    spec = StorySpec(["α woman"], ["[0] smiles"], 9)
    formats.write_story(tmp_path / "s.json", spec)
    assert formats.read_story(tmp_path / "s.json") == spec


def test_csv_round_trip(tmp_path):
    rows = [{"a": 0.1, "b": "x"}, {"a": 1e-300, "b": "y,z"}]
    formats.write_csv(tmp_path / "t.csv", rows)
    back = formats.read_csv(tmp_path / "t.csv")
    assert back == rows
    with pytest.raises(ValueError):
        formats.dumps_csv([])


@pytest.mark.parametrize(
    "text,where",
    [
        ("", "line 1"),
        ("EMB v2 1 1\n1\n", "line 1"),
        ("EMB v1 2 2\n1 2\n", "line 3"),
        ("EMB v1 1 2\n1 x\n", "line 2"),
        ("EMB v1 1 2\n1 2 3\n", "line 2"),
        ("EMB v1 1 1\n1\nLABELS 1 1\n", "line 3"),
        ("EMB v1 1 1\n1\nnoise\n", "line 3"),
    ],
)
def test_text_parse_errors_have_location(text, where):
    with pytest.raises(ParseError, match=where):
        formats.loads_embeddings_text(text, "f.emb")


def test_binary_parse_errors():
    good = formats.dumps_embeddings_bin([[1.0, 2.0]])
    with pytest.raises(ParseError, match="offset"):
        formats.loads_embeddings_bin(good[:7])
    with pytest.raises(ParseError, match="offset 0"):
        formats.loads_embeddings_bin(b"XXXX" + good[4:])
    with pytest.raises(ParseError, match="offset 4"):
        formats.loads_embeddings_bin(good[:4] + b"\x02" + good[5:])
    with pytest.raises(ParseError, match="offset"):
        formats.loads_embeddings_bin(good + b"\x00")


def test_story_parse_errors(tmp_path):
    p = tmp_path / "s.json"
    p.write_text('{"characters": [], "prompts": [\n  "a" "b"]}')
    with pytest.raises(ParseError, match="line 2 column"):
        formats.read_story(p)
    for doc in ('[]', '{"prompts": "x"}', '{"prompts": ["x"], "seed": "1"}', '{"prompts": ["x"], "characters": [1]}'):
        p.write_text(doc)
        with pytest.raises(ParseError):
            formats.read_story(p)


def test_mask_parse_errors():
    with pytest.raises(ParseError):
        formats.loads_pgm(b"P2\n1 1\n255\n\x00")
    with pytest.raises(ParseError):
        formats.loads_pgm(b"P5\n2 2\n255\n\x00")
    with pytest.raises(ParseError):
        formats.loads_pgm(b"P5\n1 1\n15\n\x00")
