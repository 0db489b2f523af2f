import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from foelm.exceptions import ModelParseError
from foelm.model import FoeModel, builtin_model, load_model, parse_model, random_model, serialize_model

ONE_EXPERT = "FOE\n2 1\n1.0\n1 -1 -1 1\n"


def test_parse_empty_model():
    model = parse_model("FOE\n1 0\n")
    assert model.m == 1 and model.K == 0 and model.experts == []


def test_parse_one_expert():
    model = parse_model(ONE_EXPERT)
    assert model.m == 2 and model.K == 1
    alpha, b = model.experts[0]
    assert alpha == 1.0
    assert b.tolist() == [1, -1, -1, 1]


def test_whitespace_insensitive_stream():
    text = "FOE\n2 2\n0.5 1\n2 3\n4   \n\n 0.25\t-1 -2\n-3 -4\n"
    model = parse_model(text)
    assert model.alphas.tolist() == [0.5, 0.25]
    assert model.filters[1].ravel().tolist() == [-1, -2, -3, -4]


def test_serialize_exact_text():
    assert serialize_model(parse_model("FOE\n1 0\n")) == "FOE\n1 0\n"
    assert serialize_model(parse_model(ONE_EXPERT)) == ONE_EXPERT


@pytest.mark.parametrize(
    "text, line",
    [
        ("FOX\n1 0\n", 1),
        ("FOE\n", 2),
        ("FOE\n2\n", 2),
        ("FOE\n2 1\n1.0\n1 2 3\n", 4),
        ("FOE\n2 1\n1.0\n1 2 3 4 5\n", 4),
        ("FOE\n1 1\n-1\n1\n", 3),
        ("FOE\n1 1\n0\n1\n", 3),
        ("FOE\n1 1\nnan\n1\n", 3),
        ("FOE\n1 1\n1\ninf\n", 4),
        ("FOE\n1 1\n1\nabc\n", 4),
    ],
)
def test_parse_errors_name_line(text, line):
    with pytest.raises(ModelParseError) as info:
        parse_model(text)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_model_invariants_enforced():
    with pytest.raises(ValueError):
        FoeModel(2, [1.0], [[1, 2, 3]])
    with pytest.raises(ValueError):
        FoeModel(2, [0.0], [[1, 2, 3, 4]])
    with pytest.raises(ValueError):
        FoeModel(0, [], [])


def test_builtin_diff2x2():
    model = builtin_model("diff2x2")
    assert model.K == 3 and model.m == 2
    assert all(len(b) == 4 for _, b in model.experts)
    assert [b.tolist() for _, b in model.experts] == [[1, -1, 0, 0], [1, 0, -1, 0], [1, 0, 0, -1]]
    assert model.alphas.tolist() == [1.0, 1.0, 1.0]


def test_builtin_unknown():
    with pytest.raises(ValueError):
        builtin_model("foo")


def test_random_model_normalised():
    model = random_model(3, 8, seed=1)
    assert model.K == 8
    np.testing.assert_allclose(np.linalg.norm(model.filters.reshape(8, 9), axis=1), 1.0)
    np.testing.assert_allclose(model.filters.reshape(8, 9).sum(axis=1), 0.0, atol=1e-12)
    assert model == random_model(3, 8, seed=1)


def test_load_model_sources(tmp_path):
    path = tmp_path / "m.foe"
    path.write_text(ONE_EXPERT)
    assert load_model(str(path)) == parse_model(ONE_EXPERT)
    assert load_model("diff2x2") == builtin_model("diff2x2")
    assert load_model("random:3x8:4") == random_model(3, 8, seed=4)


finite = st.floats(allow_nan=False, allow_infinity=False, width=64, min_value=-1e300, max_value=1e300)
positive = st.floats(min_value=1e-300, max_value=1e300, allow_nan=False)


@st.composite
def models(draw):
    m = draw(st.integers(1, 4))
    K = draw(st.integers(0, 4))
    alphas = draw(st.lists(positive, min_size=K, max_size=K))
    filters = draw(st.lists(st.lists(finite, min_size=m * m, max_size=m * m), min_size=K, max_size=K))
    return FoeModel(m, alphas, np.array(filters).reshape(K, m, m))


@settings(max_examples=200, deadline=None)
@given(models())
def test_round_trip_value_exact(model):
    text = serialize_model(model)
    again = parse_model(text)
    assert again == model
    assert serialize_model(again) == text
