import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from copula_em import model_io
from copula_em.copula import CopulaModel
from copula_em.data import IncompleteDataset, read_csv, write_csv
from copula_em.errors import ConfigurationError, IngestionError
from copula_em.marginals import MixtureMarginal

from conftest import random_model

cells = st.one_of(st.floats(allow_nan=False, allow_infinity=False), st.just(float("nan")))


@settings(max_examples=60)
@given(st.integers(1, 4).flatmap(lambda p: st.lists(st.lists(cells, min_size=p, max_size=p), max_size=12)))
def test_csv_roundtrip(rows):
    p = len(rows[0]) if rows else 2
    x = np.array(rows, dtype=float).reshape(len(rows), p)
    data = IncompleteDataset(x)
    back = read_csv(io.StringIO(write_csv(data)))
    np.testing.assert_array_equal(back.observed, data.observed)
    np.testing.assert_array_equal(back.values[back.observed], x[data.observed])
    assert back.columns == data.columns
    assert write_csv(back) == write_csv(data)


def test_read_csv_missing_and_errors():
    d = read_csv(io.StringIO("a,b\n1.5,\n,2\n\n3,4\n"))
    assert d.columns == ("a", "b")
    np.testing.assert_array_equal(d.observed, [[True, False], [False, True], [True, True]])
    with pytest.raises(IngestionError, match="line 3, column 'b'"):
        read_csv(io.StringIO("a,b\n1,2\n3,x\n"))
    with pytest.raises(IngestionError, match="expected 2 fields"):
        read_csv(io.StringIO("a,b\n1,2,3\n"))
    with pytest.raises(IngestionError, match="empty"):
        read_csv(io.StringIO(""))
    with pytest.raises(IngestionError, match="non-finite"):
        read_csv(io.StringIO("a\ninf\n"))


def test_header_only_csv():
    d = read_csv(io.StringIO("a,b\n"))
    assert d.n == 0 and d.p == 2


def test_dataset_validation():
    with pytest.raises(ConfigurationError):
        IncompleteDataset(np.zeros(3))
    with pytest.raises(ConfigurationError):
        IncompleteDataset(np.zeros((2, 2)), ("a",))
    d = IncompleteDataset([[1.0, np.nan]])
    assert d.partition(0).mis == (1,)
    np.testing.assert_array_equal(d.column_observed(1), [])


def test_write_csv_extra_columns():
    d = IncompleteDataset([[1.0, np.nan]], ("u", "v"))
    assert write_csv(d, extra=[("row", [7])]) == "row,u,v\n7,1.0,\n"


def test_model_roundtrip_byte_identical(rng):
    for p in (1, 2, 4):
        model = random_model(rng, p)
        text = model_io.dumps(model, fit={"iterations": 25, "final_eps": 1.234e-6, "seed": 3})
        back, cols, fit = model_io.loads(text)
        np.testing.assert_array_equal(back.sigma, model.sigma)
        assert all(a == b for a, b in zip(back.marginals, model.marginals))
        assert model_io.dumps(back, cols, fit) == text


def test_model_file_roundtrip(tmp_path, rng):
    model = random_model(rng, 2)
    path = tmp_path / "m.json"
    model_io.save(path, model, ["a", "b"], {"seed": 1})
    first = path.read_text()
    m2, cols, fit = model_io.load(path)
    model_io.save(path, m2, cols, fit)
    assert path.read_text() == first and cols == ["a", "b"]


@pytest.mark.parametrize("text", [
    "not json",
    "{}",
    '{"format": "copula_em_model_v1"}',
    '{"format": "copula_em_model_v1", "p": 2, "columns": ["a", "b"], "sigma": [[1, 0], [0, 1]],'
    ' "marginals": [{"g": 1, "centers": [0], "bandwidth": 1}], "fit": {}}',
    '{"format": "copula_em_model_v1", "p": 1, "columns": ["a"], "sigma": [[2]],'
    ' "marginals": [{"g": 1, "centers": [0], "bandwidth": 1}], "fit": {}}',
    '{"format": "copula_em_model_v1", "p": 1, "columns": ["a"], "sigma": [[1]],'
    ' "marginals": [{"g": 1, "centers": [0], "bandwidth": -1}], "fit": {}}',
])
def test_corrupt_model_rejected(text):
    with pytest.raises(IngestionError):
        model_io.loads(text)


def test_model_document_layout():
    m = MixtureMarginal([0.0, 1.0], 0.5)
    doc = model_io.to_document(CopulaModel([[1.0, 0.25], [0.25, 1.0]], [m, m]), ["a", "b"], {"seed": 0})
    assert list(doc) == ["format", "p", "columns", "sigma", "marginals", "fit"]
    assert doc["sigma"] == [[1.0, 0.25], [0.25, 1.0]]
    assert doc["marginals"][0] == {"g": 2, "centers": [0.0, 1.0], "bandwidth": 0.5}
