import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from surrofuse.data import (
    EXPERIMENTAL,
    OBSERVATIONAL,
    AteEstimate,
    LabeledSample,
    SampleError,
    load_csv,
    read_keyvalue,
    save_csv,
    validate,
    write_schema,
)


def _exp(n=3, p=2):
    X = np.arange(n * p, dtype=float).reshape(n, p)
    return LabeledSample(X, np.array([0, 1, 0] * n)[:n], np.linspace(0, 1, n), EXPERIMENTAL)


def test_validate_identity():
    s = _exp()
    assert validate(s) is s
    assert (s.n, s.p) == (3, 2)


def test_missing_primary():
    s = LabeledSample(np.zeros((3, 1)), [0, 1, 0], [1.0, 2.0, 3.0], OBSERVATIONAL)
    with pytest.raises(SampleError, match="missing primary outcome"):
        validate(s)


def test_experimental_rejects_primary():
    s = LabeledSample(np.zeros((3, 1)), [0, 1, 0], [1.0, 2.0, 3.0], EXPERIMENTAL,
                      primary=[1.0, 1.0, 1.0])
    with pytest.raises(SampleError):
        validate(s)


def test_non_binary_treatment_names_row():
    w = np.array([0, 1, 0, 1, 2, 0], dtype=float)
    s = LabeledSample(np.zeros((6, 1)), w, np.zeros(6), EXPERIMENTAL)
    with pytest.raises(SampleError, match="row 5"):
        validate(s)


def test_non_binary_instrument():
    s = LabeledSample(np.zeros((2, 1)), [0, 1], [0, 0], EXPERIMENTAL, instrument=[0, 0.5])
    with pytest.raises(SampleError, match="instrument"):
        validate(s)


def test_non_finite_and_dimensions():
    X = np.zeros((3, 2))
    X[1, 1] = np.nan
    with pytest.raises(SampleError, match="row 2.*x2"):
        validate(LabeledSample(X, [0, 1, 0], [0, 0, 0], EXPERIMENTAL))
    with pytest.raises(SampleError, match="dimension mismatch"):
        validate(LabeledSample(np.zeros((3, 2)), [0, 1], [0, 0, 0], EXPERIMENTAL))
    with pytest.raises(SampleError):
        validate(LabeledSample(np.zeros((0, 2)), [], [], EXPERIMENTAL))


def test_immutable():
    s = _exp()
    with pytest.raises(ValueError):
        s.covariates[0, 0] = 1.0
    with pytest.raises(AttributeError):
        s.group = OBSERVATIONAL


def test_ate_estimate_finite():
    with pytest.raises(SampleError):
        AteEstimate(float("nan"), "x", 1, 1)
    assert float(AteEstimate(1.5, "x", 1, 1)) == 1.5


def test_load_csv_example(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("x1,w,ys\n0.1,1,2.0\n-0.3,0,1.1\n0.5,1,3.2")
    s = load_csv(path, {"x1": "covariate", "w": "treatment", "ys": "surrogate"}, EXPERIMENTAL)
    assert (s.n, s.p) == (3, 1)
    np.testing.assert_array_equal(s.covariates[:, 0], [0.1, -0.3, 0.5])
    np.testing.assert_array_equal(s.treatment, [1, 0, 1])
    np.testing.assert_array_equal(s.surrogate, [2.0, 1.1, 3.2])


def test_load_csv_errors(tmp_path):
    schema = {"x1": "covariate", "w": "treatment", "ys": "surrogate"}
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(SampleError, match="no data rows"):
        load_csv(empty, schema)
    header_only = tmp_path / "header.csv"
    header_only.write_text("x1,w,ys\n")
    with pytest.raises(SampleError, match="no data rows"):
        load_csv(header_only, schema)
    na = tmp_path / "na.csv"
    na.write_text("x1,w,ys\n0.1,1,2.0\n0.2,0,NA\n")
    with pytest.raises(SampleError, match=r"line 3, column 'ys'"):
        load_csv(na, schema)
    with pytest.raises(SampleError, match="unknown column role"):
        load_csv(na, {"x1": "feature", "w": "treatment", "ys": "surrogate"})


def test_load_csv_categorical(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("x1,school,w,ys,extra\n1,b,1,2,9\n2,a,0,1,9\n3,c,1,0,9\n")
    s = load_csv(path, {"x1": "covariate", "school": "categorical", "w": "treatment",
                        "ys": "surrogate"})
    assert s.covariate_names == ("x1", "school=b", "school=c")
    np.testing.assert_array_equal(s.covariates[:, 1:], [[1, 0], [0, 0], [0, 1]])


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@given(st.integers(1, 12).flatmap(lambda n: st.tuples(
    hnp.arrays(float, (n, 3), elements=finite),
    hnp.arrays(float, n, elements=st.sampled_from([0.0, 1.0])),
    hnp.arrays(float, n, elements=finite),
    hnp.arrays(float, n, elements=finite))))
@settings(max_examples=40, deadline=None)
def test_csv_round_trip(tmp_path_factory, cols):
    X, w, ys, yp = cols
    s = LabeledSample(X, w, ys, OBSERVATIONAL, primary=yp, location=w[::-1].copy())
    path = tmp_path_factory.mktemp("rt") / "s.csv"
    schema = save_csv(s, path)
    back = load_csv(path, schema, OBSERVATIONAL)
    for name in ("covariates", "treatment", "surrogate", "primary", "location"):
        np.testing.assert_array_equal(getattr(back, name), getattr(s, name))
    assert back.covariate_names == s.covariate_names
    assert validate(validate(back)) is back


def test_subset():
    s = LabeledSample(np.arange(8.0).reshape(4, 2), [0, 1, 0, 1], [1, 2, 3, 4],
                      OBSERVATIONAL, primary=[5, 6, 7, 8], location=[1, 1, 0, 0])
    sub = s.subset([3, 0], EXPERIMENTAL, drop_primary=True, drop_location=True)
    assert sub.group == EXPERIMENTAL and sub.primary is None and sub.location is None
    np.testing.assert_array_equal(sub.surrogate, [4, 1])
    validate(sub)


def test_keyvalue(tmp_path):
    path = tmp_path / "k.txt"
    path.write_text("# comment\na = 1\n\nb=two # trailing\n")
    assert read_keyvalue(path) == {"a": "1", "b": "two"}
    path.write_text("a = 1\na = 2\n")
    with pytest.raises(SampleError, match="duplicate"):
        read_keyvalue(path)
    write_schema({"x": "covariate"}, path)
    assert read_keyvalue(path) == {"x": "covariate"}
