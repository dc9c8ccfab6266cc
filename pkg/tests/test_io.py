"""CSV and schema loading."""

import json

import numpy as np
import pytest

from causal_anova import (
    Continuous,
    Discrete,
    EmptyData,
    InputError,
    LengthMismatch,
    load_dataset,
    read_schema,
    read_table,
)


def write(path, text):
    path.write_text(text)
    return str(path)


class TestReadTable:
    def test_numeric_and_text_columns(self, tmp_path):
        p = write(tmp_path / "t.csv", "y,a,b\n1.5,0,x\n2.5,1,z\n")
        cols = read_table(p)
        assert cols["y"].dtype == np.float64
        assert cols["y"].tolist() == [1.5, 2.5]
        assert cols["b"].dtype == object
        assert cols["b"].tolist() == ["x", "z"]

    def test_whitespace_is_stripped(self, tmp_path):
        p = write(tmp_path / "t.csv", " y , a \n 1 , 2 \n 3 , 4 \n")
        cols = read_table(p)
        assert set(cols) == {"y", "a"}
        assert cols["a"].tolist() == [2.0, 4.0]

    def test_empty_cell(self, tmp_path):
        p = write(tmp_path / "t.csv", "y,a\n1,\n2,3\n")
        with pytest.raises(InputError):
            read_table(p)

    def test_ragged_row(self, tmp_path):
        p = write(tmp_path / "t.csv", "y,a\n1,2\n3\n")
        with pytest.raises(LengthMismatch):
            read_table(p)

    def test_duplicate_header(self, tmp_path):
        p = write(tmp_path / "t.csv", "y,y\n1,2\n")
        with pytest.raises(InputError):
            read_table(p)

    def test_blank_header_name(self, tmp_path):
        p = write(tmp_path / "t.csv", "y,\n1,2\n")
        with pytest.raises(InputError):
            read_table(p)

    def test_empty_file(self, tmp_path):
        p = write(tmp_path / "t.csv", "")
        with pytest.raises(EmptyData):
            read_table(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            read_table(str(tmp_path / "absent.csv"))


class TestReadSchema:
    def test_happy_path(self, tmp_path):
        p = write(
            tmp_path / "s.json",
            json.dumps(
                {
                    "outcome": "y",
                    "factors": {
                        "a": {"kind": "discrete", "levels": [0, 1]},
                        "b": {"kind": "continuous"},
                    },
                }
            ),
        )
        outcome, factors = read_schema(p)
        assert outcome == "y"
        assert factors["a"]["levels"] == [0, 1]
        assert factors["b"]["kind"] == "continuous"

    def test_invalid_json(self, tmp_path):
        p = write(tmp_path / "s.json", "{nope")
        with pytest.raises(InputError):
            read_schema(p)

    def test_missing_keys(self, tmp_path):
        p = write(tmp_path / "s.json", json.dumps({"outcome": "y"}))
        with pytest.raises(InputError):
            read_schema(p)

    def test_bad_kind(self, tmp_path):
        p = write(
            tmp_path / "s.json",
            json.dumps({"outcome": "y", "factors": {"a": {"kind": "ordinal"}}}),
        )
        with pytest.raises(InputError):
            read_schema(p)

    def test_empty_levels(self, tmp_path):
        p = write(
            tmp_path / "s.json",
            json.dumps({"outcome": "y", "factors": {"a": {"kind": "discrete", "levels": []}}}),
        )
        with pytest.raises(InputError):
            read_schema(p)


class TestLoadDataset:
    def test_without_schema_needs_outcome_name(self, tmp_path):
        p = write(tmp_path / "t.csv", "y,a\n1,0\n2,1\n")
        with pytest.raises(InputError):
            load_dataset(p)
        ds = load_dataset(p, outcome="y")
        assert ds.factor_names == ("a",)

    def test_schema_levels_coerce_to_float_for_numeric_columns(self, tmp_path):
        t = write(tmp_path / "t.csv", "y,a\n1,0\n2,1\n")
        s = write(
            tmp_path / "s.json",
            json.dumps({"outcome": "y", "factors": {"a": {"kind": "discrete", "levels": [1, 0]}}}),
        )
        ds = load_dataset(t, s)
        assert ds.kinds[0] == Discrete((1.0, 0.0))
        assert ds.codes(0).tolist() == [1, 0]

    def test_schema_defaults_levels_to_sorted_distinct(self, tmp_path):
        t = write(tmp_path / "t.csv", "y,a\n1,3\n2,1\n3,3\n")
        s = write(
            tmp_path / "s.json",
            json.dumps({"outcome": "y", "factors": {"a": {"kind": "discrete"}}}),
        )
        ds = load_dataset(t, s)
        assert ds.kinds[0] == Discrete((1.0, 3.0))

    def test_schema_continuous_kind(self, tmp_path):
        t = write(tmp_path / "t.csv", "y,a\n1,0.25\n2,0.75\n")
        s = write(
            tmp_path / "s.json",
            json.dumps({"outcome": "y", "factors": {"a": {"kind": "continuous"}}}),
        )
        ds = load_dataset(t, s)
        assert ds.kinds[0] == Continuous()

    def test_extra_csv_columns_are_ignored(self, tmp_path):
        t = write(tmp_path / "t.csv", "y,a,junk\n1,0,p\n2,1,q\n")
        s = write(
            tmp_path / "s.json",
            json.dumps({"outcome": "y", "factors": {"a": {"kind": "discrete"}}}),
        )
        ds = load_dataset(t, s)
        assert ds.factor_names == ("a",)

    def test_schema_missing_column(self, tmp_path):
        t = write(tmp_path / "t.csv", "y,a\n1,0\n2,1\n")
        s = write(
            tmp_path / "s.json",
            json.dumps({"outcome": "y", "factors": {"zz": {"kind": "discrete"}}}),
        )
        with pytest.raises(InputError):
            load_dataset(t, s)

    def test_outcome_given_twice_must_agree(self, tmp_path):
        t = write(tmp_path / "t.csv", "y,a\n1,0\n2,1\n")
        s = write(
            tmp_path / "s.json",
            json.dumps({"outcome": "y", "factors": {"a": {"kind": "discrete"}}}),
        )
        assert load_dataset(t, s, outcome="y").n == 2
        with pytest.raises(InputError):
            load_dataset(t, s, outcome="a")
