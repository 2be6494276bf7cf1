import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cjsub.data import (CaptureHistory, CompressedDataset, ParseError,
                        StratumKey, UNIFORM_KEY, cap_multiplicity, first_last,
                        parse_dataset, stratify)


def hist(*bits, age=None):
    return CaptureHistory(tuple(bits), cohort_age=age)


class TestCaptureHistory:
    def test_first_last(self):
        assert first_last(hist(0, 1, 1, 0)) == (2, 3)
        assert first_last(hist(1, 0, 0, 0)) == (1, 1)
        assert first_last(hist(0, 0, 0, 1)) == (4, 4)

    def test_rejects_all_zero(self):
        with pytest.raises(ValueError):
            hist(0, 0, 0)

    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            hist(1, 2, 0)

    def test_rejects_negative_cohort_age(self):
        with pytest.raises(ValueError):
            hist(1, 0, age=-1)


class TestParse:
    def test_duplicate_collapse(self):
        data = parse_dataset("1,0,1\n1,0,1\n0,1,0\n")
        assert data.n_entries == 2
        assert sorted(n for _, n in data.entries) == [1, 2]
        assert data.total_individuals == 3

    def test_non_binary_cell(self):
        with pytest.raises(ParseError, match="non-binary cell at line 1"):
            parse_dataset("1,2,0\n")

    def test_all_zero_row(self):
        with pytest.raises(ParseError, match="line 2"):
            parse_dataset("1,0\n0,0\n")

    def test_inconsistent_length(self):
        with pytest.raises(ParseError, match="inconsistent row length at line 2"):
            parse_dataset("1,0,1\n1,0\n")

    def test_header_and_cohort_age(self):
        data = parse_dataset("o1,o2,o3,cohort_age\n1,0,1,2\n1,0,1,3\n")
        assert data.n_entries == 2
        assert all(h.cohort_age in (2, 3) for h, _ in data.entries)

    def test_bytes_input(self):
        data = parse_dataset(b"1,0\n0,1\n")
        assert data.total_individuals == 2

    def test_roundtrip_csv(self, tmp_path):
        data = parse_dataset("1,0,1\n1,0,1\n0,1,0\n")
        f = tmp_path / "d.csv"
        data.to_csv(str(f))
        again = parse_dataset(f.read_text())
        assert again == data


class TestStratify:
    def test_first_last_groups(self):
        data = parse_dataset("1,0,0\n1,1,0\n0,1,1\n")
        strata = stratify(data, "first_last")
        sizes = {(k.first, k.last): len(v) for k, v in strata.items()}
        assert sizes == {(1, 1): 1, (1, 2): 1, (2, 3): 1}

    def test_uniform_single_stratum(self):
        data = parse_dataset("1,0,0\n1,1,0\n0,1,1\n")
        strata = stratify(data, "uniform")
        assert list(strata) == [UNIFORM_KEY]
        assert len(strata[UNIFORM_KEY]) == data.total_individuals

    def test_cohort_scheme_requires_age(self):
        data = parse_dataset("1,0\n0,1\n")
        with pytest.raises(ValueError, match="cohort_age"):
            stratify(data, "first_last_cohort")

    def test_slot_counts_sum(self):
        data = parse_dataset("1,0,1\n1,0,1\n0,1,0\n1,1,1\n")
        for scheme in ("uniform", "first_last"):
            strata = stratify(data, scheme)
            assert sum(len(v) for v in strata.values()) == data.total_individuals

    def test_stratum_key_invariant(self):
        with pytest.raises(ValueError):
            StratumKey(3, 2)


class TestCapMultiplicity:
    def test_splits(self):
        base = CompressedDataset.from_rows([hist(1, 0)] * 450)
        capped = cap_multiplicity(base, 200)
        assert [n for _, n in capped.entries] == [200, 200, 50]
        assert capped.total_individuals == 450

    def test_noop_when_under_cap(self):
        base = CompressedDataset.from_rows([hist(1, 0)] * 5 + [hist(0, 1)])
        assert cap_multiplicity(base, 5) is base

    def test_rejects_bad_cap(self):
        base = CompressedDataset.from_rows([hist(1, 0)])
        with pytest.raises(ValueError):
            cap_multiplicity(base, 0)


@st.composite
def history_rows(draw):
    T = draw(st.integers(2, 6))
    n = draw(st.integers(1, 30))
    rows = []
    for _ in range(n):
        bits = draw(st.lists(st.integers(0, 1), min_size=T, max_size=T)
                    .filter(lambda b: any(b)))
        rows.append(CaptureHistory(tuple(bits)))
    return rows


@given(history_rows())
@settings(max_examples=50, deadline=None)
def test_compress_expand_roundtrip(rows):
    data = CompressedDataset.from_rows(rows)
    assert sorted(h.occasions for h in data.expand()) == \
        sorted(h.occasions for h in rows)


@given(history_rows(), st.integers(1, 10))
@settings(max_examples=50, deadline=None)
def test_cap_preserves_multiset(rows, cap):
    data = CompressedDataset.from_rows(rows)
    capped = cap_multiplicity(data, cap)
    assert capped.total_individuals == data.total_individuals
    assert all(n <= cap for _, n in capped.entries)
    assert sorted(h.occasions for h in capped.expand()) == \
        sorted(h.occasions for h in data.expand())
