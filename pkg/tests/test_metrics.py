import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cslr.metrics import Alignment, corpus_wer, edit_alignment, wer

seqs = st.lists(st.sampled_from("ABCD"), min_size=0, max_size=8)


class TestEditAlignment:
    def test_identical(self):
        a = edit_alignment("ABC", "ABC")
        assert (a.errors, a.matches) == (0, 3)

    def test_empty_hypothesis_all_deletions(self):
        a = edit_alignment(list("ABCD"), [])
        assert a.deletions == 4 and a.errors == 4

    def test_paper_appendix_example(self):
        ref = "A A B C A D".split()
        hyp = "A C C A D B".split()
        a = edit_alignment(ref, hyp)
        assert (a.deletions, a.substitutions, a.insertions) == (1, 1, 1)
        assert a.matches == 4

    def test_counts_invariant(self):
        a = edit_alignment(list("AABA"), list("BBA"))
        assert a.deletions + a.substitutions + a.matches == a.ref_len


class TestWer:
    def test_paper_appendix_fifty_percent(self):
        assert wer("A A B C A D".split(), "A C C A D B".split()) == pytest.approx(0.5)

    def test_identical_zero(self):
        assert wer(list("ABC"), list("ABC")) == 0.0

    def test_can_exceed_one(self):
        assert wer(["A"], ["B", "C"]) == pytest.approx(2.0)

    def test_empty_reference_rejected(self):
        with pytest.raises(ValueError, match="empty reference"):
            wer([], ["A"])


class TestCorpusWer:
    def test_aggregates_totals_not_means(self):
        # 1 error / 1 gloss and 0 errors / 9 glosses -> 1/10, not mean(1, 0)
        pairs = [(["A"], ["B"]), (list("ABCDEFGHI"), list("ABCDEFGHI"))]
        assert corpus_wer(pairs) == pytest.approx(0.1)

    def test_single_pair_matches_wer(self):
        ref, hyp = list("ABAB"), list("AB")
        assert corpus_wer([(ref, hyp)]) == pytest.approx(wer(ref, hyp))


@settings(max_examples=60, deadline=None)
@given(seqs.filter(lambda s: len(s) > 0))
def test_self_wer_zero(s):
    assert wer(s, s) == 0.0


@settings(max_examples=80, deadline=None)
@given(seqs, seqs)
def test_cost_symmetric_with_roles_swapped(a, b):
    fwd = edit_alignment(a, b)
    rev = edit_alignment(b, a)
    assert fwd.errors == rev.errors
    assert fwd.deletions == rev.insertions
    assert fwd.insertions == rev.deletions
    assert fwd.substitutions == rev.substitutions


@settings(max_examples=60, deadline=None)
@given(seqs, seqs)
def test_cost_bounded_by_longer_sequence(a, b):
    assert edit_alignment(a, b).errors <= max(len(a), len(b))


@settings(max_examples=60, deadline=None)
@given(seqs, seqs)
def test_counts_partition_reference(a, b):
    al = edit_alignment(a, b)
    assert al.deletions + al.substitutions + al.matches == len(a)
    assert al.insertions + al.substitutions + al.matches == len(b)
