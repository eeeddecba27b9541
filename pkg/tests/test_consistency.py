import itertools

import pytest
from conftest import wrap
from hypothesis import given
from hypothesis import strategies as st

import corpus
from pkiaudit.caa import CaaMatchState, MatchState
from pkiaudit.certs import ChainVerdict
from pkiaudit.consistency import (
    NAME_MISMATCH,
    STALE_RECORD,
    TLSA_CT_ROWS,
    UNDEPLOYED_VALID,
    UNEXPLAINED,
    PartialKind,
    classify_tlsa_ct,
    compare_caa_server_vs_ct,
    expiry_bucket,
    partial_caa_check,
    row_number,
    tlsa_ct_matrix,
    tlsa_mismatch_forensics,
    tlsa_vs_caa,
)
from pkiaudit.ctlog import CtEntry

S = {state: CaaMatchState(state) for state in MatchState}
match_states = st.sampled_from(list(MatchState)).map(CaaMatchState)


class TestServerVsCt:
    def test_consistent(self):
        result = compare_caa_server_vs_ct(S[MatchState.ISSUER_MATCH], [("1", S[MatchState.ISSUER_MATCH])])
        assert result.consistent and result.inconsistency_pairs == ()

    def test_one_pair_per_differing_entry(self):
        ct = [("1", S[MatchState.ISSUER_MATCH]), ("2", S[MatchState.ISSUER_MISMATCH]),
              ("3", S[MatchState.ISSUER_MISMATCH])]
        result = compare_caa_server_vs_ct(S[MatchState.ISSUER_MATCH], ct)
        assert result.inconsistency_pairs == (("IssuerMatch", "IssuerMismatch"),) * 2

    def test_name_mismatch_is_its_own_label(self):
        result = compare_caa_server_vs_ct(S[MatchState.ISSUER_MATCH], [("1", S[MatchState.ISSUER_MATCH])],
                                          server_name_mismatch=True)
        assert result.inconsistency_pairs == ((NAME_MISMATCH, "IssuerMatch"),)

    def test_no_ct_entries(self):
        assert compare_caa_server_vs_ct(S[MatchState.NO_CAA], []).consistent

    @given(match_states, st.lists(match_states, max_size=6))
    def test_consistent_iff_no_pairs(self, server, ct):
        result = compare_caa_server_vs_ct(server, [(str(i), s) for i, s in enumerate(ct)])
        assert result.consistent == all(s.state is server.state for s in ct)
        assert len(result.inconsistency_pairs) == sum(s.state is not server.state for s in ct)


class TestTlsaCtMatrix:
    def test_rows_are_exhaustive_and_exclusive(self):
        triples = list(itertools.product((True, False), repeat=3))
        numbers = [row_number(classify_tlsa_ct(*t)) for t in triples]
        assert sorted(numbers) == list(range(1, 9)) and len(set(TLSA_CT_ROWS)) == 8

    def test_row_order(self):
        assert row_number(classify_tlsa_ct(True, True, True)) == 1
        assert row_number(classify_tlsa_ct(True, False, False)) == 4
        assert row_number(classify_tlsa_ct(False, False, False)) == 8

    @given(st.lists(st.tuples(st.booleans(), st.booleans(), st.booleans()), max_size=30))
    def test_matrix_counts_everything(self, triples):
        rows = tlsa_ct_matrix(classify_tlsa_ct(*t) for t in triples)
        assert [r.number for r in rows] == list(range(1, 9))
        assert sum(r.count for r in rows) == len(triples)


@pytest.fixture(scope="module")
def both_sans():
    return wrap(corpus.leaf_for(corpus.ALPHA, "p.example", sans=["p.example", "*.p.example"]))


class TestPartial:
    def test_issue_matches_wild_mismatch(self, both_sans):
        found = partial_caa_check(both_sans, S[MatchState.ISSUER_MATCH], S[MatchState.EMPTY_MISMATCH])
        assert found.kind is PartialKind.ISSUE_MATCHES_WILD_MISMATCH

    def test_wild_matches_issue_mismatch(self, both_sans):
        found = partial_caa_check(both_sans, S[MatchState.ISSUER_MISMATCH], S[MatchState.ISSUER_MATCH])
        assert found.kind is PartialKind.WILD_MATCHES_ISSUE_MISMATCH

    def test_requires_both_san_kinds(self):
        fqdn_only = wrap(corpus.leaf_for(corpus.ALPHA, "q.example"))
        assert partial_caa_check(fqdn_only, S[MatchState.ISSUER_MATCH], S[MatchState.ISSUER_MISMATCH]) is None

    def test_implicit_is_not_a_violation(self, both_sans):
        assert partial_caa_check(both_sans, S[MatchState.ISSUER_MATCH], S[MatchState.IMPLICIT_MATCH]) is None

    @given(match_states, match_states)
    def test_kind_only_when_exactly_one_matches(self, fqdn, wild):
        cert = wrap(corpus.leaf_for(corpus.ALPHA, "p.example", sans=["p.example", "*.p.example"]))
        found = partial_caa_check(cert, fqdn, wild)
        if found is not None:
            assert (fqdn.state is MatchState.ISSUER_MATCH) != (wild.state is MatchState.ISSUER_MATCH)


def test_tlsa_vs_caa_reports_differences_only():
    findings = tlsa_vs_caa(S[MatchState.ISSUER_MATCH],
                           [("1", S[MatchState.ISSUER_MATCH]), ("2", S[MatchState.ISSUER_MISMATCH])])
    assert [(f.entry_id, f.referenced_state) for f in findings] == [("2", "IssuerMismatch")]


class TestForensics:
    @pytest.mark.parametrize("days, bucket", [(-91, "<-90d"), (-90, "-90..0d"), (-1, "-90..0d"),
                                              (0, "0..90d"), (90, "0..90d"), (91, ">90d")])
    def test_buckets(self, days, bucket):
        assert expiry_bucket(days) == bucket

    def test_explanations(self):
        live = wrap(corpus.leaf_for(corpus.ALPHA, "f.example", "live"))
        old = wrap(corpus.leaf_for(corpus.ALPHA, "f.example", "old", start=corpus.utc(2023, 1, 1),
                                   end=corpus.utc(2023, 12, 1)))
        results = {0: [CtEntry(live, "b")], 1: [CtEntry(old, "a")], 2: []}
        verdicts = {live.sha256: ChainVerdict.VALID, old.sha256: ChainVerdict.EXPIRED}
        found = tlsa_mismatch_forensics([0, 1, 2], results, corpus.AT, verdicts)
        assert [(f.record_index, f.explanation) for f in found] == [
            (0, UNDEPLOYED_VALID), (1, STALE_RECORD), (2, UNEXPLAINED)]
        assert found[0].relative_days == 48 and found[0].bucket == "0..90d"
        assert found[1].relative_days == -133 and found[1].bucket == "<-90d"
