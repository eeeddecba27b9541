import base64

import pytest
from conftest import wrap
from hypothesis import given
from hypothesis import strategies as st
from servers import http_server

import corpus
from pkiaudit.ctlog import (
    CapabilityError,
    CrtShBackend,
    CtEntry,
    CtQueryError,
    FixtureCtBackend,
    dedupe,
    fetch_certs_by_name,
    fetch_certs_by_tlsa,
)
from pkiaudit.dane import parse_tlsa

AT = corpus.AT


def item(cert, precert=False, logged_at="2024-03-01T00:00:00Z"):
    return {"der_base64": base64.b64encode(corpus.der(cert)).decode(), "logged_at": logged_at, "is_precert": precert}


NAME = "ct.example"
CURRENT = corpus.leaf_for(corpus.ALPHA, NAME, "current", key="ct/key")
RENEWED = corpus.leaf_for(corpus.BETA, NAME, "renewed", key="ct/key")
EXPIRED = corpus.leaf_for(corpus.ALPHA, NAME, "old", start=corpus.utc(2023, 1, 1), end=corpus.utc(2023, 3, 1))
PRECERT = corpus.leaf_for(corpus.ALPHA, NAME, "current", key="ct/key", precert=True)
OTHER = corpus.leaf_for(corpus.ALPHA, "elsewhere.example")


@pytest.fixture(scope="module")
def backend():
    return FixtureCtBackend([item(CURRENT), item(RENEWED), item(EXPIRED), item(PRECERT, True), item(OTHER),
                             item(corpus.ALPHA.cert)])


class TestByName:
    def test_expired_dropped_and_precert_merged(self, backend):
        result = fetch_certs_by_name(NAME, AT, backend)
        assert {e.certificate.der for e in result.entries} == {corpus.der(CURRENT), corpus.der(RENEWED)}
        assert not any(e.is_precert for e in result.entries)

    def test_no_results(self, backend):
        assert fetch_certs_by_name("nobody.example", AT, backend).entries == ()

    def test_name_is_normalized(self, backend):
        assert len(fetch_certs_by_name("CT.Example.", AT, backend).entries) == 2

    def test_bad_fixture(self):
        with pytest.raises(CtQueryError):
            FixtureCtBackend([{"der_base64": "AAAA"}])


class TestByTlsa:
    def test_spki_selector_includes_renewals(self, backend):
        record = parse_tlsa(corpus.tlsa(3, 1, 1, CURRENT))
        found = fetch_certs_by_tlsa(record, backend).entries
        assert {e.certificate.der for e in found} == {corpus.der(CURRENT), corpus.der(RENEWED)}

    def test_full_cert_selector_is_exact(self, backend):
        found = fetch_certs_by_tlsa(parse_tlsa(corpus.tlsa(3, 0, 1, RENEWED)), backend).entries
        assert [e.certificate.der for e in found] == [corpus.der(RENEWED)]

    def test_non_conformant_is_refused(self, backend):
        with pytest.raises(CtQueryError):
            fetch_certs_by_tlsa(parse_tlsa("3 1 1 abcd"), backend)


def _entries(labels):
    out = []
    for label, precert in labels:
        cert = corpus.leaf_for(corpus.ALPHA, f"{label}.dedupe.example", precert=precert)
        out.append(CtEntry(wrap(cert), f"{label}/{precert}", None, precert))
    return out


@given(st.lists(st.tuples(st.sampled_from("abc"), st.booleans()), max_size=8))
def test_dedupe_is_idempotent_and_prefers_final(labels):
    entries = _entries(labels)
    once = dedupe(entries)
    assert dedupe(once) == once
    assert len(once) == len({label for label, _ in labels})
    for label in {label for label, precert in labels if not precert}:
        assert any(e.entry_id == f"{label}/False" for e in once)


def test_same_key_different_serials_are_both_kept():
    entries = [CtEntry(wrap(CURRENT), "1"), CtEntry(wrap(corpus.leaf_for(corpus.ALPHA, NAME, "again", key="ct/key")), "2")]
    assert len(dedupe(entries)) == 2


class TestCrtSh:
    def _respond(self, calls):
        bodies = {"1": corpus.pem(CURRENT), "2": corpus.pem(RENEWED)}

        def respond(path, query):
            calls.append(query)
            if "d" in query:
                return 200, bodies[query["d"]], {}
            if query.get("q") == "busy.example" and len([c for c in calls if c.get("q")]) < 2:
                return 503, "try later", {}
            if query.get("q") == "empty.example":
                return 200, "", {}
            return 200, [{"id": 1, "entry_timestamp": "2024-03-01T00:00:00.5"}, {"id": 2}, {"id": 1}], {}
        return respond

    def test_name_search_downloads_each_id_once(self):
        calls = []
        with http_server(self._respond(calls)) as (url, _):
            result = fetch_certs_by_name(NAME, AT, CrtShBackend(url, backoff=()))
        assert {e.certificate.der for e in result.entries} == {corpus.der(CURRENT), corpus.der(RENEWED)}
        assert [c["d"] for c in calls if "d" in c] == ["1", "2"]
        assert calls[0] == {"q": NAME, "exclude": "expired", "output": "json"}

    def test_retry_then_success(self):
        calls = []
        with http_server(self._respond(calls)) as (url, _):
            backend = CrtShBackend(url, backoff=(0.0,), sleep=lambda s: None)
            assert len(backend.entries_for_name("busy.example")) == 2

    def test_empty_body(self):
        with http_server(self._respond([])) as (url, _):
            assert CrtShBackend(url, backoff=()).entries_for_name("empty.example") == []

    def test_gives_up(self):
        with http_server(lambda p, q: (503, "down", {})) as (url, _):
            with pytest.raises(CtQueryError):
                CrtShBackend(url, backoff=(0.0,), sleep=lambda s: None).entries_for_name(NAME)

    def test_tlsa_query_parameters(self):
        calls = []
        with http_server(self._respond(calls)) as (url, _):
            backend = CrtShBackend(url, backoff=())
            record = parse_tlsa(corpus.tlsa(3, 1, 1, CURRENT))
            fetch_certs_by_tlsa(record, backend)
            assert calls[0]["spkisha256"] == record.data.hex()
            with pytest.raises(CapabilityError):
                backend.entries_for_tlsa(parse_tlsa(corpus.tlsa(3, 1, 2, CURRENT)))
