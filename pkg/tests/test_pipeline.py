import pytest

import corpus
from pkiaudit.caa import MatchState, load_ca_mapping_file
from pkiaudit.certs import TrustStore
from pkiaudit.ctlog import CtQueryError, FixtureCtBackend
from pkiaudit.dnsio import FixtureDnsBackend
from pkiaudit.pipeline import AuditConfig, Backends, audit_domain, audit_targets, needs_attention
from pkiaudit.report import record_to_dict
from pkiaudit.sct import LogList
from pkiaudit.targets import Target
from pkiaudit.tlsfetch import FixtureChainSource


@pytest.fixture(scope="module")
def env(corpus_dir):
    config = AuditConfig(
        corpus.AT,
        load_ca_mapping_file(corpus_dir / "ca_mapping.json"),
        TrustStore.from_file(corpus_dir / "roots.pem"),
        LogList.from_file(corpus_dir / "log_list.json"),
        concurrency=4,
    )
    backends = Backends(
        FixtureDnsBackend.from_file(corpus_dir / "dns.json"),
        FixtureChainSource(corpus_dir / "certs", clock=lambda: corpus.AT),
        FixtureCtBackend.from_file(corpus_dir / "ct.json"),
    )
    return config, backends


def test_clean_domain(env):
    record = audit_domain(Target.direct("issuer-match.example"), *env)
    assert record.errors == [] and record.caa_state.state is MatchState.ISSUER_MATCH
    assert record.chain_status.valid and all(v.signature_ok for v in record.scts)
    assert not needs_attention(record)


def test_malformed_caa_needs_attention(env):
    assert needs_attention(audit_domain(Target.direct("malformed-mismatch.example"), *env))


def test_tls_failure_is_recorded_and_audit_continues(env):
    record = audit_domain(Target.direct("tls-down.example"), *env)
    assert [e.stage for e in record.errors] == ["tls"]
    assert record.caa_state is None and record.relevant_caa is not None


class _Broken:
    def resolve(self, qname, rrtype):
        raise RuntimeError("resolver exploded")

    def entries_for_name(self, name):
        raise CtQueryError("CT backend unavailable")

    entries_for_tlsa = entries_for_name


def test_stage_failures_are_isolated(env):
    config, backends = env
    dns_broken = Backends(_Broken(), backends.chains, backends.ct)
    record = audit_domain(Target.direct("issuer-match.example"), config, dns_broken)
    assert [e.stage for e in record.errors] == ["dns"] and record.chain is None
    assert record_to_dict(record)["name"] == "issuer-match.example"

    ct_broken = Backends(backends.dns, backends.chains, _Broken())
    record = audit_domain(Target.direct("issuer-match.example"), config, ct_broken)
    assert [e.stage for e in record.errors] == ["ct"]
    assert record.caa_state.state is MatchState.ISSUER_MATCH
    assert record_to_dict(record)["errors"] == [{"stage": "ct", "error": "CT backend unavailable"}]


def test_batch_keeps_input_order(env):
    names = ["dane-ee.example", "issuer-match.example", "tls-down.example", "no-caa.example"]
    records = audit_targets([Target.direct(n) for n in names], *env)
    assert [r.name for r in records] == names
