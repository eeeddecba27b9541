"""Per-domain audit orchestration: DNS, TLS, validation, CT and consistency."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from typing import Optional, Sequence

from .caa import (
    CaaMatchState,
    CaaRecord,
    CaIdentity,
    CaMapping,
    IodefVerdict,
    MatchState,
    NameKind,
    RelevantCaaSet,
    TagKind,
    match_caa,
    parse_caa_presentation,
    relevant_caa_set,
    validate_iodef,
)
from .certs import (
    Certificate,
    CertificateChain,
    ChainStatus,
    NameMatch,
    TrustStore,
    issuer_identity,
    leaf_issuer_identity,
    name_matches,
    validate_chain,
)
from .consistency import (
    CaaCtComparison,
    ForensicFinding,
    PartialCaaFinding,
    TlsaCaaFinding,
    TlsaCtKey,
    classify_tlsa_ct,
    compare_caa_server_vs_ct,
    partial_caa_check,
    tlsa_mismatch_forensics,
    tlsa_vs_caa,
)
from .ctlog import CtBackend, CtEntry, CtQueryError, CtQueryResult, fetch_certs_by_name, fetch_certs_by_tlsa
from .dane import DaneAssessment, TlsaRecord, authenticates, evaluate_dane, parse_tlsa, record_matches_cert
from .dnsio import DnsBackend, DnsStatus, DomainDnsBundle, collect_domain_dns, first_ipv4
from .names import InputError
from .sct import LogList, SctVerdict, verify_scts
from .targets import Target
from .tlsfetch import ChainSource, FetchError

LOGGER = logging.getLogger(__name__)

DEFAULT_CONCURRENCY = 16


@dataclass(frozen=True)
class AuditConfig:
    at: datetime
    mapping: CaMapping
    trust_store: TrustStore
    logs: LogList
    intermediates: tuple[Certificate, ...] = ()
    concurrency: int = DEFAULT_CONCURRENCY


@dataclass(frozen=True)
class Backends:
    dns: DnsBackend
    chains: ChainSource
    ct: CtBackend


@dataclass(frozen=True)
class StageError:
    stage: str
    error: str


@dataclass
class Consistency:
    caa_ct: Optional[CaaCtComparison] = None
    partial_caa: Optional[PartialCaaFinding] = None
    tlsa_ct: list[tuple[str, TlsaCtKey]] = field(default_factory=list)
    tlsa_caa: list[TlsaCaaFinding] = field(default_factory=list)
    tlsa_forensics: list[ForensicFinding] = field(default_factory=list)


@dataclass
class AuditRecord:
    target: Target
    at: datetime
    dns: Optional[DomainDnsBundle] = None
    caa_walk: list[tuple[str, list[CaaRecord]]] = field(default_factory=list)
    relevant_caa: Optional[RelevantCaaSet] = None
    tlsa: list[TlsaRecord] = field(default_factory=list)
    chain: Optional[CertificateChain] = None
    chain_status: Optional[ChainStatus] = None
    name_match: Optional[NameMatch] = None
    issuer: Optional[CaIdentity] = None
    scts: list[SctVerdict] = field(default_factory=list)
    caa_state: Optional[CaaMatchState] = None
    wildcard_caa_state: Optional[CaaMatchState] = None
    iodef: list[tuple[str, IodefVerdict]] = field(default_factory=list)
    dane: Optional[DaneAssessment] = None
    ct: Optional[CtQueryResult] = None
    ct_states: list[tuple[str, CaaMatchState]] = field(default_factory=list)
    consistency: Consistency = field(default_factory=Consistency)
    errors: list[StageError] = field(default_factory=list)

    @property
    def name(self) -> str:
        return self.target.final_name

    def fail(self, stage: str, exc: BaseException | str) -> None:
        self.errors.append(StageError(stage, str(exc)))


# -- stages -------------------------------------------------------------------------

def _dns_stage(record: AuditRecord, backend: DnsBackend) -> None:
    bundle = collect_domain_dns(record.name, backend)
    record.dns = bundle
    responses = [("SOA", bundle.soa), ("A", bundle.a), ("TLSA", bundle.tlsa_443),
                 ("TXT", bundle.contact_email_txt), ("TXT", bundle.contact_phone_txt)]
    responses += [("CAA", resp) for _, resp in bundle.caa_by_ancestor]
    for rrtype, resp in responses:
        if resp.status in (DnsStatus.SERVFAIL, DnsStatus.TIMEOUT):
            record.fail("dns", f"{resp.queried_name}|{rrtype}: {resp.status.value}"
                        + (f" ({resp.error})" if resp.error else ""))

    for ancestor, resp in bundle.caa_by_ancestor:
        parsed = []
        for data in resp.data:
            try:
                parsed.append(parse_caa_presentation(data))
            except InputError as exc:
                record.fail("caa-parse", f"{ancestor}: {exc}")
        record.caa_walk.append((ancestor, parsed))
    record.relevant_caa = relevant_caa_set(record.caa_walk)
    if record.relevant_caa is not None:
        record.iodef = [(r.text, validate_iodef(r.value))
                        for r in record.relevant_caa.records if r.tag_kind is TagKind.IODEF]
    record.tlsa = [parse_tlsa(data) for data in bundle.tlsa_443.data]


def _tls_stage(record: AuditRecord, chains: ChainSource) -> None:
    if not record.target.port443_open:
        record.fail("tls", "port 443 closed")
        return
    ip = first_ipv4(record.dns.a) if record.dns else None
    if ip is None and record.target.final_name == record.target.name and record.target.resolved_ips:
        ip = record.target.resolved_ips[0]
    try:
        record.chain = chains.fetch_chain(record.name, ip, 443)
    except FetchError as exc:
        record.fail("tls", exc)


def _signer(chain: CertificateChain, config: AuditConfig) -> Optional[Certificate]:
    leaf = chain.leaf
    if leaf.self_issued:
        return leaf
    for cand in (*chain.intermediates, *config.intermediates, *config.trust_store.issuers_of(leaf)):
        if cand.subject_key == leaf.issuer_key:
            return cand
    return None


def _wildcard_state(record: AuditRecord, config: AuditConfig) -> Optional[CaaMatchState]:
    """CAA state for the certificate's wildcard name closest to the audited name."""
    names = [name for name, _ in record.caa_walk]
    bases = [san[2:] for san in record.chain.leaf.san if san.startswith("*.")]
    positions = sorted(names.index(base) for base in bases if base in names)
    if not positions:
        return None
    relevant = relevant_caa_set(record.caa_walk[positions[0]:])
    return match_caa(record.issuer, NameKind.WILDCARD, relevant, config.mapping)


def _validate_stage(record: AuditRecord, config: AuditConfig) -> None:
    chain = record.chain
    record.chain_status = validate_chain(chain, config.trust_store, config.at, config.intermediates)
    record.name_match = name_matches(chain.leaf, record.name)
    record.issuer = issuer_identity(chain)
    record.scts = verify_scts(chain.leaf, _signer(chain, config), config.logs)
    record.caa_state = match_caa(record.issuer, NameKind.FQDN, record.relevant_caa, config.mapping)
    record.wildcard_caa_state = _wildcard_state(record, config)


def _ct_state(cert: Certificate, record: AuditRecord, config: AuditConfig) -> CaaMatchState:
    return match_caa(leaf_issuer_identity(cert), NameKind.FQDN, record.relevant_caa, config.mapping)


def _same_issuer(a: CaIdentity, b: CaIdentity) -> bool:
    return a.organization.casefold() == b.organization.casefold()


def _ct_stage(record: AuditRecord, config: AuditConfig, ct: CtBackend) -> dict[int, list[CtEntry]]:
    """Fetch logged certificates by name and by each conformant TLSA record."""
    try:
        record.ct = fetch_certs_by_name(record.name, config.at, ct)
        record.ct_states = [(e.entry_id, _ct_state(e.certificate, record, config))
                            for e in sorted(record.ct.entries, key=lambda e: e.entry_id)]
    except CtQueryError as exc:
        record.fail("ct", exc)
    by_record: dict[int, list[CtEntry]] = {}
    for index, tlsa in enumerate(record.tlsa):
        if not tlsa.conformant:
            continue
        try:
            by_record[index] = list(fetch_certs_by_tlsa(tlsa, ct, record.name).entries)
        except CtQueryError as exc:
            record.fail("ct-tlsa", f"record {index}: {exc}")
    return by_record


def _chain_verdict(cert: Certificate, record: AuditRecord, config: AuditConfig):
    pool = tuple(config.intermediates) + (record.chain.intermediates if record.chain else ())
    return validate_chain(CertificateChain(cert), config.trust_store, config.at, pool).verdict


def _consistency_stage(record: AuditRecord, config: AuditConfig, by_record: dict[int, list[CtEntry]]) -> None:
    out = record.consistency
    chain = record.chain
    name_mismatch = record.name_match is NameMatch.NO_MATCH
    if chain is not None:
        out.partial_caa = partial_caa_check(chain.leaf, record.caa_state, record.wildcard_caa_state)
    if chain is not None and record.relevant_caa is not None and record.ct is not None:
        out.caa_ct = compare_caa_server_vs_ct(record.caa_state, record.ct_states,
                                              server_name_mismatch=name_mismatch)

    ee_records = [r for r in record.tlsa if r.conformant and r.is_ee]
    if chain is not None and ee_records and record.ct is not None:
        server_auth = any(record_matches_cert(r, chain.leaf) and authenticates(r, record.chain_status)
                          for r in ee_records)
        for entry in sorted(record.ct.entries, key=lambda e: e.entry_id):
            ct_auth = any(record_matches_cert(r, entry.certificate) for r in ee_records)
            same = _same_issuer(leaf_issuer_identity(entry.certificate), record.issuer)
            out.tlsa_ct.append((entry.entry_id, classify_tlsa_ct(server_auth, ct_auth, same)))

    if record.relevant_caa is not None and chain is not None:
        referenced: dict[str, CtEntry] = {}
        for index, entries in by_record.items():
            if record.tlsa[index].is_ee:
                for entry in entries:
                    if entry.certificate != chain.leaf:
                        referenced.setdefault(entry.entry_id, entry)
        states = [(eid, _ct_state(referenced[eid].certificate, record, config)) for eid in sorted(referenced)]
        out.tlsa_caa = tlsa_vs_caa(record.caa_state, states, server_name_mismatch=name_mismatch)

    if chain is not None and record.dane is not None:
        matched = {i for i, _ in record.dane.all_matches}
        unmatched = [i for i, r in enumerate(record.tlsa) if r.conformant and i not in matched]
        found = {i: by_record.get(i, []) for i in unmatched}
        verdicts = {e.certificate.sha256: _chain_verdict(e.certificate, record, config)
                    for entries in found.values() for e in entries}
        out.tlsa_forensics = tlsa_mismatch_forensics(unmatched, found, config.at, verdicts)


def audit_domain(target: Target, config: AuditConfig, backends: Backends) -> AuditRecord:
    """Run every stage for one target; failures become typed errors in the record."""
    record = AuditRecord(target, config.at)
    if not _guarded(record, "dns", lambda: _dns_stage(record, backends.dns)):
        return record
    _guarded(record, "tls", lambda: _tls_stage(record, backends.chains))
    if record.chain is not None:
        _guarded(record, "validate", lambda: _validate_stage(record, config))
    if record.tlsa:
        _guarded(record, "dane", lambda: _dane_stage(record))

    by_record: dict[int, list[CtEntry]] = {}
    # CT is consulted only for domains that publish CAA or TLSA records
    if record.relevant_caa is not None or record.tlsa:
        _guarded(record, "ct", lambda: by_record.update(_ct_stage(record, config, backends.ct)))
    _guarded(record, "consistency", lambda: _consistency_stage(record, config, by_record))
    return record


def _dane_stage(record: AuditRecord) -> None:
    secure = record.dns.tlsa_443.authenticated
    record.dane = evaluate_dane(record.tlsa, record.chain, secure, record.chain_status)


def _guarded(record: AuditRecord, stage: str, run) -> bool:
    try:
        run()
    except Exception as exc:  # a single domain must never abort the batch
        LOGGER.exception("stage %s failed for %s", stage, record.name)
        record.fail(stage, f"{type(exc).__name__}: {exc}")
        return False
    return True


def audit_targets(targets: Sequence[Target], config: AuditConfig, backends: Backends) -> list[AuditRecord]:
    """Audit concurrently (bounded); results keep input order."""
    workers = max(1, config.concurrency)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda t: audit_domain(t, config, backends), targets))


def needs_attention(record: AuditRecord) -> bool:
    """Malformed or empty-only CAA, or a partial CAA match."""
    states = [s for s in (record.caa_state, record.wildcard_caa_state) if s is not None]
    states += [s for _, s in record.ct_states]
    bad = {MatchState.MALFORMED_MISMATCH, MatchState.EMPTY_MISMATCH}
    return any(s.state in bad for s in states) or record.consistency.partial_caa is not None
