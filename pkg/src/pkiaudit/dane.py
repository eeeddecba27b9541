"""TLSA parsing, RFC 6698 conformance and chain matching."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

from .certs import Certificate, CertificateChain, ChainStatus

USAGE_NAMES = {0: "PKIX-TA", 1: "PKIX-EE", 2: "DANE-TA", 3: "DANE-EE"}
EE_USAGES = frozenset({1, 3})
TA_USAGES = frozenset({0, 2})
PKIX_USAGES = frozenset({0, 1})
DIGEST_LENGTHS = {1: 32, 2: 64}

FLAG_NO_DNSSEC = "tlsa-without-dnssec"
FLAG_INVALID_CERT = "matching-tlsa-invalid-certificate"
FLAG_NO_MATCH = "no-tlsa-match"


@dataclass(frozen=True)
class TlsaRecord:
    usage: int
    selector: int
    matching_type: int
    data: bytes
    problems: tuple[str, ...] = ()
    raw: str = ""

    @property
    def conformant(self) -> bool:
        return not self.problems

    @property
    def is_ee(self) -> bool:
        return self.usage in EE_USAGES

    def presentation(self) -> str:
        return f"{self.usage} {self.selector} {self.matching_type} {self.data.hex()}"


def conformance_problems(usage: int, selector: int, matching_type: int, data: bytes) -> tuple[str, ...]:
    problems = []
    if usage not in USAGE_NAMES:
        problems.append(f"usage {usage} out of range")
    if selector not in (0, 1):
        problems.append(f"selector {selector} out of range")
    if matching_type not in (0, 1, 2):
        problems.append(f"matching type {matching_type} out of range")
    expected = DIGEST_LENGTHS.get(matching_type)
    if expected is not None and len(data) != expected:
        problems.append(f"digest length {len(data)} != {expected}")
    if matching_type == 0 and not data:
        problems.append("empty association data")
    return tuple(problems)


def make_tlsa(usage: int, selector: int, matching_type: int, data: bytes) -> TlsaRecord:
    return TlsaRecord(usage, selector, matching_type, bytes(data),
                      conformance_problems(usage, selector, matching_type, data))


def parse_tlsa(payload: Union[str, bytes]) -> TlsaRecord:
    """Decode a TLSA RDATA in wire or presentation (incl. RFC 3597) form.

    Undecodable payloads yield a placeholder record flagged non-conformant.
    """
    if isinstance(payload, (bytes, bytearray)):
        if len(payload) < 3:
            return TlsaRecord(-1, -1, -1, b"", ("undecodable wire payload",), bytes(payload).hex())
        return make_tlsa(payload[0], payload[1], payload[2], bytes(payload[3:]))
    text = payload.strip()
    try:
        if text.startswith("\\#"):
            parts = text[2:].split()
            wire = bytes.fromhex("".join(parts[1:]))
            if len(wire) != int(parts[0]):
                raise ValueError("generic length mismatch")
            record = parse_tlsa(wire)
            return TlsaRecord(record.usage, record.selector, record.matching_type,
                              record.data, record.problems, text)
        parts = text.split()
        usage, selector, mtype = (int(p) for p in parts[:3])
        data = bytes.fromhex("".join(parts[3:]))
    except (ValueError, IndexError) as exc:
        return TlsaRecord(-1, -1, -1, b"", (f"undecodable payload: {exc}",), text)
    record = make_tlsa(usage, selector, mtype, data)
    return TlsaRecord(record.usage, record.selector, record.matching_type, record.data, record.problems, text)


def association_data(cert: Certificate, selector: int, matching_type: int) -> bytes:
    selected = cert.der if selector == 0 else cert.spki_der
    if matching_type == 1:
        return hashlib.sha256(selected).digest()
    if matching_type == 2:
        return hashlib.sha512(selected).digest()
    return selected


def record_matches_cert(record: TlsaRecord, cert: Certificate) -> bool:
    if not record.conformant:
        return False
    return association_data(cert, record.selector, record.matching_type) == record.data


def tlsa_match(record: TlsaRecord, chain: CertificateChain) -> Optional[int]:
    """Index of the first chain element the record matches.

    End-entity usages look only at the leaf; trust-anchor usages only at
    the served non-leaf certificates.
    """
    if not record.conformant:
        return None
    if record.usage in EE_USAGES:
        candidates = [(0, chain.leaf)]
    else:
        candidates = list(enumerate(chain.intermediates, 1))
    for index, cert in candidates:
        if record_matches_cert(record, cert):
            return index
    return None


class ConstraintClass(str, enum.Enum):
    END_ENTITY_ONLY = "EndEntityOnly"
    TRUST_ANCHOR_ONLY = "TrustAnchorOnly"
    BOTH = "Both"
    NONE = "None"


def constraint_class(records: Sequence[TlsaRecord]) -> ConstraintClass:
    usages = {r.usage for r in records if r.conformant}
    ee, ta = bool(usages & EE_USAGES), bool(usages & TA_USAGES)
    if ee and ta:
        return ConstraintClass.BOTH
    if ee:
        return ConstraintClass.END_ENTITY_ONLY
    if ta:
        return ConstraintClass.TRUST_ANCHOR_ONLY
    return ConstraintClass.NONE


@dataclass(frozen=True)
class DaneAssessment:
    records: tuple[TlsaRecord, ...]
    matched: Optional[tuple[int, int]]
    all_matches: tuple[tuple[int, int], ...]
    constraint_class: ConstraintClass
    dnssec_secure: bool
    requires_webpki: bool
    authenticated: bool
    flags: tuple[str, ...] = field(default_factory=tuple)

    @property
    def conformant_records(self) -> list[TlsaRecord]:
        return [r for r in self.records if r.conformant]


def authenticates(record: TlsaRecord, chain_status: Optional[ChainStatus]) -> bool:
    """A matching record authenticates unless PKIX usage meets an invalid chain."""
    if record.usage in PKIX_USAGES:
        return chain_status is not None and chain_status.valid
    return True


def evaluate_dane(
    records: Sequence[TlsaRecord],
    chain: Optional[CertificateChain],
    dnssec_secure: bool,
    chain_status: Optional[ChainStatus],
) -> DaneAssessment:
    records = tuple(records)
    matches: list[tuple[int, int]] = []
    if chain is not None:
        for index, record in enumerate(records):
            where = tlsa_match(record, chain)
            if where is not None:
                matches.append((index, where))

    flags = []
    if not dnssec_secure and any(r.conformant for r in records):
        flags.append(FLAG_NO_DNSSEC)
    chain_ok = chain_status is not None and chain_status.valid
    if any(records[i].usage in (2, 3) for i, _ in matches) and not chain_ok:
        flags.append(FLAG_INVALID_CERT)
    if chain is not None and any(r.conformant for r in records) and not matches:
        flags.append(FLAG_NO_MATCH)

    return DaneAssessment(
        records=records,
        matched=matches[0] if matches else None,
        all_matches=tuple(matches),
        constraint_class=constraint_class(records),
        dnssec_secure=dnssec_secure,
        requires_webpki=any(records[i].usage in PKIX_USAGES for i, _ in matches),
        authenticated=any(authenticates(records[i], chain_status) for i, _ in matches),
        flags=tuple(flags),
    )


def ee_authenticates_cert(records: Sequence[TlsaRecord], cert: Certificate) -> bool:
    """Whether any conformant end-entity record matches ``cert`` as a leaf."""
    return any(r.is_ee and record_matches_cert(r, cert) for r in records)
