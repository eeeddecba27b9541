"""Cross-source consistency checks: server vs CT, TLSA vs CT, TLSA vs CAA."""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass
from datetime import datetime
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

from .caa import CaaMatchState, MatchState
from .certs import Certificate, ChainVerdict, has_fqdn_san, has_wildcard_san
from .ctlog import CtEntry

NAME_MISMATCH = "NameMismatch"


def state_label(state: Optional[CaaMatchState], name_mismatch: bool = False) -> str:
    """Label used in pair statistics; a name-mismatched server cert is its own class."""
    if name_mismatch:
        return NAME_MISMATCH
    return state.state.value if state is not None else "Unavailable"


# -- CAA: server certificate vs CT-logged certificates ---------------------------

@dataclass(frozen=True)
class CaaCtComparison:
    server_state: str
    ct_states: tuple[tuple[str, str], ...]
    consistent: bool
    inconsistency_pairs: tuple[tuple[str, str], ...]


def compare_caa_server_vs_ct(
    server: Optional[CaaMatchState],
    ct: Sequence[tuple[str, CaaMatchState]],
    *,
    server_name_mismatch: bool = False,
) -> CaaCtComparison:
    """Compare the served certificate's CAA state with every logged one.

    One pair is recorded per differing CT entry.
    """
    server_label = state_label(server, server_name_mismatch)
    ct_states = tuple((entry_id, state.state.value) for entry_id, state in ct)
    pairs = tuple((server_label, label) for _, label in ct_states if label != server_label)
    return CaaCtComparison(server_label, ct_states, not pairs, pairs)


# -- TLSA vs CT authentication matrix ----------------------------------------------

class TlsaCtKey(NamedTuple):
    server_authenticated: bool
    ct_authenticated: bool
    same_issuer: bool


# row order: server, CT, same-issuer, with True before False
TLSA_CT_ROWS: tuple[TlsaCtKey, ...] = tuple(
    TlsaCtKey(s, c, i) for s in (True, False) for c in (True, False) for i in (True, False)
)


def classify_tlsa_ct(server_auth: bool, ct_auth: bool, same_issuer: bool) -> TlsaCtKey:
    return TlsaCtKey(bool(server_auth), bool(ct_auth), bool(same_issuer))


def row_number(key: TlsaCtKey) -> int:
    return TLSA_CT_ROWS.index(key) + 1


@dataclass(frozen=True)
class TlsaCtRow:
    server_authenticated: bool
    ct_authenticated: bool
    same_issuer: bool
    count: int

    @property
    def number(self) -> int:
        return row_number(TlsaCtKey(self.server_authenticated, self.ct_authenticated, self.same_issuer))


def tlsa_ct_matrix(keys: Iterable[TlsaCtKey]) -> list[TlsaCtRow]:
    counts = Counter(keys)
    return [TlsaCtRow(*key, counts.get(key, 0)) for key in TLSA_CT_ROWS]


# -- partial CAA matches ---------------------------------------------------------------

class PartialKind(str, enum.Enum):
    ISSUE_MATCHES_WILD_MISMATCH = "IssueMatchesWildMismatch"
    WILD_MATCHES_ISSUE_MISMATCH = "WildMatchesIssueMismatch"


@dataclass(frozen=True)
class PartialCaaFinding:
    fqdn_state: CaaMatchState
    wildcard_state: CaaMatchState
    kind: PartialKind


def partial_caa_check(
    cert: Certificate, fqdn_state: CaaMatchState, wildcard_state: Optional[CaaMatchState]
) -> Optional[PartialCaaFinding]:
    """Flag certificates whose issuer satisfies one tag but violates the other.

    Requires both an FQDN and a wildcard SAN; an ImplicitMatch on the other
    name is not a violation.
    """
    if wildcard_state is None or not (has_fqdn_san(cert) and has_wildcard_san(cert)):
        return None
    fqdn_ok = fqdn_state.state is MatchState.ISSUER_MATCH
    wild_ok = wildcard_state.state is MatchState.ISSUER_MATCH
    if fqdn_ok and wildcard_state.is_mismatch:
        return PartialCaaFinding(fqdn_state, wildcard_state, PartialKind.ISSUE_MATCHES_WILD_MISMATCH)
    if wild_ok and fqdn_state.is_mismatch:
        return PartialCaaFinding(fqdn_state, wildcard_state, PartialKind.WILD_MATCHES_ISSUE_MISMATCH)
    return None


# -- TLSA-referenced certificates vs CAA ------------------------------------------

@dataclass(frozen=True)
class TlsaCaaFinding:
    entry_id: str
    server_state: str
    referenced_state: str


def tlsa_vs_caa(
    server: Optional[CaaMatchState],
    referenced: Sequence[tuple[str, CaaMatchState]],
    *,
    server_name_mismatch: bool = False,
) -> list[TlsaCaaFinding]:
    server_label = state_label(server, server_name_mismatch)
    return [
        TlsaCaaFinding(entry_id, server_label, state.state.value)
        for entry_id, state in referenced
        if state.state.value != server_label
    ]


# -- forensics for TLSA records that miss the served chain ----------------------------

STALE_RECORD = "StaleRecord"
UNDEPLOYED_VALID = "UndeployedValid"
UNEXPLAINED = "Unexplained"

EXPIRY_BUCKETS = ("<-90d", "-90..0d", "0..90d", ">90d")


def expiry_bucket(days: int) -> str:
    if days < -90:
        return EXPIRY_BUCKETS[0]
    if days < 0:
        return EXPIRY_BUCKETS[1]
    if days <= 90:
        return EXPIRY_BUCKETS[2]
    return EXPIRY_BUCKETS[3]


def relative_expiry_days(cert: Certificate, at: datetime) -> int:
    return math.floor((cert.not_after - at).total_seconds() / 86400)


@dataclass(frozen=True)
class ForensicFinding:
    record_index: int
    explanation: str
    entry_id: Optional[str] = None
    cert_sha256: Optional[str] = None
    verdict: Optional[str] = None
    relative_days: Optional[int] = None
    bucket: Optional[str] = None


def tlsa_mismatch_forensics(
    unmatched: Sequence[int],
    ct_results: Mapping[int, Sequence[CtEntry]],
    at: datetime,
    verdicts: Mapping[str, ChainVerdict],
) -> list[ForensicFinding]:
    """Explain TLSA records that match nothing in the served chain.

    ``ct_results`` holds the CT certificates matching each record and
    ``verdicts`` their chain-validation verdicts keyed by SHA-256.
    """
    findings = []
    for index in unmatched:
        entries = ct_results.get(index, ())
        if not entries:
            findings.append(ForensicFinding(index, UNEXPLAINED))
            continue
        for entry in sorted(entries, key=lambda e: e.entry_id):
            cert = entry.certificate
            verdict = verdicts.get(cert.sha256, ChainVerdict.UNTRUSTED)
            days = relative_expiry_days(cert, at)
            explanation = UNDEPLOYED_VALID if verdict is ChainVerdict.VALID else STALE_RECORD
            findings.append(ForensicFinding(
                index, explanation, entry.entry_id, cert.sha256, verdict.value, days, expiry_bucket(days)
            ))
    return findings
