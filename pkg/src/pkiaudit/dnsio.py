"""DNS collection over DNS-over-HTTPS JSON or a fixture document.

Only the resolver's authenticated-data (AD) bit is used as the DNSSEC
signal; nothing is validated locally.
"""

from __future__ import annotations

import enum
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Protocol, Sequence

import requests

from .names import InputError, check_label, is_registry_suffix, normalize_name, parent
from .ratelimit import UNLIMITED, TokenBucket

LOGGER = logging.getLogger(__name__)

RRTYPES = ("SOA", "A", "CAA", "TLSA", "TXT")
RRTYPE_CODES = {"A": 1, "SOA": 6, "TXT": 16, "TLSA": 52, "CAA": 257}

TLSA_443_PREFIX = "_443._tcp"
CONTACT_EMAIL_PREFIX = "_validation-contactemail"
CONTACT_PHONE_PREFIX = "_validation-contactphone"

RETRY_BACKOFF = (0.5, 2.0)


class BackendError(RuntimeError):
    """The backend answered with something that is not a DNS response."""


class DnsStatus(str, enum.Enum):
    NOERROR = "NOERROR"
    NXDOMAIN = "NXDOMAIN"
    SERVFAIL = "SERVFAIL"
    TIMEOUT = "TIMEOUT"


_RCODES = {0: DnsStatus.NOERROR, 2: DnsStatus.SERVFAIL, 3: DnsStatus.NXDOMAIN}


@dataclass(frozen=True)
class DnsQuery:
    name: str
    rrtype: str
    prefix: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "name", normalize_name(self.name))
        rrtype = self.rrtype.upper()
        if rrtype not in RRTYPES:
            raise InputError(f"unsupported record type {self.rrtype!r}")
        object.__setattr__(self, "rrtype", rrtype)
        if self.prefix is not None:
            prefix = self.prefix.lower().strip(".")
            for label in prefix.split("."):
                check_label(label, self.prefix)
            object.__setattr__(self, "prefix", prefix)

    @property
    def qname(self) -> str:
        if self.prefix:
            return f"{self.prefix}.{self.name}"
        return self.name


@dataclass(frozen=True)
class DnsRecord:
    rrtype: str
    ttl: int
    data: str


@dataclass(frozen=True)
class DnsResponse:
    status: DnsStatus
    records: tuple[DnsRecord, ...] = ()
    authenticated: bool = False
    queried_name: str = ""
    error: Optional[str] = None

    def __post_init__(self) -> None:
        if self.status is not DnsStatus.NOERROR:
            if self.authenticated:
                raise ValueError("authenticated responses must have status NOERROR")
            if self.records:
                raise ValueError("non-NOERROR responses carry no records")

    @property
    def data(self) -> list[str]:
        return [r.data for r in self.records]


@dataclass(frozen=True)
class DomainDnsBundle:
    name: str
    soa: DnsResponse
    a: DnsResponse
    tlsa_443: DnsResponse
    contact_email_txt: DnsResponse
    contact_phone_txt: DnsResponse
    caa_by_ancestor: tuple[tuple[str, DnsResponse], ...] = field(default_factory=tuple)

    @property
    def dnssec_signed(self) -> bool:
        """Whether any apex answer came back with the AD bit set."""
        return self.soa.authenticated or self.a.authenticated


def caa_ancestor_walk(name: str) -> list[str]:
    """Names whose CAA RRset may govern ``name``, closest first.

    The leftmost label is stripped repeatedly down to the TLD. A two-label
    country-code registry suffix such as ``co.uk`` is treated as the TLD.
    """
    current: Optional[str] = normalize_name(name)
    walk = []
    while current is not None:
        walk.append(current)
        if is_registry_suffix(current):
            break
        current = parent(current)
    return walk


class DnsBackend(Protocol):
    def resolve(self, qname: str, rrtype: str) -> DnsResponse: ...


class FixtureDnsBackend:
    """Serves answers from ``{"<qname>|<rrtype>": {status, ad, records}}``.

    Query names missing from the document answer NOERROR with no records.
    """

    def __init__(self, document: Mapping[str, Mapping]):
        entries = {}
        for key, value in document.items():
            qname, sep, rrtype = key.rpartition("|")
            if not sep:
                raise BackendError(f"fixture key {key!r} lacks '|<rrtype>'")
            entries[(qname.lower().rstrip("."), rrtype.upper())] = _fixture_response(key, value)
        self._entries = entries

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureDnsBackend":
        with open(path, encoding="utf-8") as handle:
            return cls(json.load(handle))

    def resolve(self, qname: str, rrtype: str) -> DnsResponse:
        found = self._entries.get((qname, rrtype))
        if found is None:
            return DnsResponse(DnsStatus.NOERROR, (), False, qname)
        return DnsResponse(found.status, found.records, found.authenticated, qname)


def _fixture_response(key: str, value: Mapping) -> DnsResponse:
    try:
        status = DnsStatus(str(value.get("status", "NOERROR")).upper())
        rrtype = key.rpartition("|")[2].upper()
        records = tuple(
            DnsRecord(rrtype, int(value.get("ttl", 300)), str(data))
            for data in value.get("records", [])
        )
    except (ValueError, TypeError, AttributeError) as exc:
        raise BackendError(f"bad fixture entry {key!r}: {exc}") from exc
    if status is not DnsStatus.NOERROR:
        records = ()
    authenticated = bool(value.get("ad", False)) and status is DnsStatus.NOERROR
    return DnsResponse(status, records, authenticated, key.rpartition("|")[0])


class DohBackend:
    """DNS-over-HTTPS JSON API client (``application/dns-json``).

    Every query sets ``do=1`` so the resolver performs DNSSEC validation
    and reports the AD flag.
    """

    def __init__(
        self,
        url: str = "https://dns.google/resolve",
        *,
        session: Optional[requests.Session] = None,
        limiter: TokenBucket = UNLIMITED,
        timeout: float = 5.0,
        backoff: Sequence[float] = RETRY_BACKOFF,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.url = url
        self.session = session or requests.Session()
        self.limiter = limiter
        self.timeout = timeout
        self.backoff = tuple(backoff)
        self._sleep = sleep

    def resolve(self, qname: str, rrtype: str) -> DnsResponse:
        params = {"name": qname, "type": rrtype, "do": "1"}
        headers = {"Accept": "application/dns-json"}
        last_error = ""
        for attempt in range(len(self.backoff) + 1):
            if attempt:
                self._sleep(self.backoff[attempt - 1])
            self.limiter.acquire()
            try:
                reply = self.session.get(self.url, params=params, headers=headers, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                continue
            if reply.status_code >= 500 or reply.status_code == 429:
                last_error = f"HTTP {reply.status_code}"
                continue
            if reply.status_code != 200:
                raise BackendError(f"HTTP {reply.status_code} from DoH endpoint")
            try:
                payload = reply.json()
            except ValueError as exc:
                raise BackendError(f"non-JSON DoH payload: {exc}") from exc
            return parse_doh_payload(payload, qname, rrtype)
        LOGGER.warning("DoH query %s/%s timed out: %s", qname, rrtype, last_error)
        return DnsResponse(DnsStatus.TIMEOUT, (), False, qname, error=last_error or "timeout")


def parse_doh_payload(payload: object, qname: str, rrtype: str) -> DnsResponse:
    if not isinstance(payload, dict) or not isinstance(payload.get("Status"), int):
        raise BackendError("DoH payload lacks an integer 'Status' field")
    status = _RCODES.get(payload["Status"], DnsStatus.SERVFAIL)
    if status is not DnsStatus.NOERROR:
        return DnsResponse(status, (), False, qname)
    code = RRTYPE_CODES[rrtype]
    records = []
    for answer in payload.get("Answer") or []:
        try:
            if int(answer["type"]) != code:
                continue  # CNAME hops are followed by the resolver
            records.append(DnsRecord(rrtype, int(answer.get("TTL", 0)), str(answer["data"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed DoH answer {answer!r}") from exc
    return DnsResponse(status, tuple(records), bool(payload.get("AD", False)), qname)


def query_records(q: DnsQuery, backend: DnsBackend) -> DnsResponse:
    return backend.resolve(q.qname, q.rrtype)


def safe_query(q: DnsQuery, backend: DnsBackend) -> DnsResponse:
    try:
        return query_records(q, backend)
    except BackendError as exc:
        return DnsResponse(DnsStatus.SERVFAIL, (), False, q.qname, error=str(exc))


def collect_domain_dns(name: str, backend: DnsBackend) -> DomainDnsBundle:
    """Run the full per-domain query plan. Failed queries stay in the bundle."""
    name = normalize_name(name)
    caa = tuple((ancestor, safe_query(DnsQuery(ancestor, "CAA"), backend))
                for ancestor in caa_ancestor_walk(name))
    return DomainDnsBundle(
        name=name,
        soa=safe_query(DnsQuery(name, "SOA"), backend),
        a=safe_query(DnsQuery(name, "A"), backend),
        tlsa_443=safe_query(DnsQuery(name, "TLSA", TLSA_443_PREFIX), backend),
        contact_email_txt=safe_query(DnsQuery(name, "TXT", CONTACT_EMAIL_PREFIX), backend),
        contact_phone_txt=safe_query(DnsQuery(name, "TXT", CONTACT_PHONE_PREFIX), backend),
        caa_by_ancestor=caa,
    )


def first_ipv4(response: DnsResponse) -> Optional[str]:
    for record in response.records:
        parts = record.data.split(".")
        if len(parts) == 4 and all(p.isdigit() and int(p) < 256 for p in parts):
            return record.data
    return None


def unquote_txt(data: str) -> str:
    """Join the character-strings of a TXT presentation value."""
    text = data.strip()
    if not text.startswith('"'):
        return text
    chunks: list[str] = []
    buf: list[str] = []
    quoted = False
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == '"':
            if quoted:
                chunks.append("".join(buf))
                buf = []
            quoted = not quoted
        elif ch == "\\" and quoted and i + 1 < len(text):
            i += 1
            buf.append(text[i])
        elif quoted:
            buf.append(ch)
        i += 1
    if buf:
        chunks.append("".join(buf))
    return "".join(chunks)

