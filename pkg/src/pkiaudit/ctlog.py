"""CT-logged certificate retrieval (crt.sh-style JSON API or a fixture store)."""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Optional, Protocol, Sequence

import requests

from .certs import Certificate, CertificateParseError, NameMatch, name_matches, split_pem
from .dane import TlsaRecord, association_data
from .dnsio import RETRY_BACKOFF
from .names import normalize_name
from .ratelimit import UNLIMITED, TokenBucket

LOGGER = logging.getLogger(__name__)


class CtQueryError(RuntimeError):
    """The CT backend failed; no partial result is returned."""


class CapabilityError(CtQueryError):
    """The live backend cannot search by this TLSA selector/matching pair."""


@dataclass(frozen=True)
class CtEntry:
    certificate: Certificate
    entry_id: str
    logged_at: Optional[datetime] = None
    is_precert: bool = False


@dataclass(frozen=True)
class CtQueryResult:
    name: str
    entries: tuple[CtEntry, ...]
    deduplicated: bool = True


def dedup_key(entry: CtEntry) -> tuple[bytes, int]:
    cert = entry.certificate
    return cert.issuer_key, cert.serial


def dedupe(entries: Iterable[CtEntry]) -> list[CtEntry]:
    """One entry per (issuer DN, serial); final certificates beat precerts."""
    chosen: dict[tuple[bytes, int], CtEntry] = {}
    for entry in entries:
        key = dedup_key(entry)
        kept = chosen.get(key)
        if kept is None or (kept.is_precert and not entry.is_precert):
            chosen[key] = entry
    return list(chosen.values())


def _parse_time(value) -> Optional[datetime]:
    if not value:
        return None
    text = str(value).replace("Z", "+00:00")
    try:
        stamp = datetime.fromisoformat(text)
    except ValueError:
        return None
    return stamp if stamp.tzinfo else stamp.replace(tzinfo=timezone.utc)


class CtBackend(Protocol):
    def entries_for_name(self, name: str) -> list[CtEntry]: ...

    def entries_for_tlsa(self, record: TlsaRecord) -> list[CtEntry]: ...


class FixtureCtBackend:
    """Immutable store loaded from ``[{der_base64, logged_at, is_precert}]``."""

    def __init__(self, items: Sequence[dict]):
        entries = []
        for item in items:
            try:
                der = base64.b64decode(item["der_base64"])
                cert = Certificate.from_der(der)
            except (KeyError, ValueError, CertificateParseError) as exc:
                raise CtQueryError(f"bad CT fixture item: {exc}") from exc
            entries.append(CtEntry(
                certificate=cert,
                entry_id=item.get("entry_id") or hashlib.sha256(der).hexdigest()[:16],
                logged_at=_parse_time(item.get("logged_at")),
                is_precert=bool(item.get("is_precert", cert.is_precert)),
            ))
        self._entries = tuple(entries)

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureCtBackend":
        with open(path, encoding="utf-8") as handle:
            return cls(json.load(handle))

    @property
    def entries(self) -> tuple[CtEntry, ...]:
        return self._entries

    def entries_for_name(self, name: str) -> list[CtEntry]:
        return [e for e in self._entries if name_matches(e.certificate, name) is not NameMatch.NO_MATCH]

    def entries_for_tlsa(self, record: TlsaRecord) -> list[CtEntry]:
        return [e for e in self._entries
                if association_data(e.certificate, record.selector, record.matching_type) == record.data]

    def ca_certificates(self) -> list[Certificate]:
        return [e.certificate for e in self._entries if e.certificate.is_ca]


class CrtShBackend:
    """crt.sh JSON interface: name search, then per-id certificate download."""

    def __init__(
        self,
        url: str = "https://crt.sh/",
        *,
        session: Optional[requests.Session] = None,
        limiter: TokenBucket = UNLIMITED,
        timeout: float = 60.0,
        backoff: Sequence[float] = RETRY_BACKOFF,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.url = url
        self.session = session or requests.Session()
        self.limiter = limiter
        self.timeout = timeout
        self.backoff = tuple(backoff)
        self._sleep = sleep

    def _get(self, params: dict) -> requests.Response:
        last = ""
        for attempt in range(len(self.backoff) + 1):
            if attempt:
                self._sleep(self.backoff[attempt - 1])
            self.limiter.acquire()
            try:
                reply = self.session.get(self.url, params=params, timeout=self.timeout)
            except requests.RequestException as exc:
                last = f"{type(exc).__name__}: {exc}"
                continue
            if reply.status_code >= 500 or reply.status_code == 429:
                last = f"HTTP {reply.status_code}"
                continue
            if reply.status_code != 200:
                raise CtQueryError(f"HTTP {reply.status_code} from CT backend")
            return reply
        raise CtQueryError(f"CT backend unavailable after retries: {last}")

    def _rows(self, params: dict) -> list[dict]:
        reply = self._get({**params, "output": "json"})
        if not reply.text.strip():
            return []
        try:
            rows = reply.json()
        except ValueError as exc:
            raise CtQueryError(f"non-JSON CT response: {exc}") from exc
        if not isinstance(rows, list):
            raise CtQueryError("CT response is not a JSON array")
        return rows

    def _download(self, rows: list[dict]) -> list[CtEntry]:
        entries = []
        seen = set()
        for row in rows:
            try:
                cert_id = str(row["id"])
            except (KeyError, TypeError) as exc:
                raise CtQueryError(f"CT row without id: {row!r}") from exc
            if cert_id in seen:
                continue
            seen.add(cert_id)
            blobs = split_pem(self._get({"d": cert_id}).content)
            if not blobs:
                raise CtQueryError(f"no certificate body for CT id {cert_id}")
            try:
                cert = Certificate.from_der(blobs[0])
            except CertificateParseError:
                LOGGER.info("skipping unparseable CT certificate %s", cert_id)
                continue
            entries.append(CtEntry(cert, cert_id, _parse_time(row.get("entry_timestamp")), cert.is_precert))
        return entries

    def entries_for_name(self, name: str) -> list[CtEntry]:
        return self._download(self._rows({"q": name, "exclude": "expired"}))

    def entries_for_tlsa(self, record: TlsaRecord) -> list[CtEntry]:
        if record.matching_type == 2:
            raise CapabilityError("crt.sh cannot search by SHA-512 association data")
        digest = record.data.hex() if record.matching_type == 1 else hashlib.sha256(record.data).hexdigest()
        key = "sha256" if record.selector == 0 else "spkisha256"
        return self._download(self._rows({key: digest}))


def fetch_certs_by_name(name: str, at: datetime, backend: CtBackend) -> CtQueryResult:
    """Logged leaf certificates covering ``name`` and valid at ``at``."""
    name = normalize_name(name)
    entries = [
        e for e in backend.entries_for_name(name)
        if not e.certificate.is_ca
        and e.certificate.within(at)
        and name_matches(e.certificate, name) is not NameMatch.NO_MATCH
    ]
    return CtQueryResult(name, tuple(dedupe(entries)), True)


def fetch_certs_by_tlsa(record: TlsaRecord, backend: CtBackend, name: str = "") -> CtQueryResult:
    if not record.conformant:
        raise CtQueryError(f"cannot search CT for non-conformant TLSA record: {', '.join(record.problems)}")
    entries = [e for e in backend.entries_for_tlsa(record)
               if association_data(e.certificate, record.selector, record.matching_type) == record.data]
    return CtQueryResult(name, tuple(dedupe(entries)), True)
