"""Target list preparation: input parsing, resolution, port probes, redirects."""

from __future__ import annotations

import ipaddress
import json
import logging
import socket
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Protocol, Sequence
from urllib.parse import urljoin, urlsplit

import requests

from .dnsio import BackendError, DnsBackend, DnsQuery, DnsStatus, query_records
from .names import InputError, is_valid_name, normalize_name
from .ratelimit import UNLIMITED, TokenBucket

LOGGER = logging.getLogger(__name__)

MAX_REDIRECT_HOPS = 10


@dataclass(frozen=True)
class InputEntry:
    rank: Optional[int]
    name: str


@dataclass(frozen=True)
class Dropped:
    name: str
    reason: str


@dataclass(frozen=True)
class Target:
    rank: Optional[int]
    name: str
    resolved_ips: tuple[str, ...] = ()
    port80_open: bool = False
    port443_open: bool = True
    final_name: str = ""
    redirect_hops: int = 0
    redirect_chain: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.final_name:
            object.__setattr__(self, "final_name", self.name)
        if self.redirect_hops > MAX_REDIRECT_HOPS:
            raise ValueError("redirect hops above the cap")

    @classmethod
    def direct(cls, name: str, rank: Optional[int] = None) -> "Target":
        """A target audited as-is, without resolution or redirect probing."""
        return cls(rank, normalize_name(name))


def parse_input_lines(lines: Iterable[str]) -> tuple[list[InputEntry], list[Dropped]]:
    """Read ``domain`` or ``rank,domain`` lines (Tranco CSV compatible)."""
    entries, dropped = [], []
    for raw in lines:
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        rank: Optional[int] = None
        name = line
        if "," in line:
            first, _, name = line.partition(",")
            try:
                rank = int(first)
            except ValueError:
                dropped.append(Dropped(line, "unparseable rank"))
                continue
        try:
            entries.append(InputEntry(rank, normalize_name(name.strip())))
        except InputError as exc:
            dropped.append(Dropped(name.strip(), f"invalid name: {exc}"))
    return entries, dropped


def read_input_file(path: str | Path) -> tuple[list[InputEntry], list[Dropped]]:
    with open(path, encoding="utf-8") as handle:
        return parse_input_lines(handle)


class WebProbe(Protocol):
    def port_open(self, ip: str, port: int) -> bool: ...

    def redirect_location(self, url: str) -> Optional[str]: ...


class LiveWebProbe:
    def __init__(
        self,
        *,
        timeout: float = 5.0,
        limiter: TokenBucket = UNLIMITED,
        session: Optional[requests.Session] = None,
    ) -> None:
        self.timeout = timeout
        self.limiter = limiter
        self.session = session or requests.Session()

    def port_open(self, ip: str, port: int) -> bool:
        self.limiter.acquire()
        try:
            with socket.create_connection((ip, port), timeout=self.timeout):
                return True
        except OSError:
            return False

    def redirect_location(self, url: str) -> Optional[str]:
        self.limiter.acquire()
        try:
            reply = self.session.get(url, allow_redirects=False, timeout=self.timeout,
                                     stream=True, verify=False)
        except requests.RequestException as exc:
            LOGGER.debug("redirect probe of %s failed: %s", url, exc)
            return None
        with reply:
            if 300 <= reply.status_code < 400 and reply.headers.get("Location"):
                return urljoin(url, reply.headers["Location"])
        return None


class FixtureWebProbe:
    """``{"closed_ports": {ip: [port, ...]}, "redirects": {url: location}}``.

    Ports are open unless listed as closed.
    """

    def __init__(self, document: Optional[Mapping] = None):
        document = document or {}
        self._closed = {ip: frozenset(ports) for ip, ports in document.get("closed_ports", {}).items()}
        self._redirects = dict(document.get("redirects", {}))

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureWebProbe":
        with open(path, encoding="utf-8") as handle:
            return cls(json.load(handle))

    def port_open(self, ip: str, port: int) -> bool:
        return port not in self._closed.get(ip, ())

    def redirect_location(self, url: str) -> Optional[str]:
        location = self._redirects.get(url)
        return urljoin(url, location) if location else None


def follow_redirects(start_url: str, probe: WebProbe, cap: int = MAX_REDIRECT_HOPS) -> tuple[str, list[str]]:
    """Follow 3xx responses; returns the final URL and the visited chain.

    Stops at the hop cap or on a loop.
    """
    url = start_url
    visited = [url]
    while len(visited) - 1 < cap:
        location = probe.redirect_location(url)
        if location is None or location in visited:
            break
        url = location
        visited.append(url)
    return url, visited


def _is_ipv4(text: str) -> bool:
    try:
        ipaddress.IPv4Address(text)
    except ValueError:
        return False
    return True


def _host_of(url: str) -> Optional[str]:
    host = urlsplit(url).hostname
    if host and is_valid_name(host) and not _is_ipv4(host):
        return normalize_name(host)
    return None


def prepare_target(entry: InputEntry, dns: DnsBackend, web: WebProbe) -> Target | Dropped:
    try:
        answer = query_records(DnsQuery(entry.name, "A"), dns)
    except BackendError as exc:
        return Dropped(entry.name, f"resolution failed: {exc}")
    if answer.status is DnsStatus.TIMEOUT:
        return Dropped(entry.name, "resolution timeout")
    ips = tuple(r.data for r in answer.records if _is_ipv4(r.data))
    if not ips:
        return Dropped(entry.name, f"did not resolve to an IPv4 address ({answer.status.value})")
    open80 = web.port_open(ips[0], 80)
    open443 = web.port_open(ips[0], 443)
    if not (open80 or open443):
        return Dropped(entry.name, "ports 80 and 443 closed")

    start = f"https://{entry.name}/" if open443 else f"http://{entry.name}/"
    _, chain = follow_redirects(start, web)
    final_name = entry.name
    for url in chain[1:]:
        host = _host_of(url)
        if host is None:
            break
        final_name = host
    return Target(entry.rank, entry.name, ips, open80, open443, final_name, len(chain) - 1, tuple(chain))


def prepare_targets(
    entries: Sequence[InputEntry], dns: DnsBackend, web: WebProbe
) -> tuple[list[Target], list[Dropped]]:
    """Resolve, probe and follow redirects; final names are deduplicated."""
    targets, dropped = [], []
    seen: dict[str, str] = {}
    for entry in entries:
        prepared = prepare_target(entry, dns, web)
        if isinstance(prepared, Dropped):
            dropped.append(prepared)
            continue
        if prepared.final_name in seen:
            dropped.append(Dropped(entry.name, f"duplicate final name {prepared.final_name} (via {seen[prepared.final_name]})"))
            continue
        seen[prepared.final_name] = entry.name
        targets.append(prepared)
    return targets, dropped
