"""Capture served certificate chains over TLS, or from PEM fixtures."""

from __future__ import annotations

import logging
import select
import socket
import threading
import time
from collections import defaultdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

from cryptography.hazmat.primitives import serialization
from OpenSSL import SSL

from .certs import CertificateChain, CertificateParseError
from .dnsio import RETRY_BACKOFF
from .ratelimit import UNLIMITED, TokenBucket

LOGGER = logging.getLogger(__name__)


class FetchError(RuntimeError):
    """No chain could be captured (connect, handshake or fixture failure)."""


class ChainSource(Protocol):
    def fetch_chain(self, name: str, ip: Optional[str], port: int = 443) -> CertificateChain: ...


def _now() -> datetime:
    return datetime.now(timezone.utc)


class TlsChainFetcher:
    """Live capture with validation disabled and OpenSSL security level 0.

    Handshakes to the same host are serialized; all handshakes share the
    rate limiter.
    """

    def __init__(
        self,
        *,
        timeout: float = 10.0,
        limiter: TokenBucket = UNLIMITED,
        backoff: Sequence[float] = RETRY_BACKOFF,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], datetime] = _now,
    ) -> None:
        self.timeout = timeout
        self.limiter = limiter
        self.backoff = tuple(backoff)
        self._sleep = sleep
        self._clock = clock
        self._host_locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._guard = threading.Lock()

    def _context(self) -> SSL.Context:
        ctx = SSL.Context(SSL.TLS_METHOD)
        ctx.set_verify(SSL.VERIFY_NONE, lambda *args: True)
        ctx.set_cipher_list(b"ALL:@SECLEVEL=0")
        ctx.set_min_proto_version(0)
        return ctx

    def _host_lock(self, host: str) -> threading.Lock:
        with self._guard:
            return self._host_locks[host]

    def fetch_chain(self, name: str, ip: Optional[str], port: int = 443) -> CertificateChain:
        if not ip:
            raise FetchError(f"no address for {name}")
        last = ""
        for attempt in range(len(self.backoff) + 1):
            if attempt:
                self._sleep(self.backoff[attempt - 1])
            self.limiter.acquire()
            with self._host_lock(ip):
                try:
                    blobs = self._handshake(name, ip, port)
                except (OSError, SSL.Error, FetchError) as exc:
                    last = f"{type(exc).__name__}: {exc}"
                    LOGGER.debug("TLS attempt %d to %s (%s) failed: %s", attempt + 1, name, ip, last)
                    continue
            try:
                return CertificateChain.from_der_list(blobs, fetched_at=self._clock(), sni_used=name)
            except CertificateParseError as exc:
                raise FetchError(str(exc)) from exc
        raise FetchError(f"TLS handshake with {name} at {ip}:{port} failed: {last}")

    def _handshake(self, name: str, ip: str, port: int) -> list[bytes]:
        deadline = time.monotonic() + self.timeout
        sock = socket.create_connection((ip, port), timeout=self.timeout)
        try:
            sock.setblocking(False)
            conn = SSL.Connection(self._context(), sock)
            conn.set_tlsext_host_name(name.encode("ascii"))
            conn.set_connect_state()
            while True:
                try:
                    conn.do_handshake()
                    break
                except SSL.WantReadError:
                    self._wait(sock, deadline, read=True)
                except SSL.WantWriteError:
                    self._wait(sock, deadline, read=False)
            chain = conn.get_peer_cert_chain(as_cryptography=True) or []
            if not chain:
                raise FetchError("server presented no certificate")
            try:
                conn.shutdown()
            except SSL.Error:
                pass
            return [c.public_bytes(serialization.Encoding.DER) for c in chain]
        finally:
            sock.close()

    @staticmethod
    def _wait(sock: socket.socket, deadline: float, *, read: bool) -> None:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise FetchError("handshake timed out")
        ready = select.select([sock] if read else [], [] if read else [sock], [], remaining)
        if not any(ready):
            raise FetchError("handshake timed out")


class FixtureChainSource:
    """Reads ``<dir>/<name>.pem`` bundles, leaf first."""

    def __init__(self, directory: str | Path, clock: Callable[[], datetime] = _now):
        self.directory = Path(directory)
        self._clock = clock

    def fetch_chain(self, name: str, ip: Optional[str] = None, port: int = 443) -> CertificateChain:
        path = self.directory / f"{name}.pem"
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            raise FetchError(f"connection refused: no fixture chain for {name}") from None
        try:
            return CertificateChain.from_pem(data, fetched_at=self._clock(), sni_used=name)
        except CertificateParseError as exc:
            raise FetchError(f"fixture chain for {name}: {exc}") from exc


def fetch_chain(name: str, ip: Optional[str], port: int = 443, source: Optional[ChainSource] = None) -> CertificateChain:
    return (source or TlsChainFetcher()).fetch_chain(name, ip, port)
