"""Embedded SCT decoding and signature verification against a known-log list.

Wire formats follow RFC 6962 section 3.2 (v1 SCTs only).
"""

from __future__ import annotations

import base64
import hashlib
import json
import struct
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Union

from cryptography import x509
from cryptography.exceptions import InvalidSignature, UnsupportedAlgorithm
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, padding, rsa

from .caa import ConfigError

SCT_LIST_OID = x509.ObjectIdentifier("1.3.6.1.4.1.11129.2.4.2")

X509_ENTRY = 0
PRECERT_ENTRY = 1
CERTIFICATE_TIMESTAMP = 0

HASH_SHA256 = 4
SIG_RSA = 1
SIG_ECDSA = 3


class SctDecodeError(ValueError):
    pass


@dataclass(frozen=True)
class Sct:
    version: int
    log_id: bytes
    timestamp: int  # milliseconds since the epoch
    extensions: bytes
    hash_algorithm: int
    signature_algorithm: int
    signature: bytes

    @property
    def issued_at(self) -> datetime:
        return datetime.fromtimestamp(self.timestamp / 1000, tz=timezone.utc)


def _der_octets(data: bytes) -> bytes:
    """Contents of a DER OCTET STRING."""
    if len(data) < 2 or data[0] != 0x04:
        raise SctDecodeError("SCT extension is not an OCTET STRING")
    length = data[1]
    offset = 2
    if length & 0x80:
        count = length & 0x7F
        length = int.from_bytes(data[2:2 + count], "big")
        offset = 2 + count
    body = data[offset:offset + length]
    if len(body) != length:
        raise SctDecodeError("truncated OCTET STRING")
    return body


def split_sct_list(data: bytes) -> tuple[bytes, ...]:
    """Split a TLS-encoded SignedCertificateTimestampList."""
    if len(data) < 2:
        raise SctDecodeError("SCT list too short")
    total = int.from_bytes(data[:2], "big")
    if total != len(data) - 2:
        raise SctDecodeError("SCT list length mismatch")
    out = []
    pos = 2
    while pos < len(data):
        if pos + 2 > len(data):
            raise SctDecodeError("truncated SCT length")
        size = int.from_bytes(data[pos:pos + 2], "big")
        pos += 2
        if size == 0 or pos + size > len(data):
            raise SctDecodeError("bad SCT length")
        out.append(data[pos:pos + size])
        pos += size
    return tuple(out)


def extract_sct_list(cert: x509.Certificate) -> tuple[bytes, ...]:
    """Raw SCTs from the embedded SCT-list extension, if any."""
    for ext in cert.extensions:
        if ext.oid == SCT_LIST_OID:
            if isinstance(ext.value, x509.UnrecognizedExtension):
                raw = ext.value.value
            else:
                raw = ext.value.public_bytes()
            return split_sct_list(_der_octets(raw))
    return ()


def parse_sct(raw: bytes) -> Sct:
    try:
        version = raw[0]
        log_id = raw[1:33]
        (timestamp,) = struct.unpack("!Q", raw[33:41])
        (ext_len,) = struct.unpack("!H", raw[41:43])
        extensions = raw[43:43 + ext_len]
        pos = 43 + ext_len
        hash_alg, sig_alg = raw[pos], raw[pos + 1]
        (sig_len,) = struct.unpack("!H", raw[pos + 2:pos + 4])
        signature = raw[pos + 4:pos + 4 + sig_len]
    except (IndexError, struct.error) as exc:
        raise SctDecodeError(f"truncated SCT: {exc}") from exc
    if len(log_id) != 32 or len(extensions) != ext_len or len(signature) != sig_len:
        raise SctDecodeError("truncated SCT")
    if pos + 4 + sig_len != len(raw):
        raise SctDecodeError("trailing bytes after SCT signature")
    if version != 0:
        raise SctDecodeError(f"unsupported SCT version {version}")
    return Sct(version, log_id, timestamp, extensions, hash_alg, sig_alg, signature)


def _u24(data: bytes) -> bytes:
    return len(data).to_bytes(3, "big") + data


def signed_payload(sct: Sct, entry_type: int, entry: bytes, issuer_key_hash: bytes = b"") -> bytes:
    """The ``digitally-signed`` input of an SCT.

    ``entry`` is the certificate DER for x509 entries and the precert TBS
    (SCT list and poison removed) for precert entries.
    """
    head = struct.pack("!BBQH", sct.version, CERTIFICATE_TIMESTAMP, sct.timestamp, entry_type)
    if entry_type == PRECERT_ENTRY:
        body = issuer_key_hash + _u24(entry)
    else:
        body = _u24(entry)
    return head + body + struct.pack("!H", len(sct.extensions)) + sct.extensions


# -- log list ----------------------------------------------------------------

@dataclass(frozen=True)
class KnownLog:
    log_id: bytes
    key_der: bytes
    operator: str
    description: str = ""
    state: str = "usable"

    @property
    def trusted(self) -> bool:
        return self.state != "rejected"

    def public_key(self):
        return serialization.load_der_public_key(self.key_der)


class LogList:
    def __init__(self, logs: list[KnownLog]):
        self._logs = {log.log_id: log for log in logs}

    def __len__(self) -> int:
        return len(self._logs)

    def get(self, log_id: bytes) -> Optional[KnownLog]:
        return self._logs.get(log_id)

    @classmethod
    def from_json(cls, document: Union[str, bytes, dict]) -> "LogList":
        """Load the public known-logs schema: operators -> logs -> {log_id, key, state}."""
        if isinstance(document, (str, bytes)):
            try:
                document = json.loads(document)
            except ValueError as exc:
                raise ConfigError(f"log list is not valid JSON: {exc}") from exc
        logs = []
        try:
            for operator in document.get("operators", []):
                for entry in operator.get("logs", []) + operator.get("tiled_logs", []):
                    key_der = base64.b64decode(entry["key"])
                    log_id = base64.b64decode(entry["log_id"]) if "log_id" in entry \
                        else hashlib.sha256(key_der).digest()
                    states = entry.get("state") or {"usable": {}}
                    logs.append(KnownLog(log_id, key_der, operator.get("name", ""),
                                         entry.get("description", ""), next(iter(states))))
        except (AttributeError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed log list: {exc}") from exc
        return cls(logs)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "LogList":
        try:
            return cls.from_json(Path(path).read_bytes())
        except OSError as exc:
            raise ConfigError(f"cannot read log list {path}: {exc}") from exc


# -- verification --------------------------------------------------------------

@dataclass(frozen=True)
class SctVerdict:
    log_id: bytes
    known_log: bool
    signature_ok: bool
    log_operator: Optional[str] = None
    timestamp: Optional[int] = None
    detail: str = ""

    def __post_init__(self) -> None:
        if self.signature_ok and not self.known_log:
            raise ValueError("a signature can only verify against a known log")


def check_signature(log: KnownLog, sct: Sct, payload: bytes) -> bool:
    if sct.hash_algorithm != HASH_SHA256:
        return False
    try:
        key = log.public_key()
        if sct.signature_algorithm == SIG_ECDSA and isinstance(key, ec.EllipticCurvePublicKey):
            key.verify(sct.signature, payload, ec.ECDSA(hashes.SHA256()))
        elif sct.signature_algorithm == SIG_RSA and isinstance(key, rsa.RSAPublicKey):
            key.verify(sct.signature, payload, padding.PKCS1v15(), hashes.SHA256())
        else:
            return False
    except (InvalidSignature, ValueError, UnsupportedAlgorithm):
        return False
    return True


def verify_sct(
    raw: bytes, tbs: bytes, issuer_spki: bytes, logs: LogList, entry_type: int = PRECERT_ENTRY
) -> SctVerdict:
    """Verify one raw SCT over ``tbs`` (precert TBS or full cert DER)."""
    try:
        sct = parse_sct(raw)
    except SctDecodeError as exc:
        log_id = bytes(raw[1:33]) if len(raw) >= 33 else b""
        log = logs.get(log_id)
        return SctVerdict(log_id, log is not None and log.trusted, False,
                          log.operator if log else None, None, f"undecodable SCT: {exc}")
    log = logs.get(sct.log_id)
    if log is None or not log.trusted:
        detail = "log not in the known-log list" if log is None else f"log state {log.state}"
        return SctVerdict(sct.log_id, False, False, log.operator if log else None, sct.timestamp, detail)
    payload = signed_payload(sct, entry_type, tbs, hashlib.sha256(issuer_spki).digest())
    ok = check_signature(log, sct, payload)
    return SctVerdict(sct.log_id, True, ok, log.operator, sct.timestamp, "" if ok else "bad signature")


def verify_scts(leaf, issuer, logs: LogList) -> list[SctVerdict]:
    """Check every SCT embedded in ``leaf`` (a certs.Certificate).

    ``issuer`` is the certificate that signed the leaf; its SPKI hash binds
    the precert entry. Without an issuer no signature can be checked.
    """
    if not leaf.embedded_scts:
        return []
    tbs = leaf.x509.tbs_precertificate_bytes
    if issuer is None:
        verdicts = []
        for raw in leaf.embedded_scts:
            log_id = bytes(raw[1:33])
            log = logs.get(log_id)
            known = log is not None and log.trusted
            verdicts.append(SctVerdict(log_id, known, False, log.operator if log else None,
                                       None, "issuer certificate unavailable"))
        return verdicts
    return [verify_sct(raw, tbs, issuer.spki_der, logs) for raw in leaf.embedded_scts]
