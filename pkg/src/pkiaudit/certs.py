"""X.509 parsing, SAN matching, chain validation and issuer identity."""

from __future__ import annotations

import enum
import hashlib
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union
from urllib.parse import urlsplit

from cryptography import x509
from cryptography.exceptions import InvalidSignature, UnsupportedAlgorithm
from cryptography.hazmat.primitives import serialization
from cryptography.x509.oid import ExtensionOID, NameOID

from .caa import CaIdentity, ConfigError

CT_POISON_OID = x509.ObjectIdentifier("1.3.6.1.4.1.11129.2.4.3")

_PEM_RE = re.compile(rb"-----BEGIN CERTIFICATE-----.+?-----END CERTIFICATE-----", re.DOTALL)
MAX_PATH_LENGTH = 10


class CertificateParseError(ValueError):
    pass


def _utc(value: datetime) -> datetime:
    return value if value.tzinfo else value.replace(tzinfo=timezone.utc)


def _name_fields(name: x509.Name) -> tuple[tuple[str, str], ...]:
    out = []
    for attr in name:
        key = attr.rfc4514_attribute_name
        out.append((key, attr.value if isinstance(attr.value, str) else attr.value.hex()))
    return tuple(out)


def _org(name: x509.Name) -> str:
    values = name.get_attributes_for_oid(NameOID.ORGANIZATION_NAME)
    return str(values[0].value) if values else ""


@dataclass(frozen=True, eq=False)
class Certificate:
    der: bytes
    subject: tuple[tuple[str, str], ...]
    issuer: tuple[tuple[str, str], ...]
    san: tuple[str, ...]
    not_before: datetime
    not_after: datetime
    spki_der: bytes
    serial: int
    is_ca: bool
    embedded_scts: tuple[bytes, ...]
    is_precert: bool
    x509: x509.Certificate = field(repr=False)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Certificate) and other.der == self.der

    def __hash__(self) -> int:
        return hash(self.der)

    @classmethod
    def from_der(cls, der: bytes) -> "Certificate":
        from .sct import extract_sct_list  # avoid import cycle

        try:
            cert = x509.load_der_x509_certificate(der)
            extensions = cert.extensions
            try:
                san_ext = extensions.get_extension_for_class(x509.SubjectAlternativeName)
                san = tuple(n.lower() for n in san_ext.value.get_values_for_type(x509.DNSName))
            except x509.ExtensionNotFound:
                san = ()
            try:
                is_ca = extensions.get_extension_for_class(x509.BasicConstraints).value.ca
            except x509.ExtensionNotFound:
                is_ca = False
            is_precert = any(e.oid == CT_POISON_OID for e in extensions)
            scts = extract_sct_list(cert)
            spki = cert.public_key().public_bytes(
                serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
            )
            return cls(
                der=bytes(der),
                subject=_name_fields(cert.subject),
                issuer=_name_fields(cert.issuer),
                san=san,
                not_before=_utc(cert.not_valid_before_utc),
                not_after=_utc(cert.not_valid_after_utc),
                spki_der=spki,
                serial=cert.serial_number,
                is_ca=is_ca,
                embedded_scts=scts,
                is_precert=is_precert,
                x509=cert,
            )
        except (ValueError, TypeError, UnsupportedAlgorithm) as exc:
            raise CertificateParseError(f"unparseable certificate: {exc}") from exc

    @property
    def subject_org(self) -> str:
        return _org(self.x509.subject)

    @property
    def issuer_org(self) -> str:
        return _org(self.x509.issuer)

    @property
    def subject_key(self) -> bytes:
        return self.x509.subject.public_bytes()

    @property
    def issuer_key(self) -> bytes:
        return self.x509.issuer.public_bytes()

    @property
    def self_issued(self) -> bool:
        return self.subject_key == self.issuer_key

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.der).hexdigest()

    @property
    def subject_text(self) -> str:
        return self.x509.subject.rfc4514_string()

    @property
    def issuer_text(self) -> str:
        return self.x509.issuer.rfc4514_string()

    def pem(self) -> str:
        return self.x509.public_bytes(serialization.Encoding.PEM).decode("ascii")

    def within(self, at: datetime) -> bool:
        return self.not_before <= at <= self.not_after


def split_pem(data: Union[bytes, str]) -> list[bytes]:
    """DER blobs of every PEM CERTIFICATE block, in order."""
    if isinstance(data, str):
        data = data.encode("ascii", errors="replace")
    blobs = []
    for block in _PEM_RE.findall(data):
        try:
            blobs.append(x509.load_pem_x509_certificate(block).public_bytes(serialization.Encoding.DER))
        except ValueError:
            blobs.append(block)  # kept so the chain can be reported malformed
    return blobs


@dataclass(frozen=True)
class CertificateChain:
    leaf: Certificate
    intermediates: tuple[Certificate, ...] = ()
    fetched_at: Optional[datetime] = None
    sni_used: str = ""
    tls_errors_suppressed: bool = True
    unparsed: tuple[bytes, ...] = ()

    @property
    def certificates(self) -> tuple[Certificate, ...]:
        return (self.leaf, *self.intermediates)

    def __len__(self) -> int:
        return 1 + len(self.intermediates)

    @property
    def well_ordered(self) -> bool:
        certs = self.certificates
        return all(a.issuer_key == b.subject_key for a, b in zip(certs, certs[1:]))

    @classmethod
    def from_der_list(
        cls,
        blobs: Sequence[bytes],
        *,
        fetched_at: Optional[datetime] = None,
        sni_used: str = "",
        tls_errors_suppressed: bool = True,
    ) -> "CertificateChain":
        parsed, unparsed = [], []
        for blob in blobs:
            try:
                parsed.append(Certificate.from_der(blob))
            except CertificateParseError:
                unparsed.append(bytes(blob))
        if not parsed:
            raise CertificateParseError("no parseable certificate in chain")
        return cls(parsed[0], tuple(parsed[1:]), fetched_at, sni_used, tls_errors_suppressed, tuple(unparsed))

    @classmethod
    def from_pem(cls, data: Union[bytes, str], **kwargs) -> "CertificateChain":
        return cls.from_der_list(split_pem(data), **kwargs)


# -- name matching ---------------------------------------------------------

class NameMatch(str, enum.Enum):
    EXACT_SAN = "ExactSan"
    WILDCARD_SAN = "WildcardSan"
    NO_MATCH = "NoMatch"


def san_covers(san: str, name: str) -> Optional[NameMatch]:
    san = san.lower().rstrip(".")
    name = name.lower().rstrip(".")
    if san == name:
        return NameMatch.EXACT_SAN
    if san.startswith("*.") and "*" not in san[2:]:
        head, sep, rest = name.partition(".")
        if sep and head and head != "*" and rest == san[2:]:
            return NameMatch.WILDCARD_SAN
    return None


def name_matches(cert: Certificate, name: str) -> NameMatch:
    """SAN-only matching; a wildcard covers exactly one leftmost label."""
    found = [m for m in (san_covers(s, name) for s in cert.san) if m is not None]
    if NameMatch.EXACT_SAN in found:
        return NameMatch.EXACT_SAN
    if found:
        return NameMatch.WILDCARD_SAN
    return NameMatch.NO_MATCH


def has_wildcard_san(cert: Certificate) -> bool:
    return any(s.startswith("*.") for s in cert.san)


def has_fqdn_san(cert: Certificate) -> bool:
    return any(not s.startswith("*.") for s in cert.san)


# -- trust store and path validation -----------------------------------------

class ChainVerdict(str, enum.Enum):
    VALID = "Valid"
    EXPIRED = "Expired"
    UNTRUSTED = "Untrusted"
    MALFORMED = "Malformed"


@dataclass(frozen=True)
class ChainStatus:
    verdict: ChainVerdict
    detail: str = ""
    anchor: Optional[str] = None

    @property
    def valid(self) -> bool:
        return self.verdict is ChainVerdict.VALID


class TrustStore:
    """Set of trusted root certificates indexed by subject."""

    def __init__(self, roots: Iterable[Certificate]):
        self.roots = tuple(roots)
        self._ders = {r.der for r in self.roots}
        self._by_subject: dict[bytes, list[Certificate]] = {}
        for root in self.roots:
            self._by_subject.setdefault(root.subject_key, []).append(root)

    @classmethod
    def from_pem(cls, data: Union[bytes, str]) -> "TrustStore":
        roots = []
        for blob in split_pem(data):
            try:
                roots.append(Certificate.from_der(blob))
            except CertificateParseError:
                continue  # a broken root never anchors anything
        return cls(roots)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "TrustStore":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise ConfigError(f"cannot read trust store {path}: {exc}") from exc
        store = cls.from_pem(data)
        if not store.roots:
            raise ConfigError(f"trust store {path} holds no certificates")
        return store

    @classmethod
    def default(cls) -> "TrustStore":
        import certifi

        return cls.from_file(certifi.where())

    def __contains__(self, cert: Certificate) -> bool:
        return cert.der in self._ders

    def issuers_of(self, cert: Certificate) -> list[Certificate]:
        return self._by_subject.get(cert.issuer_key, [])

    def __len__(self) -> int:
        return len(self.roots)


def signed_by(cert: Certificate, issuer: Certificate) -> bool:
    try:
        cert.x509.verify_directly_issued_by(issuer.x509)
    except (InvalidSignature, ValueError, TypeError, UnsupportedAlgorithm):
        return False
    return True


def _window_problem(cert: Certificate, at: datetime) -> Optional[str]:
    if at < cert.not_before:
        return f"not yet valid: {cert.subject_text}"
    if at > cert.not_after:
        return f"expired {cert.not_after.strftime('%Y-%m-%dT%H:%M:%SZ')}: {cert.subject_text}"
    return None


def candidate_paths(
    leaf: Certificate, pool: Sequence[Certificate], store: TrustStore
) -> list[list[Certificate]]:
    """All signature-valid paths from ``leaf`` to a store root."""
    paths: list[list[Certificate]] = []

    def walk(path: list[Certificate]) -> None:
        current = path[-1]
        if current in store:
            paths.append(list(path))
            return
        if len(path) > MAX_PATH_LENGTH:
            return
        for root in store.issuers_of(current):
            if signed_by(current, root):
                paths.append(path + [root])
        for cand in pool:
            if cand in path or cand.subject_key != current.issuer_key or not cand.is_ca:
                continue
            if signed_by(current, cand):
                walk(path + [cand])

    walk([leaf])
    return paths


def validate_chain(
    chain: CertificateChain,
    store: TrustStore,
    at: datetime,
    extra_intermediates: Sequence[Certificate] = (),
) -> ChainStatus:
    """Build and verify a path from the leaf to a trusted root at ``at``.

    Expired means a signature-valid path exists but some certificate on
    every such path is outside its validity window.
    """
    if chain.unparsed:
        return ChainStatus(ChainVerdict.MALFORMED, f"{len(chain.unparsed)} certificate(s) failed to parse")
    pool = list(chain.intermediates) + [c for c in extra_intermediates if c not in chain.intermediates]
    paths = candidate_paths(chain.leaf, pool, store)
    if not paths:
        return ChainStatus(ChainVerdict.UNTRUSTED, f"no path to a trusted root from issuer {chain.leaf.issuer_text}")
    problems = []
    for path in paths:
        issues = [p for p in (_window_problem(c, at) for c in path) if p]
        if not issues:
            return ChainStatus(ChainVerdict.VALID, f"{len(path)} certificate path", path[-1].subject_text)
        problems.append((len(issues), issues[0], path[-1].subject_text))
    problems.sort()
    _, detail, anchor = problems[0]
    return ChainStatus(ChainVerdict.EXPIRED, detail, anchor)


# -- issuer identity ---------------------------------------------------------------

def _hosts(cert: Certificate) -> list[str]:
    hosts = []
    ext = cert.x509.extensions
    try:
        for desc in ext.get_extension_for_oid(ExtensionOID.AUTHORITY_INFORMATION_ACCESS).value:
            if isinstance(desc.access_location, x509.UniformResourceIdentifier):
                hosts.append(urlsplit(desc.access_location.value).hostname or "")
    except x509.ExtensionNotFound:
        pass
    try:
        for point in ext.get_extension_for_oid(ExtensionOID.CRL_DISTRIBUTION_POINTS).value:
            for general in point.full_name or ():
                if isinstance(general, x509.UniformResourceIdentifier):
                    hosts.append(urlsplit(general.value).hostname or "")
    except x509.ExtensionNotFound:
        pass
    return [h.lower() for h in hosts if h]


def _suffixes(host: str) -> list[str]:
    parts = host.split(".")
    return [".".join(parts[i:]) for i in range(len(parts) - 1)]


def issuer_identity(chain: CertificateChain) -> CaIdentity:
    """Subject organization of the certificate that signed the leaf.

    Falls back to the leaf's issuer organization when the signer is not in
    the chain. Domain hints come from the CA's AIA/CRL hosts and the
    signer's DNS names and are used only when the CA mapping misses.
    """
    leaf = chain.leaf
    signer = None
    if leaf.self_issued:
        signer = leaf
    else:
        for cand in chain.intermediates:
            if cand.subject_key == leaf.issuer_key:
                signer = cand
                break
    org = signer.subject_org if signer is not None else leaf.issuer_org

    hints: list[str] = []
    for host in _hosts(leaf):
        hints.extend(_suffixes(host))
    if signer is not None and signer is not leaf:
        hints.extend(signer.san)
        cn = signer.x509.subject.get_attributes_for_oid(NameOID.COMMON_NAME)
        if cn and re.fullmatch(r"[a-z0-9-]+(\.[a-z0-9-]+)+", str(cn[0].value).lower()):
            hints.append(str(cn[0].value).lower())
    unique = tuple(dict.fromkeys(hints))
    return CaIdentity(org, unique, flagged=not org)


def leaf_issuer_identity(cert: Certificate) -> CaIdentity:
    return issuer_identity(CertificateChain(cert))
