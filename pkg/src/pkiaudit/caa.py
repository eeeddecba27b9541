"""CAA record parsing, validation and certificate-issuer classification."""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from .names import InputError, is_valid_name, normalize_name


class ConfigError(ValueError):
    """A configuration document (mapping, trust store, log list) is unusable."""


class TagKind(str, enum.Enum):
    ISSUE = "Issue"
    ISSUEWILD = "IssueWild"
    IODEF = "Iodef"
    UNKNOWN = "Unknown"


class UnknownKind(str, enum.Enum):
    RECOGNIZED_ELSEWHERE = "UnrecognizedKnownElsewhere"
    MISSPELLING = "Misspelling"
    MALFORMED_FORMAT = "MalformedFormat"
    OTHER = "Other"


class ValueKind(str, enum.Enum):
    ISSUER = "Issuer"
    EMPTY = "ExplicitEmpty"
    MALFORMED = "Malformed"


class NameKind(str, enum.Enum):
    FQDN = "FQDN"
    WILDCARD = "Wildcard"


class MatchState(str, enum.Enum):
    NO_CAA = "NoCaa"
    IMPLICIT_MATCH = "ImplicitMatch"
    ISSUER_MATCH = "IssuerMatch"
    ISSUER_MISMATCH = "IssuerMismatch"
    MALFORMED_MISMATCH = "MalformedMismatch"
    EMPTY_MISMATCH = "EmptyMismatch"


STANDARD_TAGS = ("issue", "issuewild", "iodef")
# Property tags defined outside RFC 8659: CA/B Forum BR appendix A
# (contactemail, contactphone), RFC 9495 (issuemail), BIMI (issuevmc) and
# the tags RFC 8659 reserves from earlier drafts.
RECOGNIZED_ELSEWHERE = frozenset(
    {"contactemail", "contactphone", "issuemail", "issuevmc", "auth", "path", "policy"}
)
MISSPELLING_TARGETS = ("issue", "issuewild", "iodef", "contactemail", "contactphone")
MISSPELLING_DISTANCE = 2

_TAG_KINDS = {"issue": TagKind.ISSUE, "issuewild": TagKind.ISSUEWILD, "iodef": TagKind.IODEF}
_ALNUM_RE = re.compile(r"^[a-z0-9]+$")


def levenshtein(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def classify_unknown_tag(tag: str) -> UnknownKind:
    lowered = tag.lower()
    if lowered in RECOGNIZED_ELSEWHERE:
        return UnknownKind.RECOGNIZED_ELSEWHERE
    if not _ALNUM_RE.match(lowered):
        return UnknownKind.MALFORMED_FORMAT
    if any(levenshtein(lowered, t) <= MISSPELLING_DISTANCE for t in MISSPELLING_TARGETS):
        return UnknownKind.MISSPELLING
    return UnknownKind.OTHER


@dataclass(frozen=True)
class CaaRecord:
    flags: int
    tag: str
    value: bytes
    tag_kind: TagKind
    unknown_kind: Optional[UnknownKind] = None

    @property
    def critical(self) -> bool:
        return bool(self.flags & 0x80)

    @property
    def text(self) -> str:
        return self.value.decode("latin-1")

    def to_presentation(self) -> str:
        return f'{self.flags} {self.tag} "{_escape(self.value)}"'


def parse_caa_record(flags: int, tag: str, value: Union[bytes, str]) -> CaaRecord:
    """Build a CaaRecord; malformation is recorded, never raised."""
    if isinstance(value, str):
        value = value.encode("latin-1", errors="replace")
    flags = int(flags) & 0xFF
    kind = _TAG_KINDS.get(tag.lower(), TagKind.UNKNOWN)
    unknown = classify_unknown_tag(tag) if kind is TagKind.UNKNOWN else None
    return CaaRecord(flags, tag, bytes(value), kind, unknown)


def _escape(value: bytes) -> str:
    out = []
    for byte in value:
        if byte in (0x22, 0x5C):
            out.append("\\" + chr(byte))
        elif 0x20 <= byte <= 0x7E:
            out.append(chr(byte))
        else:
            out.append(f"\\{byte:03d}")
    return "".join(out)


def _read_quoted(text: str) -> bytes:
    out = bytearray()
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            digits = text[i + 1:i + 4]
            if len(digits) == 3 and digits.isdigit():
                out.append(int(digits) & 0xFF)
                i += 4
                continue
            out.extend(text[i + 1].encode("latin-1", errors="replace"))
            i += 2
            continue
        out.extend(ch.encode("latin-1", errors="replace"))
        i += 1
    return bytes(out)


def parse_caa_presentation(data: str) -> CaaRecord:
    """Parse ``flags tag value`` text or RFC 3597 ``\\# len hex`` form."""
    text = data.strip()
    if text.startswith("\\#"):
        parts = text[2:].split()
        try:
            length = int(parts[0])
            wire = bytes.fromhex("".join(parts[1:]))
        except (IndexError, ValueError) as exc:
            raise InputError(f"bad generic CAA rdata {data!r}") from exc
        if len(wire) != length or len(wire) < 2 or len(wire) < 2 + wire[1]:
            raise InputError(f"truncated generic CAA rdata {data!r}")
        taglen = wire[1]
        tag = wire[2:2 + taglen].decode("latin-1")
        return parse_caa_record(wire[0], tag, wire[2 + taglen:])
    parts = text.split(None, 2)
    if len(parts) < 2 or not parts[0].isdigit():
        raise InputError(f"bad CAA presentation {data!r}")
    raw = parts[2] if len(parts) == 3 else ""
    if len(raw) >= 2 and raw[0] == '"' and raw[-1] == '"':
        value = _read_quoted(raw[1:-1])
    else:
        value = _read_quoted(raw)
    return parse_caa_record(int(parts[0]), parts[1], value)


# -- issue / issuewild value grammar (RFC 8659 section 4.2) ------------------

@dataclass(frozen=True)
class IssueValue:
    kind: ValueKind
    issuer_domain: Optional[str] = None
    parameters: tuple[tuple[str, str], ...] = ()


MALFORMED = IssueValue(ValueKind.MALFORMED)

_WSP = " \t"


def _is_alnum(ch: str) -> bool:
    return ("a" <= ch <= "z") or ("A" <= ch <= "Z") or ("0" <= ch <= "9")


def _scan_label(text: str, i: int) -> int:
    """End index of the label starting at ``i`` or -1 when there is none."""
    if i >= len(text) or not _is_alnum(text[i]):
        return -1
    j = i
    while j < len(text) and (_is_alnum(text[j]) or text[j] == "-"):
        j += 1
    if text[j - 1] == "-":
        return -1
    return j


def _skip_wsp(text: str, i: int) -> int:
    while i < len(text) and text[i] in _WSP:
        i += 1
    return i


def parse_issue_value(value: Union[bytes, str]) -> IssueValue:
    """Parse an issue/issuewild value. Grammar violations yield Malformed."""
    if isinstance(value, bytes):
        try:
            text = value.decode("ascii")
        except UnicodeDecodeError:
            return MALFORMED
    else:
        text = value
    n = len(text)
    i = _skip_wsp(text, 0)

    domain = None
    end = _scan_label(text, i)
    if end > 0:
        while end < n and text[end] == ".":
            nxt = _scan_label(text, end + 1)
            if nxt < 0:
                return MALFORMED
            end = nxt
        domain = text[i:end].lower()
        i = _skip_wsp(text, end)

    params: list[tuple[str, str]] = []
    if i < n:
        if text[i] != ";":
            return MALFORMED
        i = _skip_wsp(text, i + 1)
        while i < n:
            tag_end = _scan_label(text, i)
            if tag_end < 0:
                return MALFORMED
            key = text[i:tag_end]
            i = _skip_wsp(text, tag_end)
            if i >= n or text[i] != "=":
                return MALFORMED
            i = _skip_wsp(text, i + 1)
            start = i
            while i < n and "\x21" <= text[i] <= "\x7e" and text[i] != ";":
                i += 1
            params.append((key, text[start:i]))
            i = _skip_wsp(text, i)
            if i < n:
                if text[i] != ";":
                    return MALFORMED
                i = _skip_wsp(text, i + 1)
                if i >= n:
                    return MALFORMED  # ';' must introduce another parameter

    if domain is None:
        return IssueValue(ValueKind.EMPTY, None, tuple(params))
    return IssueValue(ValueKind.ISSUER, domain, tuple(params))


# -- iodef -------------------------------------------------------------------

class IodefKind(str, enum.Enum):
    VALID = "Valid"
    INVALID_SCHEME = "InvalidScheme"
    LIKELY_EMAIL = "LikelyEmail"
    LIKELY_HTTP = "LikelyHttp"
    GARBAGE = "Garbage"


@dataclass(frozen=True)
class IodefVerdict:
    kind: IodefKind
    scheme: Optional[str] = None
    detail: Optional[str] = None

    @property
    def valid(self) -> bool:
        return self.kind is IodefKind.VALID


_SCHEME_RE = re.compile(r"^([A-Za-z][A-Za-z0-9+.-]*):")
_HOST_RE = re.compile(
    r"^(?://)?(?:[A-Za-z0-9](?:[A-Za-z0-9-]*[A-Za-z0-9])?\.)+[A-Za-z]{2,63}\.?(?::\d+)?(?:[/?#]|$)"
)
_MAILBOX_RE = re.compile(r"^[^@\s]+@[A-Za-z0-9](?:[A-Za-z0-9.-]*[A-Za-z0-9])?$")
_URL_HOST_RE = re.compile(r"^[A-Za-z0-9.-]+(?::\d+)?$|^\[[0-9A-Fa-f:.]+\](?::\d+)?$")


def validate_iodef(value: Union[str, bytes]) -> IodefVerdict:
    if isinstance(value, bytes):
        value = value.decode("latin-1")
    text = value.strip()
    scheme_match = _SCHEME_RE.match(text)
    scheme = scheme_match.group(1).lower() if scheme_match else None
    if scheme in ("mailto", "http", "https"):
        rest = text[scheme_match.end():]
        if scheme == "mailto":
            address = rest.split("?", 1)[0]
            if _MAILBOX_RE.match(address) and " " not in rest:
                return IodefVerdict(IodefKind.VALID, "mailto")
            return IodefVerdict(IodefKind.INVALID_SCHEME, scheme, "malformed mailto URL")
        if rest.startswith("//") and " " not in rest:
            host = re.split(r"[/?#]", rest[2:], maxsplit=1)[0]
            if "@" in host:
                host = host.rsplit("@", 1)[1]
            if host and _URL_HOST_RE.match(host):
                return IodefVerdict(IodefKind.VALID, scheme)
        return IodefVerdict(IodefKind.INVALID_SCHEME, scheme, f"malformed {scheme} URL")
    if "@" in text and scheme is None:
        return IodefVerdict(IodefKind.LIKELY_EMAIL)
    if text.startswith("//") or _HOST_RE.match(text):
        return IodefVerdict(IodefKind.LIKELY_HTTP)
    if ":" in text:
        return IodefVerdict(IodefKind.INVALID_SCHEME, scheme, f"unknown scheme {text.split(':', 1)[0]!r}")
    return IodefVerdict(IodefKind.GARBAGE)


# -- relevant record set ---------------------------------------------------------

@dataclass(frozen=True)
class RelevantCaaSet:
    source_name: str
    depth: int
    records: tuple[CaaRecord, ...]

    def __post_init__(self) -> None:
        if not self.records:
            raise ValueError("a relevant CAA set is never empty")


def relevant_caa_set(walk: Sequence[tuple[str, Sequence[CaaRecord]]]) -> Optional[RelevantCaaSet]:
    """Closest ancestor (self first) with a non-empty CAA RRset."""
    for depth, (name, records) in enumerate(walk):
        if records:
            return RelevantCaaSet(name, depth, tuple(records))
    return None


# -- CAA string -> CA mapping ---------------------------------------------------

@dataclass(frozen=True)
class CaMapping:
    entries: Mapping[str, frozenset[str]] = field(default_factory=dict)

    def identities(self, caa_string: str) -> frozenset[str]:
        return self.entries.get(caa_string.lower(), frozenset())

    def __contains__(self, caa_string: str) -> bool:
        return caa_string.lower() in self.entries


def load_ca_mapping(document: Union[str, bytes, Mapping, Sequence]) -> CaMapping:
    """Load ``{"caa-string": ["Org", ...]}``.

    Accepts JSON text or an already-decoded object. A list of ``[key,
    orgs]`` pairs is accepted too so repeated keys can be expressed; repeated
    keys (also in JSON text) merge by union.
    """
    if isinstance(document, (str, bytes)):
        if not document.strip():
            return CaMapping({})
        try:
            pairs = json.loads(document, object_pairs_hook=lambda items: items)
        except ValueError as exc:
            raise ConfigError(f"CA mapping is not valid JSON: {exc}") from exc
    elif isinstance(document, Mapping):
        pairs = list(document.items())
    else:
        pairs = list(document)
    if not isinstance(pairs, list):
        raise ConfigError("CA mapping must be a JSON object")

    merged: dict[str, set[str]] = {}
    for item in pairs:
        try:
            key, orgs = item
        except (TypeError, ValueError):
            raise ConfigError(f"bad CA mapping entry {item!r}") from None
        if not isinstance(key, str) or not is_valid_name(key):
            raise ConfigError(f"CA mapping key {key!r} is not a domain name")
        if isinstance(orgs, str) or not isinstance(orgs, (list, tuple)):
            raise ConfigError(f"CA mapping value for {key!r} must be a list of organizations")
        names = {o for o in orgs if isinstance(o, str) and o.strip()}
        if len(names) != len(orgs):
            raise ConfigError(f"CA mapping value for {key!r} has non-text or blank entries")
        merged.setdefault(normalize_name(key), set()).update(names)
    for key, names in merged.items():
        if not names:
            raise ConfigError(f"CA mapping entry {key!r} names no organization")
    return CaMapping({k: frozenset(v) for k, v in merged.items()})


def load_ca_mapping_file(path: Union[str, Path]) -> CaMapping:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read CA mapping {path}: {exc}") from exc
    return load_ca_mapping(text)


def default_ca_mapping() -> CaMapping:
    return load_ca_mapping_file(Path(__file__).with_name("data") / "ca_mapping.json")


# -- six-state matcher -------------------------------------------------------------

@dataclass(frozen=True)
class CaIdentity:
    """Who signed a certificate: subject organization plus domain-name hints."""

    organization: str
    domain_hints: tuple[str, ...] = ()
    flagged: bool = False

    @classmethod
    def of(cls, issuer: Union["CaIdentity", str]) -> "CaIdentity":
        if isinstance(issuer, CaIdentity):
            return issuer
        return cls(issuer or "", (), not issuer)


@dataclass(frozen=True)
class CaaMatchState:
    state: MatchState
    deciding_tag: Optional[TagKind] = None
    matched_strings: tuple[str, ...] = ()

    @property
    def is_mismatch(self) -> bool:
        return self.state in (
            MatchState.ISSUER_MISMATCH,
            MatchState.MALFORMED_MISMATCH,
            MatchState.EMPTY_MISMATCH,
        )


def issuer_matches(caa_string: str, issuer: CaIdentity, mapping: CaMapping) -> bool:
    org = issuer.organization.casefold()
    if caa_string in mapping:
        return bool(org) and any(org == o.casefold() for o in mapping.identities(caa_string))
    return any(caa_string == hint.lower() for hint in issuer.domain_hints)


def governing_records(records: Iterable[CaaRecord], name_kind: NameKind) -> tuple[TagKind, list[CaaRecord]]:
    records = list(records)
    if name_kind is NameKind.WILDCARD:
        wild = [r for r in records if r.tag_kind is TagKind.ISSUEWILD]
        if wild:
            return TagKind.ISSUEWILD, wild
    return TagKind.ISSUE, [r for r in records if r.tag_kind is TagKind.ISSUE]


def match_caa(
    issuer: Union[CaIdentity, str],
    name_kind: NameKind,
    relevant: Optional[RelevantCaaSet],
    mapping: CaMapping,
) -> CaaMatchState:
    """Classify a certificate issuer against the relevant CAA set."""
    if relevant is None:
        return CaaMatchState(MatchState.NO_CAA)
    identity = CaIdentity.of(issuer)
    if any(r.tag_kind is TagKind.UNKNOWN and r.critical for r in relevant.records):
        # an unknown critical property forbids issuance outright
        return CaaMatchState(MatchState.ISSUER_MISMATCH)

    tag, governing = governing_records(relevant.records, name_kind)
    if not governing:
        return CaaMatchState(MatchState.IMPLICIT_MATCH)

    values = [parse_issue_value(r.value) for r in governing]
    issuers = sorted({v.issuer_domain for v in values if v.kind is ValueKind.ISSUER})
    matched = tuple(s for s in issuers if issuer_matches(s, identity, mapping))
    if matched:
        return CaaMatchState(MatchState.ISSUER_MATCH, tag, matched)
    if issuers:
        return CaaMatchState(MatchState.ISSUER_MISMATCH, tag)
    if any(v.kind is ValueKind.EMPTY for v in values):
        return CaaMatchState(MatchState.EMPTY_MISMATCH)
    return CaaMatchState(MatchState.MALFORMED_MISMATCH)


# -- explanations -------------------------------------------------------------

_EXPLAIN_ORDER = {TagKind.ISSUE: 0, TagKind.ISSUEWILD: 1, TagKind.IODEF: 2, TagKind.UNKNOWN: 3}


def explain_caa(relevant: RelevantCaaSet, mapping: CaMapping) -> list[str]:
    records = sorted(relevant.records, key=lambda r: (_EXPLAIN_ORDER[r.tag_kind], r.tag.lower(), r.value))
    has_wild = any(r.tag_kind is TagKind.ISSUEWILD for r in records)
    lines = []
    for record in records:
        lines.append(_explain_one(record, has_wild, mapping))
    if not any(r.tag_kind in (TagKind.ISSUE, TagKind.ISSUEWILD) for r in records):
        lines.append("no issue or issuewild record: issuance is not constrained")
    return lines


def _who(domain: str, mapping: CaMapping) -> str:
    orgs = sorted(mapping.identities(domain))
    if orgs:
        return f"{domain} (CAs: {', '.join(orgs)})"
    return f"{domain} (not in CA mapping)"


def _explain_one(record: CaaRecord, has_wild: bool, mapping: CaMapping) -> str:
    shown = record.to_presentation()
    if record.tag_kind in (TagKind.ISSUE, TagKind.ISSUEWILD):
        parsed = parse_issue_value(record.value)
        if record.tag_kind is TagKind.ISSUE:
            scope = "FQDN certificates" if has_wild else "FQDN and wildcard certificates"
        else:
            scope = "wildcard certificates"
        if parsed.kind is ValueKind.ISSUER:
            line = f"{shown}: {_who(parsed.issuer_domain, mapping)} may issue {scope}"
            if parsed.parameters:
                keys = ", ".join(k for k, _ in parsed.parameters)
                line += f" (parameters {keys} not evaluated)"
            return line
        if parsed.kind is ValueKind.EMPTY:
            return f"{shown}: grants no CA; {scope} are forbidden unless another record grants one"
        return f"{shown}: malformed value, treated as ';'; grants no CA for {scope}"
    if record.tag_kind is TagKind.IODEF:
        verdict = validate_iodef(record.value)
        if verdict.valid:
            return f"{shown}: CAs report violations to {record.text}"
        return f"{shown}: invalid iodef ({verdict.kind.value}); violation reports cannot be delivered"
    if record.critical:
        return f"{shown}: unknown critical tag ({record.unknown_kind.value}); CAs must refuse issuance"
    return f"{shown}: unknown tag ({record.unknown_kind.value}); ignored by CAs"
