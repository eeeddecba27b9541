"""Domain-name normalization and syntax checks shared by every stage."""

from __future__ import annotations

import re

MAX_NAME_OCTETS = 253
MAX_LABEL_OCTETS = 63

_LABEL_RE = re.compile(r"^[a-z0-9_](?:[a-z0-9_-]*[a-z0-9_])?$")

# Generic second-level labels that registries under two-letter country-code
# TLDs hand out as public suffixes (co.uk, com.au, ac.jp, ...).
CCTLD_REGISTRY_LABELS = frozenset(
    {"ac", "co", "com", "edu", "gob", "go", "gov", "govt", "ltd", "me",
     "mil", "ne", "net", "nic", "or", "org", "plc", "sch"}
)


class InputError(ValueError):
    """Raised for syntactically invalid domain names or user input."""


def normalize_name(name: str) -> str:
    """Lowercase, strip one trailing dot and validate ``name``.

    Internationalized names must already be punycode encoded.
    """
    if not isinstance(name, str):
        raise InputError(f"domain name must be text, got {type(name).__name__}")
    candidate = name.strip()
    if candidate.endswith("."):
        candidate = candidate[:-1]
    try:
        candidate.encode("ascii")
    except UnicodeEncodeError:
        raise InputError(f"non-ASCII domain name {name!r}; punycode-encode it first") from None
    candidate = candidate.lower()
    if not candidate:
        raise InputError("empty domain name")
    if len(candidate) > MAX_NAME_OCTETS:
        raise InputError(f"domain name longer than {MAX_NAME_OCTETS} octets")
    for label in candidate.split("."):
        check_label(label, name)
    return candidate


def check_label(label: str, context: str = "") -> None:
    if not label:
        raise InputError(f"empty label in {context or label!r}")
    if len(label) > MAX_LABEL_OCTETS:
        raise InputError(f"label {label[:20]!r}... exceeds {MAX_LABEL_OCTETS} octets")
    if not _LABEL_RE.match(label):
        raise InputError(f"invalid label {label!r} in {context!r}")


def is_valid_name(name: str) -> bool:
    try:
        normalize_name(name)
    except InputError:
        return False
    return True


def labels(name: str) -> list[str]:
    return normalize_name(name).split(".")


def parent(name: str) -> str | None:
    """Name with the leftmost label removed, or None for a single label."""
    head, sep, rest = name.partition(".")
    return rest if sep else None


def is_registry_suffix(name: str) -> bool:
    """True for two-label names such as ``co.uk`` that act as a TLD."""
    parts = name.split(".")
    return (
        len(parts) == 2
        and len(parts[1]) == 2
        and parts[1].isalpha()
        and parts[0] in CCTLD_REGISTRY_LABELS
    )
