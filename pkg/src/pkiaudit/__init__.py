"""Web PKI consistency auditing: CAA, DANE/TLSA, DNSSEC, X.509 chains, SCTs and CT logs."""

from .caa import CaaMatchState, MatchState, match_caa, parse_caa_record, parse_issue_value, relevant_caa_set
from .certs import Certificate, CertificateChain, TrustStore, validate_chain
from .dane import TlsaRecord, evaluate_dane, parse_tlsa, tlsa_match
from .pipeline import AuditConfig, AuditRecord, Backends, audit_domain

__version__ = "0.1.0"

__all__ = [
    "AuditConfig",
    "AuditRecord",
    "Backends",
    "CaaMatchState",
    "Certificate",
    "CertificateChain",
    "MatchState",
    "TlsaRecord",
    "TrustStore",
    "audit_domain",
    "evaluate_dane",
    "match_caa",
    "parse_caa_record",
    "parse_issue_value",
    "parse_tlsa",
    "relevant_caa_set",
    "tlsa_match",
    "validate_chain",
]
