"""Command-line entry point: audit, caa check, dane check, ct fetch, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from cryptography.utils import CryptographyDeprecationWarning

from .caa import (
    CaMapping,
    ConfigError,
    IodefKind,
    RelevantCaaSet,
    TagKind,
    UnknownKind,
    ValueKind,
    default_ca_mapping,
    explain_caa,
    load_ca_mapping_file,
    parse_caa_presentation,
    parse_issue_value,
    relevant_caa_set,
    validate_iodef,
)
from .certs import Certificate, CertificateChain, CertificateParseError, TrustStore, split_pem, validate_chain
from .ctlog import CrtShBackend, CtQueryError, FixtureCtBackend, fetch_certs_by_name
from .dane import evaluate_dane, parse_tlsa
from .dnsio import (
    DnsQuery,
    DohBackend,
    FixtureDnsBackend,
    caa_ancestor_walk,
    collect_domain_dns,
    first_ipv4,
    safe_query,
)
from .names import InputError, normalize_name
from .pipeline import DEFAULT_CONCURRENCY, AuditConfig, Backends, audit_targets
from .ratelimit import TokenBucket
from .report import (
    aggregate,
    dumps_record,
    dumps_summary,
    emit_report,
    iso,
    load_records,
    parse_time,
    record_to_dict,
    summary_csv,
)
from .sct import LogList
from .targets import FixtureWebProbe, LiveWebProbe, WebProbe, prepare_targets, read_input_file
from .tlsfetch import FetchError, FixtureChainSource, TlsChainFetcher

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ATTENTION = 2


@dataclass
class Environment:
    config: AuditConfig
    backends: Backends
    web: WebProbe


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--fixtures", help="offline mode: directory with dns.json, certs/, ct.json")
    parser.add_argument("--doh-url", default="https://dns.google/resolve")
    parser.add_argument("--ct-url", default="https://crt.sh/")
    parser.add_argument("--trust-store", help="PEM bundle of trusted roots")
    parser.add_argument("--log-list", help="known CT logs JSON")
    parser.add_argument("--ca-mapping", help="CAA string to CA organization JSON")
    parser.add_argument("--concurrency", type=int, default=DEFAULT_CONCURRENCY)
    parser.add_argument("--rate-limit", type=float, default=None, help="queries per second per backend")
    parser.add_argument("--at", help="reference time (RFC 3339); defaults to now")
    parser.add_argument("--output", help="output directory")
    parser.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pkiaudit", description="Audit CAA, DANE and CT consistency of domains.")
    sub = parser.add_subparsers(dest="command", required=True)

    audit = sub.add_parser("audit", help="run the full pipeline over an input list")
    audit.add_argument("--input", required=True, help="lines of 'domain' or 'rank,domain'")
    _add_common(audit)

    caa = sub.add_parser("caa", help="CAA tools")
    caa_sub = caa.add_subparsers(dest="caa_command", required=True)
    caa_check = caa_sub.add_parser("check", help="parse, classify and explain CAA records")
    caa_check.add_argument("target", help="domain name or zone file")
    _add_common(caa_check)

    dane = sub.add_parser("dane", help="DANE tools")
    dane_sub = dane.add_subparsers(dest="dane_command", required=True)
    dane_check = dane_sub.add_parser("check", help="match TLSA records against the served chain")
    dane_check.add_argument("name")
    _add_common(dane_check)

    ct = sub.add_parser("ct", help="CT tools")
    ct_sub = ct.add_subparsers(dest="ct_command", required=True)
    ct_fetch = ct_sub.add_parser("fetch", help="list logged certificates valid for a name")
    ct_fetch.add_argument("name")
    _add_common(ct_fetch)

    report = sub.add_parser("report", help="re-aggregate a records.jsonl file")
    report.add_argument("records")
    _add_common(report)
    return parser


def _reference_time(text: Optional[str]) -> datetime:
    if not text:
        return datetime.now(timezone.utc).replace(microsecond=0)
    try:
        return parse_time(text)
    except ValueError as exc:
        raise ConfigError(f"--at is not an RFC 3339 timestamp: {text!r}") from exc


def _optional_file(explicit: Optional[str], fixtures: Optional[Path], name: str) -> Optional[Path]:
    if explicit:
        return Path(explicit)
    if fixtures is not None and (fixtures / name).exists():
        return fixtures / name
    return None


def _load_intermediates(path: Path) -> tuple[Certificate, ...]:
    out = []
    for blob in split_pem(path.read_bytes()):
        try:
            out.append(Certificate.from_der(blob))
        except CertificateParseError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return tuple(out)


def build_environment(args: argparse.Namespace) -> Environment:
    at = _reference_time(args.at)
    fixtures = Path(args.fixtures) if args.fixtures else None
    if fixtures is not None and not fixtures.is_dir():
        raise ConfigError(f"fixture directory {fixtures} does not exist")

    store_path = _optional_file(args.trust_store, fixtures, "roots.pem")
    store = TrustStore.from_file(store_path) if store_path else TrustStore.default()
    logs_path = _optional_file(args.log_list, fixtures, "log_list.json")
    logs = LogList.from_file(logs_path) if logs_path else LogList([])
    mapping_path = _optional_file(args.ca_mapping, fixtures, "ca_mapping.json")
    mapping: CaMapping = load_ca_mapping_file(mapping_path) if mapping_path else default_ca_mapping()
    inter_path = _optional_file(None, fixtures, "intermediates.pem")
    intermediates = _load_intermediates(inter_path) if inter_path else ()
    config = AuditConfig(at, mapping, store, logs, intermediates, max(1, args.concurrency))

    if fixtures is not None:
        try:
            dns = FixtureDnsBackend.from_file(fixtures / "dns.json")
            ct_path = fixtures / "ct.json"
            ct = FixtureCtBackend.from_file(ct_path) if ct_path.exists() else FixtureCtBackend([])
            web_path = fixtures / "web.json"
            web = FixtureWebProbe.from_file(web_path) if web_path.exists() else FixtureWebProbe()
        except (OSError, ValueError, CtQueryError) as exc:
            raise ConfigError(f"unusable fixtures in {fixtures}: {exc}") from exc
        chains = FixtureChainSource(fixtures / "certs", clock=lambda: at)
        return Environment(config, Backends(dns, chains, ct), web)

    def limiter() -> TokenBucket:
        return TokenBucket(args.rate_limit)

    backends = Backends(
        DohBackend(args.doh_url, limiter=limiter()),
        TlsChainFetcher(limiter=limiter()),
        CrtShBackend(args.ct_url, limiter=limiter()),
    )
    return Environment(config, backends, LiveWebProbe(limiter=limiter()))


# -- subcommands ------------------------------------------------------------------------

def cmd_audit(args: argparse.Namespace, env: Environment) -> int:
    try:
        entries, dropped = read_input_file(args.input)
    except OSError as exc:
        raise ConfigError(f"cannot read input {args.input}: {exc}") from exc
    targets, unreachable = prepare_targets(entries, env.backends.dns, env.web)
    records = [record_to_dict(r) for r in audit_targets(targets, env.config, env.backends)]
    summary = aggregate(records, env.config.at, [*dropped, *unreachable])
    paths = emit_report(records, summary, args.format, args.output or "pkiaudit-out")
    for path in paths:
        print(path)
    return EXIT_ATTENTION if any(r["needs_attention"] for r in records) else EXIT_OK


def _read_zone(path: Path) -> dict[str, list]:
    """Collect ``owner [ttl] [class] CAA flags tag value`` lines by owner."""
    by_owner: dict[str, list] = {}
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith(";"):
            continue
        tokens = line.split(None)
        upper = [t.upper() for t in tokens]
        if "CAA" not in upper[1:4]:
            continue
        index = upper.index("CAA", 1)
        rdata = line.split(None, index + 1)[index + 1] if len(tokens) > index + 1 else ""
        try:
            owner = normalize_name(tokens[0])
            by_owner.setdefault(owner, []).append(parse_caa_presentation(rdata))
        except InputError as exc:
            raise ConfigError(f"{path}:{number}: {exc}") from exc
    return by_owner


def _caa_problems(relevant: RelevantCaaSet) -> bool:
    for record in relevant.records:
        if record.tag_kind in (TagKind.ISSUE, TagKind.ISSUEWILD):
            if parse_issue_value(record.value).kind is ValueKind.MALFORMED:
                return True
        elif record.tag_kind is TagKind.IODEF:
            if validate_iodef(record.value).kind is not IodefKind.VALID:
                return True
        elif record.unknown_kind in (UnknownKind.MISSPELLING, UnknownKind.MALFORMED_FORMAT):
            return True
    return False


def cmd_caa_check(args: argparse.Namespace, env: Environment) -> int:
    zone = Path(args.target)
    if zone.is_file():
        sets = [RelevantCaaSet(owner, 0, tuple(records)) for owner, records in sorted(_read_zone(zone).items())]
    else:
        name = normalize_name(args.target)
        walk = []
        for ancestor in caa_ancestor_walk(name):
            response = safe_query(DnsQuery(ancestor, "CAA"), env.backends.dns)
            walk.append((ancestor, [parse_caa_presentation(d) for d in response.data]))
        relevant = relevant_caa_set(walk)
        if relevant is None:
            print(f"{name}: no CAA records up to the TLD; any CA may issue")
            return EXIT_OK
        sets = [relevant]

    problems = False
    for relevant in sets:
        origin = "" if relevant.depth == 0 else f" (inherited, depth {relevant.depth})"
        print(f"{relevant.source_name}{origin}:")
        for line in explain_caa(relevant, env.config.mapping):
            print(f"  {line}")
        problems = problems or _caa_problems(relevant)
    return EXIT_ATTENTION if problems else EXIT_OK


def cmd_dane_check(args: argparse.Namespace, env: Environment) -> int:
    name = normalize_name(args.name)
    bundle = collect_domain_dns(name, env.backends.dns)
    records = [parse_tlsa(d) for d in bundle.tlsa_443.data]
    chain: Optional[CertificateChain] = None
    status = None
    error = None
    try:
        chain = env.backends.chains.fetch_chain(name, first_ipv4(bundle.a), 443)
        status = validate_chain(chain, env.config.trust_store, env.config.at, env.config.intermediates)
    except FetchError as exc:
        error = str(exc)
    assessment = evaluate_dane(records, chain, bundle.tlsa_443.authenticated, status)
    out = {
        "name": name,
        "at": iso(env.config.at),
        "tlsa": [{"record": r.presentation(), "conformant": r.conformant, "problems": list(r.problems)}
                 for r in records],
        "chain_verdict": status.verdict.value if status else None,
        "tls_error": error,
        "matched": list(assessment.matched) if assessment.matched else None,
        "constraint_class": assessment.constraint_class.value,
        "dnssec_secure": assessment.dnssec_secure,
        "requires_webpki": assessment.requires_webpki,
        "authenticated": assessment.authenticated,
        "flags": list(assessment.flags),
    }
    print(json.dumps(out, sort_keys=True, indent=2))
    return EXIT_OK


def cmd_ct_fetch(args: argparse.Namespace, env: Environment) -> int:
    result = fetch_certs_by_name(args.name, env.config.at, env.backends.ct)
    for entry in sorted(result.entries, key=lambda e: e.entry_id):
        cert = entry.certificate
        print(dumps_record({
            "entry_id": entry.entry_id,
            "sha256": cert.sha256,
            "issuer": cert.issuer_text,
            "san": list(cert.san),
            "not_before": iso(cert.not_before),
            "not_after": iso(cert.not_after),
            "logged_at": iso(entry.logged_at),
            "is_precert": entry.is_precert,
        }))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    try:
        records = load_records(args.records)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read records {args.records}: {exc}") from exc
    summary = aggregate(records, _reference_time(args.at) if args.at else None)
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        if args.format == "csv":
            (out / "summary.csv").write_text(summary_csv(summary), encoding="utf-8")
        else:
            (out / "summary.json").write_text(dumps_summary(summary), encoding="utf-8")
    else:
        sys.stdout.write(summary_csv(summary) if args.format == "csv" else dumps_summary(summary))
    return EXIT_ATTENTION if summary["needs_attention"] else EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    # a few deployed roots carry non-positive serials; that is not our finding to report
    warnings.filterwarnings("ignore", message="Parsed a serial number", category=CryptographyDeprecationWarning)
    try:
        if args.command == "report":
            return cmd_report(args)
        env = build_environment(args)
        if args.command == "audit":
            return cmd_audit(args, env)
        if args.command == "caa":
            return cmd_caa_check(args, env)
        if args.command == "dane":
            return cmd_dane_check(args, env)
        return cmd_ct_fetch(args, env)
    except (ConfigError, InputError) as exc:
        print(f"pkiaudit: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CtQueryError as exc:
        print(f"pkiaudit: CT query failed: {exc}", file=sys.stderr)
        return EXIT_CONFIG
