"""Record serialization, summary aggregation and byte-stable report files."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from datetime import datetime, timedelta, timezone
from itertools import combinations
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .caa import CaaMatchState, CaaRecord, IodefKind, MatchState, TagKind, UnknownKind, ValueKind, parse_issue_value
from .consistency import EXPIRY_BUCKETS, TLSA_CT_ROWS, row_number
from .dnsio import DnsResponse
from .pipeline import AuditRecord
from .targets import Dropped

SCHEMA_VERSION = 1
FEATURES = ("CAA", "DNSSEC", "TLSA")
AGE_LIMIT = timedelta(days=90)
AGE_BUCKETS = ("<=3m", ">3m")


def iso(value: Optional[datetime]) -> Optional[str]:
    if value is None:
        return None
    return value.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_time(text: str) -> datetime:
    stamp = datetime.fromisoformat(text.replace("Z", "+00:00"))
    return stamp if stamp.tzinfo else stamp.replace(tzinfo=timezone.utc)


# -- per-record serialization -----------------------------------------------------

def _response(resp: DnsResponse) -> dict:
    return {
        "status": resp.status.value,
        "ad": resp.authenticated,
        "records": resp.data,
        "error": resp.error,
    }


def _caa_record(record: CaaRecord) -> dict:
    out = {
        "flags": record.flags,
        "tag": record.tag,
        "value": record.text,
        "tag_kind": record.tag_kind.value,
        "unknown_kind": record.unknown_kind.value if record.unknown_kind else None,
        "critical": record.critical,
    }
    if record.tag_kind in (TagKind.ISSUE, TagKind.ISSUEWILD):
        parsed = parse_issue_value(record.value)
        out["value_kind"] = parsed.kind.value
        out["issuer_domain"] = parsed.issuer_domain
    return out


def _state(state: Optional[CaaMatchState]) -> Optional[dict]:
    if state is None:
        return None
    return {
        "state": state.state.value,
        "deciding_tag": state.deciding_tag.value if state.deciding_tag else None,
        "matched_strings": list(state.matched_strings),
    }


def record_to_dict(record: AuditRecord) -> dict:
    target = record.target
    out: dict = {
        "schema_version": SCHEMA_VERSION,
        "rank": target.rank,
        "input_name": target.name,
        "name": target.final_name,
        "resolved_ips": list(target.resolved_ips),
        "port80_open": target.port80_open,
        "port443_open": target.port443_open,
        "redirect_hops": target.redirect_hops,
        "redirect_chain": list(target.redirect_chain),
        "at": iso(record.at),
        "errors": [{"stage": e.stage, "error": e.error} for e in record.errors],
    }

    dns = record.dns
    out["dns"] = None if dns is None else {
        "dnssec_signed": dns.dnssec_signed,
        "soa": _response(dns.soa),
        "a": _response(dns.a),
        "tlsa_443": _response(dns.tlsa_443),
        "contact_email_txt": _response(dns.contact_email_txt),
        "contact_phone_txt": _response(dns.contact_phone_txt),
        "caa_by_ancestor": [{"name": n, **_response(r)} for n, r in dns.caa_by_ancestor],
    }

    relevant = record.relevant_caa
    out["caa"] = {
        "relevant": None if relevant is None else {
            "source_name": relevant.source_name,
            "depth": relevant.depth,
            "records": [_caa_record(r) for r in relevant.records],
        },
        "iodef": [
            {"value": value, "kind": v.kind.value, "scheme": v.scheme, "detail": v.detail}
            for value, v in record.iodef
        ],
        "state": _state(record.caa_state),
        "wildcard_state": _state(record.wildcard_caa_state),
    }

    chain = record.chain
    out["chain"] = None if chain is None else {
        "length": len(chain),
        "leaf_sha256": chain.leaf.sha256,
        "subject": chain.leaf.subject_text,
        "issuer": chain.leaf.issuer_text,
        "san": list(chain.leaf.san),
        "not_before": iso(chain.leaf.not_before),
        "not_after": iso(chain.leaf.not_after),
        "intermediates": [c.sha256 for c in chain.intermediates],
        "well_ordered": chain.well_ordered,
        "sni": chain.sni_used,
        "fetched_at": iso(chain.fetched_at),
        "unparsed": len(chain.unparsed),
    }
    status = record.chain_status
    out["chain_status"] = None if status is None else {
        "verdict": status.verdict.value, "detail": status.detail, "anchor": status.anchor,
    }
    out["name_match"] = record.name_match.value if record.name_match else None
    issuer = record.issuer
    out["issuer"] = None if issuer is None else {
        "organization": issuer.organization,
        "domain_hints": list(issuer.domain_hints),
        "flagged": issuer.flagged,
    }
    out["scts"] = [
        {
            "log_id": v.log_id.hex(),
            "known_log": v.known_log,
            "signature_ok": v.signature_ok,
            "log_operator": v.log_operator,
            "timestamp": v.timestamp,
            "detail": v.detail,
        }
        for v in record.scts
    ]

    out["tlsa"] = [
        {
            "usage": r.usage, "selector": r.selector, "matching_type": r.matching_type,
            "data": r.data.hex(), "conformant": r.conformant, "problems": list(r.problems),
        }
        for r in record.tlsa
    ]
    dane = record.dane
    out["dane"] = None if dane is None else {
        "matched": list(dane.matched) if dane.matched else None,
        "all_matches": [list(m) for m in dane.all_matches],
        "constraint_class": dane.constraint_class.value,
        "dnssec_secure": dane.dnssec_secure,
        "requires_webpki": dane.requires_webpki,
        "authenticated": dane.authenticated,
        "flags": list(dane.flags),
    }

    states = dict(record.ct_states)
    out["ct"] = None if record.ct is None else {
        "entries": [
            {
                "entry_id": e.entry_id,
                "sha256": e.certificate.sha256,
                "logged_at": iso(e.logged_at),
                "is_precert": e.is_precert,
                "issuer_org": e.certificate.issuer_org,
                "not_before": iso(e.certificate.not_before),
                "not_after": iso(e.certificate.not_after),
                "caa_state": states[e.entry_id].state.value if e.entry_id in states else None,
            }
            for e in sorted(record.ct.entries, key=lambda e: e.entry_id)
        ],
    }

    c = record.consistency
    out["consistency"] = {
        "caa_ct": None if c.caa_ct is None else {
            "server_state": c.caa_ct.server_state,
            "consistent": c.caa_ct.consistent,
            "pairs": [list(p) for p in c.caa_ct.inconsistency_pairs],
        },
        "partial_caa": None if c.partial_caa is None else {
            "kind": c.partial_caa.kind.value,
            "fqdn_state": c.partial_caa.fqdn_state.state.value,
            "wildcard_state": c.partial_caa.wildcard_state.state.value,
        },
        "tlsa_ct": [
            {
                "entry_id": entry_id,
                "server_authenticated": key.server_authenticated,
                "ct_authenticated": key.ct_authenticated,
                "same_issuer": key.same_issuer,
                "row": row_number(key),
            }
            for entry_id, key in c.tlsa_ct
        ],
        "tlsa_caa": [
            {"entry_id": f.entry_id, "server_state": f.server_state, "referenced_state": f.referenced_state}
            for f in c.tlsa_caa
        ],
        "tlsa_forensics": [
            {
                "record_index": f.record_index, "explanation": f.explanation, "entry_id": f.entry_id,
                "cert_sha256": f.cert_sha256, "verdict": f.verdict,
                "relative_days": f.relative_days, "bucket": f.bucket,
            }
            for f in c.tlsa_forensics
        ],
    }
    out["needs_attention"] = record_needs_attention(out)
    return out


def record_needs_attention(data: dict) -> bool:
    bad = {MatchState.MALFORMED_MISMATCH.value, MatchState.EMPTY_MISMATCH.value}
    caa = data.get("caa") or {}
    states = [s["state"] for s in (caa.get("state"), caa.get("wildcard_state")) if s]
    states += [e["caa_state"] for e in ((data.get("ct") or {}).get("entries") or []) if e["caa_state"]]
    partial = (data.get("consistency") or {}).get("partial_caa")
    return any(s in bad for s in states) or partial is not None


# -- aggregation ------------------------------------------------------------------

def overlap_key(features: Iterable[str]) -> str:
    return "&".join(f for f in FEATURES if f in set(features))


OVERLAP_KEYS = tuple(
    overlap_key(combo) for size in range(1, 4) for combo in combinations(FEATURES, size)
)


def _features(data: dict) -> set[str]:
    found = set()
    if data["caa"]["relevant"] is not None:
        found.add("CAA")
    if data["dns"] is not None and data["dns"]["dnssec_signed"]:
        found.add("DNSSEC")
    if data["tlsa"]:
        found.add("TLSA")
    return found


def _histogram_state(data: dict) -> Optional[str]:
    """Server certificate state, or the first CT certificate's when nothing was served."""
    state = data["caa"]["state"]
    if state is not None:
        return state["state"]
    entries = (data["ct"] or {}).get("entries") or []
    for entry in entries:
        if entry["caa_state"]:
            return entry["caa_state"]
    return None


def _zeroed(keys: Iterable[str]) -> dict[str, int]:
    return {k: 0 for k in keys}


def aggregate(records: Sequence[dict], at: Optional[datetime] = None,
              dropped: Sequence[Dropped] = ()) -> dict:
    """Fold serialized audit records into the summary report."""
    if at is None and records:
        at = parse_time(records[0]["at"])

    overlap = _zeroed(OVERLAP_KEYS)
    states = _zeroed(s.value for s in MatchState)
    ages = {s.value: _zeroed(AGE_BUCKETS) for s in MatchState}
    iodef = _zeroed(k.value for k in IodefKind)
    unknown = _zeroed(k.value for k in UnknownKind)
    unknown_tags: Counter = Counter()
    shares: dict[str, dict[str, dict[str, int]]] = {"issue": {}, "issuewild": {}}
    tag_domains = {"issue": 0, "issuewild": 0}
    value_kinds = {tag: _zeroed(k.value for k in ValueKind) for tag in tag_domains}
    tlsa_rows = Counter()
    pair_counts: Counter = Counter()
    caa_ct = {"consistent": 0, "inconsistent": 0}
    chain_verdicts: Counter = Counter()
    dane_flags: Counter = Counter()
    partial: Counter = Counter()
    tlsa_caa = 0
    forensics: Counter = Counter()
    errors: Counter = Counter()
    attention = 0

    for data in records:
        features = _features(data)
        if features:
            overlap[overlap_key(features)] += 1

        state = _histogram_state(data)
        if state is not None:
            states[state] += 1
        if data["caa"]["state"] is not None and data["chain"] is not None and at is not None:
            age = at - parse_time(data["chain"]["not_before"])
            ages[data["caa"]["state"]["state"]][AGE_BUCKETS[0] if age <= AGE_LIMIT else AGE_BUCKETS[1]] += 1

        relevant = data["caa"]["relevant"]
        if relevant is not None:
            for tag in tag_domains:
                strings = sorted({r["issuer_domain"] for r in relevant["records"]
                                  if r["tag"].lower() == tag and r.get("issuer_domain")})
                if any(r["tag"].lower() == tag for r in relevant["records"]):
                    tag_domains[tag] += 1
                for r in relevant["records"]:
                    if r["tag"].lower() == tag:
                        value_kinds[tag][r["value_kind"]] += 1
                for s in strings:
                    cell = shares[tag].setdefault(s, {"overall": 0, "only": 0})
                    cell["overall"] += 1
                    if len(strings) == 1:
                        cell["only"] += 1
            for r in relevant["records"]:
                if r["unknown_kind"]:
                    unknown[r["unknown_kind"]] += 1
                    unknown_tags[r["tag"]] += 1
        for v in data["caa"]["iodef"]:
            iodef[v["kind"]] += 1

        for row in data["consistency"]["tlsa_ct"]:
            tlsa_rows[row["row"]] += 1
        comparison = data["consistency"]["caa_ct"]
        if comparison is not None:
            caa_ct["consistent" if comparison["consistent"] else "inconsistent"] += 1
            for pair in sorted({tuple(p) for p in comparison["pairs"]}):
                pair_counts[f"{pair[0]}->{pair[1]}"] += 1
        if data["chain_status"] is not None:
            chain_verdicts[data["chain_status"]["verdict"]] += 1
        if data["dane"] is not None:
            dane_flags.update(data["dane"]["flags"])
        if data["consistency"]["partial_caa"] is not None:
            partial[data["consistency"]["partial_caa"]["kind"]] += 1
        tlsa_caa += len(data["consistency"]["tlsa_caa"])
        for f in data["consistency"]["tlsa_forensics"]:
            forensics[f"{f['explanation']}|{f['verdict'] or '-'}|{f['bucket'] or '-'}"] += 1
        errors.update({e["stage"] for e in data["errors"]})
        attention += bool(data.get("needs_attention"))

    return {
        "schema_version": SCHEMA_VERSION,
        "at": iso(at),
        "domains": len(records),
        "dropped": [{"name": d.name, "reason": d.reason} for d in dropped],
        "overlap_counts": overlap,
        "caa_state_histogram": states,
        "age_buckets": ages,
        "ca_string_shares": {"domains_with_tag": tag_domains, **shares},
        "issue_value_kinds": value_kinds,
        "iodef_triage_counts": iodef,
        "unknown_tag_triage": {"kinds": unknown, "tags": dict(sorted(unknown_tags.items()))},
        "tlsa_ct_matrix": [
            {"row": n, "server_authenticated": k.server_authenticated,
             "ct_authenticated": k.ct_authenticated, "same_issuer": k.same_issuer,
             "count": tlsa_rows.get(n, 0)}
            for n, k in enumerate(TLSA_CT_ROWS, 1)
        ],
        "caa_ct_pair_counts": {**caa_ct, "pairs": dict(sorted(pair_counts.items()))},
        "chain_verdicts": dict(sorted(chain_verdicts.items())),
        "dane_flags": dict(sorted(dane_flags.items())),
        "partial_caa": dict(sorted(partial.items())),
        "tlsa_caa_findings": tlsa_caa,
        "tlsa_forensics": {
            "buckets": list(EXPIRY_BUCKETS),
            "counts": dict(sorted(forensics.items())),
        },
        "errors_by_stage": dict(sorted(errors.items())),
        "needs_attention": attention,
    }


# -- output -----------------------------------------------------------------------------

def dumps_record(data: dict) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def dumps_summary(summary: dict) -> str:
    return json.dumps(summary, sort_keys=True, indent=2, ensure_ascii=True) + "\n"


def summary_rows(summary: dict) -> list[tuple[str, str, int]]:
    """Flatten every histogram of the summary into (table, cell, count) rows."""
    rows: list[tuple[str, str, int]] = []
    for key, count in summary["overlap_counts"].items():
        rows.append(("overlap_counts", key, count))
    for key, count in summary["caa_state_histogram"].items():
        rows.append(("caa_state_histogram", key, count))
    for state, buckets in summary["age_buckets"].items():
        for bucket, count in buckets.items():
            rows.append(("age_buckets", f"{state}|{bucket}", count))
    for tag in ("issue", "issuewild"):
        for string, cell in sorted(summary["ca_string_shares"][tag].items()):
            rows.append(("ca_string_shares", f"{tag}|{string}|overall", cell["overall"]))
            rows.append(("ca_string_shares", f"{tag}|{string}|only", cell["only"]))
    for key, count in summary["iodef_triage_counts"].items():
        rows.append(("iodef_triage_counts", key, count))
    for key, count in summary["unknown_tag_triage"]["kinds"].items():
        rows.append(("unknown_tag_triage", key, count))
    for row in summary["tlsa_ct_matrix"]:
        cell = "{row}|{server_authenticated}|{ct_authenticated}|{same_issuer}".format(**row)
        rows.append(("tlsa_ct_matrix", cell, row["count"]))
    for key, count in summary["caa_ct_pair_counts"]["pairs"].items():
        rows.append(("caa_ct_pair_counts", key, count))
    for key, count in summary["tlsa_forensics"]["counts"].items():
        rows.append(("tlsa_forensics", key, count))
    return rows


def summary_csv(summary: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("table", "cell", "count"))
    writer.writerows(summary_rows(summary))
    return buf.getvalue()


def emit_report(records: Sequence[dict], summary: dict, fmt: str, output: str | Path) -> list[Path]:
    """Write ``records.jsonl`` plus ``summary.json`` (jsonl) or ``summary.csv`` (csv)."""
    if fmt not in ("jsonl", "csv"):
        raise ValueError(f"unknown report format {fmt!r}")
    out_dir = Path(output)
    out_dir.mkdir(parents=True, exist_ok=True)
    records_path = out_dir / "records.jsonl"
    records_path.write_text("".join(dumps_record(r) + "\n" for r in records), encoding="utf-8")
    if fmt == "jsonl":
        summary_path = out_dir / "summary.json"
        summary_path.write_text(dumps_summary(summary), encoding="utf-8")
    else:
        summary_path = out_dir / "summary.csv"
        summary_path.write_text(summary_csv(summary), encoding="utf-8")
    return [records_path, summary_path]


def load_records(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as handle:
        return [json.loads(line) for line in handle if line.strip()]
