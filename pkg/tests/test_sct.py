import json

import pytest
from conftest import wrap

import corpus
from pkiaudit.caa import ConfigError
from pkiaudit.sct import (
    LogList,
    SctDecodeError,
    SctVerdict,
    parse_sct,
    split_sct_list,
    verify_sct,
    verify_scts,
)


def leaf_with(logs, name="sct.example"):
    return wrap(corpus.leaf_for(corpus.ALPHA, name, logs=logs))


ALPHA = wrap(corpus.ALPHA.cert)


def test_two_good_scts(fixture_logs):
    verdicts = verify_scts(leaf_with((corpus.LOG_A, corpus.LOG_B)), ALPHA, fixture_logs)
    assert [(v.known_log, v.signature_ok) for v in verdicts] == [(True, True), (True, True)]
    assert {v.log_operator for v in verdicts} == {corpus.LOG_A.operator, corpus.LOG_B.operator}
    assert verdicts[0].timestamp == int(corpus.DEFAULT_START.timestamp() * 1000)


def test_flipped_signature_bit(fixture_logs):
    leaf = leaf_with((corpus.LOG_A,))
    raw = bytearray(leaf.embedded_scts[0])
    raw[-1] ^= 0x01
    verdict = verify_sct(bytes(raw), leaf.x509.tbs_precertificate_bytes, ALPHA.spki_der, fixture_logs)
    assert verdict.known_log and not verdict.signature_ok


def test_wrong_issuer_key(fixture_logs):
    leaf = leaf_with((corpus.LOG_A,))
    assert not verify_scts(leaf, wrap(corpus.BETA.cert), fixture_logs)[0].signature_ok


def test_unknown_and_rejected_logs(fixture_logs):
    verdicts = verify_scts(leaf_with((corpus.LOG_UNLISTED, corpus.LOG_REJECTED)), ALPHA, fixture_logs)
    assert [(v.known_log, v.signature_ok) for v in verdicts] == [(False, False), (False, False)]
    assert verdicts[1].detail == "log state rejected"


def test_undecodable(fixture_logs):
    verdict = verify_sct(b"\x00" + corpus.LOG_A.log_id + b"\x00\x01", b"tbs", ALPHA.spki_der, fixture_logs)
    assert verdict.known_log and not verdict.signature_ok and verdict.detail.startswith("undecodable")
    with pytest.raises(SctDecodeError):
        parse_sct(b"\x01" * 10)


def test_missing_issuer_cannot_verify(fixture_logs):
    verdicts = verify_scts(leaf_with((corpus.LOG_A,)), None, fixture_logs)
    assert verdicts[0].known_log and not verdicts[0].signature_ok


def test_leaf_without_scts(fixture_logs):
    assert verify_scts(leaf_with(()), ALPHA, fixture_logs) == []


def test_signature_requires_known_log():
    with pytest.raises(ValueError):
        SctVerdict(b"x" * 32, False, True)


def test_parse_layout():
    sct = parse_sct(leaf_with((corpus.LOG_A,)).embedded_scts[0])
    assert sct.log_id == corpus.LOG_A.log_id and (sct.hash_algorithm, sct.signature_algorithm) == (4, 3)
    assert sct.issued_at == corpus.DEFAULT_START


def test_list_framing():
    with pytest.raises(SctDecodeError):
        split_sct_list(b"\x00\x05\x00\x01")
    assert split_sct_list(b"\x00\x04\x00\x02ab") == (b"ab",)


def test_log_list_loading():
    logs = LogList.from_json(json.dumps(corpus.log_list_document([corpus.LOG_A])))
    assert len(logs) == 1 and logs.get(corpus.LOG_A.log_id).operator == corpus.LOG_A.operator
    with pytest.raises(ConfigError):
        LogList.from_json("{")
    with pytest.raises(ConfigError):
        LogList.from_json('{"operators": [{"logs": [{"key": 5}]}]}')
