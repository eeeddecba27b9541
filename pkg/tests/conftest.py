import sys
from pathlib import Path

import pytest

TESTS = Path(__file__).parent
sys.path.insert(0, str(TESTS))

import corpus  # noqa: E402

from pkiaudit.caa import load_ca_mapping  # noqa: E402
from pkiaudit.certs import Certificate, CertificateChain, TrustStore  # noqa: E402
from pkiaudit.sct import LogList  # noqa: E402


@pytest.fixture(scope="session")
def built_corpus():
    return corpus.build()


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory, built_corpus):
    """A freshly generated copy of the fixture corpus."""
    out = tmp_path_factory.mktemp("corpus")
    corpus.write(built_corpus, out)
    return out


@pytest.fixture(scope="session")
def trust_store():
    return TrustStore.from_pem((corpus.pem(corpus.ROOT_ALPHA.cert) + corpus.pem(corpus.ROOT_BETA.cert)).encode())


@pytest.fixture(scope="session")
def fixture_logs():
    import json
    return LogList.from_json(json.dumps(corpus.log_list_document([corpus.LOG_A, corpus.LOG_B, corpus.LOG_REJECTED])))


@pytest.fixture(scope="session")
def fixture_mapping():
    return load_ca_mapping(corpus.CA_MAPPING)


def wrap(cert) -> Certificate:
    return Certificate.from_der(corpus.der(cert))


@pytest.fixture(scope="session")
def alpha_chain():
    leaf = corpus.leaf_for(corpus.ALPHA, "www.shop.example", sans=["www.shop.example", "*.shop.example"])
    return CertificateChain(wrap(leaf), (wrap(corpus.ALPHA.cert),), corpus.AT, "www.shop.example")


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion, then assert it.

    ``ok=None`` marks a criterion that could not run here (SKIP).
    """
    def record(number: int, title: str, ok, detail: str = "") -> None:
        word = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"criterion {number} {word}: {title}" + (f" [{detail}]" if detail else "")
        _ACCEPTANCE[number] = line
        print(line)
        if ok is None:
            pytest.skip(detail)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
