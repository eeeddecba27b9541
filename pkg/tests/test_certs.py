import pytest
from conftest import wrap
from hypothesis import given
from hypothesis import strategies as st

import corpus
from pkiaudit.caa import ConfigError
from pkiaudit.certs import (
    CertificateChain,
    ChainVerdict,
    NameMatch,
    TrustStore,
    issuer_identity,
    name_matches,
    split_pem,
    validate_chain,
)

AT = corpus.AT


@pytest.fixture(scope="module")
def shop_leaf(alpha_chain):
    return alpha_chain.leaf


class TestNameMatching:
    @pytest.mark.parametrize("name, expected", [
        ("www.shop.example", NameMatch.EXACT_SAN),
        ("api.shop.example", NameMatch.WILDCARD_SAN),
        ("a.b.shop.example", NameMatch.NO_MATCH),
        ("shop.example", NameMatch.NO_MATCH),
        ("other.example", NameMatch.NO_MATCH),
    ])
    def test_examples(self, shop_leaf, name, expected):
        assert name_matches(shop_leaf, name) is expected

    @given(st.sampled_from(["www.shop.example", "api.shop.example", "a.b.shop.example", "shop.example"]),
           st.lists(st.booleans(), min_size=20, max_size=20))
    def test_case_invariance(self, name, flips):
        leaf = wrap(corpus.leaf_for(corpus.ALPHA, "www.shop.example", sans=["www.shop.example", "*.shop.example"]))
        mixed = "".join(c.upper() if f else c for c, f in zip(name, flips + [False] * len(name)))
        assert name_matches(leaf, mixed) is name_matches(leaf, name)

    def test_upper_case_san(self):
        leaf = wrap(corpus.leaf_for(corpus.ALPHA, "case.example", sans=["WWW.Case.Example"]))
        assert name_matches(leaf, "www.case.example") is NameMatch.EXACT_SAN

    def test_common_name_is_ignored(self):
        leaf = wrap(corpus.leaf_for(corpus.ALPHA, "cn.example", sans=["cn.example", "alt.example"]))
        assert leaf.san == ("cn.example", "alt.example")
        assert name_matches(leaf, "third.example") is NameMatch.NO_MATCH


class TestChainValidation:
    def test_valid(self, alpha_chain, trust_store):
        status = validate_chain(alpha_chain, trust_store, AT)
        assert status.valid and status.anchor == "CN=Alpha Trust Root,O=Alpha Trust,C=XX"

    def test_expired_leaf(self, trust_store):
        leaf = corpus.leaf_for(corpus.ALPHA, "old.example", start=corpus.utc(2023, 1, 1), end=corpus.utc(2023, 4, 1))
        status = validate_chain(CertificateChain(wrap(leaf), (wrap(corpus.ALPHA.cert),)), trust_store, AT)
        assert status.verdict is ChainVerdict.EXPIRED and "expired" in status.detail

    def test_not_yet_valid(self, trust_store):
        leaf = corpus.leaf_for(corpus.ALPHA, "future.example", start=corpus.utc(2024, 6, 1), end=corpus.utc(2024, 9, 1))
        status = validate_chain(CertificateChain(wrap(leaf), (wrap(corpus.ALPHA.cert),)), trust_store, AT)
        assert status.verdict is ChainVerdict.EXPIRED and "not yet valid" in status.detail

    def test_untrusted_root(self, trust_store):
        leaf = corpus.leaf_for(corpus.ROGUE, "rogue.example")
        chain = CertificateChain(wrap(leaf), (wrap(corpus.ROGUE.cert), wrap(corpus.ROOT_ROGUE.cert)))
        assert validate_chain(chain, trust_store, AT).verdict is ChainVerdict.UNTRUSTED

    def test_self_signed(self, trust_store):
        chain = CertificateChain(wrap(corpus.self_signed("lonely.example", "Lonely Org")))
        assert validate_chain(chain, trust_store, AT).verdict is ChainVerdict.UNTRUSTED

    def test_missing_intermediate_is_filled_from_extras(self, trust_store):
        leaf = wrap(corpus.leaf_for(corpus.BETA, "gap.example"))
        assert validate_chain(CertificateChain(leaf), trust_store, AT).verdict is ChainVerdict.UNTRUSTED
        status = validate_chain(CertificateChain(leaf), trust_store, AT, [wrap(corpus.BETA.cert)])
        assert status.valid

    def test_forged_signature_is_untrusted(self, trust_store):
        # same issuer name as ALPHA, different key
        imposter = corpus.make_intermediate(corpus.ROOT_ROGUE, "alpha-imposter", "Alpha Trust Services")
        forged = corpus.Ca("imposter", imposter.key, corpus.ALPHA.cert)
        leaf = wrap(corpus.leaf_for(forged, "forged.example"))
        chain = CertificateChain(leaf, (wrap(corpus.ALPHA.cert),))
        assert validate_chain(chain, trust_store, AT).verdict is ChainVerdict.UNTRUSTED

    def test_unparsed_blob_is_malformed(self, trust_store):
        chain = CertificateChain.from_der_list([corpus.der(corpus.leaf_for(corpus.ALPHA, "m.example")), b"\x30\x03junk"])
        assert validate_chain(chain, trust_store, AT).verdict is ChainVerdict.MALFORMED

    def test_unparseable_leaf_raises(self):
        with pytest.raises(ValueError):
            CertificateChain.from_der_list([b"not a certificate"])


class TestTrustStore:
    def test_pem_round_trip(self, alpha_chain):
        text = alpha_chain.leaf.pem() + alpha_chain.intermediates[0].pem()
        assert len(split_pem(text)) == 2
        assert CertificateChain.from_pem(text).leaf == alpha_chain.leaf

    def test_bad_file(self, tmp_path):
        with pytest.raises(ConfigError):
            TrustStore.from_file(tmp_path / "missing.pem")
        empty = tmp_path / "empty.pem"
        empty.write_text("nothing here")
        with pytest.raises(ConfigError):
            TrustStore.from_file(empty)

    def test_default_store_loads(self):
        assert len(TrustStore.default()) > 50


class TestIssuerIdentity:
    def test_intermediate_org_and_hints(self, alpha_chain):
        ident = issuer_identity(alpha_chain)
        assert ident.organization == "Alpha Trust Services"
        assert "alphatrust.test" in ident.domain_hints and not ident.flagged

    def test_falls_back_to_leaf_issuer_field(self):
        leaf = wrap(corpus.leaf_for(corpus.NETSOL, "netsol.example"))
        assert issuer_identity(CertificateChain(leaf)).organization == "Network Solutions L.L.C."

    def test_self_signed_uses_own_subject(self):
        chain = CertificateChain(wrap(corpus.self_signed("lonely.example", "Lonely Org")))
        assert issuer_identity(chain).organization == "Lonely Org"

    def test_missing_org_is_flagged(self):
        nameless = corpus.make_intermediate(corpus.ROOT_ALPHA, "nameless", None)
        leaf = wrap(corpus.leaf_for(nameless, "nameless.example"))
        ident = issuer_identity(CertificateChain(leaf, (wrap(nameless.cert),)))
        assert ident.organization == "" and ident.flagged
