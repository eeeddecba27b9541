import pytest
from servers import closed_port, http_server

from pkiaudit.dnsio import FixtureDnsBackend
from pkiaudit.targets import (
    MAX_REDIRECT_HOPS,
    Dropped,
    FixtureWebProbe,
    InputEntry,
    LiveWebProbe,
    Target,
    follow_redirects,
    parse_input_lines,
    prepare_target,
    prepare_targets,
)


def test_parse_input_lines():
    entries, dropped = parse_input_lines(["1,Example.COM", "", "# comment", "plain.example", "x,bad.example",
                                          "3,not a name"])
    assert entries == [InputEntry(1, "example.com"), InputEntry(None, "plain.example")]
    assert [d.reason.split(":")[0] for d in dropped] == ["unparseable rank", "invalid name"]


DNS = FixtureDnsBackend({
    "a.example|A": {"records": ["192.0.2.1"]},
    "b.example|A": {"records": ["192.0.2.2"]},
    "c.example|A": {"records": ["192.0.2.3"]},
    "down.example|A": {"records": ["192.0.2.4"]},
    "v6only.example|A": {"records": []},
    "gone.example|A": {"status": "NXDOMAIN"},
    "slow.example|A": {"status": "TIMEOUT"},
})


def probe():
    return FixtureWebProbe({"closed_ports": {"192.0.2.3": [443], "192.0.2.4": [80, 443]}})


class TestPrepare:
    def test_direct(self):
        target = prepare_target(InputEntry(1, "a.example"), DNS, probe())
        assert target == Target(1, "a.example", ("192.0.2.1",), True, True, "a.example", 0, ("https://a.example/",))

    def test_redirect_changes_final_name(self):
        web = FixtureWebProbe({"redirects": {"https://a.example/": "https://www.b.example/home"}})
        target = prepare_target(InputEntry(1, "a.example"), DNS, web)
        assert target.final_name == "www.b.example" and target.redirect_hops == 1

    def test_port80_only_starts_with_http(self):
        web = FixtureWebProbe({"closed_ports": {"192.0.2.3": [443]},
                               "redirects": {"http://c.example/": "https://c.example/"}})
        target = prepare_target(InputEntry(None, "c.example"), DNS, web)
        assert not target.port443_open and target.redirect_chain[0] == "http://c.example/"

    @pytest.mark.parametrize("name, reason", [
        ("down.example", "ports 80 and 443 closed"),
        ("v6only.example", "did not resolve"),
        ("gone.example", "did not resolve"),
        ("slow.example", "resolution timeout"),
    ])
    def test_drops(self, name, reason):
        dropped = prepare_target(InputEntry(None, name), DNS, probe())
        assert isinstance(dropped, Dropped) and dropped.reason.startswith(reason)

    def test_duplicate_final_names(self):
        web = FixtureWebProbe({"redirects": {"https://b.example/": "https://a.example/"}})
        targets, dropped = prepare_targets([InputEntry(1, "a.example"), InputEntry(2, "b.example")], DNS, web)
        assert [t.name for t in targets] == ["a.example"]
        assert dropped[0].name == "b.example" and "duplicate final name a.example" in dropped[0].reason

    def test_redirect_to_ip_literal_keeps_last_name(self):
        web = FixtureWebProbe({"redirects": {"https://a.example/": "https://192.0.2.9/"}})
        assert prepare_target(InputEntry(1, "a.example"), DNS, web).final_name == "a.example"


class TestRedirects:
    def test_loop_stops(self):
        web = FixtureWebProbe({"redirects": {"https://a/": "https://b/", "https://b/": "https://a/"}})
        assert follow_redirects("https://a/", web) == ("https://b/", ["https://a/", "https://b/"])

    def test_hop_cap(self):
        web = FixtureWebProbe({"redirects": {f"https://h{i}/": f"https://h{i + 1}/" for i in range(30)}})
        final, chain = follow_redirects("https://h0/", web)
        assert len(chain) - 1 == MAX_REDIRECT_HOPS and final == f"https://h{MAX_REDIRECT_HOPS}/"

    def test_relative_location(self):
        web = FixtureWebProbe({"redirects": {"https://a/x": "/y"}})
        assert follow_redirects("https://a/x", web)[0] == "https://a/y"

    def test_hop_count_is_capped_on_targets(self):
        with pytest.raises(ValueError):
            Target(None, "a.example", redirect_hops=MAX_REDIRECT_HOPS + 1)


class TestLiveProbe:
    def test_follows_a_loopback_redirect(self):
        def respond(path, query):
            if path == "/start":
                return 301, "", {"Location": "/end"}
            return 200, "done", {}
        with http_server(respond) as (url, _):
            live = LiveWebProbe(timeout=2)
            assert follow_redirects(url + "/start", live) == (url + "/end", [url + "/start", url + "/end"])
            assert live.port_open("127.0.0.1", int(url.rsplit(":", 1)[1]))
        assert not live.port_open("127.0.0.1", closed_port())

    def test_unreachable_redirect_probe(self):
        assert LiveWebProbe(timeout=1).redirect_location(f"http://127.0.0.1:{closed_port()}/") is None
