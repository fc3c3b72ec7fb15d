"""Real-socket tests: wire behavior, source-IP binding, static serving."""

import pytest

from pp2pp import crypto
from pp2pp.authenticator import SmartCard
from pp2pp.client import ApiClient
from pp2pp.httpd import ApiServer
from pp2pp.service import Service, ServiceConfig

UV = "1234"


@pytest.fixture
def server():
    service = Service(ServiceConfig(rate_limiting=False))
    srv = ApiServer(service, "127.0.0.1", 0)
    srv.start()
    yield srv
    srv.shutdown()


def register_and_login(url: str, username: str, source_ip=None) -> ApiClient:
    api = ApiClient(url, source_ip=source_ip)
    card = SmartCard(uv_secret=UV)
    begin = api.call(
        "POST", "/register/begin", {"username": username, "email": f"{username}@x.org"}
    )
    assert begin.ok, begin.body
    challenge = crypto.unb64u(begin.body["challenge"])
    _, pub, assertion = card.make_credential(begin.body["rp_id"], username.encode(), challenge, UV)
    finish = api.call(
        "POST",
        "/register/finish",
        {"username": username, "public_key": pub, "assertion": assertion.to_wire()},
    )
    assert finish.ok, finish.body
    begin = api.call("POST", "/auth/begin", {"username": username})
    challenge = crypto.unb64u(begin.body["challenge"])
    assertion = card.get_assertion(begin.body["rp_id"], challenge, uv_input=UV)
    finish = api.call("POST", "/auth/finish", {"username": username, "assertion": assertion.to_wire()})
    assert finish.ok, finish.body
    exchanged = api.call("POST", "/auth/exchange", {"token": finish.body["token"]})
    assert exchanged.ok, exchanged.body
    return api


class TestWire:
    def test_healthz(self, server):
        result = ApiClient(server.url).call("GET", "/healthz")
        assert result.ok and result.body == {"status": "ok"}

    def test_full_ceremony_over_http(self, server):
        api = register_and_login(server.url, "alice")
        account = api.call("GET", "/account")
        assert account.ok and account.body["balance"] == 10_000

    def test_cookie_bound_to_socket_peer_ip(self, server):
        # login from 127.0.0.1, replay the cookie from 127.0.0.2
        api = register_and_login(server.url, "alice")
        thief = ApiClient(server.url, source_ip="127.0.0.2")
        thief.cookies.update(api.cookies)
        stolen = thief.call("GET", "/account")
        assert stolen.status == 401 and stolen.body["code"] == "session_invalid"
        assert api.call("GET", "/account").ok  # victim unaffected

    def test_login_from_second_loopback_ip_works(self, server):
        api = register_and_login(server.url, "bob", source_ip="127.0.0.3")
        assert api.call("GET", "/account").ok

    def test_oversized_body_rejected(self, server):
        import http.client

        host, port = server.address
        conn = http.client.HTTPConnection(host, port, timeout=10)
        body = b"{" + b" " * (64 * 1024 + 10) + b"}"
        conn.request("POST", "/auth/begin", body=body, headers={"Content-Type": "application/json"})
        response = conn.getresponse()
        assert response.status == 400
        conn.close()

    def test_unknown_path_404_over_wire(self, server):
        assert ApiClient(server.url).call("GET", "/nope").status == 404

    def test_static_traversal_blocked(self, server):
        result = ApiClient(server.url).call("GET", "/app/../errors.py")
        assert result.status == 404

    def test_web_bundle_served(self, server):
        import http.client

        host, port = server.address
        for path, content_type in [
            ("/app", "text/html"),
            ("/app/app.js", "text/javascript"),
            ("/app/styles.css", "text/css"),
        ]:
            conn = http.client.HTTPConnection(host, port, timeout=10)
            conn.request("GET", path)
            response = conn.getresponse()
            body = response.read()
            conn.close()
            assert response.status == 200, path
            assert response.getheader("Content-Type") == content_type
            assert body

    def test_forwarded_header_ignored_by_default(self, server):
        # untrusted X-Forwarded-For must not unbind the cookie check
        api = register_and_login(server.url, "carol")
        import http.client

        host, port = server.address
        conn = http.client.HTTPConnection(host, port, timeout=10)
        cookie = "; ".join(f"{k}={v}" for k, v in api.cookies.items())
        conn.request(
            "GET", "/account", headers={"Cookie": cookie, "X-Forwarded-For": "10.9.9.9"}
        )
        response = conn.getresponse()
        assert response.status == 200  # peer address (127.0.0.1) is what counts
        conn.close()
