"""End-user CLI: drives every server flow with a file-backed smart card.

Exit codes: 0 success, 1 expected protocol rejection (including every attack
scenario being correctly refused), 2 client/configuration error. With --json,
output is a single machine-readable object per invocation.

The attack subcommands reuse the honest code paths with exactly one malicious
twist each, so rejections exercise the same serialization the real flows use.
An attack "passing" means the server/card refused it; if one ever gets
through, the command exits 0 with ATTACK SUCCEEDED so CI notices.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import crypto
from .authenticator import AssertionResponse, SmartCard
from .client import ApiClient, ServerUnreachable
from .errors import CardError, Pp2ppError

DEFAULT_SERVER = "http://127.0.0.1:8455"
DEFAULT_CARD = "~/.pp2pp/card"

EXIT_OK = 0
EXIT_REJECTED = 1
EXIT_CLIENT_ERROR = 2


class Cli:
    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.server = args.server or os.environ.get("PP2PP_SERVER", DEFAULT_SERVER)
        self.card_path = Path(
            args.card or os.environ.get("PP2PP_CARD", DEFAULT_CARD)
        ).expanduser()
        self.passphrase = args.passphrase or os.environ.get("PP2PP_CARD_PASSPHRASE", "pp2pp")
        self.uv = args.uv or os.environ.get("PP2PP_CARD_UV", "1234")
        self.json_mode = args.json
        self._card: SmartCard | None = None

    # -- plumbing -----------------------------------------------------------

    def emit(self, payload: dict, human: str = "") -> None:
        if self.json_mode:
            print(json.dumps(payload, sort_keys=True))
        elif human:
            print(human)

    def reject(self, code: str, message: str) -> int:
        self.emit({"ok": False, "code": code, "error": message}, f"rejected: {message} [{code}]")
        return EXIT_REJECTED

    def client_error(self, message: str) -> int:
        self.emit({"ok": False, "code": "client_error", "error": message}, f"error: {message}")
        return EXIT_CLIENT_ERROR

    def api(self, source_ip: str | None = None) -> ApiClient:
        client = ApiClient(self.server, source_ip=source_ip)
        session = self._load_session()
        if session and session.get("server") == self.server:
            client.cookies["pp2pp_session"] = session["cookie"]
        return client

    @property
    def session_path(self) -> Path:
        return self.card_path.with_name(self.card_path.name + ".session.json")

    def _load_session(self) -> dict | None:
        try:
            return json.loads(self.session_path.read_text())
        except (FileNotFoundError, json.JSONDecodeError):
            return None

    def _save_session(self, username: str, cookie: str) -> None:
        self.session_path.parent.mkdir(parents=True, exist_ok=True)
        self.session_path.write_text(
            json.dumps({"server": self.server, "username": username, "cookie": cookie})
        )

    def card(self) -> SmartCard:
        if self._card is None:
            if not self.card_path.exists():
                raise FileNotFoundError(
                    f"card file not found: {self.card_path} (run 'pp2pp card create')"
                )
            self._card = SmartCard.import_card(self.card_path, self.passphrase)
        return self._card

    def save_card(self) -> None:
        if self._card is not None:
            self._card.export_card(self.card_path, self.passphrase)

    def _session_cookie(self, result) -> str | None:
        for raw in result.set_cookies():
            if raw.startswith("pp2pp_session="):
                return raw.split("=", 1)[1].split(";", 1)[0]
        return None

    # -- ceremonies ----------------------------------------------------------

    def _register(self, api: ApiClient, username: str, email: str, rp_override=None) -> tuple:
        """Returns (result, None) or raises CardError; shared with attacks."""
        begin = api.call("POST", "/register/begin", {"username": username, "email": email})
        if not begin.ok:
            return begin, None
        rp_id = rp_override or begin.body["rp_id"]
        challenge = crypto.unb64u(begin.body["challenge"])
        _, pub, assertion = self.card().make_credential(
            rp_id, username.encode(), challenge, self.uv
        )
        self.save_card()
        finish = api.call(
            "POST",
            "/register/finish",
            {"username": username, "public_key": pub, "assertion": assertion.to_wire()},
        )
        return finish, assertion

    def _login(self, api: ApiClient, username: str, rp_override=None, exchange: bool = True):
        """Returns (final_result, finish_result, assertion)."""
        begin = api.call("POST", "/auth/begin", {"username": username})
        if not begin.ok:
            return begin, begin, None
        rp_id = rp_override or begin.body["rp_id"]
        challenge = crypto.unb64u(begin.body["challenge"])
        assertion = self.card().get_assertion(rp_id, challenge, uv_input=self.uv)
        self.save_card()
        finish = api.call(
            "POST", "/auth/finish", {"username": username, "assertion": assertion.to_wire()}
        )
        if not finish.ok or not exchange:
            return finish, finish, assertion
        exchanged = api.call("POST", "/auth/exchange", {"token": finish.body["token"]})
        return exchanged, finish, assertion

    # -- commands ------------------------------------------------------------------

    def cmd_card_create(self) -> int:
        if self.card_path.exists() and not self.args.force:
            return self.client_error(f"card file exists: {self.card_path} (use --force)")
        card = SmartCard(uv_secret=self.uv)
        card.export_card(self.card_path, self.passphrase)
        self.emit(
            {"ok": True, "command": "card_create", "card_id": card.card_id},
            f"created card {card.card_id} at {self.card_path}",
        )
        return EXIT_OK

    def cmd_card_info(self) -> int:
        info = self.card().describe()
        lines = [f"card {info['card_id']} (locked: {info['locked']})"]
        for cred in info["credentials"]:
            lines.append(
                f"  {cred['rp_id']} user={cred['user_handle']} sign_count={cred['sign_count']}"
            )
        self.emit({"ok": True, "command": "card_info", **info}, "\n".join(lines))
        return EXIT_OK

    def cmd_register(self) -> int:
        api = self.api()
        try:
            finish, _ = self._register(api, self.args.username, self.args.email)
        except CardError as exc:
            return self.reject(exc.code, str(exc))
        if not finish.ok:
            return self.reject(finish.body.get("code", "error"), finish.body.get("error", ""))
        self.emit(
            {"ok": True, "command": "register", "username": self.args.username},
            f"registered {self.args.username}",
        )
        return EXIT_OK

    def cmd_login(self) -> int:
        api = self.api()
        try:
            final, _, _ = self._login(api, self.args.username)
        except CardError as exc:
            return self.reject(exc.code, str(exc))
        if not final.ok:
            return self.reject(final.body.get("code", "error"), final.body.get("error", ""))
        cookie = api.cookies.get("pp2pp_session")
        if not cookie:
            return self.client_error("server did not set a session cookie")
        self._save_session(self.args.username, cookie)
        self.emit(
            {"ok": True, "command": "login", "username": self.args.username},
            f"logged in as {self.args.username}",
        )
        return EXIT_OK

    def cmd_link_login(self) -> int:
        api = ApiClient(self.server)
        result = api.call("GET", "/auth/link/consume", query={"payload": self.args.payload})
        if not result.ok:
            return self.reject(result.body.get("code", "error"), result.body.get("error", ""))
        cookie = api.cookies.get("pp2pp_session")
        self._save_session(result.body["username"], cookie or "")
        self.emit(
            {"ok": True, "command": "link_login", "username": result.body["username"]},
            f"logged in via link as {result.body['username']}",
        )
        return EXIT_OK

    def cmd_balance(self) -> int:
        result = self.api().call("GET", "/account")
        if not result.ok:
            return self.reject(result.body.get("code", "error"), result.body.get("error", ""))
        self.emit(
            {"ok": True, "command": "balance", **result.body},
            f"{result.body['username']}: {result.body['balance']} units",
        )
        return EXIT_OK

    def cmd_history(self) -> int:
        result = self.api().call("GET", "/account/history")
        if not result.ok:
            return self.reject(result.body.get("code", "error"), result.body.get("error", ""))
        lines = [
            f"{t['state']:<12} {t['channel']:<8} {t['payer']} -> {t['payee']}  {t['amount']}"
            for t in result.body["transactions"]
        ]
        self.emit(
            {"ok": True, "command": "history", **result.body},
            "\n".join(lines) if lines else "(no transactions)",
        )
        return EXIT_OK

    def cmd_pay(self) -> int:
        result = self.api().call(
            "POST", "/pay/direct", {"payee": self.args.payee, "amount": self.args.amount}
        )
        if not result.ok:
            return self.reject(result.body.get("code", "error"), result.body.get("error", ""))
        self.emit(
            {"ok": True, "command": "pay", **result.body},
            f"paid {self.args.amount} to {self.args.payee} ({result.body['state']})",
        )
        return EXIT_OK

    def cmd_token_create(self) -> int:
        body = {"kind": self.args.kind}
        if self.args.amount is not None:
            body["amount"] = self.args.amount
        result = self.api().call("POST", "/pay/token/create", body)
        if not result.ok:
            return self.reject(result.body.get("code", "error"), result.body.get("error", ""))
        self.emit(
            {"ok": True, "command": "token_create", **result.body},
            f"{result.body['kind']} token: {result.body['presentable']}",
        )
        return EXIT_OK

    def cmd_token_redeem(self) -> int:
        body = {"payload": self.args.payload}
        if self.args.amount is not None:
            body["amount"] = self.args.amount
        result = self.api().call("POST", "/pay/token/redeem", body)
        if not result.ok:
            return self.reject(result.body.get("code", "error"), result.body.get("error", ""))
        self.emit(
            {"ok": True, "command": "token_redeem", **result.body},
            f"redeemed: {result.body['amount']} to {result.body['payee']} ({result.body['state']})",
        )
        return EXIT_OK

    def cmd_request(self) -> int:
        result = self.api().call(
            "POST", "/pay/request", {"payer": self.args.payer, "amount": self.args.amount}
        )
        if not result.ok:
            return self.reject(result.body.get("code", "error"), result.body.get("error", ""))
        self.emit(
            {"ok": True, "command": "request", **result.body},
            f"requested {self.args.amount} from {self.args.payer} (txn {result.body['txn_id']})",
        )
        return EXIT_OK

    def cmd_ack(self) -> int:
        accept = self.args.decision == "accept"
        result = self.api().call(
            "POST", "/pay/acknowledge", {"txn_id": self.args.txn, "accept": accept}
        )
        if not result.ok:
            return self.reject(result.body.get("code", "error"), result.body.get("error", ""))
        self.emit(
            {"ok": True, "command": "ack", **result.body},
            f"transaction {self.args.txn}: {result.body['state']}",
        )
        return EXIT_OK

    def cmd_dispute(self) -> int:
        result = self.api().call(
            "POST", "/dispute/open", {"txn_id": self.args.txn, "reason": self.args.reason}
        )
        if not result.ok:
            return self.reject(result.body.get("code", "error"), result.body.get("error", ""))
        self.emit(
            {"ok": True, "command": "dispute", **result.body},
            f"dispute opened on {self.args.txn}",
        )
        return EXIT_OK

    # -- attacks -----------------------------------------------------------------------

    def cmd_attack(self) -> int:
        scenario = self.args.scenario
        handler = getattr(self, f"attack_{scenario.replace('-', '_')}")
        return handler()

    def _attack_rejected(self, scenario: str, code: str, detail: str) -> int:
        self.emit(
            {"ok": False, "attack": scenario, "rejected": True, "code": code},
            f"attack {scenario}: correctly rejected ({code}): {detail}",
        )
        return EXIT_REJECTED

    def _attack_succeeded(self, scenario: str, detail: str) -> int:
        self.emit(
            {"ok": True, "attack": scenario, "rejected": False},
            f"ATTACK SUCCEEDED ({scenario}): {detail}. This is a security regression",
        )
        return EXIT_OK

    def attack_phish(self) -> int:
        """A phishing page relays the ceremony but presents its own RP ID."""
        api = self.api()
        username = self.args.username or "alice"
        try:
            final, _, _ = self._login(api, username, rp_override="evil.local")
        except CardError as exc:
            return self._attack_rejected("phish", exc.code, "card refused to sign for evil.local")
        if final.ok:
            return self._attack_succeeded("phish", "server accepted a phished ceremony")
        return self._attack_rejected("phish", final.body.get("code", "error"), "server refused")

    def attack_replay(self) -> int:
        """Capture a valid assertion, replay it against the server."""
        api = self.api()
        username = self.args.username or "alice"
        try:
            final, finish, assertion = self._login(api, username)
        except CardError as exc:
            return self.client_error(f"setup login failed: {exc.code}")
        if not final.ok or assertion is None:
            return self.client_error(f"setup login failed: {final.body}")
        replay = api.call(
            "POST", "/auth/finish", {"username": username, "assertion": assertion.to_wire()}
        )
        if replay.ok:
            return self._attack_succeeded("replay", "replayed assertion accepted")
        return self._attack_rejected(
            "replay", replay.body.get("code", "error"), "replayed assertion refused"
        )

    def attack_hijack(self) -> int:
        """Steal the session cookie, present it from a different source IP."""
        api = self.api()
        username = self.args.username or "alice"
        try:
            final, _, _ = self._login(api, username)
        except CardError as exc:
            return self.client_error(f"setup login failed: {exc.code}")
        if not final.ok:
            return self.client_error(f"setup login failed: {final.body}")
        cookie = api.cookies.get("pp2pp_session", "")
        thief = ApiClient(self.server, source_ip=self.args.attacker_ip)
        thief.cookies["pp2pp_session"] = cookie
        stolen = thief.call("GET", "/account")
        if stolen.ok:
            return self._attack_succeeded("hijack", "cookie accepted from a different IP")
        # control: the legitimate client still works from the original IP
        control = api.call("GET", "/account")
        detail = "cookie refused from foreign IP"
        if not control.ok:
            detail += " (warning: control request also failed)"
        return self._attack_rejected("hijack", stolen.body.get("code", "error"), detail)

    def attack_reuse_link(self) -> int:
        """Consume a one-time login link twice."""
        if not self.args.outbox:
            return self.client_error("attack reuse-link needs --outbox <server outbox file>")
        api = ApiClient(self.server)
        email = self.args.email or "alice@example.org"
        issue = api.call("POST", "/auth/link/issue", {"email": email})
        if not issue.ok:
            return self.client_error(f"link issue failed: {issue.body}")
        try:
            lines = [
                json.loads(l)
                for l in Path(self.args.outbox).read_text().splitlines()
                if l.strip()
            ]
            payload = lines[-1]["link"].split("payload=")[1]
        except (FileNotFoundError, IndexError, KeyError):
            return self.client_error("no link found in outbox")
        first = api.call("GET", "/auth/link/consume", query={"payload": payload})
        if not first.ok:
            return self.client_error(f"first consume failed: {first.body}")
        second = api.call("GET", "/auth/link/consume", query={"payload": payload})
        if second.ok:
            return self._attack_succeeded("reuse-link", "link consumed twice")
        return self._attack_rejected(
            "reuse-link", second.body.get("code", "error"), "second consume refused"
        )

    def attack_reuse_token(self) -> int:
        """Exchange the same pending auth token twice."""
        api = self.api()
        username = self.args.username or "alice"
        try:
            finish, _, _ = self._login(api, username, exchange=False)
        except CardError as exc:
            return self.client_error(f"setup login failed: {exc.code}")
        if not finish.ok:
            return self.client_error(f"setup login failed: {finish.body}")
        token = finish.body["token"]
        first = api.call("POST", "/auth/exchange", {"token": token})
        if not first.ok:
            return self.client_error(f"first exchange failed: {first.body}")
        second = api.call("POST", "/auth/exchange", {"token": token})
        if second.ok:
            return self._attack_succeeded("reuse-token", "token exchanged twice")
        return self._attack_rejected(
            "reuse-token", second.body.get("code", "error"), "second exchange refused"
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pp2pp", description="PP2PP payment client")
    parser.add_argument("--server", help=f"server URL (default {DEFAULT_SERVER} or $PP2PP_SERVER)")
    parser.add_argument("--card", help=f"card file path (default {DEFAULT_CARD} or $PP2PP_CARD)")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    parser.add_argument("--passphrase", help="card file passphrase ($PP2PP_CARD_PASSPHRASE)")
    parser.add_argument("--uv", help="user-verification secret ($PP2PP_CARD_UV)")
    sub = parser.add_subparsers(dest="command", required=True)

    card = sub.add_parser("card", help="manage the smart-card file")
    card_sub = card.add_subparsers(dest="card_command", required=True)
    create = card_sub.add_parser("create")
    create.add_argument("--force", action="store_true")
    card_sub.add_parser("info")

    register = sub.add_parser("register", help="enrol a new user")
    register.add_argument("username")
    register.add_argument("email")

    login = sub.add_parser("login", help="passwordless login")
    login.add_argument("username")

    link_login = sub.add_parser("link-login", help="login with a one-time link payload")
    link_login.add_argument("payload")

    sub.add_parser("balance")
    sub.add_parser("history")

    pay = sub.add_parser("pay", help="direct transfer")
    pay.add_argument("payee")
    pay.add_argument("amount", type=int)

    token = sub.add_parser("token", help="payment tokens")
    token_sub = token.add_subparsers(dest="token_command", required=True)
    tc = token_sub.add_parser("create")
    tc.add_argument("kind", choices=["qr", "nfc", "link"])
    tc.add_argument("amount", type=int, nargs="?")
    tr = token_sub.add_parser("redeem")
    tr.add_argument("payload")
    tr.add_argument("amount", type=int, nargs="?")

    request = sub.add_parser("request", help="request payment from someone")
    request.add_argument("payer")
    request.add_argument("amount", type=int)

    ack = sub.add_parser("ack", help="acknowledge a payment request")
    ack.add_argument("txn")
    ack.add_argument("decision", choices=["accept", "reject"])

    dispute = sub.add_parser("dispute", help="dispute a settled transaction")
    dispute.add_argument("txn")
    dispute.add_argument("reason")

    attack = sub.add_parser("attack", help="adversarial scenario suite")
    attack.add_argument(
        "scenario", choices=["phish", "replay", "hijack", "reuse-link", "reuse-token"]
    )
    attack.add_argument("--username", help="victim username (default alice)")
    attack.add_argument("--email", help="victim email for reuse-link")
    attack.add_argument("--outbox", help="server outbox file for reuse-link")
    attack.add_argument("--attacker-ip", default="127.0.0.2", help="source IP for hijack")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    cli = Cli(args)
    command = args.command.replace("-", "_")
    if command == "card":
        command = f"card_{args.card_command}"
    elif command == "token":
        command = f"token_{args.token_command}"
    handler = getattr(cli, f"cmd_{command}")
    try:
        return handler()
    except ServerUnreachable as exc:
        return cli.client_error(f"server unreachable: {exc}")
    except CardError as exc:
        return cli.reject(exc.code, str(exc))
    except Pp2ppError as exc:
        return cli.reject(exc.code, str(exc))
    except FileNotFoundError as exc:
        return cli.client_error(str(exc))


if __name__ == "__main__":
    sys.exit(main())
