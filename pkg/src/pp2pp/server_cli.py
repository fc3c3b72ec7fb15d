"""Server binary: serve the API, verify the transaction log, or run benchmarks.

TLS is deliberately not terminated here: deploy behind a TLS proxy and keep
this listener on loopback or a private network. The PP2PP_KEYFILE environment
variable overrides where the 48-byte key file lives.
"""

from __future__ import annotations

import argparse
import os
import sys

from .bench import format_csv, format_table, run_bench
from .httpd import ApiServer
from .service import Service, ServiceConfig


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pp2pp-server", description="PP2PP relying-party server")
    parser.add_argument(
        "command",
        nargs="?",
        default="serve",
        choices=["serve", "verify-ledger"],
    )
    parser.add_argument("--listen", default="127.0.0.1:8455", help="addr:port to bind")
    parser.add_argument("--data-dir", default="./pp2pp-data", help="state directory")
    parser.add_argument("--rp-id", default="pp2pp.local")
    parser.add_argument("--base-url", default=None, help="public URL used in emailed links")
    parser.add_argument("--in-memory", action="store_true", help="no persistence (tests/demos)")
    parser.add_argument("--bench", choices=["register", "auth"], help="run benchmark and exit")
    parser.add_argument("--n", type=int, default=5, help="benchmark iterations")
    parser.add_argument("--initial-deposit", type=int, default=10_000)
    parser.add_argument("--rate-scale", type=float, default=1.0, help="rate-limit multiplier")
    parser.add_argument("--no-rate-limit", action="store_true")
    parser.add_argument(
        "--trusted-proxy",
        action="store_true",
        help="trust X-Forwarded-For (only behind a proxy you control)",
    )
    return parser


def _config(args: argparse.Namespace, base_url: str) -> ServiceConfig:
    return ServiceConfig(
        rp_id=args.rp_id,
        base_url=args.base_url or base_url,
        data_dir=None if args.in_memory else args.data_dir,
        initial_deposit=args.initial_deposit,
        rate_limiting=not args.no_rate_limit,
        rate_scale=args.rate_scale,
        trusted_proxy=args.trusted_proxy,
        key_file=os.environ.get("PP2PP_KEYFILE"),
    )


def cmd_serve(args: argparse.Namespace) -> int:
    host, _, port = args.listen.rpartition(":")
    service = Service(_config(args, f"http://{args.listen}"))
    server = ApiServer(service, host or "127.0.0.1", int(port))
    print(f"pp2pp-server listening on {server.url} (rp_id={args.rp_id})", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    # ephemeral in-memory server on a random loopback port; limits off so the
    # measurement reflects ceremony cost, not the rate limiter
    config = ServiceConfig(rp_id=args.rp_id, data_dir=None, rate_limiting=False)
    server = ApiServer(Service(config), "127.0.0.1", 0)
    server.start()
    try:
        records = run_bench(args.bench, args.n, server.url)
    finally:
        server.shutdown()
    print(format_table(args.bench, records))
    print()
    print(format_csv(args.bench, records))
    return 0


def cmd_verify_ledger(args: argparse.Namespace) -> int:
    service = Service(_config(args, f"http://{args.listen}"))
    try:
        replayed = service.ledger.replay_log()
        current = service.ledger.current_balances()
        ok = not replayed["violations"] and replayed["balances"] == current
        print(f"replayed balances: {replayed['balances']}")
        print(f"current balances:  {current}")
        if replayed["violations"]:
            print("state-machine violations:")
            for v in replayed["violations"]:
                print(f"  {v}")
        print("ledger OK" if ok else "LEDGER MISMATCH")
        return 0 if ok else 1
    finally:
        service.close()


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.bench:
        return cmd_bench(args)
    if args.command == "verify-ledger":
        return cmd_verify_ledger(args)
    return cmd_serve(args)


if __name__ == "__main__":
    sys.exit(main())
