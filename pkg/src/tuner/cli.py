"""Command-line entry point: serve the API, run benchmarks, inspect studies."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time

from .bench import BenchConfig, bench_run, render_report
from .client import ClientSession, HttpTransport
from .datastore import Datastore, PersistentDatastore
from .rest import RestServer, parse_listen
from .service import ServerConfig, Service


def _add_serve(sub):
    p = sub.add_parser("serve", help="run the optimization service")
    p.add_argument("--listen", default="localhost:6006", help="host:port")
    p.add_argument("--store_dir", default=None,
                   help="datastore root (omit for in-memory)")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--log_level", default="info")


def _add_bench(sub):
    p = sub.add_parser("bench", help="tune a built-in synthetic objective")
    p.add_argument("--objective", required=True)
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--algorithm", default="RANDOM_SEARCH")
    p.add_argument("--budget", type=int, default=50)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.add_argument("--remote", default=None,
                   help="target a live server instead of in-process")


def _add_study(sub):
    p = sub.add_parser("study", help="study inspection")
    verbs = p.add_subparsers(dest="verb", required=True)
    d = verbs.add_parser("describe")
    d.add_argument("name")
    d.add_argument("--address", default="http://localhost:6006")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tuner")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_serve(sub)
    _add_bench(sub)
    _add_study(sub)
    args = parser.parse_args(argv)

    if args.command == "serve":
        logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.INFO))
        host, port = parse_listen(args.listen)
        store = (PersistentDatastore(args.store_dir) if args.store_dir
                 else Datastore())
        service = Service(store, ServerConfig(listen=args.listen,
                                              store_root=args.store_dir,
                                              workers=args.workers)).start()
        server = RestServer(service, host, port).start()
        print(f"serving on {server.address}", flush=True)
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            server.shutdown()
            service.stop()
        return 0

    if args.command == "bench":
        config = BenchConfig(objective=args.objective, algorithm=args.algorithm,
                             budget=args.budget, dim=args.dim, seeds=args.seeds,
                             count=args.count, out=args.out,
                             remote_address=args.remote)
        report = bench_run(config)
        print(render_report(report))
        if args.out:
            print(f"report written to {args.out}")
        return 0

    if args.command == "study" and args.verb == "describe":
        transport = HttpTransport(args.address)
        session = ClientSession(transport, args.name, client_id="cli")
        study = session.get_study()
        states = {}
        for t in study.trials:
            states[t.state.value] = states.get(t.state.value, 0) + 1
        print(json.dumps({
            "name": study.name,
            "state": study.state.value,
            "algorithm": study.spec.algorithm,
            "metrics": [m.to_json() for m in study.spec.metrics],
            "trials": len(study.trials),
            "trial_states": states,
        }, indent=2))
        return 0

    return 1


if __name__ == "__main__":
    sys.exit(main())
