"""Command-line client.

The CLI never calls the solver directly. It talks to the HTTP service, either
in process through the ASGI test client (the default) or over the network
with ``--server URL``. Exit codes: 0 success, 2 certified infeasibility,
1 error (the message names the file and field).
"""

from __future__ import annotations

import argparse
import json
import re
import sys
import warnings
from pathlib import Path
from typing import Any, Sequence

from .config import Config, load_config
from .model import SchemaError

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


class CliError(Exception):
    pass


# ---------------------------------------------------------------- transport


class Client:
    def __init__(self, server: str | None = None):
        if server:
            import httpx
            self._http = httpx.Client(base_url=server.rstrip("/"), timeout=None)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient
            from .service.app import app
            self._http = TestClient(app)

    def post(self, path: str, body: dict, sources: dict[str, str]) -> dict:
        try:
            r = self._http.post(path, json=body)
        except Exception as exc:  # connection failures from httpx
            raise CliError(f"cannot reach service: {exc}") from None
        if r.status_code == 422:
            err = r.json().get("error", {})
            raise CliError(_locate(err.get("field", "?"), err.get("message", ""), sources))
        if r.status_code != 200:
            raise CliError(f"service error {r.status_code}: {r.text[:200]}")
        return r.json()


def _locate(field: str, message: str, sources: dict[str, str]) -> str:
    """Rewrite a request field path into ``file: field: message``."""
    head = re.split(r"[.\[]", field, maxsplit=1)[0]
    if head in sources:
        path, prefix = sources[head].split("#", 1) if "#" in sources[head] else (sources[head], "")
        rest = field[len(head):].lstrip(".")
        m = re.match(r"readings\[(\d+)\](.*)", field)
        if m and head == "readings":
            return f"{path}:{int(m.group(1)) + 1}: {m.group(2).lstrip('.') or 'reading'}: {message}"
        inner = ".".join(p for p in (prefix, rest) if p)
        return f"{path}: {inner or head}: {message}"
    return f"{field}: {message}"


# ------------------------------------------------------------------- inputs


def _read_json(path: str) -> Any:
    p = Path(path)
    try:
        return json.loads(p.read_text())
    except OSError as exc:
        raise CliError(f"{path}: cannot read ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def _instance(args) -> tuple[dict, dict]:
    doc = _read_json(args.instance)
    if not isinstance(doc, dict):
        raise CliError(f"{args.instance}: document: expected a JSON object")
    sources: dict[str, str] = {}
    if "snapshot" in doc:
        snap = doc["snapshot"]
        sources["snapshot"] = f"{args.instance}#snapshot"
    else:
        snap = doc
        sources["snapshot"] = args.instance
    if args.workloads:
        ws = _read_json(args.workloads)
        sources["workloads"] = args.workloads
    elif "workloads" in doc:
        ws = doc["workloads"]
        sources["workloads"] = f"{args.instance}#workloads"
    else:
        raise CliError(f"{args.instance}: workloads: missing (add them to the file "
                       "or pass --workloads)")
    body = {"snapshot": snap, "workloads": ws}
    if getattr(args, "incumbent", None):
        inc = _read_json(args.incumbent)
        if isinstance(inc, dict) and "assignment" in inc:
            inc = inc["assignment"]
        body["incumbent"] = inc
        sources["incumbent"] = args.incumbent
    return body, sources


def _readings(path: str) -> list[dict]:
    out = []
    try:
        fh = open(path)
    except OSError as exc:
        raise CliError(f"{path}: cannot read ({exc.strerror})") from None
    with fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CliError(f"{path}:{n}: invalid JSON ({exc.msg})") from None
            if not isinstance(d, dict):
                raise CliError(f"{path}:{n}: expected an object")
            out.append(d)
    return out


def _config(args) -> Config:
    try:
        cfg = load_config(args.config)
    except SchemaError as exc:
        where = exc.field if args.config and exc.field.startswith(Path(args.config).name) else None
        if where is not None:
            raise CliError(f"{args.config}: {exc.field[len(Path(args.config).name) + 1:] or 'document'}: "
                           f"{exc.message}") from None
        raise CliError(f"{args.config}: {exc.message}") from None
    try:
        return cfg.with_overrides(args.alpha, args.budget_secs)
    except SchemaError as exc:
        flag = {"alpha": "--alpha", "budget_secs": "--budget-secs"}.get(exc.field, exc.field)
        raise CliError(f"{flag}: {exc.message}") from None


def _options(args) -> dict:
    opts: dict[str, Any] = {}
    if getattr(args, "objective", None):
        opts["objective"] = args.objective
    if getattr(args, "network_free", False):
        opts["network_free"] = True
    if getattr(args, "include_transport", False):
        opts["include_transport"] = True
    if getattr(args, "hop_limit", None):
        opts["hop_limit"] = args.hop_limit
    return opts


def _seeds(args, cfg: Config) -> list[int]:
    if getattr(args, "seeds", None):
        try:
            return [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            raise CliError(f"--seeds: expected comma-separated integers, got {args.seeds!r}") from None
    if args.seed is not None:
        return [args.seed]
    return list(cfg.seeds)


# ------------------------------------------------------------------ outputs


class Output:
    def __init__(self, out_dir: str | None):
        self.dir = Path(out_dir) if out_dir else None
        if self.dir is not None:
            try:
                self.dir.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise CliError(f"{out_dir}: cannot create output directory ({exc.strerror})") from None

    def write(self, name: str, text: str) -> None:
        if self.dir is not None:
            (self.dir / name).write_text(text)

    def json(self, name: str, doc: Any) -> None:
        self.write(name, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _print_solve(res: dict) -> None:
    print(f"status: {res['status']}")
    meta = res.get("meta", {})
    if meta:
        print(f"N={meta.get('N')} M={meta.get('M')} binaries={meta.get('binaries')}/"
              f"{meta.get('nominal_binaries')} continuous={meta.get('nominal_continuous')}")
    pl = res.get("placement")
    if pl:
        print(f"objective: {res['objective']:.9g}")
        for wid, sid in sorted(pl["assignment"].items(), key=lambda kv: (kv[1], kv[0])):
            print(f"x[{sid},{wid}]=1")
        for f in pl["flows"]:
            print(f"f[{f['from']},{f['to']},{f['workload']}]={f['gbps']:.6g}")
    if res.get("certificate"):
        _print_certificate(res["certificate"])
    if res.get("message") and not pl:
        print(res["message"])


def _print_certificate(cert: dict) -> None:
    print("Infeasibility certificate (irreducible set of constraint groups):")
    for g in cert["groups"]:
        print(f"  - {g['class']:<12} {g['label']}")
    if cert.get("diagnosis"):
        print("Levers:")
        for lever in sorted(cert["diagnosis"]):
            for msg in cert["diagnosis"][lever]:
                print(f"  [{lever}] {msg}")


# ----------------------------------------------------------------- commands


def cmd_solve(args, client: Client, out: Output) -> int:
    cfg = _config(args)
    body, sources = _instance(args)
    body.update(alpha=cfg.alpha, budget_secs=cfg.budget_secs, options=_options(args))
    res = client.post("/solve", body, sources)
    if args.json:
        print(json.dumps(_stable(res), indent=2, sort_keys=True))
    else:
        _print_solve(res)
    out.json("solve.json", _stable(res))
    return res["exit_code"]


def cmd_iis(args, client: Client, out: Output) -> int:
    cfg = _config(args)
    body, sources = _instance(args)
    body.update(alpha=cfg.alpha, budget_secs=cfg.budget_secs, options=_options(args))
    res = client.post("/iis", body, sources)
    if args.json:
        print(json.dumps(_stable(res), indent=2, sort_keys=True))
    elif res.get("certificate"):
        _print_certificate(res["certificate"])
    else:
        print(res.get("message") or f"status: {res['status']}")
    out.json("iis.json", _stable(res))
    return res["exit_code"]


def cmd_fsor(args, client: Client, out: Output) -> int:
    cfg = _config(args)
    body, sources = _instance(args)
    body.update(alpha=cfg.alpha, budget_secs=cfg.budget_secs, options=_options(args))
    if args.subset is not None:
        body["subset"] = [s for s in args.subset.split(",") if s]
    if args.query:
        body["queries"] = [[s for s in q.split(",") if s] for q in args.query]
    if args.limit is not None:
        body["limit"] = args.limit
    res = client.post("/fsor", body, sources)
    if args.json or res["mode"] == "enumeration":
        print(json.dumps(res, indent=2, sort_keys=True))
    else:
        print(f"{'member' if res['feasible'] else 'not a member'}: {','.join(res['subset'])}")
        if res.get("placement"):
            for wid, sid in sorted(res["placement"]["assignment"].items()):
                print(f"x[{sid},{wid}]=1")
    out.json("fsor.json", res)
    return res["exit_code"]


def cmd_export_lp(args, client: Client, out: Output) -> int:
    cfg = _config(args)
    body, sources = _instance(args)
    body.update(alpha=cfg.alpha, options=_options(args))
    res = client.post("/export-lp", body, sources)
    if out.dir is not None:
        out.write("model.lp", res["text"])
        print(f"wrote {out.dir / 'model.lp'}")
    else:
        sys.stdout.write(res["text"])
    return EXIT_OK


def cmd_loop(args, client: Client, out: Output) -> int:
    cfg = _config(args)
    if args.scenario:
        snap_res = client.post("/scenario/snapshot",
                               {"scenario": args.scenario, "seed": args.seed or 0, "hour": 0.0}, {})
        body = {"snapshot": snap_res["snapshot"], "workloads": snap_res["workloads"]}
        sources: dict[str, str] = {}
        if not args.readings:
            raise CliError("--readings: required (generate one with `scenario --readings-out`)")
    else:
        if not args.instance:
            raise CliError("instance: required unless --scenario is given")
        body, sources = _instance(args)
    if not args.readings:
        raise CliError("--readings: required")
    body["readings"] = _readings(args.readings)
    sources["readings"] = args.readings
    if args.config:
        sources["config"] = args.config
    body.update(config=cfg.to_dict(), start=args.start, cycles=args.cycles)
    res = client.post("/loop", body, sources)
    lines = "".join(json.dumps(_stable(r), sort_keys=True) + "\n" for r in res["records"])
    if args.log:
        Path(args.log).write_text(lines)
    out.write("cycles.ndjson", lines)
    for r in res["records"]:
        for a in r.get("alerts", []):
            print(f"ALERT cycle {r['cycle']} t={r['timestamp']:g}: {a}", file=sys.stderr)
        print(f"cycle {r['cycle']:>4} t={r['timestamp']:>9g} {r['outcome']:<24} "
              f"carbon={r['cumulative_carbon']:.6g} g water={r['cumulative_water']:.6g} L")
    print(json.dumps(res["summary"], sort_keys=True))
    return res["exit_code"]


def cmd_scenario(args, client: Client, out: Output) -> int:
    cfg = _config(args)
    if args.snapshot_at is not None:
        res = client.post("/scenario/snapshot", {"scenario": args.id, "seed": args.seed or 0,
                                                 "hour": args.snapshot_at}, {})
        print(json.dumps(res, indent=2, sort_keys=True))
        out.json(f"scenario_{args.id}_h{args.snapshot_at:g}.json", res)
        return EXIT_OK
    if args.readings_out:
        res = client.post("/scenario/readings", {"scenario": args.id, "seed": args.seed or 0,
                                                 "horizon_hours": args.hours}, {})
        Path(args.readings_out).write_text(res["text"])
        print(f"wrote {res['meta']['readings']} readings to {args.readings_out}")
        return EXIT_OK
    body = {"scenario": args.id, "seeds": _seeds(args, cfg), "budget_secs": cfg.budget_secs,
            "plot_data": args.plot_data}
    if args.hours is not None:
        body["horizon_hours"] = args.hours
    if args.cycle_seconds is not None:
        body["cycle_seconds"] = args.cycle_seconds
    res = client.post("/scenario", body, {})
    sys.stdout.write(res["csv"])
    for scn, checks in res["report"]["orderings"].items():
        for name, v in checks.items():
            print(f"{scn} {name}: {'PASS' if v['passed'] else 'FAIL'} {v['per_seed']}")
    out.write(f"scenario_{args.id}.csv", res["csv"])
    out.json(f"scenario_{args.id}.json", res["report"])
    if args.plot_data:
        out.write(f"scenario_{args.id}_trace.csv", res["plot_data"] or "")
        if out.dir is None:
            sys.stdout.write(res["plot_data"] or "")
    return res["exit_code"]


def cmd_bench(args, client: Client, out: Output) -> int:
    cfg = _config(args)
    scales = ["small", "medium", "large"] if args.scale == "all" else [args.scale]
    body = {"scales": scales, "seeds": _seeds(args, cfg), "alpha": cfg.alpha,
            "budget_secs": cfg.budget_secs}
    res = client.post("/bench", body, {})
    sys.stdout.write(res["csv"])
    out.write("bench.csv", res["csv"])
    out.write("bench_trials.csv", res["trials"])
    return res["exit_code"]


def cmd_report(args, client: Client, out: Output) -> int:
    path = args.file
    if path.endswith(".ndjson"):
        doc: Any = _readings(path)
    else:
        doc = _read_json(path)
    res = client.post("/report", {"document": doc, "cycle_seconds": args.cycle_seconds},
                      {"document": path})
    print(json.dumps(res, indent=2, sort_keys=True))
    out.json("report.json", res)
    if res["kind"] == "loop" and not res["audit_consistent"]:
        return EXIT_ERROR
    return EXIT_OK


def cmd_serve(args, client: Client | None, out: Output) -> int:
    import uvicorn
    from .service.app import app
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def _stable(res: dict) -> dict:
    """Drop wall-clock fields so outputs are reproducible byte for byte."""
    if isinstance(res, dict):
        return {k: _stable(v) for k, v in res.items()
                if k not in ("wall_time", "solve_seconds")}
    if isinstance(res, list):
        return [_stable(v) for v in res]
    return res


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--alpha", type=float, help="carbon weight in [0, 1]")
    common.add_argument("--budget-secs", type=float, dest="budget_secs",
                        help="solver budget per cycle in seconds")
    common.add_argument("--out", help="directory for output files")
    common.add_argument("--server", help="service URL; default runs in process")

    def instance_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("instance", help="JSON with snapshot and workloads")
        p.add_argument("--workloads", help="separate workloads file")
        p.add_argument("--incumbent", help="current assignment (JSON)")
        p.add_argument("--objective", choices=["impact", "latency"])
        p.add_argument("--network-free", action="store_true", dest="network_free")
        p.add_argument("--include-transport", action="store_true", dest="include_transport")
        p.add_argument("--hop-limit", type=int, dest="hop_limit")
        p.add_argument("--json", action="store_true", help="print the raw response")

    ap = argparse.ArgumentParser(prog="sovorch", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="solve one placement instance")
    instance_args(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("iis", parents=[common], help="extract an infeasibility certificate")
    instance_args(p)
    p.set_defaults(func=cmd_iis)

    p = sub.add_parser("fsor", parents=[common], help="FSOR membership or enumeration")
    instance_args(p)
    p.add_argument("--subset", help="comma-separated workload ids for a membership query")
    p.add_argument("--query", action="append", help="extra membership query (repeatable)")
    p.add_argument("--limit", type=int, help="enumeration guard")
    p.set_defaults(func=cmd_fsor)

    p = sub.add_parser("export-lp", parents=[common], help="write the MILP in LP format")
    instance_args(p)
    p.set_defaults(func=cmd_export_lp)

    p = sub.add_parser("loop", parents=[common], help="run the closed control loop")
    p.add_argument("instance", nargs="?", help="base snapshot and workloads")
    p.add_argument("--workloads")
    p.add_argument("--readings", help="NDJSON telemetry readings")
    p.add_argument("--scenario", choices=["A", "B", "C"], help="take base and workloads from a scenario")
    p.add_argument("--cycles", type=int, default=12)
    p.add_argument("--start", type=float, default=0.0)
    p.add_argument("--log", help="write cycle records here as NDJSON")
    p.set_defaults(func=cmd_loop)

    p = sub.add_parser("scenario", parents=[common], help="run a comparison scenario")
    p.add_argument("id", choices=["A", "B", "C"])
    p.add_argument("--seeds", help="comma-separated seeds (default: config seeds)")
    p.add_argument("--hours", type=float, help="horizon in hours (default 168)")
    p.add_argument("--cycle-seconds", type=float, dest="cycle_seconds")
    p.add_argument("--plot-data", action="store_true", dest="plot_data",
                   help="emit per-cycle traces as CSV")
    p.add_argument("--snapshot-at", type=float, dest="snapshot_at",
                   help="print the ingested snapshot at this hour instead of running")
    p.add_argument("--readings-out", dest="readings_out",
                   help="write the scenario telemetry stream as NDJSON instead of running")
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("bench", parents=[common], help="solve-time benchmark")
    p.add_argument("--scale", choices=["small", "medium", "large", "all"], default="all")
    p.add_argument("--seeds", help="comma-separated seeds (default: config seeds)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", parents=[common], help="summarize a cycle log or scenario report")
    p.add_argument("file", help="cycles NDJSON or scenario JSON")
    p.add_argument("--cycle-seconds", type=float, default=300.0, dest="cycle_seconds")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", parents=[common], help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        out = Output(args.out)
        if args.command == "serve":
            return cmd_serve(args, None, out)
        return int(args.func(args, Client(args.server), out))
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
