"""Command-line entry point: ``dltreport <subcommand>`` (or ``python -m dltreport``).

Exit status: 0 on success, 1 on any equivalence/invariant failure or a
non-200 pull, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import urllib.error
import urllib.request
from pathlib import Path
from urllib.parse import urlencode

from .composer import Composer
from .errors import DLTReportError
from .harness import (
    PushOracle,
    ScenarioParams,
    compare_seeds,
    generate_scenario,
    latency_report,
    read_scenario,
    write_scenario,
)
from .mrer import load_template, shipped_templates
from .service import PullService, load_tokens, make_server, parse_listen
from .warehouse import MaskingPolicy, Warehouse


def _templates(args) -> dict:
    templates = shipped_templates()
    extra = getattr(args, "templates_dir", None)
    if extra:
        for path in sorted(Path(extra).glob("*.template.json")):
            t = load_template(path)
            templates[t.template_id] = t
    return templates


def _select(templates: dict, spec: str) -> list:
    if spec == "all":
        return [templates[k] for k in sorted(templates)]
    try:
        return [templates[k] for k in spec.split(",")]
    except KeyError as exc:
        raise SystemExit(f"unknown template {exc.args[0]!r}; known: {', '.join(sorted(templates))}")


def _seeds(spec: str) -> list[int]:
    out = []
    for part in spec.split(","):
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def _scenario_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--banks", type=int, default=8)
    p.add_argument("--jurisdictions", type=int, default=3)
    p.add_argument("--assets", type=int, default=6)
    p.add_argument("--blocks", type=int, default=200)
    p.add_argument("--txs-per-block", type=int, default=10)
    p.add_argument("--period", type=int, default=30)


def _params(args, seed: int) -> ScenarioParams:
    return ScenarioParams(seed=seed, n_banks=args.banks, n_jurisdictions=args.jurisdictions,
                          n_assets=args.assets, n_blocks=args.blocks, txs_per_block=args.txs_per_block,
                          reporting_period_blocks=args.period)


def default_tokens(registry) -> dict:
    """One bearer token per role kind, for local experiments."""
    tokens = {"t-operator": {"role_id": "operator", "kind": "OPERATOR"}}
    for i, inst in enumerate(registry.institutions()):
        tokens[f"t-bank-{i}"] = {"role_id": f"bank-{inst.lei}", "kind": "BANK", "lei": inst.lei,
                                 "jurisdiction": inst.jurisdiction}
    for jur in registry.jurisdictions():
        for kind in ("NCA", "NCB", "NRA"):
            tokens[f"t-{kind.lower()}-{jur.lower()}"] = {"role_id": f"{kind.lower()}-{jur.lower()}",
                                                          "kind": kind, "jurisdiction": jur}
    for kind in ("EBA", "ECB", "SRB"):
        tokens[f"t-{kind.lower()}"] = {"role_id": kind.lower(), "kind": kind}
    return tokens


def conservation_failures(ledger, step: int = 10) -> list[str]:
    """Check sum of balances == issued - redeemed for every asset at sampled heights."""
    bad = []
    heights = sorted(set(range(0, ledger.head_height + 1, step)) | {ledger.head_height})
    for h in heights:
        if h < 0:
            continue
        totals: dict = {}
        for (_, asset), v in ledger.balances_at(h).items():
            if v < 0:
                bad.append(f"negative balance in {asset} at {h}")
            totals[asset] = totals.get(asset, 0) + v
        for asset in ledger.assets():
            if totals.get(asset, 0) != ledger.supply_at(asset, h):
                bad.append(f"{asset}@{h}: balances {totals.get(asset, 0)} != supply {ledger.supply_at(asset, h)}")
    return bad


# -- subcommands ----------------------------------------------------------------


def cmd_generate(args) -> int:
    params = _params(args, args.seed)
    ledger, registry = generate_scenario(params)
    out = Path(args.out or f"data/seed-{args.seed}")
    write_scenario(out, params, ledger, registry)
    (out / "tokens.json").write_text(json.dumps(default_tokens(registry), indent=2, sort_keys=True) + "\n")
    problems = conservation_failures(ledger)
    print(f"wrote {len(ledger.events())} events over {ledger.head_height + 1} blocks to {out}")
    for p in problems:
        print(f"INVARIANT FAILURE: {p}", file=sys.stderr)
    return 1 if problems else 0


def _load_warehouse(directory: Path, registry, templates, policy=None) -> Warehouse:
    if (directory / "warehouse_state.json").exists():
        return Warehouse.load(directory, registry, policy=policy, templates=templates.values())
    return Warehouse(registry, policy=policy, templates=templates.values())


def cmd_run_composer(args) -> int:
    directory = Path(args.data)
    _, ledger, registry = read_scenario(directory)
    wh = _load_warehouse(directory, registry, _templates(args))
    n = Composer(ledger, registry, wh, drop_every=args.drop_every).run_to_head(args.batch_size)
    wh.save(directory)
    print(f"appended {n} records; warehouse holds {len(wh)}; head={wh.head}")
    return 0


def _build_service(args) -> PullService:
    directory = Path(args.data)
    _, ledger, registry = read_scenario(directory)
    policy = MaskingPolicy.load(args.policy) if getattr(args, "policy", None) else None
    wh = _load_warehouse(directory, registry, _templates(args), policy)
    Composer(ledger, registry, wh).run_to_head()
    tokens_path = getattr(args, "tokens", None) or directory / "tokens.json"
    return PullService(wh, load_tokens(tokens_path))


def cmd_serve(args) -> int:
    service = _build_service(args)
    host, port = parse_listen(args.listen)
    server = make_server(service, host, port)
    print(f"serving pull endpoints on http://{host}:{server.server_address[1]} (head={service.head()})",
          flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def _pull_target(args) -> str:
    if args.path:
        return args.path
    params = {}
    if args.scope_level:
        params["scope_level"] = args.scope_level
    if args.scope_key:
        params["scope_key"] = args.scope_key
    if args.as_of is not None:
        params["as_of"] = args.as_of
    base = "/records" if args.records else (f"/reports/{args.template}" if args.template else "/head")
    return base + ("?" + urlencode(params) if params else "")


def cmd_pull(args) -> int:
    target = _pull_target(args)
    if args.url:
        req = urllib.request.Request(args.url.rstrip("/") + target,
                                     headers={"Authorization": f"Bearer {args.token}"})
        try:
            with urllib.request.urlopen(req) as resp:
                status, body = resp.status, resp.read()
        except urllib.error.HTTPError as exc:
            status, body = exc.code, exc.read()
    else:
        status, body = _build_service(args).handle("GET", target, args.token)
    doc = json.loads(body)
    if status != 200:
        print(f"{status} {doc.get('error', '')}: {doc.get('message', '')}")
        return 1
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_oracle(args) -> int:
    templates = _templates(args)
    template = _select(templates, args.template)[0]
    oracle = PushOracle.from_directory(args.data)
    reports = oracle.run(template, args.period_end)
    doc = {str(scope): inst.to_dict() for scope, inst in sorted(reports.items())}
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_compare(args) -> int:
    templates = _select(_templates(args), args.templates)
    seeds = _seeds(args.seeds) if args.seeds else [args.seed]
    params = _params(args, seeds[0])
    kw = {k: getattr(params, k) for k in ("n_banks", "n_jurisdictions", "n_assets", "n_blocks",
                                          "txs_per_block", "reporting_period_blocks")}
    report = compare_seeds(seeds, templates, drop_every=args.drop_every, **kw)
    doc = report.to_dict()
    if args.json:
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        print(f"verdict: {doc['verdict']}  seeds={seeds[0]}..{seeds[-1]}  instances={doc['instances_compared']}"
              f"  points={doc['points_compared']}  max_abs_diff={doc['max_abs_diff']}")
        for f in doc["failures"][:20]:
            print(f"  MISMATCH {f['template_id']} {f['scope']} @{f['period_end']} {f['point']}: "
                  f"pull={f['pull']} push={f['push']}")
        if doc["failure_count"] > 20:
            print(f"  ... {doc['failure_count'] - 20} more")
        for v in doc["additivity_violations"][:20]:
            print(f"  ADDITIVITY {v}")
        for v in doc["error_validation_failures"][:20]:
            print(f"  ERROR-VALIDATION {v}")
    ok = report.verdict == "PASS" and not report.additivity_violations and not report.error_failures
    return 0 if ok else 1


def cmd_latency(args) -> int:
    templates = _templates(args)
    template = _select(templates, args.template)[0] if args.template else None
    report = latency_report(_params(args, args.seed), template, composer_every=args.composer_every)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dltreport", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a seeded scenario (events, registry, tokens)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out")
    _scenario_args(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run-composer", help="enrich the event log into the warehouse")
    p.add_argument("--data", required=True)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--drop-every", type=int, help=argparse.SUPPRESS)
    p.add_argument("--templates-dir")
    p.set_defaults(func=cmd_run_composer)

    p = sub.add_parser("serve", help="host the HTTP pull service")
    p.add_argument("--data", required=True)
    p.add_argument("--tokens")
    p.add_argument("--policy")
    p.add_argument("--listen", default="127.0.0.1:8080")
    p.add_argument("--templates-dir")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("pull", help="issue one pull request (HTTP with --url, in-process with --data)")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--url")
    src.add_argument("--data")
    p.add_argument("--token", default="")
    p.add_argument("--tokens")
    p.add_argument("--policy")
    p.add_argument("--templates-dir")
    p.add_argument("--template")
    p.add_argument("--records", action="store_true")
    p.add_argument("--scope-level", choices=["LOCAL", "NATIONAL", "SUPRANATIONAL"])
    p.add_argument("--scope-key")
    p.add_argument("--as-of")
    p.add_argument("--path", help="raw request target, e.g. /head")
    p.set_defaults(func=cmd_pull)

    p = sub.add_parser("oracle", help="push-model batch reports from the file exports")
    p.add_argument("--data", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--period-end", type=int, required=True)
    p.add_argument("--templates-dir")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("compare", help="pull/push equivalence run")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--seeds", help="e.g. 1-20 or 1,3,5")
    p.add_argument("--templates", default="all")
    p.add_argument("--templates-dir")
    p.add_argument("--json", action="store_true")
    p.add_argument("--drop-every", type=int, help=argparse.SUPPRESS)
    _scenario_args(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("latency", help="pull vs push availability lag")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--template")
    p.add_argument("--composer-every", type=int, default=1)
    p.add_argument("--templates-dir")
    _scenario_args(p)
    p.set_defaults(func=cmd_latency)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DLTReportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
