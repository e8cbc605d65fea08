"""Command-line entry point.

Exit codes: 0 success, 1 verification rejected, 2 usage error or missing
file, 3 scenario parse error.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

from . import kzg
from .poly import MAX_DOMAIN
from .netsim.engine import run
from .netsim.model import expected_total_time, predicted_transmissions
from .netsim.scenario import ScenarioError, load_scenario
from .settlement import MAX_MESSAGES, TAMPER_STAGES, build_chain, run_settlement

EXIT_OK, EXIT_REJECTED, EXIT_USAGE, EXIT_PARSE = 0, 1, 2, 3


class _CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _scenario(path: str, seed: int | None):
    p = Path(path)
    if not p.is_file():
        raise _CliError(EXIT_USAGE, f"scenario file not found: {path}")
    try:
        sc = load_scenario(p)
    except ScenarioError as exc:
        raise _CliError(EXIT_PARSE, f"{path}: {exc}") from None
    if seed is not None:
        sc.seed = seed
    return sc


def _write(out: str | None, name: str, content: str) -> None:
    if out is None:
        return
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    (d / name).write_text(content)


def cmd_sim_run(args) -> int:
    sc = _scenario(args.scenario, args.seed)
    report = run(sc)
    _write(args.out, "report.txt", report.to_text())
    _write(args.out, "counters.txt", report.to_counters())
    if report.settlement:
        _write(args.out, "settlement.txt", "".join(f"{k}={v}\n" for k, v in report.settlement.items()))
    sys.stdout.write(report.to_counters() if args.counters else report.to_text())
    return EXIT_OK


def cmd_sim_predict(args) -> int:
    sc = _scenario(args.scenario, args.seed)
    try:
        no_deleg, deleg, ratio = predicted_transmissions(sc)
    except ZeroDivisionError as exc:
        raise _CliError(EXIT_REJECTED, str(exc)) from None
    lines = [f"T_no_deleg={no_deleg}", f"T_deleg={deleg}", f"I={ratio:.6f}"]
    m = sc.model
    if m is not None:
        eb = expected_total_time(m, "broadcast")
        ee = expected_total_time(m, "edge_network")
        lines += [f"E_broadcast={eb:.12g}", f"E_edge_network={ee:.12g}",
                  f"edge_over_broadcast={ee / eb:.12g}" if eb else "edge_over_broadcast=nan",
                  f"k_over_n_minus_1={m.k / (m.nodes - 1):.12g}" if m.nodes > 1 else "k_over_n_minus_1=nan"]
        funcs = (m.latency, m.loss, m.retransmit)
        if all(len(f.points) == 1 for f in funcs):
            l, p, r = (f.points[0][1] for f in funcs)
            closed = m.messages * (m.nodes - 1) * (m.t_m + l) * (1 + r * p) * m.horizon
            rel = abs(eb - closed) / abs(closed) if closed else abs(eb)
            lines.append(f"closed_form_broadcast={closed:.12g} relative_error={rel:.3e}")
    out = "\n".join(lines) + "\n"
    _write(args.out, "predict.txt", out)
    sys.stdout.write(out)
    return EXIT_OK


def cmd_por_demo(args) -> int:
    if not 1 <= args.messages <= MAX_MESSAGES:
        raise _CliError(EXIT_USAGE, f"--messages must be in 1..{MAX_MESSAGES}")
    res = run_settlement(args.messages, args.seed or 0, args.tamper)
    lines = list(res.trace)
    if res.ok:
        lines.append(f"result settled outbound={res.outbound_total} relay={res.relay_total} "
                     f"inbound={res.inbound_total} credited={res.credited} (milli-credits)")
        lines.append(f"workload_proof verified={res.proof_verified}")
    else:
        expected = TAMPER_STAGES.get(args.tamper or "", "-")
        lines.append(f"result rejected stage={res.rejected_stage} expected={expected}")
    out = "\n".join(lines) + "\n"
    _write(args.out, "settlement_trace.txt", out)
    sys.stdout.write(out)
    return EXIT_OK if res.ok else EXIT_REJECTED


def cmd_chain_dump(args) -> int:
    if args.blocks < 1 or not 1 <= args.messages <= MAX_MESSAGES:
        raise _CliError(EXIT_USAGE, "--blocks must be >= 1 and --messages in 1..256")
    chain = build_chain(args.blocks, args.messages, args.seed or 0)
    out = chain.dump()
    _write(args.out, "chain.txt", out)
    sys.stdout.write(out)
    return EXIT_OK


def cmd_kzg_fixtures(args) -> int:
    n, seed = args.n, args.seed or 0
    if not 1 <= n <= MAX_DOMAIN:
        raise _CliError(EXIT_USAGE, f"--n must be in 1..{MAX_DOMAIN}")
    params = kzg.seeded_setup(n, f"fixture/{seed}")
    rng = random.Random(seed)
    v = [rng.randrange(kzg.P) for _ in range(n)]
    c = kzg.commit_vector(params, v)
    point = rng.randrange(n)
    ev = kzg.create_witness(params, kzg.interpolate_vector(v), point)
    idx = sorted(rng.sample(range(n), min(n, 4)))
    sub = kzg.prove_subvector(params, v, idx)
    fixture = {
        "n": n,
        "seed": seed,
        "vector": [str(x) for x in v],
        "commitment": c.to_bytes().hex(),
        "eval_proof": ev.to_bytes().hex(),
        "eval_point": point,
        "eval_value": str(ev.value),
        "subvector_indices": idx,
        "subvector_proof": sub.to_bytes().hex(),
        "checks": {
            "eval": kzg.verify_eval(params, c, point, ev.value, ev.witness),
            "subvector": kzg.verify_subvector(params, c, sub.indices, sub.values, sub.witness),
        },
    }
    text = json.dumps(fixture, indent=2, sort_keys=True) + "\n"
    if args.out:
        _write(args.out, "kzg_params.hex", params.to_bytes().hex() + "\n")
        _write(args.out, "kzg_fixture.json", text)
    sys.stdout.write(text)
    return EXIT_OK if all(fixture["checks"].values()) else EXIT_REJECTED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sendnet", description="Relay network simulator and settlement toolkit.")
    verbs = parser.add_subparsers(dest="verb", required=True)

    def common(p, scenario=False):
        p.add_argument("--seed", type=int, default=None, help="override the random seed")
        p.add_argument("--out", default=None, help="directory for output files")
        if scenario:
            p.add_argument("--scenario", required=True, help="path to a .scn scenario file")

    sim = verbs.add_parser("sim", help="simulate or predict traffic for a scenario")
    sim_verbs = sim.add_subparsers(dest="action", required=True)
    p = sim_verbs.add_parser("run", help="run the event-driven simulation")
    common(p, scenario=True)
    p.add_argument("--counters", action="store_true", help="print flat key=value counters instead of the table")
    p.set_defaults(func=cmd_sim_run)
    p = sim_verbs.add_parser("predict", help="evaluate the transmission formulas and the time model")
    common(p, scenario=True)
    p.set_defaults(func=cmd_sim_predict)

    por_p = verbs.add_parser("por", help="relay settlement pipeline")
    por_verbs = por_p.add_subparsers(dest="action", required=True)
    p = por_verbs.add_parser("demo", help="run envelope -> receipt -> bill -> proof -> block")
    common(p)
    p.add_argument("--messages", "-n", type=int, default=100, help="messages to relay (1..256)")
    p.add_argument("--tamper", choices=sorted(TAMPER_STAGES), default=None,
                   help="inject a fault at one point of the pipeline")
    p.set_defaults(func=cmd_por_demo)

    chain = verbs.add_parser("chain", help="ledger inspection")
    chain_verbs = chain.add_subparsers(dest="action", required=True)
    p = chain_verbs.add_parser("dump", help="build a chain of settlement blocks and print it")
    common(p)
    p.add_argument("--blocks", type=int, default=3, help="number of blocks")
    p.add_argument("--messages", "-n", type=int, default=16, help="relayed messages per block")
    p.set_defaults(func=cmd_chain_dump)

    kz = verbs.add_parser("kzg", help="commitment scheme utilities")
    kz_verbs = kz.add_subparsers(dest="action", required=True)
    p = kz_verbs.add_parser("fixtures", help="write deterministic commitment and proof fixtures")
    common(p)
    p.add_argument("--n", type=int, default=8, help="vector length")
    p.set_defaults(func=cmd_kzg_fixtures)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
