"""Command-line entry point.

Exit codes: 0 success, 2 invalid scenario or flags, 3 budget infeasible
under ``--strict-budget``, 4 peer unreachable (emulation).
"""
from __future__ import annotations

import argparse
import asyncio
import copy
import json
import logging
import signal
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Optional, Sequence

from . import __version__
from .catalog import catalog_by_id, catalog_json
from .engine import CrosscheckUndefined, EdgeProcessing, Scenario, ScenarioError, analytic_crosscheck, run
from .link import get_profile
from .report import build_report, latency_csv, render_catalog, render_tables, tables
from .scenario import DEFAULT_SCENARIO, merge_defaults, scenario_from_dict, set_override
from .units import as_fraction

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INFEASIBLE = 3
EXIT_UNREACHABLE = 4

log = logging.getLogger("limbnet")


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument("--out", type=Path, default=None, metavar="DIR", help="write outputs into DIR")
    common.add_argument("-v", "--verbose", action="store_true")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="limbnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"limbnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("tables", parents=[common], help="reproduce the link performance tables")
    sub.add_parser("catalog", parents=[common], help="print the stream catalog")

    sim = sub.add_parser("simulate", parents=[common], help="run the discrete-event simulation")
    sim.add_argument("config", nargs="?", type=Path, help="scenario JSON (default: testbed scenario)")
    sim.add_argument("--link", help="builtin link profile name")
    sim.add_argument("--duration", type=float, help="simulated seconds")
    sim.add_argument("--edge-ms", type=float, help="constant edge processing time")
    sim.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override a scenario field, e.g. qos.queue_limit=5")
    sim.add_argument("--strict-budget", action="store_true",
                     help="exit 3 when any control stream is budget-infeasible")
    sim.add_argument("--trace", type=Path, help="write the JSON-lines trace here")
    sim.add_argument("--csv", type=Path, help="write per-frame latencies as CSV here")
    sim.add_argument("--all", type=Path, metavar="DIR", help="run every *.json scenario in DIR")
    sim.add_argument("--workers", type=int, default=None, help="parallel workers for --all")

    emu = sub.add_parser("emulate", parents=[common], help="run an emulation agent")
    emu.add_argument("role", choices=["device", "edge"])
    emu.add_argument("--host", default="127.0.0.1")
    emu.add_argument("--port", type=int, default=5600)
    emu.add_argument("--processing-ms", type=float, default=0.0,
                     help="edge: processing delay; device: expected delay for the comparison")
    emu.add_argument("--link", default="5g100opt")
    emu.add_argument("--stream", default="rgbd_camera")
    emu.add_argument("--duration", type=float, default=10.0)
    emu.add_argument("--frame-bits", type=int, default=None)
    emu.add_argument("--queue-limit", type=int, default=3)
    emu.add_argument("--datagram", action="store_true", help="use UDP instead of TCP")
    return parser


def _emit(args, name: str, text: str) -> None:
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / name).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_tables(args) -> int:
    if args.json:
        _emit(args, "tables.json", json.dumps(tables(), indent=2) + "\n")
    else:
        _emit(args, "tables.txt", render_tables())
    return EXIT_OK


def cmd_catalog(args) -> int:
    if args.json:
        _emit(args, "catalog.json", catalog_json() + "\n")
    else:
        _emit(args, "catalog.txt", render_catalog())
    return EXIT_OK


def prepare_scenario(config: Optional[Path], overrides: Sequence[str] = (), *, link: Optional[str] = None,
                     duration: Optional[float] = None, edge_ms: Optional[float] = None,
                     seed: Optional[int] = None) -> tuple[Scenario, dict[str, Any]]:
    """Load, override and validate a scenario; raises :class:`ScenarioError`."""
    if config is None:
        doc: Any = copy.deepcopy(DEFAULT_SCENARIO)
    else:
        try:
            doc = json.loads(Path(config).read_text())
        except OSError as exc:
            raise ScenarioError("<file>", f"cannot read {config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ScenarioError("<json>", f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ScenarioError("<root>", "scenario must be a JSON object")
    for key, value in (("link", link), ("duration_s", duration), ("edge_processing_ms", edge_ms),
                       ("seed", seed)):
        if value is not None:
            doc[key] = value
    for assignment in overrides:
        set_override(doc, assignment)
    scenario = scenario_from_dict(doc)
    return scenario, merge_defaults(doc)


def simulate_one(scenario: Scenario, doc: dict[str, Any]):
    trace, metrics = run(scenario)
    return trace, metrics, build_report(scenario, metrics, doc)


def _infeasible(report: dict[str, Any]) -> bool:
    return any(v["verdict"] == "Infeasible" for v in report["verdicts"].values())


def _summary(report: dict[str, Any]) -> str:
    m = report["metrics"]
    frames = m["frames"]
    lines = [f"frames: generated {frames['generated']}, delivered {frames['delivered']}, "
             f"dropped {frames['dropped']}, in flight {frames['in_flight']}",
             f"budget violation fraction: {m['budget_violation_fraction']:.4f}",
             f"fallback episodes: {m['fallback']['episodes']} "
             f"({m['fallback']['total_time_ms']:.1f} ms total)"]
    for sid, s in m["per_stream"].items():
        lat = s["latency"]
        if lat is None:
            lines.append(f"  {sid}: no delivered frames")
        else:
            lines.append(f"  {sid}: p50 {lat['p50_ms']:.3f} ms, p95 {lat['p95_ms']:.3f} ms, "
                         f"max {lat['max_ms']:.3f} ms ({lat['count']} frames)")
    for sid, v in report["verdicts"].items():
        lines.append(f"  verdict {sid}: {v['verdict']}")
    return "\n".join(lines) + "\n"


def _run_file(path: str, seed: Optional[int]) -> tuple[str, Optional[dict[str, Any]], Optional[str]]:
    try:
        scenario, doc = prepare_scenario(Path(path), seed=seed)
    except ScenarioError as exc:
        return path, None, str(exc)
    return path, simulate_one(scenario, doc)[2], None


def cmd_simulate(args) -> int:
    if args.all is not None:
        return _simulate_all(args)
    try:
        scenario, doc = prepare_scenario(args.config, args.set, link=args.link, duration=args.duration,
                                         edge_ms=args.edge_ms, seed=args.seed)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    trace, metrics, report = simulate_one(scenario, doc)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "report.json").write_text(text)
        (args.out / "trace.jsonl").write_text(trace.to_jsonl())
        (args.out / "latencies.csv").write_text(latency_csv(trace))
    if args.trace is not None:
        args.trace.write_text(trace.to_jsonl())
    if args.csv is not None:
        args.csv.write_text(latency_csv(trace))
    if args.out is None:
        sys.stdout.write(text if args.json else _summary(report))

    if args.strict_budget and _infeasible(report):
        return EXIT_INFEASIBLE
    return EXIT_OK


def _simulate_all(args) -> int:
    paths = sorted(str(p) for p in args.all.glob("*.json"))
    if not paths:
        print(f"error: no scenario files in {args.all}", file=sys.stderr)
        return EXIT_INVALID
    with ProcessPoolExecutor(max_workers=args.workers) as pool:
        results = list(pool.map(_run_file, paths, [args.seed] * len(paths)))
    merged: dict[str, Any] = {}
    code = EXIT_OK
    for path, report, error in results:
        name = Path(path).stem
        if error is not None:
            print(f"error: {path}: {error}", file=sys.stderr)
            merged[name] = {"error": error}
            code = EXIT_INVALID
            continue
        merged[name] = report
        if args.strict_budget and _infeasible(report) and code == EXIT_OK:
            code = EXIT_INFEASIBLE
    _emit(args, "reports.json", json.dumps(merged, indent=2, sort_keys=True) + "\n")
    return code


def comparison_block(profile, stream, report, processing_ms: float = 0.0) -> dict[str, Any]:
    """Measured mean latency against the closed-form expectation."""
    scenario = Scenario(streams=(stream,), link=profile, duration=1,
                        edge_processing=EdgeProcessing(as_fraction(processing_ms)))
    try:
        analytic = float(analytic_crosscheck(scenario)[stream.id])
    except CrosscheckUndefined as exc:
        return {"analytic_ms": None, "measured_mean_ms": report.mean_ms, "tolerance_ms": None,
                "agree": None, "note": str(exc)}
    tolerance = max(0.15 * analytic, 5.0)
    measured = report.mean_ms
    return {
        "analytic_ms": round(analytic, 6),
        "measured_mean_ms": None if measured is None else round(measured, 6),
        "tolerance_ms": round(tolerance, 6),
        "agree": measured is not None and abs(measured - analytic) <= tolerance,
    }


def cmd_emulate(args) -> int:
    from .emu import EdgeAgent, TransportError, run_device

    if args.role == "edge":
        agent = EdgeAgent(args.host, args.port, args.processing_ms, datagram=args.datagram)

        async def serve() -> None:
            await agent.start()
            loop = asyncio.get_running_loop()
            for sig in (signal.SIGINT, signal.SIGTERM):
                loop.add_signal_handler(sig, lambda: asyncio.ensure_future(agent.stop()))
            await agent.serve_forever()

        try:
            asyncio.run(serve())
        except OSError as exc:
            print(f"error: cannot bind {args.host}:{args.port}: {exc}", file=sys.stderr)
            return EXIT_UNREACHABLE
        if args.json:
            _emit(args, "edge.json", json.dumps(agent.stats.__dict__) + "\n")
        return EXIT_OK

    try:
        profile = get_profile(args.link)
        stream = catalog_by_id()[args.stream]
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_INVALID
    try:
        report = asyncio.run(run_device(profile, stream, args.duration, args.host, args.port,
                                        frame_bits=args.frame_bits, queue_limit=args.queue_limit,
                                        datagram=args.datagram))
    except TransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNREACHABLE
    doc = {"report": report.to_json(),
           "comparison": comparison_block(profile, stream, report, args.processing_ms),
           "link": profile.name, "stream": stream.id, "tool_version": __version__}
    _emit(args, "emulation.json", json.dumps(doc, indent=2) + "\n")
    return EXIT_OK


COMMANDS = {"tables": cmd_tables, "catalog": cmd_catalog, "simulate": cmd_simulate, "emulate": cmd_emulate}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
