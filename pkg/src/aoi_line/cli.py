"""``aoi-line`` command line: analyze, simulate and verify line networks.

Exit codes: 0 success/PASS, 1 verification FAIL, 2 usage, config or I/O
error, 3 solver or internal error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import os
import sys
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from . import line_models as lm
from .shs import ShsError, age_components, solve_age
from .simulator import INITIAL_AGE_CONVENTION, SimConfig, replicate, run

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3

DEFAULT_LAMBDA = 1.0
DEFAULT_MU = (1.0, 0.5, 0.25)
AGREEMENT_TOL = 1e-9
OCCUPANCY_REL_TOL = 0.02
AGE_REL_TOL = 0.05

CONFIG_KEYS = ("lambda", "mu", "arrivals", "seed", "replications", "sample_interval", "burn_in_fraction")
DEFAULT_ARRIVALS = {"analyze": None, "simulate": 50, "verify": 200_000}
DEFAULT_REPLICATIONS = {"analyze": 1, "simulate": 1, "verify": 5}


class UsageError(Exception):
    pass


class InternalError(Exception):
    pass


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def fmt(x: float) -> str:
    """Shortest decimal string that round-trips to ``x``."""
    return repr(float(x))


def _use_color(stream) -> bool:
    return "NO_COLOR" not in os.environ and hasattr(stream, "isatty") and stream.isatty()


def _verdict(ok: bool, stream=None) -> str:
    word = "PASS" if ok else "FAIL"
    if _use_color(stream or sys.stdout):
        return f"\033[{32 if ok else 31}m{word}\033[0m"
    return word


# -- configuration ---------------------------------------------------------


@dataclass
class RunManifest:
    config: dict
    mode: str
    outputs: list[str] = field(default_factory=list)
    tool_version: str = field(default_factory=tool_version)
    timestamp: str = field(default_factory=lambda: _dt.datetime.now(_dt.timezone.utc).isoformat())
    seed: str = ""

    def to_dict(self):
        return {
            "config": self.config,
            "mode": self.mode,
            "outputs": self.outputs,
            "tool_version": self.tool_version,
            "timestamp": self.timestamp,
            "seed": self.seed,
        }


def parse_mu(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--mu expects comma-separated numbers, got {text!r}") from None


def _burn_in(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid burn-in fraction {text!r}") from None
    if not 0.0 <= value < 1.0:
        raise argparse.ArgumentTypeError("--burn-in must lie in [0, 1)")
    return value


def _nonneg_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {value}")
    return value


def load_config_file(path) -> dict:
    """Read a JSON config; a run manifest is accepted too (its ``config`` key is used)."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if isinstance(data, dict) and isinstance(data.get("config"), dict) and "mode" in data:
        data = data["config"]
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    unknown = sorted(set(data) - set(CONFIG_KEYS))
    if unknown:
        raise UsageError(f"unknown config keys in {path}: {', '.join(unknown)}")
    return data


def resolve_config(args) -> dict:
    """Merge defaults, the optional config file and flags (flags win)."""
    cfg = {
        "lambda": DEFAULT_LAMBDA,
        "mu": list(DEFAULT_MU),
        "arrivals": DEFAULT_ARRIVALS[args.command],
        "seed": 0,
        "replications": DEFAULT_REPLICATIONS[args.command],
        "sample_interval": None,
        "burn_in_fraction": 0.1,
    }
    if args.config:
        cfg.update(load_config_file(args.config))
    flags = {
        "lambda": args.lam,
        "mu": args.mu,
        "arrivals": args.arrivals,
        "seed": args.seed,
        "replications": args.replications,
        "sample_interval": args.sample_interval,
        "burn_in_fraction": args.burn_in,
    }
    cfg.update({k: v for k, v in flags.items() if v is not None})
    return cfg


def network_from(cfg) -> lm.LineNetworkConfig:
    mu = cfg["mu"]
    if isinstance(mu, (int, float)):
        mu = [mu]
    try:
        return lm.LineNetworkConfig(cfg["lambda"], tuple(mu))
    except lm.ConfigError as exc:
        raise UsageError(str(exc)) from None


def sim_config_from(cfg) -> SimConfig:
    try:
        return SimConfig(
            network=network_from(cfg),
            arrivals=cfg["arrivals"],
            seed=cfg["seed"],
            sample_interval=cfg["sample_interval"],
            burn_in_fraction=cfg["burn_in_fraction"],
        )
    except lm.ConfigError as exc:
        raise UsageError(str(exc)) from None


def _replications(cfg) -> int:
    r = cfg["replications"]
    if isinstance(r, bool) or not isinstance(r, int) or r < 1:
        raise UsageError(f"replications must be a positive integer, got {r!r}")
    return r


# -- analysis ----------------------------------------------------------------


def analyze(net: lm.LineNetworkConfig) -> dict:
    """Every analytical quantity for ``net`` as a JSON-ready dict."""
    fake = solve_age(lm.build_fake_update(net))
    report = {
        "lambda": net.lam,
        "mu": list(net.mu),
        "closed_form_age": lm.closed_form_age(net),
        "closed_form_node_ages": lm.closed_form_node_ages(net),
        "fake_update": {
            "delta": fake.delta,
            "node_ages": lm.fake_update_node_ages(fake),
            "components": [age_components(fake, k) for k in range(net.n + 1)],
        },
    }
    mismatches = []
    if abs(fake.delta - report["closed_form_age"]) > AGREEMENT_TOL:
        mismatches.append(f"fake-update delta {fake.delta} vs closed form {report['closed_form_age']}")
    if net.n == 2:
        two = solve_age(lm.build_two_node(net))
        pi_closed = lm.two_node_stationary(net)
        report["two_node"] = {
            "delta": two.delta,
            "pi": two.pi.probs.tolist(),
            "pi_closed_form": pi_closed.tolist(),
            "v": two.v.tolist(),
        }
        if abs(two.delta - fake.delta) > AGREEMENT_TOL:
            mismatches.append(f"two-node delta {two.delta} vs fake-update delta {fake.delta}")
        if np.max(np.abs(two.pi.probs - pi_closed)) > AGREEMENT_TOL:
            mismatches.append("two-node stationary distribution disagrees with closed form")
    if mismatches:
        raise InternalError("; ".join(mismatches))
    return report


def format_analysis(report: dict) -> str:
    g = "{:.10g}".format
    lines = [
        f"line network: lambda = {g(report['lambda'])}, mu = ({', '.join(g(m) for m in report['mu'])})",
        "",
        f"monitor age (closed form)        {g(report['closed_form_age'])}",
        f"monitor age (fake-update SHS)    {g(report['fake_update']['delta'])}",
    ]
    if "two_node" in report:
        lines.append(f"monitor age (4-state SHS)        {g(report['two_node']['delta'])}")
    lines += ["", "node  closed_form  shs"]
    for i, (a, b) in enumerate(zip(report["closed_form_node_ages"], report["fake_update"]["node_ages"]), 1):
        lines.append(f"{i:>4}  {g(a):>11}  {g(b)}")
    lines += ["", "fake-update age components E[x_k]"]
    for k, value in enumerate(report["fake_update"]["components"]):
        lines.append(f"  x{k}  {g(value)}")
    if "two_node" in report:
        two = report["two_node"]
        lines += ["", "state  occupancy  pi (SHS)      pi (closed form)  v0            v1            v2"]
        for q, label in enumerate(("00", "10", "01", "11")):
            v = "  ".join(f"{g(x):<12}" for x in two["v"][q])
            lines.append(f"{q:>5}  {label:>9}  {g(two['pi'][q]):<12}  {g(two['pi_closed_form'][q]):<16}  {v}".rstrip())
    return "\n".join(lines) + "\n"


# -- file emitters -------------------------------------------------------------


def _write_csv(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path: Path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def path_rows(paths, replication=None):
    lead = () if replication is None else (replication,)
    for p in paths:
        for t, before, after in zip(p.times.tolist(), p.ages_before.tolist(), p.ages_after.tolist()):
            yield (*lead, fmt(t), p.node, fmt(before), fmt(after))


def running_rows(paths, replication=None):
    lead = () if replication is None else (replication,)
    for p in paths:
        for t, avg in zip(p.running_times.tolist(), p.running_average.tolist()):
            yield (*lead, fmt(t), p.node, fmt(avg))


def sample_rows(paths, replication=None):
    lead = () if replication is None else (replication,)
    for p in paths:
        if p.samples is None:
            continue
        for t, age in p.samples.tolist():
            yield (*lead, fmt(t), p.node, fmt(age))


def _prepare_out_dir(out_dir) -> Path:
    path = Path(out_dir)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc.strerror}") from None
    return path


# -- commands --------------------------------------------------------------------


def cmd_analyze(args, cfg, out=sys.stdout) -> int:
    net = network_from(cfg)
    report = analyze(net)
    out.write(format_analysis(report))
    if args.out_dir:
        d = _prepare_out_dir(args.out_dir)
        manifest = RunManifest(config=cfg, mode="analyze", seed=str(cfg["seed"]))
        _write_json(d / "analysis.json", report)
        manifest.outputs = [str(d / "analysis.json"), str(d / "manifest.json")]
        _write_json(d / "manifest.json", manifest.to_dict())
    return EXIT_OK


def cmd_simulate(args, cfg, out=sys.stdout) -> int:
    sim = sim_config_from(cfg)
    reps = _replications(cfg)
    d = _prepare_out_dir(args.out_dir or ".")
    written = []
    path_header = ["time", "node", "age_before_jump", "age_after_jump"]
    run_header = ["time", "node", "running_avg"]
    sample_header = ["time", "node", "age"]

    if reps == 1:
        paths, summary = run(sim)
        _write_csv(d / "age_paths.csv", path_header, path_rows(paths))
        _write_csv(d / "running_avg.csv", run_header, running_rows(paths))
        if sim.sample_interval is not None:
            _write_csv(d / "age_samples.csv", sample_header, sample_rows(paths))
            written.append(str(d / "age_samples.csv"))
        summary_obj = summary.to_dict()
        ages = summary.per_node_time_avg_age
    else:
        result = replicate(sim, reps, record_paths=True)

        def all_rows(fn):
            for r, paths in enumerate(result.paths):
                yield from fn(paths, r)

        _write_csv(d / "age_paths.csv", ["replication", *path_header], all_rows(path_rows))
        _write_csv(d / "running_avg.csv", ["replication", *run_header], all_rows(running_rows))
        if sim.sample_interval is not None:
            _write_csv(d / "age_samples.csv", ["replication", *sample_header], all_rows(sample_rows))
            written.append(str(d / "age_samples.csv"))
        summary_obj = {
            "replications": reps,
            "seeds": result.seeds,
            "mean_time_avg_age": result.mean.tolist(),
            "std_error": result.std_error.tolist(),
            "runs": [s.to_dict() for s in result.summaries],
            "initial_age_convention": INITIAL_AGE_CONVENTION,
        }
        ages = result.mean.tolist()

    written = [str(d / "age_paths.csv"), str(d / "running_avg.csv"), *written, str(d / "summary.json")]
    _write_json(d / "summary.json", summary_obj)
    manifest = RunManifest(config=cfg, mode="simulate", seed=str(cfg["seed"]))
    manifest.outputs = [*written, str(d / "manifest.json")]
    _write_json(d / "manifest.json", manifest.to_dict())

    theory = lm.closed_form_node_ages(sim.network)
    out.write(f"simulated {sim.arrivals} arrivals x {reps} run(s), seed {sim.seed}\n")
    out.write("node  time_avg_age  theory\n")
    for i, (a, b) in enumerate(zip(ages, theory), 1):
        out.write(f"{i:>4}  {a:12.6f}  {b:.6g}\n")
    out.write(f"wrote {len(manifest.outputs)} files to {d}\n")
    return EXIT_OK


def verify(sim: SimConfig, replications: int, theory_scale: float = 1.0) -> dict:
    """Compare simulated per-node ages (and two-node occupancy) with theory.

    ``theory_scale`` multiplies the theoretical ages; anything other than 1
    exists only to check that the comparator can fail.
    """
    net = sim.network
    theory = [a * theory_scale for a in lm.closed_form_node_ages(net)]
    result = replicate(sim, replications)
    nodes = []
    for i, (th, est, se) in enumerate(zip(theory, result.mean, result.std_error), 1):
        tol = max(3.0 * se, AGE_REL_TOL * th)
        nodes.append(
            {
                "node": i,
                "theory": th,
                "estimate": float(est),
                "std_error": float(se),
                "tolerance": tol,
                "pass": bool(abs(est - th) <= tol),
            }
        )
    report = {"nodes": nodes, "replications": replications, "arrivals": sim.arrivals, "seed": sim.seed}
    ok = all(nd["pass"] for nd in nodes)
    if net.n == 2:
        occ = np.sum([s.occupancy_time for s in result.summaries], axis=0)
        frac = occ / occ.sum()
        expected = lm.two_node_stationary(net)
        rel = np.abs(frac / expected - 1.0)
        report["occupancy"] = {
            "simulated": frac.tolist(),
            "theory": expected.tolist(),
            "rel_error": rel.tolist(),
            "pass": bool(np.all(rel <= OCCUPANCY_REL_TOL)),
        }
        ok = ok and report["occupancy"]["pass"]
    report["pass"] = ok
    return report


def format_verify(report: dict, stream=None) -> str:
    lines = ["node  theory      estimate    std_error   tolerance   verdict"]
    for nd in report["nodes"]:
        lines.append(
            f"{nd['node']:>4}  {nd['theory']:<10.6g}  {nd['estimate']:<10.6g}  "
            f"{nd['std_error']:<10.4g}  {nd['tolerance']:<10.4g}  {_verdict(nd['pass'], stream)}"
        )
    if "occupancy" in report:
        occ = report["occupancy"]
        lines.append("")
        lines.append("state  theory      simulated   rel_error")
        for q, (a, b, e) in enumerate(zip(occ["theory"], occ["simulated"], occ["rel_error"])):
            lines.append(f"{q:>5}  {a:<10.6g}  {b:<10.6g}  {e:.3%}")
        lines.append(f"occupancy: {_verdict(occ['pass'], stream)}")
    lines.append(f"overall: {_verdict(report['pass'], stream)}")
    return "\n".join(lines) + "\n"


def cmd_verify(args, cfg, out=sys.stdout) -> int:
    sim = sim_config_from(cfg)
    reps = _replications(cfg)
    if reps < 2:
        raise UsageError("verify needs at least 2 replications to estimate standard errors")
    analysis = analyze(sim.network)
    report = verify(sim, reps, theory_scale=args.corrupt_theory)
    report["analysis"] = analysis
    out.write(format_verify(report, out))
    if args.out_dir:
        d = _prepare_out_dir(args.out_dir)
        _write_json(d / "verify.json", report)
        manifest = RunManifest(config=cfg, mode="verify", seed=str(cfg["seed"]))
        manifest.outputs = [str(d / "verify.json"), str(d / "manifest.json")]
        _write_json(d / "manifest.json", manifest.to_dict())
    return EXIT_OK if report["pass"] else EXIT_FAIL


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--lambda", dest="lam", type=float, help="update arrival rate (default 1)")
    common.add_argument("--mu", type=parse_mu, help="comma-separated service rates (default 1,0.5,0.25)")
    common.add_argument("--arrivals", type=_nonneg_int, help="number of source updates to simulate")
    common.add_argument("--seed", type=_nonneg_int, help="random seed (default 0)")
    common.add_argument("--replications", type=_nonneg_int, help="independent simulation runs")
    common.add_argument("--sample-interval", type=float, help="also sample ages on this time grid")
    common.add_argument("--burn-in", type=_burn_in, help="fraction of the run excluded from time averages")
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--out-dir", help="directory for CSV/JSON outputs")
    common.add_argument("--corrupt-theory", type=float, default=1.0, help=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(
        prog="aoi-line",
        description="Average age of information in line networks of preemptive memoryless servers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("analyze", parents=[common], help="closed-form and SHS analysis")
    sub.add_parser("simulate", parents=[common], help="Monte-Carlo sample paths to CSV")
    sub.add_parser("verify", parents=[common], help="check simulation against theory")
    return parser


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "verify": cmd_verify}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg, out)
    except UsageError as exc:
        print(f"aoi-line: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ShsError, InternalError) as exc:
        print(f"aoi-line: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"aoi-line: I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
