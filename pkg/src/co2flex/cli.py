"""Command line entry point.

Settings come from, in decreasing precedence: command-line flags, the TOML
file given with ``--config``, built-in defaults. The config file has one
table per command plus a shared ``[network]`` table::

    [network]
    path = "testsys5"

    [sample]
    chains = 2
    samples = 300
    seed = 7

Exit codes: 0 success, 2 configuration/input error, 3 infeasible,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import subprocess
import sys
from datetime import datetime, timezone
from pathlib import Path

import tomli

from . import __version__
from .allocation import (
    AllocationError,
    AllocationScheme,
    Scheme,
    allocate,
    rescale_to_realized,
)
from .analysis import (
    DEFAULT_FRONT_GRID,
    build_bundle,
    pareto_front,
    rejection_counts,
    write_exports,
    write_front_csv,
)
from .lp_builder import ProblemFactory, write_lp
from .lp_solver import SolveStatus, Tolerances, dump_solution_csv, solve
from .sampler import (
    CheckpointError,
    ConfigError,
    MergeError,
    SamplerAbort,
    SamplerConfig,
    merge_chains,
    run_campaign,
)
from .system_model import CO2Policy, NetworkError, load_network

logger = logging.getLogger("co2flex")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _git_revision() -> str | None:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    try:
        with p.open("rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {p}") from None
    except tomli.TOMLDecodeError as exc:
        raise UsageError(f"config parse error in {p}: {exc}") from None


def _setting(args, cfg: dict, section: str, key: str, default=None):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    return cfg.get(section, {}).get(key, default)


def _network(args, cfg):
    path = args.network or cfg.get("network", {}).get("path", "testsys5")
    return load_network(path), path


class Manifest:
    """``manifest.json`` under the output directory. Timestamps live only here."""

    def __init__(self, out: Path, command: str, config_path: str | None, settings: dict, network):
        self.out = out
        self.path = out / "manifest.json"
        self.data = {
            "command": command,
            "software_version": __version__,
            "git_revision": _git_revision(),
            "config_path": config_path,
            "config_hash": _sha256(Path(config_path)) if config_path else None,
            "settings": settings,
            "settings_hash": hashlib.sha256(json.dumps(settings, sort_keys=True).encode()).hexdigest(),
            "network_hash": network.content_hash() if network is not None else None,
            "started": datetime.now(timezone.utc).isoformat(),
            "finished": None,
            "outputs": {},
        }
        out.mkdir(parents=True, exist_ok=True)
        self.write()

    def write(self) -> None:
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")

    def finish(self, outputs: list[Path], **extra) -> None:
        self.data["finished"] = datetime.now(timezone.utc).isoformat()
        self.data["outputs"] = {str(p.relative_to(self.out)): _sha256(p) for p in sorted(outputs)}
        self.data.update(extra)
        self.write()


def _policy_from_args(args, cfg, network) -> CO2Policy:
    section = "solve"
    mode = _setting(args, cfg, section, "policy", "efficiency")
    reduction = _setting(args, cfg, section, "reduction")
    budget = _setting(args, cfg, section, "budget")
    if mode == "none":
        return CO2Policy.unconstrained()
    if budget is None:
        if reduction is None:
            raise UsageError("--budget or --reduction is required for a CO2 policy")
        budget = (1.0 - float(reduction)) * network.baseline_1990
    if mode in ("efficiency", "global"):
        return CO2Policy.global_cap(float(budget))
    if mode == "national":
        scheme = _setting(args, cfg, section, "scheme", "grandfathering")
        return allocate(AllocationScheme(Scheme(scheme), float(budget)), network)
    raise UsageError(f"unknown policy {mode!r}")


def _summary_lines(network, factory, sol, policy) -> tuple[dict, list[str]]:
    s = factory.summarize(sol)
    base = network.baseline_1990
    data = {
        "status": sol.status.value,
        "policy": policy.mode,
        "total_cost": s.total_cost,
        "total_emissions": s.total_emissions,
        "joint_reduction": (1.0 - s.total_emissions / base) if base > 0 else None,
        "nodes": {
            n: {"emissions": float(e), "target": (policy.targets or {}).get(n),
                "abatement_cost": float(a), "mean_price": float(p)}
            for n, e, a, p in zip(s.nodes, s.emissions, s.abatement_cost, s.mean_price)
        },
    }
    lines = [f"status          {sol.status.value}",
             f"total cost      {s.total_cost:.6e}",
             f"emissions       {s.total_emissions:.6e} tCO2"]
    if base > 0:
        lines.append(f"joint reduction {data['joint_reduction']:.4%}")
    for n, e, a in zip(s.nodes, s.emissions, s.abatement_cost):
        lines.append(f"  {n:<8} {e:14.6e} tCO2   abatement {a:10.4f}")
    return data, lines


def _status_exit(status: SolveStatus) -> int:
    if status is SolveStatus.OPTIMAL:
        return EXIT_OK
    if status is SolveStatus.NUMERICAL:
        return EXIT_NUMERICAL
    return EXIT_INFEASIBLE


def cmd_solve(args, cfg) -> int:
    network, _ = _network(args, cfg)
    policy = _policy_from_args(args, cfg, network)
    out = Path(args.out)
    manifest = Manifest(out, "solve", args.config, {"policy": policy.mode, "cap": policy.cap,
                                                     "targets": policy.targets}, network)
    factory = ProblemFactory(network)
    problem, report = factory.build(policy)
    sol = solve(problem, Tolerances.from_env())
    outputs = []
    if args.write_lp:
        write_lp(problem, out / "problem.lp")
        outputs.append(out / "problem.lp")
    if not sol.optimal:
        print(f"status {sol.status.value}: {sol.message}", file=sys.stderr)
        manifest.finish(outputs, status=sol.status.value)
        return _status_exit(sol.status)
    dump_solution_csv(sol, out / "solution.csv")
    data, lines = _summary_lines(network, factory, sol, policy)
    (out / "summary.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    outputs += [out / "solution.csv", out / "summary.json"]
    print("\n".join(lines))
    manifest.finish(outputs, status=sol.status.value)
    return EXIT_OK


def cmd_scenario(args, cfg) -> int:
    network, _ = _network(args, cfg)
    sec = "scenario"
    run_all = args.all or cfg.get(sec, {}).get("all", False)
    scheme = _setting(args, cfg, sec, "scheme")
    if run_all:
        schemes = [s for s in Scheme]
    elif scheme:
        schemes = [Scheme(scheme)]
    else:
        raise UsageError("give --scheme or --all")
    realized = _setting(args, cfg, sec, "realized")
    budget = _setting(args, cfg, sec, "budget")
    reduction = _setting(args, cfg, sec, "reduction")
    if realized is None and budget is None:
        if reduction is None:
            raise UsageError("give --budget, --reduction or --realized")
        budget = (1.0 - float(reduction)) * network.baseline_1990
    out = Path(args.out)
    manifest = Manifest(out, "scenario", args.config,
                        {"schemes": [s.value for s in schemes], "budget": budget, "realized": realized}, network)
    factory = ProblemFactory(network)
    results, outputs, worst = {}, [], EXIT_OK
    for s in schemes:
        if realized is not None:
            res = rescale_to_realized(s, network, float(realized), factory=factory)
            policy, sol, used = res.policy, res.solution, res.budget
        else:
            policy = allocate(AllocationScheme(s, float(budget)), network)
            sol = solve(factory.build(policy)[0], Tolerances.from_env())
            used = float(budget)
        if not sol.optimal:
            print(f"{s.value}: {sol.status.value}", file=sys.stderr)
            results[s.value] = {"status": sol.status.value, "budget": used}
            worst = max(worst, _status_exit(sol.status))
            continue
        data, lines = _summary_lines(network, factory, sol, policy)
        data["budget"] = used
        results[s.value] = data
        print(f"[{s.value}] budget {used:.6e} tCO2")
        print("\n".join(lines))
    p = out / "scenarios.json"
    p.write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
    outputs.append(p)
    manifest.finish(outputs)
    return worst


SAMPLER_FLAGS = {
    "samples": "n_samples", "chains": "n_chains", "seed": "rng_seed", "sigma0": "sigma0",
    "epsilon": "epsilon", "target_acceptance": "target_acceptance", "cost_slack": "cost_slack",
    "burn_in": "burn_in", "batch_size": "batch_size", "min_joint_reduction": "min_joint_reduction",
}


def sampler_config(args, cfg) -> SamplerConfig:
    kw = {}
    for flag, field_name in SAMPLER_FLAGS.items():
        v = _setting(args, cfg, "sample", flag)
        if v is not None:
            kw[field_name] = v
    return SamplerConfig(**kw)


def cmd_sample(args, cfg) -> int:
    network, _ = _network(args, cfg)
    config = sampler_config(args, cfg)
    out = Path(args.out)
    manifest = Manifest(out, "sample", args.config, config.as_dict(), network)
    manifest.data["config_hash_sampler"] = config.chain_hash()
    manifest.write()
    workers = _setting(args, cfg, "sample", "workers")
    paths = run_campaign(config, network, out, resume=args.resume, workers=workers)
    merged = merge_chains(paths)
    n_acc = len(merged.accepted_records)
    rate = n_acc / len(merged.records) if merged.records else math.nan
    print(f"{len(paths)} chain(s), {len(merged.states)} post-burn-in states, acceptance {rate:.3f}")
    print("rejections:", json.dumps(rejection_counts(merged.records), sort_keys=True))
    manifest.finish(paths)
    return EXIT_OK


def _store_paths(items: list[str]) -> list[Path]:
    paths: list[Path] = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            paths += sorted(p.glob("chain_*.jsonl"))
        elif p.exists():
            paths.append(p)
        else:
            raise UsageError(f"store not found: {p}")
    if not paths:
        raise UsageError("no chain stores found")
    return paths


def _grid(args, cfg, section: str) -> list[float]:
    grid = _setting(args, cfg, section, "grid")
    if grid is not None:
        return [float(v) for v in grid]
    start = _setting(args, cfg, section, "grid_start")
    stop = _setting(args, cfg, section, "grid_stop")
    step = _setting(args, cfg, section, "grid_step")
    if start is None and stop is None and step is None:
        return list(DEFAULT_FRONT_GRID)
    start = 0.55 if start is None else float(start)
    stop = 0.95 if stop is None else float(stop)
    step = 0.05 if step is None else float(step)
    if step <= 0:
        raise UsageError("--grid-step must be positive")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + k * step, 10) for k in range(max(n, 0))]


def cmd_analyze(args, cfg) -> int:
    stores = _store_paths(args.stores)
    merged = merge_chains(stores)
    network, _ = _network(args, cfg)
    if network.content_hash() != merged.header["network_hash"]:
        raise MergeError("network does not match the sample stores")
    out = Path(args.out)
    bins = _setting(args, cfg, "analyze", "bins", [20, 20])
    if isinstance(bins, int):
        bins = [bins, bins]
    threshold = _setting(args, cfg, "analyze", "corr_threshold", 0.2)
    grid = _grid(args, cfg, "analyze")
    manifest = Manifest(out, "analyze", args.config,
                        {"stores": [str(p) for p in stores], "bins": list(bins), "grid": grid,
                         "corr_threshold": threshold}, network)
    bundle = build_bundle(merged)
    front = pareto_front(network, grid) if bundle.n_accepted else []
    written = write_exports(bundle, out, front, bins=tuple(bins), correlation_threshold=threshold)
    if bundle.n_accepted:
        q = bundle.cost_quantiles()
        print(f"{bundle.n_samples} samples, {bundle.n_accepted} accepted records")
        print("relative cost increase quantiles: "
              + ", ".join(f"{int(k * 100)}%={v:.4%}" for k, v in q.items()))
    manifest.finish(written)
    return EXIT_OK


def cmd_pareto(args, cfg) -> int:
    network, _ = _network(args, cfg)
    grid = _grid(args, cfg, "pareto")
    out = Path(args.out)
    manifest = Manifest(out, "pareto", args.config, {"grid": grid}, network)
    front = pareto_front(network, grid)
    p = write_front_csv(front, out / "front.csv")
    for f in front:
        print(f"{f.reduction:6.3f}  {f.status:<10} {f.cost:.6e}  price {f.co2_price:.4f}")
    manifest.finish([p])
    return EXIT_OK if all(f.status == "optimal" for f in front) else EXIT_INFEASIBLE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="co2flex", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--log-level", default="WARNING")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--network", help="system TOML file or bundled name (default testsys5)")
    common.add_argument("--config", help="TOML settings file")
    common.add_argument("--out", default="out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="solve one policy")
    p.add_argument("--policy", choices=["none", "efficiency", "global", "national"])
    p.add_argument("--scheme", choices=[s.value for s in Scheme if s is not Scheme.EFFICIENCY])
    p.add_argument("--budget", type=float, help="joint budget in tCO2/yr")
    p.add_argument("--reduction", type=float, help="joint reduction vs 1990 (cap = (1-r)*baseline)")
    p.add_argument("--write-lp", action="store_true", help="also write problem.lp")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("scenario", parents=[common], help="solve allocation schemes")
    p.add_argument("--scheme", choices=[s.value for s in Scheme])
    p.add_argument("--all", action="store_true", default=None)
    p.add_argument("--budget", type=float)
    p.add_argument("--reduction", type=float)
    p.add_argument("--realized", type=float, help="rescale budgets to this realized reduction")
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("sample", parents=[common], help="run sampler chains")
    p.add_argument("--chains", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--sigma0", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--target-acceptance", type=float)
    p.add_argument("--cost-slack", type=float)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--min-joint-reduction", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("analyze", parents=[common], help="export analysis CSVs")
    p.add_argument("stores", nargs="+", help="chain store files or directories")
    p.add_argument("--bins", type=int, nargs=2)
    p.add_argument("--corr-threshold", type=float)
    p.add_argument("--grid", type=float, nargs="+")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("pareto", parents=[common], help="cost/reduction front")
    p.add_argument("--grid", type=float, nargs="+")
    p.add_argument("--grid-start", type=float)
    p.add_argument("--grid-stop", type=float)
    p.add_argument("--grid-step", type=float)
    p.set_defaults(func=cmd_pareto)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args.config)
        return args.func(args, cfg)
    except (UsageError, ConfigError, NetworkError, MergeError, CheckpointError, AllocationError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SamplerAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
