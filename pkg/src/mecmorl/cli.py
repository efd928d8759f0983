"""Experiment driver: train / evaluate / front / calibrate / simulate.

Every run writes a manifest listing each produced file with its content
hash, so reruns can be checked byte for byte. Exit codes: 0 success,
2 usage or config error, 3 data/format error, 4 numeric failure.
"""

import os
import sys

if "--single-thread" in sys.argv:
    # must happen before numpy loads its BLAS backend
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, "1")

import argparse
import csv
import hashlib
import json
import math
from pathlib import Path

from .baselines import HeuristicPolicy, RandomPolicy, train_linucb
from .config import config_hash, load_config
from .env import OffloadEnv, run_episode
from .errors import (CalibrationError, CheckpointFormatError, ConfigError,
                     ContractViolation, InvalidAction, NumericError)
from .network import PolicyValueNet, load_checkpoint, save_checkpoint
from .pareto import PerformancePoint, compare_fronts, evaluate_policy, pareto_filter
from .rewards import Preference, RewardScales, calibrate_scales
from .seeding import derive_rng
from .simulator import sorted_trace
from .training import (NetPolicy, TrainConfig, sweep_preferences,
                       train_preference)

USAGE_ERROR, DATA_ERROR, NUMERIC_ERROR = 2, 3, 4

RESULT_FIELDS = ["scheme", "omega_T", "omega_E", "mean_delay_s", "mean_energy_J",
                 "stderr_T", "stderr_E", "n_episodes"]


class Manifest:
    def __init__(self, out_dir: Path, command: str, cfg_hash: str, seed: int,
                 **extra):
        self.out_dir = out_dir
        self.data = {"command": command, "config_hash": cfg_hash,
                     "seed": seed, "out_dir": str(out_dir), "outputs": []}
        self.data.update(extra)

    def add(self, path: Path) -> None:
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        self.data["outputs"].append({"path": path.name, "sha256": digest})

    def write(self) -> Path:
        path = self.out_dir / "manifest.json"
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")
        return path


def _preference_grid(interval: float) -> list[Preference]:
    count = round(1.0 / interval)
    return [Preference(k * interval, 1.0 - k * interval).validate()
            for k in range(1, count + 1)]


def _parse_grid(text: str) -> list[Preference]:
    vals = [float(v) for v in text.replace(",", " ").split()]
    return [Preference(v, 1.0 - v).validate() for v in vals]


def _parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _net_for(cfg) -> PolicyValueNet:
    return PolicyValueNet(cfg.num_servers, 5 + cfg.histogram_bins)


def _write_results_csv(path: Path, rows: list[dict], cfg_hash: str,
                       per_mbit_divisor: float) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# units: seconds,joules\n")
        fh.write(f"# config_hash: {cfg_hash}\n")
        fh.write(f"# per_mbit_divisor: {per_mbit_divisor!r}\n")
        writer = csv.DictWriter(fh, fieldnames=RESULT_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def _read_results_csv(path: Path):
    meta = {}
    rows = []
    with open(path, "r", newline="") as fh:
        header_lines = []
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                meta[key.strip()] = val.strip()
            else:
                header_lines.append(line)
                break
        reader = csv.DictReader(header_lines + fh.readlines())
        for row in reader:
            rows.append(row)
    if "config_hash" not in meta or not rows:
        raise CheckpointFormatError(f"{path}: not a mecmorl results file")
    return meta, rows


def _result_row(scheme: str, point: PerformancePoint, omega=None) -> dict:
    return {
        "scheme": scheme,
        "omega_T": "" if omega is None else repr(float(omega.w_T)),
        "omega_E": "" if omega is None else repr(float(omega.w_E)),
        "mean_delay_s": repr(point.y_T),
        "mean_energy_J": repr(point.y_E),
        "stderr_T": repr(point.stderr_T),
        "stderr_E": repr(point.stderr_E),
        "n_episodes": point.n_episodes,
    }


def _write_train_log(path: Path, history: list[dict]) -> None:
    fields = ["update_idx", "episodes_seen", "mean_scalarized_return",
              "mean_rT", "mean_rE", "policy_loss", "value_loss", "entropy"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in history:
            writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k]
                             for k in fields})


# ----------------------------------------------------------------- subcommands

def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.rng_seed if args.seed is None else args.seed
    out = _out_dir(args)
    cfg_hash = config_hash(cfg)
    scales = RewardScales(args.alpha_t, args.alpha_e)
    tcfg = TrainConfig(episodes=args.episodes,
                       warm_start_episodes=args.warm_episodes,
                       learning_rate=args.lr, optimizer=args.optimizer,
                       rollout_steps=args.rollout_steps)
    net = _net_for(cfg)

    if args.sweep:
        if args.grid:
            grid = _parse_grid(args.grid)
        else:
            grid = _preference_grid(args.grid_interval)
        profiles = sweep_preferences(net, cfg, grid, scales, tcfg, seed,
                                     init_seed=seed)
    else:
        omega = Preference(args.preference, 1.0 - args.preference).validate()
        profiles = [train_preference(net, net.init_params(seed), cfg, omega,
                                     scales, tcfg, seed)]
    manifest = Manifest(out, "train", cfg_hash, seed, config=str(args.config),
                        scheme="morl",
                        preference_grid=[p.omega.w_T for p in profiles])

    failures = []
    for i, profile in enumerate(profiles):
        tag = f"{i:02d}_wT{profile.omega.w_T:.4f}"
        if profile.error is not None:
            failures.append((tag, profile.error))
            continue
        ckpt = out / f"policy_{tag}.ckpt"
        save_checkpoint(ckpt, net, profile.theta, omega=profile.omega,
                        alphas=profile.scales, config_hash=cfg_hash,
                        extra={"episodes_seen": profile.episodes_seen,
                               "num_edges": cfg.num_edge_servers,
                               "histogram_bins": cfg.histogram_bins})
        manifest.add(ckpt)
        log = out / f"train_log_{tag}.csv"
        _write_train_log(log, profile.history)
        manifest.add(log)
    manifest.data["failed_preferences"] = [{"tag": t, "error": e} for t, e in failures]
    manifest.write()
    print(f"trained {len(profiles) - len(failures)}/{len(profiles)} preferences "
          f"-> {out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.rng_seed if args.seed is None else args.seed
    out = _out_dir(args)
    cfg_hash = config_hash(cfg)
    divisor = cfg.steps_per_episode * cfg.mean_task_size_bits() / 1e6
    scales = RewardScales(args.alpha_t, args.alpha_e)
    rows = []

    if args.checkpoint:
        for path in args.checkpoint:
            header, net, theta = load_checkpoint(path)
            if header["config_hash"] != cfg_hash:
                raise CheckpointFormatError(
                    f"{path}: checkpoint was trained under config "
                    f"{header['config_hash']}, current is {cfg_hash}")
            omega = Preference(*header["omega"])
            policy = NetPolicy(net, theta, sampled=not args.greedy)
            point = evaluate_policy(policy, cfg, args.episodes, seed,
                                    label=Path(path).name, omega_T=omega.w_T)
            rows.append(_result_row("morl", point, omega))
    elif args.scheme == "random":
        for p in _parse_floats(args.p_grid):
            point = evaluate_policy(RandomPolicy(p), cfg, args.episodes, seed,
                                    label=f"p={p:g}", omega_T=p)
            rows.append(_result_row("random", point,
                                    Preference(p, 1.0 - p)))
    else:
        grid = _parse_grid(args.grid) if args.grid \
            else [Preference(args.preference, 1.0 - args.preference).validate()]
        for omega in grid:
            if args.scheme == "heuristic":
                policy = HeuristicPolicy(omega, scales)
            else:
                policy = train_linucb(cfg, omega, scales, args.train_episodes,
                                      seed, stream=f"linucb-w{omega.w_T:g}")
                policy.frozen = True
            point = evaluate_policy(policy, cfg, args.episodes, seed,
                                    label=f"{args.scheme} wT={omega.w_T:g}",
                                    omega_T=omega.w_T)
            rows.append(_result_row(args.scheme, point, omega))

    result_path = out / args.name
    _write_results_csv(result_path, rows, cfg_hash, divisor)
    scheme = "morl" if args.checkpoint else args.scheme
    manifest = Manifest(out, "evaluate", cfg_hash, seed,
                        config=str(args.config), scheme=scheme)
    manifest.add(result_path)
    manifest.write()
    print(f"wrote {len(rows)} rows -> {result_path}")
    return 0


def cmd_front(args) -> int:
    metas, all_rows = [], []
    for path in args.results:
        meta, rows = _read_results_csv(Path(path))
        metas.append(meta)
        all_rows.extend(rows)
    hashes = {m["config_hash"] for m in metas}
    divisors = {m["per_mbit_divisor"] for m in metas}
    if len(hashes) > 1 or len(divisors) > 1:
        raise CheckpointFormatError(
            f"results files disagree on config/units: hashes {hashes}, "
            f"divisors {divisors}")
    divisor = float(divisors.pop()) if args.per_mbit else 1.0

    by_scheme: dict[str, list[PerformancePoint]] = {}
    for row in all_rows:
        point = PerformancePoint(
            y_T=float(row["mean_delay_s"]) / divisor,
            y_E=float(row["mean_energy_J"]) / divisor,
            stderr_T=float(row["stderr_T"]) / divisor,
            stderr_E=float(row["stderr_E"]) / divisor,
            n_episodes=int(row["n_episodes"]),
            label=row["scheme"],
            omega_T=float(row["omega_T"]) if row["omega_T"] else math.nan)
        by_scheme.setdefault(row["scheme"], []).append(point)

    out = _out_dir(args)
    manifest = Manifest(out, "front", hashes.pop(), 0,
                        inputs=[str(r) for r in args.results],
                        per_mbit=bool(args.per_mbit))

    fronts = {scheme: pareto_filter(points) for scheme, points in by_scheme.items()}
    for scheme, front in fronts.items():
        front_path = out / f"front_{scheme}.json"
        payload = [{"omega_T": None if math.isnan(p.omega_T) else p.omega_T,
                    "y_T_s": p.y_T, "y_E_J": p.y_E,
                    "stderr_T": p.stderr_T, "stderr_E": p.stderr_E}
                   for p in front]
        front_path.write_text(json.dumps(payload, indent=2) + "\n")
        manifest.add(front_path)

    comparison = compare_fronts(fronts)
    hv_path = out / "hypervolume.csv"
    with open(hv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scheme", "hypervolume", "ref_T", "ref_E"])
        for scheme in sorted(comparison.hypervolumes):
            writer.writerow([scheme, repr(comparison.hypervolumes[scheme]),
                             repr(comparison.reference.y_T),
                             repr(comparison.reference.y_E)])
        for (a, b), gain in sorted(comparison.gains.items()):
            writer.writerow([f"gain_{a}_over_{b}", repr(gain), "", ""])
    manifest.add(hv_path)

    plot_path = out / "plot_data.txt"
    with open(plot_path, "w") as fh:
        for scheme in sorted(fronts):
            fh.write(f"# scheme: {scheme}\n")
            for p in fronts[scheme]:
                fh.write(f"{p.y_T!r} {p.y_E!r}\n")
            fh.write("\n")
    manifest.add(plot_path)
    manifest.write()

    for scheme in sorted(comparison.hypervolumes):
        print(f"{scheme}: hypervolume {comparison.hypervolumes[scheme]:.6g}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.rng_seed if args.seed is None else args.seed
    scales = calibrate_scales(cfg, args.episodes, seed)
    print(f"alpha_T = {scales.a_T!r}")
    print(f"alpha_E = {scales.a_E!r}")
    if args.out:
        out = _out_dir(args)
        path = out / "scales.json"
        path.write_text(json.dumps({"alpha_T": scales.a_T,
                                    "alpha_E": scales.a_E}) + "\n")
        manifest = Manifest(out, "calibrate", config_hash(cfg), seed)
        manifest.add(path)
        manifest.write()
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.rng_seed if args.seed is None else args.seed
    env = OffloadEnv(cfg, seed, stream="simulate", trace=args.trace is not None)
    if args.policy == "random":
        policy = RandomPolicy(args.p_cloud)
    else:
        policy = HeuristicPolicy(Preference(args.preference, 1 - args.preference),
                                 RewardScales(args.alpha_t, args.alpha_e))
    lines = []
    for k in range(args.episodes):
        rng = derive_rng(seed, "simulate", "actions", k)
        out = run_episode(env, policy, k, rng)
        print(f"episode {k}: delay {out['total_delay']:.6g} s, "
              f"energy {out['total_energy']:.6g} J, "
              f"forced arrivals {out['forced_arrivals']}")
        if args.trace is not None:
            for when, kind, task, server in sorted_trace(env.state):
                lines.append(f"{float(when)!r}\t{kind}\t{task}\t{server}")
    if args.trace is not None:
        Path(args.trace).write_text("\n".join(lines) + "\n")
        print(f"trace -> {args.trace}")
    return 0


# ----------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mecmorl",
        description="Multi-objective PPO task offloading experiments")
    parser.add_argument("--single-thread", action="store_true",
                        help="pin BLAS to one thread for bit-reproducible runs")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None,
                       help="root seed (default: rng_seed from config)")
        if needs_out:
            p.add_argument("--out", required=True)
        p.add_argument("--single-thread", action="store_true")

    p = sub.add_parser("train", help="train one preference or sweep a grid")
    common(p)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--preference", type=float, help="delay weight in [0,1]")
    group.add_argument("--sweep", action="store_true")
    p.add_argument("--grid-interval", type=float, default=0.02)
    p.add_argument("--grid", type=str, default=None,
                   help="explicit delay weights, e.g. '0,0.25,0.5,0.75,1'")
    p.add_argument("--episodes", type=int, default=20000)
    p.add_argument("--warm-episodes", type=int, default=None)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--rollout-steps", type=int, default=4096)
    p.add_argument("--alpha-t", type=float, default=0.1)
    p.add_argument("--alpha-e", type=float, default=10.0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate checkpoints or a baseline scheme")
    common(p)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--checkpoint", nargs="+")
    group.add_argument("--scheme", choices=["linucb", "heuristic", "random"])
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--preference", type=float, default=0.5)
    p.add_argument("--grid", type=str, default=None)
    p.add_argument("--p-grid", type=str, default="0,0.25,0.5,0.75,1")
    p.add_argument("--train-episodes", type=int, default=200,
                   help="online training episodes for linucb")
    p.add_argument("--greedy", action="store_true",
                   help="argmax actions instead of sampling")
    p.add_argument("--alpha-t", type=float, default=0.1)
    p.add_argument("--alpha-e", type=float, default=10.0)
    p.add_argument("--name", default="results.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("front", help="Pareto fronts + hypervolume comparison")
    p.add_argument("results", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--per-mbit", action="store_true",
                   help="report per-Mbit totals (divide both axes by M * mean size)")
    p.add_argument("--single-thread", action="store_true")
    p.set_defaults(func=cmd_front)

    p = sub.add_parser("calibrate", help="reward scales from the random baseline")
    common(p, needs_out=False)
    p.add_argument("--out", default=None)
    p.add_argument("--episodes", type=int, default=20)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", help="run episodes, optionally export a trace")
    common(p, needs_out=False)
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--policy", choices=["random", "heuristic"], default="random")
    p.add_argument("--p-cloud", type=float, default=0.5)
    p.add_argument("--preference", type=float, default=0.5)
    p.add_argument("--alpha-t", type=float, default=0.1)
    p.add_argument("--alpha-e", type=float, default=10.0)
    p.add_argument("--trace", default=None)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (CheckpointFormatError, FileNotFoundError, InvalidAction,
            ContractViolation) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except (NumericError, CalibrationError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return NUMERIC_ERROR


if __name__ == "__main__":
    sys.exit(main())
