"""``gridvolt`` command line: partition, generate-profiles, train, eval.

Every output file starts with ``#`` comment lines carrying the config hash
and root seed.  Exit codes: 0 success, 2 usage or configuration error,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .env import AgentLayout, generate_profiles, read_profile_csv, write_profile_csv
from .evaluation import (compute_err, eval_agents, eval_no_control, eval_oracle, results_csv,
                         stress_test_transient)
from .exceptions import (CheckpointError, ConfigurationError, DegenerateDenominator,
                         GridVoltError, NetworkValidationError)
from .matd3 import TrainConfig, curve_csv, load_checkpoint, load_training_state, train
from .netmodel import load_network
from .partition import DEFAULT_GAMMAS, gamma_to_sigma, median_sigma, select_partition
from .powerflow import base_case_sensitivity
from .seeding import derive_seed

log = logging.getLogger("gridvolt")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
METHOD_FILES = {"centralized": "matd3", "independent": "independent_td3"}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    net: str = "ieee33"
    seed: int = 0
    out: str = "out"
    k_range: tuple = (2, 8)
    gammas: tuple = DEFAULT_GAMMAS
    include_median: bool = False
    train_days: int = 100
    test_days: int = 10
    profiles: str | None = None
    test_profiles: str | None = None
    train: dict = field(default_factory=dict)
    baseline: str | None = None
    checkpoint_dir: str | None = None
    checkpoint_every: int = 100
    resume: bool = False
    transient: bool = False
    timing: bool = False
    jobs: int = 1
    kind: str = "daily"
    count: int = 1

    # Fields that change no result bytes are left out of the hash.
    _UNHASHED = ("out", "checkpoint_dir", "jobs", "resume", "checkpoint_every")

    def digest(self) -> str:
        data = {k: v for k, v in asdict(self).items() if k not in self._UNHASHED}
        data["k_range"] = list(self.k_range)
        data["gammas"] = list(self.gammas)
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()[:16]

    def header(self, command) -> list[str]:
        return [f"gridvolt {command}", f"config_hash={self.digest()}", f"seed={self.seed}"]

    def train_config(self, mode) -> TrainConfig:
        options = dict(self.train)
        options.setdefault("seed", self.seed)
        options["mode"] = mode
        return TrainConfig.from_dict(options)


def parse_k_range(text) -> tuple:
    try:
        lo, hi = text.split("..")
        lo, hi = int(lo), int(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO..HI, got {text!r}") from None
    if not 2 <= lo <= hi:
        raise argparse.ArgumentTypeError("k range needs 2 <= LO <= HI")
    return lo, hi


def parse_floats(text) -> tuple:
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("values must be positive")
    return values


def load_run_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
        known = {f.name for f in fields(RunConfig)}
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"{path}: unknown keys {sorted(unknown)}")
        for key in ("k_range", "gammas"):
            if key in data:
                data[key] = tuple(data[key])
        cfg = replace(cfg, **data)
    overrides = {k: v for k, v in vars(args).items()
                 if k in {f.name for f in fields(RunConfig)} and v is not None}
    train_overrides = dict(cfg.train)
    if getattr(args, "episodes", None) is not None:
        train_overrides["episodes"] = args.episodes
    cfg = replace(cfg, **overrides, train=train_overrides)
    return cfg


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("wrote %s", path)


def _network(cfg):
    try:
        return load_network(cfg.net)
    except FileNotFoundError:
        raise UsageError(f"network file not found: {cfg.net}") from None


def _partition(cfg, net):
    sens = base_case_sensitivity(net)
    sigmas = [gamma_to_sigma(g) for g in cfg.gammas]
    if cfg.include_median:
        sigmas.append(median_sigma(sens.s))
    ids = [net.bus_ids[i] for i in sens.bus_index]
    lo, hi = cfg.k_range
    return select_partition(sens.s, range(lo, hi + 1), sigmas, seed=derive_seed(cfg.seed, "kmeans"),
                            bus_ids=ids)


def _profiles(cfg, net, directory, count, name):
    if directory:
        paths = sorted(Path(directory).glob("*.csv"))
        if not paths:
            raise UsageError(f"no profile CSVs in {directory}")
        return [read_profile_csv(net, p) for p in paths]
    return generate_profiles(net, "daily", count, seed=derive_seed(cfg.seed, name))


# --- commands ---------------------------------------------------------------

def cmd_partition(cfg: RunConfig) -> int:
    net = _network(cfg)
    result = _partition(cfg, net)
    header = "".join(f"# {line}\n" for line in cfg.header("partition"))
    out = Path(cfg.out)
    rows = [f"{bid},{label}" for bid, label in zip(result.bus_ids, result.assignment)]
    _write(out / "partition_assignment.csv",
           header + f"# k={result.k} sigma={result.sigma:.10g} silhouette={result.silhouette:.10g}\n"
           + "bus_id,cluster\n" + "\n".join(rows) + "\n")
    scan = [f"{k},{1.0 / (2.0 * s * s):.10g},{s:.10g},{sil:.10g},{nc:.10g}"
            for k, s, sil, nc in result.scan]
    _write(out / "partition_scan.csv",
           header + "k,gamma,sigma,silhouette,ncut\n" + "\n".join(scan) + "\n")
    print(f"k={result.k} silhouette={result.silhouette:.4f}")
    return EXIT_OK


def cmd_generate_profiles(cfg: RunConfig) -> int:
    net = _network(cfg)
    profiles = generate_profiles(net, cfg.kind, cfg.count, seed=cfg.seed)
    out = Path(cfg.out)
    for i, profile in enumerate(profiles):
        write_profile_csv(net, profile, out / f"{cfg.kind}_{i:03d}.csv",
                          header_lines=cfg.header("generate-profiles") + [f"index={i}"])
    print(f"wrote {len(profiles)} {cfg.kind} profiles to {out}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    net = _network(cfg)
    mode = "independent" if cfg.baseline == "independent" else "centralized"
    config = cfg.train_config(mode)
    layout = AgentLayout.from_partition(net, _partition(cfg, net))
    profiles = _profiles(cfg, net, cfg.profiles, cfg.train_days, "profiles-train")
    out = Path(cfg.out)
    name = METHOD_FILES[mode]
    ckpt = out / f"{name}.ckpt"
    state = None
    if cfg.resume and ckpt.exists():
        state = load_training_state(ckpt, layout, episodes=config.episodes)
        log.info("resuming %s at episode %d", ckpt, state.episode)
    state = train(net, layout, profiles, config, state=state, checkpoint_path=ckpt,
                  checkpoint_every=cfg.checkpoint_every, timing=cfg.timing)
    lines = cfg.header("train") + [f"method={name}", f"agents_hash={state.team.hash}"]
    _write(out / f"{name}_curve.csv", curve_csv(state.curve, lines))
    report = state.report
    print(f"{name}: {state.episode} episodes, invariant checks {report.checks}, "
          f"violations {report.total_violations}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    net = _network(cfg)
    ckpt_dir = Path(cfg.checkpoint_dir or cfg.out)
    teams = {}
    for name in ("independent_td3", "matd3"):
        path = ckpt_dir / f"{name}.ckpt"
        if not path.exists():
            raise UsageError(f"missing checkpoint: expected {path} (run `gridvolt train` first)")
        teams[name] = load_checkpoint(path)
    layout = teams["matd3"].layout
    profiles = _profiles(cfg, net, cfg.test_profiles, cfg.test_days, "profiles-test")
    original, _ = eval_no_control(net, profiles)
    rows = [("original", original)]
    for name, team in teams.items():
        if team.layout.signature() != layout.signature():
            raise UsageError("checkpoints were trained on different partitions")
        rows.append((name, eval_agents(team, net, team.layout, profiles, timing=cfg.timing)[0]))
    oracle = eval_oracle(net, profiles, timing=cfg.timing, jobs=cfg.jobs)[0]
    rows.append(("oracle", oracle))
    err = {}
    for name, metrics in rows:
        try:
            err[name] = compute_err(metrics, oracle, original)
        except DegenerateDenominator:
            err[name] = None
    out = Path(cfg.out)
    _write(out / "results.csv", results_csv(rows, err, cfg.header("eval")))
    if cfg.transient:
        stress = stress_test_transient(net, layout, teams, seed=derive_seed(cfg.seed, "transient"))
        _write(out / "stress.csv", stress.to_csv(cfg.header("eval") + [f"bus={stress.monitored_bus}"]))
    for name, metrics in rows:
        score = "n/a" if err[name] is None else f"{err[name]:.2f}%"
        print(f"{name:16s} average {metrics.average:.4f}%  ERR {score}")
    return EXIT_OK


COMMANDS = {"partition": cmd_partition, "generate-profiles": cmd_generate_profiles,
            "train": cmd_train, "eval": cmd_eval}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridvolt", description="Partitioned multi-agent volt-var control.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file mirroring the run configuration")
        p.add_argument("--net", help="bundled feeder name or JSON path (default ieee33)")
        p.add_argument("--seed", type=int, help="root seed (default 0)")
        p.add_argument("--out", help="output directory (default ./out)")

    p = sub.add_parser("partition", help="spectral partition of the feeder")
    common(p)
    p.add_argument("--k-range", dest="k_range", type=parse_k_range, help="cluster counts, LO..HI")
    p.add_argument("--gamma", dest="gammas", type=parse_floats, help="kernel gammas, comma-separated")
    p.add_argument("--median", dest="include_median", action="store_const", const=True,
                   help="also scan the median-distance kernel width")

    p = sub.add_parser("generate-profiles", help="write synthetic scenario CSVs")
    common(p)
    p.add_argument("--kind", choices=["daily", "cloud_transient"])
    p.add_argument("--count", type=int)

    for name, text in (("train", "train MATD3 (or a baseline)"), ("eval", "evaluate all methods")):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--k-range", dest="k_range", type=parse_k_range)
        p.add_argument("--gamma", dest="gammas", type=parse_floats)
        p.add_argument("--timing", action="store_const", const=True,
                       help="record wall-clock columns (makes output non-reproducible)")
        if name == "train":
            p.add_argument("--episodes", type=int)
            p.add_argument("--baseline", choices=["independent"])
            p.add_argument("--train-days", dest="train_days", type=int)
            p.add_argument("--profiles", help="directory of training profile CSVs")
            p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
            p.add_argument("--resume", action="store_const", const=True,
                           help="continue from the checkpoint in --out")
        else:
            p.add_argument("--checkpoint-dir", dest="checkpoint_dir")
            p.add_argument("--test-days", dest="test_days", type=int)
            p.add_argument("--test-profiles", dest="test_profiles")
            p.add_argument("--transient", action="store_const", const=True,
                           help="also run the one-minute PV ramp stress test")
            p.add_argument("--jobs", type=int, help="oracle worker threads")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_run_config(args)
        return COMMANDS[args.command](cfg)
    except (UsageError, ConfigurationError, NetworkValidationError, CheckpointError) as exc:
        print(f"gridvolt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GridVoltError, ValueError, ArithmeticError) as exc:
        print(f"gridvolt: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
