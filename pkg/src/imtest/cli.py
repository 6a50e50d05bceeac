"""``verify`` command line: run IMT, IMTc, MT or RT and write the result files.

Exit codes: 0 success, 1 usage/config error, 2 policy adapter failure,
3 value iteration did not converge.
"""

from __future__ import annotations

import argparse
import logging
import math
import shlex
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import environments as envs
from .checker import ConvergenceError, RewardSpec
from .clustering import ClusterConfig, run_imtc
from .engine import EngineConfig, Objective, PERFORMANCE, SAFETY, RunAborted, run_imt, run_mt, run_rt
from .mdp import Mdp, MdpError, validate_mdp
from .mdpfile import ModelFormatError, load_mdp
from .policy import PolicyError, PolicyFormatError, PolicyHandle, TabularPolicy, load_tabular, spawn_external
from . import report as rep

log = logging.getLogger("imtest")

EXIT_OK, EXIT_CONFIG, EXIT_ADAPTER, EXIT_NONCONVERGENCE = 0, 1, 2, 3
MODES = ("imt", "imtc", "mt", "rt")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    mode: str
    model: str
    policy: str
    out: str = "out"
    objective: str = SAFETY
    delta: float = 1.0
    epsilon: float = 0.05
    m: int = 10
    horizon: float = math.inf
    seed: int = 0
    rank_epsilon: float = 1e-9
    max_queries: int | None = None
    avoid_label: str = "bad"
    reward_label: str = "goal"
    reward_value: float = 1.0
    discount: float = 1.0
    delta_i: float = 0.8
    kappa: float = 0.2
    zeta: float = 25
    n_test: int = 200
    repetitions: int = 1
    episode_len: int = 10
    budget: int = 1000
    figures: bool = True
    timeout: float = 30.0

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}")
        if self.objective not in (SAFETY, PERFORMANCE):
            raise ConfigError("objective must be 'safety' or 'performance'")
        if self.mode in ("imtc", "rt") and self.objective != SAFETY:
            raise ConfigError(f"{self.mode} supports safety objectives only")
        if self.objective == SAFETY and not 0 <= self.delta <= 1:
            raise ConfigError("safety threshold delta must lie in [0, 1]")
        if self.m < 1 or self.epsilon < 0 or self.budget < 0 or self.episode_len < 0:
            raise ConfigError("m must be >= 1; epsilon, budget and episode-len non-negative")


def _parse_horizon(text) -> float:
    if isinstance(text, (int, float)):
        return text
    if str(text).lower() in ("inf", "infinity", "unbounded"):
        return math.inf
    try:
        n = int(text)
    except ValueError:
        raise ConfigError(f"horizon must be an integer or 'inf', got {text!r}") from None
    if n < 0:
        raise ConfigError("horizon must be non-negative")
    return n


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    if str(text).lower() in ("1", "true", "yes", "on"):
        return True
    if str(text).lower() in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


_CONVERTERS = {"horizon": _parse_horizon, "figures": _parse_bool,
               "max_queries": lambda v: None if str(v).lower() in ("", "none") else int(v)}


def _convert(name: str, value):
    types = {f.name: f.type for f in fields(RunConfig)}
    if name not in types:
        raise ConfigError(f"unknown config key {name!r}")
    if name in _CONVERTERS:
        return _CONVERTERS[name](value)
    kind = types[name]
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {value!r}") from None
    return str(value)


def read_config_file(path: str | Path) -> dict:
    """Flat ``key = value`` lines; ``#`` comments; keys as in the CLI flags."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}") from e
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (t.strip() for t in line.split("=", 1))
        key = key.replace("-", "_")
        out[key] = _convert(key, value)
    return out


# -- model and policy sources --------------------------------------------------------------


def _kv(text: str) -> dict[str, str]:
    out = {}
    for part in filter(None, text.split(",")):
        if "=" not in part:
            raise ConfigError(f"expected key=value in model options, got {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_model(spec: str) -> Mdp:
    """Resolve a model source.

    ``builtin:<layout>`` (shipped gridworlds), ``grid:<layout file>``,
    ``corridor[:key=value,...]``, ``random:seed=..,states=..,...`` or an MDP
    file path (optionally prefixed ``file:``).
    """
    kind, _, arg = spec.partition(":")
    try:
        if kind == "builtin":
            return envs.build_slippery_gridworld(envs.builtin_layout(arg))[0]
        if kind == "grid":
            return envs.build_slippery_gridworld(envs.GridLayout.load(arg))[0]
        if kind == "corridor":
            o = _kv(arg)
            obstacles = [tuple(int(c) for c in p.split(":")) for p in o.pop("obstacles", "2:6/5:9/7:13/4:16").split("/")]
            return envs.build_corridor_obstacles(
                int(o.pop("length", 20)), obstacles, tilt_count=int(o.pop("tilts", 5)),
                velocity_count=int(o.pop("velocities", 2)), width=int(o.pop("width", 10)),
                drift=float(o.pop("drift", 0.1)))[0]
        if kind == "random":
            o = _kv(arg)
            return envs.random_mdp(int(o.get("seed", 0)), int(o.get("states", 8)), int(o.get("actions", 3)),
                                   int(o.get("branching", 3)), float(o.get("bad", 0.25)))
        path = arg if kind == "file" else spec
        mdp = load_mdp(path)
    except (OSError, ModelFormatError, envs.LayoutError, MdpError, ValueError) as e:
        raise ConfigError(f"cannot load model {spec!r}: {e}") from e
    problems = validate_mdp(mdp)
    if problems:
        raise ConfigError("invalid model: " + "; ".join(problems[:5]))
    return mdp


def load_policy(spec: str, mdp: Mdp, timeout: float = 30.0, run_id: str = "0") -> PolicyHandle:
    """``tabular:<file>`` (or a bare path), ``cmd:<command line>``,
    ``const:<action>`` or ``cautious`` (a lava-avoiding gridworld policy)."""
    kind, _, arg = spec.partition(":")
    if kind == "cmd":
        argv = shlex.split(arg)
        if not argv:
            raise ConfigError("empty policy command")
        return spawn_external(argv[0], argv[1:], mdp=mdp, timeout=timeout, run_id=run_id)
    try:
        if kind == "const":
            return TabularPolicy(envs.constant_policy(mdp, arg))
        if spec == "cautious":
            return TabularPolicy(envs.cautious_grid_policy(mdp))
        return load_tabular(arg if kind == "tabular" else spec, mdp)
    except (OSError, PolicyFormatError, MdpError) as e:
        raise ConfigError(f"cannot load policy {spec!r}: {e}") from e


# -- running --------------------------------------------------------------------------------------


def _objective(cfg: RunConfig, mdp: Mdp) -> Objective:
    if cfg.objective == SAFETY:
        return Objective.safety(cfg.delta, cfg.avoid_label, cfg.horizon)
    reward = RewardSpec.for_label(mdp, cfg.reward_label, cfg.reward_value, horizon=cfg.horizon,
                                  discount=cfg.discount).reward
    return Objective.performance(reward, cfg.delta, cfg.horizon, cfg.discount)


def _settings(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d.pop("out")
    d.pop("mode")
    return d


def _write_run(out: Path, cfg: RunConfig, mdp: Mdp, result) -> None:
    rep.write_atomic(out / "iterations.csv", rep.iteration_csv(result))
    if result.verdicts is not None and result.estimates is not None:
        rep.write_atomic(out / "final_verdicts.csv", rep.verdicts_csv(result, mdp))
        rep.write_atomic(out / "estimates.csv", rep.estimates_csv(result, mdp))
    rep.write_atomic(out / "report.txt", rep.summary_text(result, _settings(cfg)))
    if mdp.render and mdp.render.get("kind") == "grid":
        for i, v in enumerate(result.verdict_history):
            rep.render_heatmap(v, mdp.render, out / f"verdicts_iter_{i}.ppm")
            if cfg.figures:
                from .plotting import save_verdict_figure
                save_verdict_figure(v, mdp.render, out / f"verdicts_iter_{i}.png", title=f"{result.mode} iteration {i}")


def run_from_config(cfg: RunConfig) -> int:
    try:
        cfg.validate()
        mdp = load_model(cfg.model)
        obj = _objective(cfg, mdp)
        engine_cfg = EngineConfig(cfg.m, cfg.epsilon, cfg.rank_epsilon, cfg.max_queries, cfg.seed)
        cluster_cfg = ClusterConfig(cfg.delta_i, cfg.kappa, cfg.zeta, cfg.n_test, seed=cfg.seed,
                                    repetitions=cfg.repetitions) if cfg.mode == "imtc" else None
    except (ConfigError, ValueError) as e:
        log.error("%s", e)
        return EXIT_CONFIG
    try:
        policy = load_policy(cfg.policy, mdp, cfg.timeout, run_id=str(cfg.seed))
    except ConfigError as e:
        log.error("%s", e)
        return EXIT_CONFIG
    except PolicyError as e:
        log.error("policy adapter failed: %s", e)
        return EXIT_ADAPTER

    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        log.error("cannot create output directory: %s", e)
        policy.close()
        return EXIT_CONFIG

    with policy:
        try:
            if cfg.mode == "rt":
                results = run_rt(mdp, policy, obj, engine_cfg, cfg.episode_len, cfg.budget)
                rep.write_atomic(out / "rt_results.csv", rep.rt_csv(results, mdp))
                rep.write_atomic(out / "report.txt", rep.rt_summary(results, _settings(cfg)))
                return EXIT_OK
            if cfg.mode == "imt":
                result = run_imt(mdp, policy, obj, engine_cfg)
            elif cfg.mode == "mt":
                result = run_mt(mdp, policy, obj, engine_cfg)
            else:
                result = run_imtc(mdp, policy, obj, engine_cfg, cluster_cfg)
        except RunAborted as e:
            log.error("policy adapter failed: %s", e.cause)
            e.report.termination = "aborted"
            _write_run(out, cfg, mdp, e.report)
            return EXIT_ADAPTER
        except PolicyError as e:
            log.error("policy adapter failed: %s", e)
            return EXIT_ADAPTER
        except ConvergenceError as e:
            log.error("%s", e)
            return EXIT_NONCONVERGENCE
    _write_run(out, cfg, mdp, result)
    log.info("%s: %s after %d iterations, %d queries -> %s", cfg.mode, result.termination,
             result.iterations, result.total_queries, out)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="verify", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="mode", required=True, parser_class=_Parser)
    for mode in MODES:
        p = sub.add_parser(mode)
        p.add_argument("--config", help="flat key=value file; flags override it")
        p.add_argument("--model", help="builtin:<name> | grid:<layout> | corridor[:opts] | random:<opts> | <file.mdp>")
        p.add_argument("--policy", help="tabular:<file> | cmd:<command> | const:<action> | cautious")
        p.add_argument("--out")
        p.add_argument("--objective", choices=(SAFETY, PERFORMANCE))
        p.add_argument("--delta", type=float, help="threshold on the estimates")
        p.add_argument("--epsilon", type=float, help="stop when all estimate gaps fall below this")
        p.add_argument("--m", type=int, help="samples per iteration")
        p.add_argument("--horizon", help="number of steps, or 'inf'")
        p.add_argument("--seed", type=int)
        p.add_argument("--rank-epsilon", type=float)
        p.add_argument("--max-queries", type=int)
        p.add_argument("--avoid-label")
        p.add_argument("--reward-label")
        p.add_argument("--reward-value", type=float)
        p.add_argument("--discount", type=float)
        p.add_argument("--timeout", type=float, help="seconds to wait for an external policy answer")
        p.add_argument("--no-figures", dest="figures", action="store_false", default=None)
        if mode == "imtc":
            p.add_argument("--delta-i", type=float, help="importance threshold on normalized rank")
            p.add_argument("--kappa", type=float, help="fraction of each cluster to test")
            p.add_argument("--zeta", type=float, help="target average cluster size")
            p.add_argument("--n-test", type=int, help="rollout length per tested state")
            p.add_argument("--repetitions", type=int)
        if mode == "rt":
            p.add_argument("--episode-len", type=int)
            p.add_argument("--budget", type=int, help="total policy queries (one per step)")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    values.pop("mode", None)
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None and f.name != "mode":
            values[f.name] = _convert(f.name, v) if f.name == "horizon" else v
    for required in ("model", "policy"):
        if required not in values:
            raise ConfigError(f"--{required} is required (flag or config key)")
    return RunConfig(mode=args.mode, **values)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:  # usage errors and --help
        return e.code if isinstance(e.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except ConfigError as e:
        log.error("%s", e)
        return EXIT_CONFIG
    return run_from_config(cfg)


if __name__ == "__main__":
    sys.exit(main())
