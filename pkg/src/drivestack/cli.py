"""Command line front end for training, evaluation, and data export.

Every subcommand exits 0 on success.  Failures print exactly one line to
stderr of the form ``error: <code>: <detail>`` and exit nonzero, so shell
pipelines can pattern-match on the prefix.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .agent import BootstrappedAgent
from .config import ExperimentConfig, load_config
from .harness import (VARIANTS, FrameworkVariant, compare_drl,
                      compare_frameworks, evaluate, fit_planner_weights,
                      run_training, save_learning_curve, save_phase_plane)
from .irl import build_dataset, load_dataset, save_dataset, top1_agreement, train_irl
from .traffic import PlacementError

# build_dataset skips infeasible seeds but scans at most 50*count + 100 of
# them, so this offset keeps the train and eval scenario streams disjoint.
EVAL_SEED_OFFSET = 15_000


class CliError(Exception):
    def __init__(self, code: str, detail: str):
        super().__init__(detail)
        self.code = code
        self.detail = detail


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors obey the one-line error contract."""

    def error(self, message):
        print(f"error: usage: {' '.join(message.split())}", file=sys.stderr)
        raise SystemExit(2)


def _config(args) -> ExperimentConfig:
    if args.config is None:
        return ExperimentConfig()
    if not Path(args.config).exists():
        raise CliError("missing-file", f"config file {args.config} not found")
    return load_config(args.config)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _json_safe(value):
    if isinstance(value, float) and math.isnan(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_json_safe(payload), indent=2) + "\n",
                    encoding="utf-8")


def _expert_datasets(cfg: ExperimentConfig, seed: int, out: Path):
    """Load the demonstration split from ``out`` or generate it fresh."""
    train_path = out / "expert_train.csv"
    eval_path = out / "expert_eval.csv"
    if train_path.exists() and eval_path.exists():
        return load_dataset(train_path), load_dataset(eval_path)
    train = build_dataset(cfg.irl.train_scenarios, seed, cfg)
    evals = build_dataset(cfg.irl.eval_scenarios, seed + EVAL_SEED_OFFSET, cfg)
    return train, evals


def _load_path_weights(cfg: ExperimentConfig, variant: FrameworkVariant,
                       out: Path, require: bool) -> np.ndarray:
    """Planner weights for a variant: fitted file, or expert constants.

    The sequential variant never consults the planner, so it always gets the
    configured constants.  Planner-driven variants read ``path_weights.json``
    when present; ``require`` controls whether a missing file is an error
    (evaluation) or a cue to fit from scratch (training).
    """
    if not variant.planner_active:
        return np.array(cfg.irl.expert_weights, dtype=float)
    path = out / "path_weights.json"
    if path.exists():
        return np.array(json.loads(path.read_text())["weights"], dtype=float)
    if require:
        raise CliError("missing-artifact",
                       f"{path} not found; run train-irl first")
    return fit_planner_weights(cfg)


def _load_agent(cfg: ExperimentConfig, variant: FrameworkVariant, out: Path,
                seed: int) -> BootstrappedAgent:
    checkpoint = out / f"agent_{variant.tag}.npz"
    if not checkpoint.exists():
        raise CliError("missing-artifact",
                       f"checkpoint {checkpoint} not found; run train-agent "
                       f"--variant {variant.tag} first")
    agent = BootstrappedAgent(cfg.scenario.observation_dim,
                              len(variant.catalog), cfg.agent, seed)
    agent.load_weights(checkpoint)
    return agent


def _eval_seeds(args) -> tuple[int, ...]:
    return tuple(range(args.seed, args.seed + args.cases))


# -- subcommands -----------------------------------------------------------------


def cmd_synth_expert(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    train = build_dataset(cfg.irl.train_scenarios, args.seed, cfg)
    evals = build_dataset(cfg.irl.eval_scenarios, args.seed + EVAL_SEED_OFFSET,
                          cfg)
    save_dataset(out / "expert_train.csv", train)
    save_dataset(out / "expert_eval.csv", evals)
    _write_json(out / "expert_summary.json", {
        "train_scenarios": len(train),
        "eval_scenarios": len(evals),
        "train_start_seed": args.seed,
        "eval_start_seed": args.seed + EVAL_SEED_OFFSET,
        "expert_weights": list(cfg.irl.expert_weights),
    })
    print(f"expert dataset: {len(train)} train + {len(evals)} eval "
          f"scenarios -> {out}")
    return 0


def cmd_train_irl(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    train, evals = _expert_datasets(cfg, args.seed, out)
    result = train_irl(train, cfg.irl)
    agreement = {
        "train": top1_agreement(result.weights, train),
        "eval": top1_agreement(result.weights, evals),
    }
    _write_json(out / "path_weights.json", {
        "weights": result.weights.tolist(),
        "agreement": agreement,
        "objective_trace": result.objective_trace.tolist(),
    })
    print(f"fitted path weights {np.round(result.weights, 4).tolist()} "
          f"(held-out top-1 agreement {agreement['eval']:.2f}) -> {out}")
    return 0


def cmd_train_agent(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    variant = VARIANTS[args.variant]
    weights = _load_path_weights(cfg, variant, out, require=False)
    if variant.planner_active and not (out / "path_weights.json").exists():
        _write_json(out / "path_weights.json", {"weights": weights.tolist()})
    result = run_training(cfg, variant, weights, args.seed,
                          episodes=args.episodes)
    save_learning_curve(result.rows, out / f"curve_{variant.tag}.csv")
    result.agent.save(out / f"agent_{variant.tag}.npz")
    print(f"trained {variant.tag} for {len(result.rows)} episodes "
          f"(final-100 collision rate {result.final_collision_rate():.3f}, "
          f"{result.invalid_episodes} invalid) -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    variant = VARIANTS[args.variant]
    agent = _load_agent(cfg, variant, out, args.seed)
    weights = _load_path_weights(cfg, variant, out, require=True)
    report = evaluate(agent, cfg, variant, weights, _eval_seeds(args),
                      out_dir=out, keep_logs=True)
    save_phase_plane(report.logs, out / f"phase_plane_{variant.tag}.csv")
    _write_json(out / f"metrics_{variant.tag}.json", {
        "variant": variant.tag,
        "seeds": list(report.seeds),
        "mean_reward": report.mean_reward,
        "mean_speed": report.mean_speed,
        "collision_rate": report.collision_rate,
        "rewards": list(report.rewards),
        "mean_speeds": list(report.mean_speeds),
        "collisions": list(report.collisions),
        "indicator_means": report.indicator_means,
        "maneuver_count": report.maneuver_count,
        "invalid_seeds": list(report.invalid_seeds),
    })
    print(f"{variant.tag}: mean speed {report.mean_speed:.2f} m/s, "
          f"mean reward {report.mean_reward:.1f}, collision rate "
          f"{report.collision_rate:.2f} over {len(report.seeds)} cases -> {out}")
    return 0


def cmd_compare_frameworks(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    comparison = compare_frameworks(cfg, args.seed, _eval_seeds(args),
                                    episodes=args.episodes, out_dir=out)
    _write_json(out / "framework_summary.json", {
        "deltas": comparison.deltas,
        "reference_deltas_nonbinding": comparison.reference,
        "aggregates": {
            tag: {
                "mean_reward": report.mean_reward,
                "mean_speed": report.mean_speed,
                "collision_rate": report.collision_rate,
                "indicator_means": report.indicator_means,
            }
            for tag, report in comparison.reports.items()
        },
    })
    for line in comparison.summary_lines():
        print(line)
    return 0


def cmd_compare_drl(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    comparison = compare_drl(cfg, args.seed, episodes=args.episodes,
                             out_dir=out)
    _write_json(out / "drl_summary.json", {
        "runs": [{
            "label": run.label,
            "head_count": run.head_count,
            "double_q": run.double_q,
            "final_collision_rate": run.final_collision_rate,
            "final_mean_reward": run.final_mean_reward,
        } for run in comparison.runs],
        "reference_reductions_nonbinding": comparison.reference,
    })
    for line in comparison.summary_lines():
        print(line)
    return 0


def cmd_export_phase_plane(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    variant = VARIANTS[args.variant]
    agent = _load_agent(cfg, variant, out, args.seed)
    weights = _load_path_weights(cfg, variant, out, require=True)
    report = evaluate(agent, cfg, variant, weights, _eval_seeds(args),
                      keep_logs=True)
    path = out / f"phase_plane_{variant.tag}.csv"
    save_phase_plane(report.logs, path)
    rows = sum(sum(1 for r in log.rows if r["phase"] == 1)
               for log in report.logs)
    print(f"phase plane: {rows} lane-change samples from "
          f"{len(report.seeds)} cases -> {path}")
    return 0


def build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="JSON config file (defaults used when omitted)")
    common.add_argument("--seed", type=int, default=0,
                        help="base seed for training and evaluation cases")
    common.add_argument("--out", type=Path, default=Path("runs"),
                        help="artifact directory (created if missing)")

    parser = _Parser(prog="drivestack",
                     description="Highway decision/planning/control stack")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, *, variant=False, cases=False,
            episodes=False):
        p = sub.add_parser(name, parents=[common], help=help_text)
        if variant:
            p.add_argument("--variant", choices=sorted(VARIANTS),
                           default="integrated")
        if cases:
            p.add_argument("--cases", type=int, default=10,
                           help="number of evaluation seeds (seed..seed+N-1)")
        if episodes:
            p.add_argument("--episodes", type=int, default=None,
                           help="training episodes (config value if omitted)")
        p.set_defaults(func=func)
        return p

    add("synth-expert", cmd_synth_expert,
        "generate the synthetic demonstration scenario split")
    add("train-irl", cmd_train_irl,
        "fit path-selection weights from demonstrations")
    add("train-agent", cmd_train_agent,
        "train the decision agent for one framework variant",
        variant=True, episodes=True)
    add("evaluate", cmd_evaluate,
        "evaluate a trained agent: episode CSVs and metrics JSON",
        variant=True, cases=True)
    add("compare-frameworks", cmd_compare_frameworks,
        "train and compare all three variants on matched seeds",
        cases=True, episodes=True)
    add("compare-drl", cmd_compare_drl,
        "compare single-head, double-Q, and bootstrapped agents",
        episodes=True)
    add("export-phase-plane", cmd_export_phase_plane,
        "export sideslip/yaw-rate samples from lane-change segments",
        variant=True, cases=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:          # argparse --help or usage error
        return exc.code or 0
    except CliError as exc:
        print(f"error: {exc.code}: {exc.detail}", file=sys.stderr)
        return 1
    except PlacementError as exc:
        print(f"error: placement: {' '.join(str(exc).split())}",
              file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        detail = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {type(exc).__name__}: {detail}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
