"""Command-line experiment driver.

Subcommands: ``train``, ``ga``, ``compare``, ``eval`` and ``export-sequence``.
Every artifact is written under the output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from .agents import PpoConfig, greedy_sequence, train_integrated, train_rl
from .channel import ChannelSpec, rng_stream, stream_id
from .codec import Construction
from .config import ConfigError, ExperimentConfig, load_config
from .construction import (NestedSequence, code_from_sequence, dega_construct,
                           dega_reliability, read_sequence, sequence_from_reliability,
                           write_reliability_csv, write_sequence)
from .evaluator import (BracketError, RewardCache, RewardSpec, ScheduledReward,
                        bler_sweep, find_esn0_at_bler, reward, write_sweep_csv)
from .genetic import ga_evolve, hex_to_mask, read_population_archive, write_population_archive
from .mdp import NestedPolarEnv
from .neural import PolicyValueNet, load_checkpoint, save_checkpoint

log = logging.getLogger("nestpolar")

REPORT_COLUMNS = ("K", "esn0_learned_db", "esn0_baseline_db", "delta_db", "status")
CALIBRATION_COLUMNS = ("K", "design_snr_db", "esn0_db", "status")


class Run:
    """A loaded config plus command-line overrides and the worker pool."""

    def __init__(self, cfg: ExperimentConfig, workers: int):
        self.cfg = cfg
        self.out = Path(cfg.output.directory)
        self.out.mkdir(parents=True, exist_ok=True)
        self.pool = ThreadPoolExecutor(max_workers=workers)

    def path(self, name: str) -> Path:
        return self.out / name

    def map(self, fn, items) -> list:
        return list(self.pool.map(fn, items))

    def close(self):
        self.pool.shutdown()

    def reward_spec(self, error_events: Optional[int] = None, max_trials: Optional[int] = None,
                    seed: Optional[int] = None) -> RewardSpec:
        cfg = self.cfg
        return RewardSpec(
            cfg.code.decoder, cfg.code.L,
            ChannelSpec(cfg.channel.esn0_db, cfg.channel.seed if seed is None else seed),
            target_error_events=error_events or cfg.evaluator.error_events,
            max_trials=max_trials or cfg.evaluator.max_trials)


def _bisect_row(c: Construction, spec: RewardSpec, target: float, bracket, tol_db: float):
    try:
        return find_esn0_at_bler(c, spec, target, bracket=bracket, tol_db=tol_db), "ok"
    except BracketError as exc:
        return float("nan"), f"bracket_failure: {exc}"


def dega_at_operating_point(n_bits: int, k: int, spec: RewardSpec, target: float,
                            bracket, tol_db: float, design_snr_db: Optional[float] = None,
                            max_iter: int = 3):
    """DE/GA code for ``(N, K)`` and the EsN0 where it reaches ``target`` BLER.

    With no fixed design SNR the code is redesigned at its own measured
    operating point until the frozen set repeats, and the best code seen
    is kept (redesigns can alternate between two masks).
    Returns ``(construction, design_snr_db, esn0_db, status)``.
    """
    design = spec.channel.esn0_db if design_snr_db is None else design_snr_db
    c = dega_construct(n_bits, k, design)
    esn0, status = _bisect_row(c, spec, target, bracket, tol_db)
    if design_snr_db is not None:
        return c, design, esn0, status
    seen = [(c, design, esn0, status)]
    for _ in range(max_iter):
        if status != "ok":
            break
        nxt = dega_construct(n_bits, k, esn0)
        if any(nxt == s[0] for s in seen):
            break
        design, c = esn0, nxt
        esn0, status = _bisect_row(c, spec, target, bracket, tol_db)
        seen.append((c, design, esn0, status))
    ok = [s for s in seen if s[3] == "ok"]
    return min(ok, key=lambda s: s[2]) if ok else seen[-1]


def calibrate(run: Run, ks: list) -> dict:
    """Per-K training EsN0: where the DE/GA code hits the calibration BLER."""
    cfg = run.cfg
    ev = cfg.evaluator
    spec = run.reward_spec(ev.calibration_error_events,
                           max(cfg.evaluator.max_trials, ev.calibration_error_events))
    bracket, tol = cfg.compare.bracket, cfg.compare.tol_db

    def one(k):
        return dega_at_operating_point(cfg.code.N, k, spec, ev.calibration_target_bler,
                                       bracket, tol, cfg.compare.dega_design_snr_db)

    rows = run.map(one, ks)
    table, dega = {}, {}
    with open(run.path("esn0_calibration.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CALIBRATION_COLUMNS)
        for k, (c, design, esn0, status) in zip(ks, rows):
            w.writerow([k, repr(float(design)), repr(float(esn0)), status])
            if status == "ok":
                table[k] = esn0
                dega[k] = c
    return table, dega


def build_reward(run: Run):
    """The environment reward plus DE/GA codes at each calibrated K."""
    cfg = run.cfg
    spec = run.reward_spec()
    schedule = cfg.schedule()
    esn0_by_k, dega = None, {}
    if cfg.evaluator.esn0_mode == "per_k_dega":
        ks = cfg.k_list(cfg.evaluator.reward_schedule)
        esn0_by_k, dega = calibrate(run, ks)
    return ScheduledReward(spec, RewardCache(), schedule, esn0_by_k), dega


def run_ga(run: Run, reward_fn: ScheduledReward, dega: dict, rng_seed: int) -> dict:
    cfg = run.cfg
    ks = cfg.k_list(cfg.ga.k_values)
    pops = {}
    for k in ks:
        rng = rng_stream(rng_seed, stream_id("ga", k))
        seeds = [dega[k]] if cfg.ga.seed_with_dega and k in dega else []
        pops[k] = ga_evolve(cfg.code.N, k, cfg.ga_config(), rng, reward_fn, seeds=seeds,
                            evaluate_many=lambda cs: run.map(reward_fn, cs))
        log.info("GA K=%d best fitness %.4f", k, pops[k].best[1])
    write_population_archive(run.path("ga_population.txt"), pops)
    return pops


def cmd_train(run: Run, args) -> int:
    cfg = run.cfg
    seed = cfg.channel.seed
    t0 = time.perf_counter()
    reward_fn, dega = build_reward(run)
    env = NestedPolarEnv(cfg.code.N, reward_fn)
    net = PolicyValueNet(cfg.code.N, cfg.network.hidden, rng=rng_stream(seed, stream_id("init")))
    rl_rng = rng_stream(seed, stream_id("ppo"))

    def progress(update, metrics, curve):
        if update % 10 == 0 and len(curve):
            log.info("update %d: episodes %d, last reward %.3f, cache %d",
                     update, len(curve), curve.episode_rewards[-1], len(reward_fn.cache))

    if cfg.mode == "integrated":
        pops = run_ga(run, reward_fn, dega, seed)

        def on_pretrained(pnet, examples):
            save_checkpoint(run.path("pretrained.npz"), pnet, extra={"examples": len(examples)})
            write_sequence(run.path("pretrained_sequence.txt"), greedy_sequence(pnet))

        net, curve, opt = train_integrated(
            env, net, cfg.ppo, rl_rng, populations=pops, pre_cfg=cfg.pretrain,
            pretrain_rng=rng_stream(seed, stream_id("pretrain")),
            on_pretrained=on_pretrained, callback=progress)
    else:
        net, curve, opt = train_rl(env, net, cfg.ppo, rl_rng, callback=progress)

    curve.write_csv(run.path("learning_curve.csv"))
    curve.write_timing_csv(run.path("timing.csv"))
    save_checkpoint(run.path("checkpoint.npz"), net, opt,
                    extra={"mode": cfg.mode, "timesteps": cfg.ppo.total_timesteps})
    write_sequence(run.path("sequence.txt"), greedy_sequence(net))
    summary = {"episodes": len(curve), "final_reward": curve.final(),
               "mean_reward": curve.area(), "cache_entries": len(reward_fn.cache),
               "simulations": reward_fn.cache.simulations, "trials": reward_fn.cache.trials,
               "wall_time_s": time.perf_counter() - t0}
    run.path("summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"trained {cfg.mode}: final reward {summary['final_reward']:.4f}, "
          f"sequence -> {run.path('sequence.txt')}")
    return 0


def cmd_ga(run: Run, args) -> int:
    reward_fn, dega = build_reward(run)
    pops = run_ga(run, reward_fn, dega, run.cfg.channel.seed)
    for k in sorted(pops):
        print(f"K={k} best fitness {pops[k].best[1]:.4f}")
    return 0


def compare_rows(run: Run, seq: NestedSequence) -> list:
    cfg = run.cfg
    cmp = cfg.compare
    spec = run.reward_spec(cmp.error_events, cmp.max_trials, seed=cmp.seed)
    ks = cfg.k_list(cmp.k_values)

    def one(k):
        learned = code_from_sequence(seq, k)
        e_l, s_l = _bisect_row(learned, spec, cmp.target_bler, cmp.bracket, cmp.tol_db)
        _, _, e_b, s_b = dega_at_operating_point(cfg.code.N, k, spec, cmp.target_bler,
                                                 cmp.bracket, cmp.tol_db, cmp.dega_design_snr_db)
        status = "ok" if s_l == s_b == "ok" else "; ".join(
            f"{who} {s}" for who, s in (("learned", s_l), ("baseline", s_b)) if s != "ok")
        return {"K": k, "esn0_learned_db": e_l, "esn0_baseline_db": e_b,
                "delta_db": e_b - e_l, "status": status}

    return sorted(run.map(one, ks), key=lambda r: r["K"])


def write_report(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({**r, **{c: repr(float(r[c])) for c in REPORT_COLUMNS[1:4]}})


def read_report(path) -> list:
    with open(path, newline="") as fh:
        return [{"K": int(r["K"]), **{c: float(r[c]) for c in REPORT_COLUMNS[1:4]},
                 "status": r["status"]} for r in csv.DictReader(fh)]


def cmd_compare(run: Run, args) -> int:
    seq = read_sequence(args.sequence)
    if seq.n_bits != run.cfg.code.N:
        raise ValueError(f"sequence has N={seq.n_bits}, config has N={run.cfg.code.N}")
    rows = compare_rows(run, seq)
    write_report(run.path("comparison.csv"), rows)
    with open(run.path("comparison_plot.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["K", "relative_esn0_db"])
        for r in rows:
            w.writerow([r["K"], repr(float(r["delta_db"]))])
    for r in rows:
        print(f"K={r['K']:4d} learned {r['esn0_learned_db']:7.3f} dB  baseline "
              f"{r['esn0_baseline_db']:7.3f} dB  delta {r['delta_db']:+.3f} dB  {r['status']}")
    return 0


def cmd_eval(run: Run, args) -> int:
    cfg = run.cfg
    if args.mask is not None:
        codes = [Construction(hex_to_mask(args.mask, cfg.code.N))]
    else:
        seq = read_sequence(args.sequence)
        ks = args.k or cfg.k_list(cfg.compare.k_values)
        codes = [code_from_sequence(seq, k) for k in ks]
    grid = args.esn0 if args.esn0 else cfg.compare.grid
    spec = run.reward_spec()
    rows = [row for rs in run.map(lambda c: bler_sweep(c, spec, grid), codes) for row in rs]
    write_sweep_csv(run.path("bler_sweep.csv"), rows)
    print(f"{len(rows)} rows -> {run.path('bler_sweep.csv')}")
    return 0


def cmd_export(run: Run, args) -> int:
    n = run.cfg.code.N
    if args.checkpoint is not None:
        net, _, _ = load_checkpoint(args.checkpoint)
        if net.n_bits != n:
            raise ValueError(f"checkpoint has N={net.n_bits}, config has N={n}")
        seq = greedy_sequence(net)
    else:
        snr = run.cfg.channel.esn0_db if args.dega is None else args.dega
        rel = dega_reliability(n, snr)
        write_reliability_csv(run.path("dega_reliability.csv"), rel)
        seq = sequence_from_reliability(rel)
    write_sequence(run.path(args.name), seq)
    print(f"sequence -> {run.path(args.name)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML experiment config")
    common.add_argument("--seed", type=int, help="override channel.seed")
    common.add_argument("--workers", type=int, help="worker threads (overrides config)")
    common.add_argument("--output", help="output directory (overrides config)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="nestpolar", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train a policy and export its sequence")
    sub.add_parser("ga", parents=[common], help="run the genetic search and write the archive")
    c = sub.add_parser("compare", parents=[common], help="relative EsN0 against DE/GA")
    c.add_argument("--sequence", required=True)
    c.add_argument("--baseline", choices=["dega"], default="dega")
    e = sub.add_parser("eval", parents=[common], help="BLER versus EsN0 sweep")
    g = e.add_mutually_exclusive_group(required=True)
    g.add_argument("--sequence")
    g.add_argument("--mask", help="frozen mask in hex (bit i = subchannel i)")
    e.add_argument("--k", type=int, nargs="+", help="information lengths (with --sequence)")
    e.add_argument("--esn0", type=float, nargs="+", help="EsN0 grid in dB")
    x = sub.add_parser("export-sequence", parents=[common], help="write a nested sequence")
    g = x.add_mutually_exclusive_group()
    g.add_argument("--checkpoint")
    g.add_argument("--dega", type=float, metavar="SNR_DB",
                   help="DE/GA reliability order at this design SNR (default channel.esn0_db)")
    x.add_argument("--name", default="sequence.txt")
    return p


COMMANDS = {"train": cmd_train, "ga": cmd_ga, "compare": cmd_compare, "eval": cmd_eval,
            "export-sequence": cmd_export}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            print("error: --seed must be a 64-bit unsigned integer", file=sys.stderr)
            return 2
        cfg.channel = replace(cfg.channel, seed=args.seed)
    if args.output is not None:
        cfg.output = replace(cfg.output, directory=args.output)
    workers = args.workers if args.workers is not None else cfg.workers
    if workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    run = Run(cfg, workers)
    run.path("config.yaml").write_text(cfg.dump())
    try:
        return COMMANDS[args.command](run, args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        run.close()


if __name__ == "__main__":
    sys.exit(main())
