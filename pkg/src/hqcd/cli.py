"""Command line entry point: ``hqcd simulate | detect | evaluate | influence``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, RunConfig
from .detector import OnlineDetector
from .evaluation import estimate_eadd, influence, score, write_scorecard_csv
from .smc2 import DegenerateCloudError, SMC2Engine
from .synth import simulate, summarize

log = logging.getLogger("hqcd")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hqcd", description="Hierarchical quickest change detection.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "simulate": "write a synthetic corpus and its true changepoints",
        "detect": "stream a corpus through the engine and detector",
        "evaluate": "score final declarations against the truth",
        "influence": "changepoint influence matrix from a run's checkpoint",
    }
    for name, text in helps.items():
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", type=Path, help="JSON run configuration")
        s.add_argument("--seed", type=int, help="override the configured seed")
        s.add_argument("--out", type=Path, help="output directory")
        if name == "detect":
            s.add_argument("--resume", type=Path, metavar="CHECKPOINT",
                           help="continue a run from a checkpoint")
    return p


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.out is not None:
        cfg.out = args.out
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        cfg.engine = replace(cfg.engine, seed=args.seed)
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {cfg.out}: {exc.strerror}") from exc
    return cfg.out


# --------------------------------------------------------------------------
# subcommands

def cmd_simulate(cfg: RunConfig, seed: int | None = None) -> int:
    spec = cfg.simulation_spec(seed)
    corpus = simulate(spec)
    out = _out_dir(cfg)
    io.write_series(out, corpus.series)
    io.write_truth(out / "truth.json", corpus.truth, corpus.series)
    print(summarize(corpus))
    return EXIT_OK


def _data_digest(series, ticks: int) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(series.targets[:, :ticks]).tobytes())
    h.update(np.ascontiguousarray(series.surrogates[:, :ticks]).tobytes())
    return h.hexdigest()


def cmd_detect(cfg: RunConfig, resume: Path | None = None) -> int:
    cfg.require("targets")
    if cfg.surrogates is not None:
        cfg.require("surrogates")
    series = io.read_series(cfg.targets, cfg.surrogates)
    names = series.source_names()
    budget = cfg.pfa_budget(series.n_targets, series.n_surrogates)
    out = _out_dir(cfg)
    decisions_path = out / "decisions.jsonl"
    ckpt_path = cfg.checkpoint or out / "checkpoint.npz"

    fresh = SMC2Engine(series.n_targets, series.n_surrogates, cfg.hyperpriors, cfg.engine, names,
                       _init=resume is None)
    if resume is not None:
        engine, detector, meta = io.load_checkpoint(resume)
        problems = []
        if engine.fingerprint() != fresh.fingerprint():
            problems.append("engine configuration or hyperpriors differ")
        if detector.budget.to_json() != budget.to_json():
            problems.append("PFA budget differs")
        if engine.tick > series.horizon or meta.get("data") != _data_digest(series, engine.tick):
            problems.append("input data does not match the checkpointed prefix")
        if problems:
            raise ConfigError(f"refusing to resume from {resume}: " + "; ".join(problems))
        kept = []
        if decisions_path.exists():
            kept = [ln for ln in decisions_path.read_text().splitlines()
                    if ln.strip() and json.loads(ln)["tick"] <= engine.tick]
        decisions_path.write_text("".join(ln + "\n" for ln in kept))
        log.info("resuming at tick %d", engine.tick)
    else:
        engine, detector = fresh, OnlineDetector(budget, names)
        decisions_path.write_text("")

    snap = None
    pending = []
    for t in range(engine.tick + 1, series.horizon + 1):
        snap = engine.step(*series.observation(t))
        pending.append(detector.update(snap))
        if t % cfg.checkpoint_every == 0 or t == series.horizon:
            io.append_decisions(decisions_path, pending, names)
            pending = []
            io.save_checkpoint(ckpt_path, engine, detector,
                               {"data": _data_digest(series, t), "tick": t})
    if snap is None:
        snap = engine.snapshot()

    declared = detector.declared()
    report = {
        "tick": engine.tick,
        "declared": dict(zip(names, declared)),
        "statistics": {n: float(v) for n, v in zip(names, snap.curves[:, -1])},
        "eadd_estimate": estimate_eadd(snap, declared),
        "rejuvenations": len(engine.rejuvenations),
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    fired = [f"{n}@{g}" for n, g in zip(names, declared) if g is not None]
    print(f"{len(fired)} of {len(names)} sources declared: " + (" ".join(fired) or "none"))
    return EXIT_OK


def _decisions_path(cfg: RunConfig) -> Path:
    path = cfg.decisions or cfg.out / "decisions.jsonl"
    if not Path(path).exists():
        raise io.DataError(f"decisions file {path} not found; run 'detect' first")
    return path


def cmd_evaluate(cfg: RunConfig) -> int:
    if cfg.truth is None:
        raise io.DataError("evaluate needs a truth file: set 'truth' in the config")
    truth = io.read_truth(cfg.truth)
    names, declared, _ = io.read_decisions(_decisions_path(cfg))
    if cfg.targets is not None and Path(cfg.targets).exists():
        horizon = io.read_series_csv(cfg.targets, integer=True)[1].shape[1]
    else:
        horizon = None
    try:
        card = score(declared, truth, names, horizon)
    except ValueError as exc:
        raise io.DataError(str(exc)) from exc
    out = _out_dir(cfg)
    write_scorecard_csv(card, out / "scorecard.csv")
    summary = card.summary()
    (out / "score.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for row in card.rows():
        flag = "FA" if row["false_alarm"] else ("miss" if row["missed"] else "")
        print(f"{row['source']:>8} truth={row['truth'] or '-':>4} declared={row['declared'] or '-':>4} "
              f"delay={row['delay'] if row['delay'] != '' else '-':>4} {flag}")
    return EXIT_OK


def cmd_influence(cfg: RunConfig) -> int:
    ckpt = cfg.checkpoint or cfg.out / "checkpoint.npz"
    if not Path(ckpt).exists():
        raise io.DataError(f"checkpoint {ckpt} not found; run 'detect' first")
    engine, _, _ = io.load_checkpoint(ckpt)
    if cfg.influence_from == "truth":
        if cfg.truth is None:
            raise io.DataError("influence_from='truth' needs a truth file")
        cps = list(io.read_truth(cfg.truth).to_json()["targets"])
    else:
        names, declared, _ = io.read_decisions(_decisions_path(cfg))
        cps = declared[:engine.n_targets]
    trace = np.asarray(engine.weight_trace)
    names = engine.names
    mat = influence(trace, cps, names[:engine.n_targets], names[:engine.n_inputs])
    out = _out_dir(cfg)
    mat.to_csv(out / "influence.csv")
    mat.to_svg(out / "influence.svg")
    print(f"influence matrix {mat.values.shape[0]}x{mat.values.shape[1]} written to {out}")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.seed)
        if args.command == "detect":
            return cmd_detect(cfg, args.resume)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        return cmd_influence(cfg)
    except ConfigError as exc:
        print(f"hqcd: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (io.DataError, DegenerateCloudError) as exc:
        print(f"hqcd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"hqcd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
