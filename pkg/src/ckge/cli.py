"""Command-line entry point: ``ckge {run,generate,report,gradcheck}``."""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .continual.penalties import PenaltyConfigError
from .continual.runner import MaskSpec, PenaltySpec, ReplayConfig, RunSettings, StrategyConfig, run_continual
from .eval import build_report, compute_theta, markdown_summary, recheck_run_dir, write_report_json, write_theta_csv
from .eval.reports import ReportError
from .kgstore import KGError, load_snapshot_sequence, read_triples_tsv, save_snapshot_sequence
from .models.store import save_checkpoint
from .models.training import NumericError, ScoreModel
from .snapgen import KINDS, GenerationError, GrowthScenario, generate_snapshots, validate_sequence
from .toydata import bundled_dir

log = logging.getLogger("ckge")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ config

def _fields(cls):
    return {f.name for f in dataclasses.fields(cls)}


MODEL_KEYS = {"kind", "margin", "negatives", "lr", "optimizer", "loss"}
GENERATE_KEYS = {"base", "kind", "n_snapshots", "seed", "test_fraction", "valid_fraction"}
TOP_KEYS = {"dataset", "model", "training", "strategy", "seeds", "policies", "output"}
POLICY_CHOICES = ("legacy", "corrected")


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    for k in obj:
        if k not in allowed:
            raise ConfigError(f"unknown config key '{where + '.' if where else ''}{k}'")


@dataclasses.dataclass
class ExperimentConfig:
    dataset: object
    model: ScoreModel
    settings: RunSettings
    strategy: StrategyConfig
    seeds: list
    policies: tuple
    output: str
    raw: dict

    @property
    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a config mapping; every unknown key is an error naming its path."""
    _check_keys(raw, TOP_KEYS, "")
    if "dataset" not in raw:
        raise ConfigError("config key 'dataset' is required")
    ds = raw["dataset"]
    if isinstance(ds, dict):
        _check_keys(ds, {"generate"}, "dataset")
        _check_keys(ds.get("generate", {}), GENERATE_KEYS, "dataset.generate")
    elif not isinstance(ds, str):
        raise ConfigError("config key 'dataset' must be a path or a generate block")
    m = raw.get("model", {})
    _check_keys(m, MODEL_KEYS, "model")
    t = raw.get("training", {})
    _check_keys(t, _fields(RunSettings), "training")
    s = raw.get("strategy", {})
    _check_keys(s, _fields(StrategyConfig), "strategy")
    if s.get("replay") is not None:
        _check_keys(s["replay"], _fields(ReplayConfig), "strategy.replay")
    if s.get("mask") is not None:
        _check_keys(s["mask"], _fields(MaskSpec), "strategy.mask")
    for k, p in enumerate(s.get("penalties", [])):
        _check_keys(p, _fields(PenaltySpec), f"strategy.penalties[{k}]")
    try:
        model = ScoreModel(**m) if "kind" in m else ScoreModel("TransE-L2", **m)
        settings = RunSettings(**t)
        strategy = StrategyConfig(**s)
    except (TypeError, ValueError, PenaltyConfigError) as e:
        raise ConfigError(str(e)) from None
    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(x, int) and x >= 0 for x in seeds):
        raise ConfigError("config key 'seeds' must be a non-empty list of non-negative integers")
    pol = raw.get("policies", list(POLICY_CHOICES))
    if isinstance(pol, str):
        pol = list(POLICY_CHOICES) if pol == "both" else [pol]
    for p in pol:
        if p not in POLICY_CHOICES:
            raise ConfigError(f"config key 'policies': unknown policy {p!r}")
    return ExperimentConfig(ds, model, settings, strategy, list(seeds), tuple(pol), raw.get("output", "runs"),
                            raw)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return parse_config(raw)


def _resolve_data(ref: str, base_dir: Path) -> Path:
    if ref.startswith("bundled:"):
        return bundled_dir() / ref.split(":", 1)[1]
    p = Path(ref)
    return p if p.is_absolute() else base_dir / p


def load_dataset(cfg: ExperimentConfig, base_dir: Path):
    if isinstance(cfg.dataset, str):
        path = _resolve_data(cfg.dataset, base_dir)
        if not path.is_dir():
            raise ConfigError(f"dataset directory {path} not found")
        return load_snapshot_sequence(path)
    g = dict(cfg.dataset["generate"])
    base = _resolve_data(g.pop("base", "bundled:base.tsv"), base_dir)
    if not base.is_file():
        raise ConfigError(f"base triple file {base} not found")
    try:
        scenario = GrowthScenario(**g)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"dataset.generate: {e}") from None
    return generate_snapshots(read_triples_tsv(base), scenario)


# ------------------------------------------------------------------ commands

def run_one_seed(cfg: ExperimentConfig, seq, seed: int, out: Path, threads: int = 1) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    model = cfg.model

    def persist(i, emb):
        save_checkpoint(emb, out / f"ckpt_snapshot_{i}.bin",
                        {"snapshot": i, "seed": seed, "config_sha256": cfg.digest})

    art = run_continual(seq, model, cfg.strategy, seed, cfg.settings, on_checkpoint=persist)
    theta = compute_theta(model, art.checkpoints, seq, threads=threads)
    report = build_report(model, art.checkpoints, seq, theta)
    if art.degenerate_align_rows:
        report.notes.append(f"alignment skipped {art.degenerate_align_rows} near-zero row evaluations")
    for p in cfg.policies:
        write_theta_csv(theta, p, out / f"theta_{p}.csv")
    write_report_json(report, out / "report.json")
    (out / "summary.md").write_text(
        markdown_summary(theta.get("MRR", "legacy"), theta.get("MRR", "corrected"), report,
                         title=f"seed {seed}"))
    manifest = {
        "config_sha256": cfg.digest, "seed": seed, "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "n_snapshots": seq.n_snapshots, "model": model.kind, "config": cfg.raw,
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return report.to_dict()


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.policy:
        cfg.policies = POLICY_CHOICES if args.policy == "both" else (args.policy,)
    out_root = Path(args.out or cfg.output)
    seq = load_dataset(cfg, Path(args.config).resolve().parent)
    log.info("dataset: %d snapshots, %d entities, %d relations", seq.n_snapshots, seq.vocab.n_entities,
             seq.vocab.n_relations)
    for seed in cfg.seeds:
        out = out_root / f"seed_{seed}"
        try:
            rep = run_one_seed(cfg, seq, seed, out, args.threads)
        except NumericError as e:
            print(f"error: numeric failure for seed {seed}: {e} (checkpoints so far kept in {out})",
                  file=sys.stderr)
            return EXIT_NUMERIC
        agg = rep["aggregates"]
        print(f"seed {seed}: MRR w/o {agg['MRR_wo_final']:.4f}  MRR {agg['MRR_final']:.4f}  "
              f"CF {_fmt(rep['CF'])}  BWT {_fmt(rep['BWT'])}  -> {out}")
    return EXIT_OK


def _fmt(x):
    return "n/a" if x is None else f"{x:.4f}"


def cmd_generate(args) -> int:
    base = _resolve_data(args.base, Path.cwd())
    if not base.is_file():
        print(f"error: base triple file {base} not found", file=sys.stderr)
        return EXIT_USAGE
    scenario = GrowthScenario(args.kind, args.n_snapshots, args.seed, args.test_fraction, args.valid_fraction)
    seq = generate_snapshots(read_triples_tsv(base), scenario)
    rep = validate_sequence(seq, scenario)
    save_snapshot_sequence(seq, args.out)
    print(f"wrote {seq.n_snapshots} snapshots to {args.out}")
    print("new entities per snapshot: ", rep.delta_entities)
    print("new relations per snapshot:", rep.delta_relations)
    print("new triples per snapshot:  ", rep.delta_triples)
    for f in rep.failures:
        print(f"shape check failed: {f}", file=sys.stderr)
    return EXIT_OK if rep.passed else EXIT_CHECK


def _run_dirs(path: Path):
    if not path.is_dir():
        raise ReportError(f"run directory {path} not found")
    subs = sorted(p for p in path.iterdir() if p.is_dir() and p.name.startswith("seed_"))
    return subs or [path]


def cmd_report(args) -> int:
    status = EXIT_OK
    for d in _run_dirs(Path(args.run_dir)):
        mismatches, ctx = recheck_run_dir(d)
        rep = ctx["report"]
        print(f"# {d}")
        print(markdown_summary(ctx["legacy"], ctx["corrected"]))
        c = rep["classification"]
        print(f"BWT {_fmt(rep['BWT'])}  CF {_fmt(rep['CF'])}  Omega_new {_fmt(rep['Omega_new'])}")
        print(f"still-correct {c['still-correct']}  drift-forgotten {c['drift-forgotten']}  "
              f"interference-forgotten {c['interference-forgotten']}  both {c['both']}")
        for key, stored, got in mismatches:
            print(f"mismatch: {key} stored {stored!r} but theta CSV gives {got!r}", file=sys.stderr)
            status = EXIT_CHECK
    return status


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results = run_suite(args.n, args.seed)
    failed = [r for r in results if not r.passed]
    worst = max(r.max_rel_err for r in results)
    print(f"{len(results)} gradient checks, {len(failed)} failed, worst relative error {worst:.2e}")
    for r in failed:
        print(f"FAIL {r.name}: relative error {r.max_rel_err:.2e}", file=sys.stderr)
    return EXIT_CHECK if failed else EXIT_OK


# ------------------------------------------------------------------ entry

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ckge", description=__doc__)
    ap.add_argument("--version", action="version", version=f"ckge {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train and evaluate from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, help="override the config's seed list with one seed")
    r.add_argument("--out", help="override the config's output directory")
    r.add_argument("--policy", choices=("legacy", "corrected", "both"))
    r.add_argument("--threads", type=int, default=1, help="parallel evaluation of theta cells")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("generate", help="cut a base triple file into a snapshot sequence")
    g.add_argument("--base", default="bundled:base.tsv", help="TSV triple file, or bundled:base.tsv")
    g.add_argument("--kind", choices=KINDS, required=True)
    g.add_argument("--n-snapshots", type=int, default=5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--test-fraction", type=float, default=0.1)
    g.add_argument("--valid-fraction", type=float, default=0.1)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    p = sub.add_parser("report", help="print tables and re-verify stored forgetting metrics")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)

    c = sub.add_parser("gradcheck", help="finite-difference check of every analytic gradient")
    c.add_argument("--n", type=int, default=15, help="instances per model/loss or penalty")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)
    return ap


def _setup_logging():
    level = os.environ.get("CKGE_LOG", "error").lower()
    if level not in LOG_LEVELS:
        print(f"warning: CKGE_LOG={level!r} not in {sorted(LOG_LEVELS)}, using 'error'", file=sys.stderr)
        level = "error"
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (GenerationError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ReportError, KGError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
