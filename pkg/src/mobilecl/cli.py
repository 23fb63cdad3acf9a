"""Command-line front end: ``train``, ``eval`` and ``compare``.

Exit codes: 0 success, 2 configuration error, 3 provider (language model /
cassette) error, 4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from . import __version__
from . import curriculum as cl
from .agent import EpisodeStats, PpoAgent
from .evaluation import EvalRow, eval_cap, evaluate_policy
from .llm import Cassette, ChatSession, HttpChatClient, LlmProvider, ProviderError
from .mdp import EncodingSpec
from .metrics import (
    COMPARE_COLUMNS,
    EVAL_COLUMNS,
    SUMMARY_COLUMNS,
    MetricsWriter,
    read_metrics,
    steps_to_threshold,
    write_csv,
)
from .ppo import ModelFileError, PpoConfig, load_model, load_model_metadata, save_model
from .sim import ConfigError, EnvConfig

log = logging.getLogger("mobilecl")

EXIT_OK, EXIT_CONFIG, EXIT_PROVIDER, EXIT_INTERNAL = 0, 2, 3, 4
MANIFEST_FORMAT = "mobilecl-run/1"
PROVIDERS = ("scripted", "llm", "record", "replay")
MODES = ("curriculum", "baseline")

RUN_CONFIG_SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "run_id": {"type": "string", "minLength": 1},
        "mode": {"enum": list(MODES)},
        "provider": {"enum": list(PROVIDERS)},
        "env": {"type": "object"},
        "ppo": {"type": "object"},
        "encoding": {"type": "object"},
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "output_dir": {"type": "string", "minLength": 1},
        "total_step_budget": {"type": "integer", "minimum": 1},
        "target_threshold": {"type": ["number", "null"]},
        "window": {"type": "integer", "minimum": 1},
        "curriculum": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "thresholds": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
                "budgets": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 4, "maxItems": 4},
                "slow_velocity": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2, "maxItems": 2},
            },
        },
        "max_adjustments": {"type": "integer", "minimum": 0},
        "fill_budget": {"type": "boolean"},
        "llm": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "endpoint": {"type": ["string", "null"]},
                "model": {"type": "string"},
                "temperature": {"type": "number", "minimum": 0},
                "cassette": {"type": ["string", "null"]},
            },
        },
    },
}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


@dataclass
class LlmSettings:
    endpoint: str | None = None
    model: str = "gpt-4"
    temperature: float = 0.2
    cassette: str | None = None


@dataclass
class RunConfig:
    mode: str = "curriculum"
    provider: str = "scripted"
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    encoding: EncodingSpec = field(default_factory=EncodingSpec)
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "runs"
    total_step_budget: int = 500_000
    target_threshold: float | None = None  # defaults to the final scripted threshold
    window: int = cl.DEFAULT_WINDOW
    curriculum: dict[str, Any] = field(default_factory=dict)
    max_adjustments: int = 8
    fill_budget: bool = False
    llm: LlmSettings = field(default_factory=LlmSettings)
    run_id: str | None = None

    def scripted_kwargs(self) -> dict[str, Any]:
        kw: dict[str, Any] = {"window": self.window}
        for k, v in self.curriculum.items():
            kw[k] = tuple(v)
        return kw

    def resolved_threshold(self) -> float:
        if self.target_threshold is not None:
            return float(self.target_threshold)
        return float(self.curriculum.get("thresholds", (1.8, 3.2, 0.5, 0.6))[3])

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.provider not in PROVIDERS:
            raise ConfigError(f"provider must be one of {PROVIDERS}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not self.encoding.fits(self.env.num_ues, self.env.num_bs):
            raise ConfigError(
                f"target scenario {self.env.num_ues}x{self.env.num_bs} exceeds the encoding "
                f"{self.encoding.m_max}x{self.encoding.n_max}"
            )
        if self.total_step_budget < self.ppo.rollout_len:
            raise ConfigError("total_step_budget is smaller than one rollout")
        if self.mode == "curriculum":
            if self.provider in ("replay", "record") and not self.llm.cassette:
                raise ConfigError(f"provider '{self.provider}' needs a cassette path (--cassette)")
            if self.provider in ("llm", "record") and not self.llm.endpoint:
                raise ConfigError(f"provider '{self.provider}' needs an endpoint (--llm-endpoint)")
            if self.provider == "scripted":
                try:
                    cl.scripted_curriculum(self.env, self.encoding, **self.scripted_kwargs())
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"scripted curriculum: {exc}") from exc
        if not math.isfinite(self.resolved_threshold()):
            raise ConfigError("target_threshold must be finite")

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "mode": self.mode,
            "provider": self.provider,
            "env": self.env.to_dict(),
            "ppo": self.ppo.to_dict(),
            "encoding": self.encoding.to_dict(),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "total_step_budget": self.total_step_budget,
            "target_threshold": self.resolved_threshold(),
            "window": self.window,
            "curriculum": {k: list(v) for k, v in self.curriculum.items()},
            "max_adjustments": self.max_adjustments,
            "fill_budget": self.fill_budget,
            "llm": dict(vars(self.llm)),
        }

    @classmethod
    def from_dict(cls, doc: Any) -> RunConfig:
        if not isinstance(doc, dict):
            raise ConfigError("run config must be a JSON object")
        if doc.get("format") == MANIFEST_FORMAT:
            # a run manifest: replay exactly that seed's configuration
            seed = doc.get("seed")
            doc = dict(doc.get("config", {}))
            doc["seeds"] = [seed]
        doc = {k: v for k, v in doc.items() if not (k == "run_id" and v is None)}
        errors = sorted(jsonschema.Draft7Validator(RUN_CONFIG_SCHEMA).iter_errors(doc), key=lambda e: str(list(e.path)))
        if errors:
            raise ConfigError("; ".join(f"{'/'.join(map(str, e.path)) or '$'}: {e.message}" for e in errors))
        try:
            enc_doc = dict(doc.get("encoding", {}))
            unknown = set(enc_doc) - {"m_max", "n_max", "sinr_norm_range_db"}
            if unknown:
                raise ConfigError(f"unknown encoding keys: {sorted(unknown)}")
            if "sinr_norm_range_db" in enc_doc:
                enc_doc["sinr_norm_range_db"] = tuple(enc_doc["sinr_norm_range_db"])
            rc = cls(
                mode=doc.get("mode", "curriculum"),
                provider=doc.get("provider", "scripted"),
                env=EnvConfig.from_dict(doc.get("env", {})),
                ppo=PpoConfig.from_dict(doc.get("ppo", {})),
                encoding=EncodingSpec(**enc_doc),
                seeds=list(doc.get("seeds", [0])),
                output_dir=doc.get("output_dir", "runs"),
                total_step_budget=doc.get("total_step_budget", 500_000),
                target_threshold=doc.get("target_threshold"),
                window=doc.get("window", cl.DEFAULT_WINDOW),
                curriculum=dict(doc.get("curriculum", {})),
                max_adjustments=doc.get("max_adjustments", 8),
                fill_budget=doc.get("fill_budget", False),
                llm=LlmSettings(**doc.get("llm", {})),
                run_id=doc.get("run_id"),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        rc.validate()
        return rc


def parse_range(text: str) -> tuple[int, int]:
    """``"6..10"`` -> (6, 10); a bare ``"7"`` -> (7, 7)."""
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            out = (int(lo), int(hi))
        else:
            out = (int(text), int(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO..HI, got {text!r}") from None
    if out[0] < 1 or out[0] > out[1]:
        raise argparse.ArgumentTypeError(f"invalid range {text!r}")
    return out


def parse_seeds(text: str) -> list[int]:
    try:
        if ".." in text:
            lo, hi = parse_range(text)
            return list(range(lo, hi + 1))
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated seeds or LO..HI, got {text!r}") from None


# ---------------------------------------------------------------- train


def make_provider(rc: RunConfig, cassette: Cassette | None = None) -> cl.CurriculumProvider:
    if rc.provider == "scripted":
        return cl.ScriptedProvider(**rc.scripted_kwargs())
    mode = {"llm": "live", "record": "record", "replay": "replay"}[rc.provider]
    client = None
    if mode in ("live", "record"):
        client = HttpChatClient(rc.llm.endpoint)
    if mode in ("record", "replay") and cassette is None:
        cassette = Cassette(rc.llm.cassette, mode)
    session = ChatSession(mode, client=client, cassette=cassette, model=rc.llm.model, temperature=rc.llm.temperature)
    return LlmProvider(session, rc.env, rc.encoding)


def run_id_for(rc: RunConfig, seed: int) -> str:
    base = rc.run_id or (rc.mode if rc.mode == "baseline" else f"curriculum-{rc.provider}")
    return f"{base}-s{seed}"


def train_seed(
    rc: RunConfig,
    seed: int,
    out_dir: Path,
    cassette: Cassette | None = None,
    provider: cl.CurriculumProvider | None = None,
) -> dict[str, Any]:
    """Train one seed and write its artifacts; returns the manifest."""
    out_dir.mkdir(parents=True, exist_ok=True)
    run_id = run_id_for(rc, seed)
    writer = MetricsWriter(run_id, seed)

    def on_episode(phase: str, ep: EpisodeStats, _total: int) -> None:
        writer.add(phase, ep.end_step, ep.reward, ep.mean_qoe, ep.connected_fraction, ep.dropouts)

    agent = PpoAgent(rc.encoding, rc.ppo, seed=seed)
    threshold = rc.resolved_threshold()
    result_doc: dict[str, Any]
    curriculum_doc: dict[str, Any] | None = None
    if rc.mode == "baseline":
        res = cl.train_baseline(
            agent, rc.env, rc.total_step_budget, seed=seed, threshold=threshold, window=rc.window, on_episode=on_episode
        )
        result_doc = {
            "status": "completed",
            "total_env_steps": res.total_env_steps,
            "steps_to_threshold": res.steps_to_threshold,
            "target_phase": "baseline",
        }
    else:
        provider = provider or make_provider(rc, cassette)
        curriculum = provider.generate(rc.env, rc.encoding)
        try:
            res = cl.run_curriculum(
                agent, curriculum, provider, rc.env, rc.encoding, seed=seed,
                total_step_budget=rc.total_step_budget, max_adjustments=rc.max_adjustments,
                fill_budget=rc.fill_budget, on_episode=on_episode,
            )
        except cl.CurriculumAborted as exc:
            writer.write(out_dir / "metrics.csv")
            raise ProviderError(str(exc)) from exc
        final = res.curriculum.stages[-1].name
        result_doc = {
            "status": res.status,
            "total_env_steps": res.total_env_steps,
            "steps_to_threshold": res.steps_to_pass(final),
            "target_phase": final,
            "passed_at": dict(res.history.passed_at),
            "transitions": [list(t) for t in res.transitions],
            "adjustments": res.adjustments,
        }
        curriculum_doc = {
            "provenance": res.curriculum.provenance,
            "stages": res.curriculum.to_dict()["stages"],
            "generated": curriculum.to_dict()["stages"],
            "visits": [
                {
                    "stage_index": v.stage_index,
                    "stage_name": v.stage_name,
                    "episodes": len(v.rewards),
                    "env_steps": v.env_steps,
                    "outcome": v.outcome,
                }
                for v in res.history.visits
            ],
        }
    if not agent.params.is_finite():
        raise FloatingPointError("trained parameters are not finite")
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": __version__,
        "run_id": run_id,
        "seed": seed,
        "config": rc.to_dict(),
        "result": result_doc,
    }
    writer.write(out_dir / "metrics.csv")
    save_model(
        agent.params,
        out_dir / "model.json",
        {"run_id": run_id, "seed": seed, "env": rc.env.to_dict(), "encoding": rc.encoding.to_dict()},
    )
    if curriculum_doc is not None:
        (out_dir / "curriculum.json").write_text(json.dumps(curriculum_doc, indent=2, sort_keys=True) + "\n")
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _train_worker(rc_doc: dict[str, Any], seed: int, out_dir: str) -> dict[str, Any]:
    return train_seed(RunConfig.from_dict(rc_doc), seed, Path(out_dir))


def cmd_train(args: argparse.Namespace) -> int:
    doc: dict[str, Any] = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}", EXIT_CONFIG) from exc
        if not isinstance(doc, dict):
            raise CliError("config must be a JSON object", EXIT_CONFIG)
    rc = RunConfig.from_dict(doc)
    if args.mode:
        rc.mode = args.mode
    if args.provider:
        rc.provider = args.provider
    if args.seeds is not None:
        rc.seeds = args.seeds
    if args.out:
        rc.output_dir = args.out
    if args.llm_endpoint:
        rc.llm.endpoint = args.llm_endpoint
    if args.cassette:
        rc.llm.cassette = args.cassette
    if args.budget:
        rc.total_step_budget = args.budget
    rc.validate()
    out = Path(rc.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc}", EXIT_CONFIG) from exc
    uses_cassette = rc.mode == "curriculum" and rc.provider in ("record", "replay")
    if args.workers > 1 and rc.provider == "record":
        raise CliError("record mode writes one cassette and cannot run seeds in parallel", EXIT_CONFIG)
    if args.workers > 1 and len(rc.seeds) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            futures = [pool.submit(_train_worker, rc.to_dict(), s, str(out / f"seed_{s}")) for s in rc.seeds]
            manifests = [f.result() for f in futures]
    else:
        cassette = Cassette(rc.llm.cassette, "record" if rc.provider == "record" else "replay") if uses_cassette else None
        manifests = [train_seed(rc, s, out / f"seed_{s}", cassette) for s in rc.seeds]
    for m in manifests:
        r = m["result"]
        print(f"{m['run_id']}: status={r['status']} env_steps={r['total_env_steps']} steps_to_threshold={r['steps_to_threshold']}")
    return EXIT_OK


# ---------------------------------------------------------------- eval


def cmd_eval(args: argparse.Namespace) -> int:
    model_path = Path(args.model)
    try:
        params = load_model(model_path)
        meta = load_model_metadata(model_path)
    except ModelFileError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    if args.config:
        try:
            env = EnvConfig.from_dict(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read scenario {args.config}: {exc}", EXIT_CONFIG) from exc
    else:
        env = EnvConfig.from_dict(meta.get("env", {}))
    enc_doc = dict(meta.get("encoding", {}))
    if "sinr_norm_range_db" in enc_doc:
        enc_doc["sinr_norm_range_db"] = tuple(enc_doc["sinr_norm_range_db"])
    encoding = EncodingSpec(**enc_doc)
    lo, hi = args.ues or (env.num_ues, env.num_ues)
    if hi > eval_cap(encoding):
        raise CliError(f"--ues upper bound {hi} exceeds the evaluation cap {eval_cap(encoding)}", EXIT_CONFIG)
    if args.episodes < 1:
        raise CliError("--episodes must be >= 1", EXIT_CONFIG)
    rows: list[EvalRow] = []
    for m in range(lo, hi + 1):
        row = evaluate_policy(
            params, env, encoding, m, args.episodes, seed=args.seed, bs_shuffle_seed=args.bs_shuffle_seed
        )
        rows.append(row)
        print(f"M={m}: mean_qoe={row.mean_qoe:.4f} (std {row.std_qoe:.4f}) connected={row.mean_connected_ues:.3f} dropouts={row.dropouts}")
    out = Path(args.out) if args.out else model_path.parent
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "eval.csv", EVAL_COLUMNS, (vars(r) for r in rows))
    return EXIT_OK


# ---------------------------------------------------------------- compare


@dataclass
class RunRecord:
    path: Path
    manifest: dict[str, Any]
    rows: list

    @property
    def mode(self) -> str:
        return self.manifest["config"]["mode"]

    @property
    def seed(self) -> int:
        return int(self.manifest["seed"])

    @property
    def target_phase(self) -> str:
        return self.manifest["result"]["target_phase"]


def _seed_dirs(path: Path) -> list[Path]:
    if (path / "manifest.json").exists():
        return [path]
    subs = sorted(p for p in path.glob("seed_*") if p.is_dir())
    return subs


def load_runs(path: Path) -> list[RunRecord]:
    dirs = _seed_dirs(path)
    if not dirs:
        raise CliError(f"{path}: no run manifest found", EXIT_CONFIG)
    runs = []
    for d in dirs:
        missing = [f for f in ("manifest.json", "metrics.csv") if not (d / f).exists()]
        if missing:
            raise CliError(f"{d}: missing {', '.join(missing)}", EXIT_CONFIG)
        try:
            manifest = json.loads((d / "manifest.json").read_text())
            rows = read_metrics(d / "metrics.csv")
        except (OSError, ValueError, KeyError) as exc:
            raise CliError(f"{d}: unreadable run ({exc})", EXIT_CONFIG) from exc
        runs.append(RunRecord(d, manifest, rows))
    return runs


def aligned_rows(run: RunRecord) -> list[dict[str, Any]]:
    """Per-episode rewards with ``aligned_step`` counted from the first
    target-phase episode's start, so a curriculum run's early stages show
    up as a delayed start on the shared axis."""
    offset = 0
    for r in run.rows:
        if r.phase == run.target_phase:
            break
        offset = r.env_step
    return [
        {
            "run_id": r.run_id, "mode": run.mode, "seed": r.seed, "phase": r.phase,
            "env_step": r.env_step, "aligned_step": r.env_step - offset, "mean_episode_reward": r.mean_episode_reward,
        }
        for r in run.rows
    ]


def compare_runs(groups: list[list[RunRecord]], threshold: float | None, window: int | None) -> tuple[list[dict], list[dict]]:
    """Returns (per-episode rows, per-seed summary rows with a mean row).

    With a baseline and a curriculum group, the baseline is ``a`` so that
    ``delta = steps_a - steps_b`` is baseline minus curriculum steps."""
    if len(groups) != 2:
        raise CliError("compare needs exactly two run directories", EXIT_CONFIG)
    a, b = groups
    if a and b and a[0].mode == "curriculum" and b[0].mode == "baseline":
        a, b = b, a
    detail = [row for g in (a, b) for run in g for row in aligned_rows(run)]
    by_seed_a = {r.seed: r for r in a}
    by_seed_b = {r.seed: r for r in b}
    seeds = sorted(set(by_seed_a) & set(by_seed_b))
    if not seeds:
        raise CliError("the two run directories share no seeds", EXIT_CONFIG)
    summary = []
    deltas, sa_all, sb_all = [], [], []
    for seed in seeds:
        ra, rb = by_seed_a[seed], by_seed_b[seed]
        thr = threshold if threshold is not None else float(ra.manifest["config"]["target_threshold"])
        w = window or int(ra.manifest["config"]["window"])
        sa = steps_to_threshold(ra.rows, ra.target_phase, thr, w)
        sb = steps_to_threshold(rb.rows, rb.target_phase, thr, w)
        delta = sa - sb if sa is not None and sb is not None else None
        if delta is not None:
            deltas.append(delta)
            sa_all.append(sa)
            sb_all.append(sb)
        summary.append({
            "seed": seed, "run_a": ra.manifest["run_id"], "run_b": rb.manifest["run_id"],
            "threshold": thr, "steps_a": sa, "steps_b": sb, "delta": delta,
        })
    summary.append({
        "seed": "mean", "run_a": a[0].mode, "run_b": b[0].mode, "threshold": summary[0]["threshold"],
        "steps_a": float(np.mean(sa_all)) if sa_all else None,
        "steps_b": float(np.mean(sb_all)) if sb_all else None,
        "delta": float(np.mean(deltas)) if deltas else None,
    })
    return detail, summary


def cmd_compare(args: argparse.Namespace) -> int:
    groups = [load_runs(Path(p)) for p in args.runs]
    detail, summary = compare_runs(groups, args.threshold, args.window)
    out = Path(args.out) if args.out else Path(args.runs[0]).parent
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "compare.csv", COMPARE_COLUMNS, detail)
    write_csv(out / "compare_summary.csv", SUMMARY_COLUMNS, summary)
    for row in summary:
        print(f"seed={row['seed']}: {row['run_a']}={row['steps_a']} {row['run_b']}={row['steps_b']} delta={row['delta']}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mobilecl", description="Curriculum-trained PPO for user association.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one run per seed")
    t.add_argument("--config", help="run config JSON (or a run manifest to reproduce)")
    t.add_argument("--mode", choices=MODES)
    t.add_argument("--provider", choices=PROVIDERS)
    seeds = t.add_mutually_exclusive_group()
    seeds.add_argument("--seed", type=int, dest="seed")
    seeds.add_argument("--seeds", type=parse_seeds, dest="seeds_list", help="e.g. 0,1,2 or 0..2")
    t.add_argument("--out", help="output directory (one seed_<k>/ subdirectory per seed)")
    t.add_argument("--llm-endpoint", dest="llm_endpoint", help="chat-completions base URL")
    t.add_argument("--cassette", help="cassette file for record/replay providers")
    t.add_argument("--budget", type=int, help="total env-step budget per seed")
    t.add_argument("--workers", type=int, default=1, help="train seeds in parallel processes")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="greedy evaluation over a range of UE counts")
    e.add_argument("--model", required=True, help="model.json from a training run")
    e.add_argument("--config", help="scenario JSON (defaults to the model's training scenario)")
    e.add_argument("--ues", type=parse_range, help="UE counts LO..HI")
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--bs-shuffle-seed", type=int, dest="bs_shuffle_seed", help="redraw BS positions from this seed")
    e.add_argument("--out", help="directory for eval.csv (defaults to the model's directory)")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="steps-to-threshold comparison of two runs")
    c.add_argument("runs", nargs="+", help="two run directories")
    c.add_argument("--threshold", type=float, help="target reward threshold (default: from the manifests)")
    c.add_argument("--window", type=int, help="episode window (default: from the manifests)")
    c.add_argument("--out", help="directory for compare.csv and compare_summary.csv")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "train":
        args.seeds = [args.seed] if args.seed is not None else args.seeds_list
    if args.command == "compare" and len(args.runs) < 2:
        print("error: compare needs exactly two run directories", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, cl.CurriculumValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (AssertionError, FloatingPointError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
