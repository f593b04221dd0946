"""Seeded multi-agent runs, metrics files, and summaries.

Run directory layout::

    <output_dir>/<name>/
        manifest.json               resolved config, code version, per-seed status
        seed_<s>/agent_<i>.csv      one row per evaluation (deterministic bytes)
        seed_<s>/pairs.csv          pairwise teammate KL per evaluation
        seed_<s>/timing.csv         wall-clock per evaluation (not deterministic)
        seed_<s>/agent_<i>.ltcrnet  final network checkpoint
"""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .agent import CategoricalAgent
from .config import ExperimentConfig
from .envs import BattleTeam, CartPoleEnv, SoloTeam, evaluate_team
from .errors import RunFailure
from .network import save_params
from .protocol import SharedMemory, pairwise_kl, run_round

log = logging.getLogger(__name__)

METRIC_FIELDS = ["frame", "agent_id", "eval_return", "c51_loss", "distill_loss", "teammate_kl", "epsilon"]


def fmt(x: float) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return format(float(x), ".10g")


def code_version() -> str:
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.rglob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def moving_average(series: Sequence[float], window: int) -> list[float]:
    """Trailing mean over the last ``window`` points (fewer at the head)."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        return []
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(idx - window, 0)
    return list((c[idx] - c[lo]) / (idx - lo))


def frames_to_threshold(frames: Sequence[int], smoothed: Sequence[float], threshold: float) -> float:
    """First frame at which the smoothed return reaches ``threshold``; inf if never."""
    for f, v in zip(frames, smoothed):
        if v >= threshold:
            return float(f)
    return math.inf


def _mean_finite(xs: Iterable[float]) -> float:
    v = [x for x in xs if not math.isnan(x)]
    return float(np.mean(v)) if v else math.nan


def _make_team(cfg: ExperimentConfig, seed: np.random.SeedSequence):
    if cfg.env.kind == "cartpole":
        return SoloTeam(CartPoleEnv, cfg.team_size, seed)
    return BattleTeam(cfg.spacebattle_config(), seed)


def run_seed(cfg: ExperimentConfig, seed: int, seed_dir: Path) -> None:
    """Train one team for ``cfg.total_frames`` frames, appending metrics as it goes."""
    seed_dir.mkdir(parents=True, exist_ok=True)
    agent_ss, env_ss, mem_ss, eval_ss = np.random.SeedSequence(seed).spawn(4)
    team = _make_team(cfg, env_ss)
    agent_cfg = cfg.agent_config()
    agents = [
        CategoricalAgent(i, agent_cfg, team.obs_dim, team.action_count, s)
        for i, s in enumerate(agent_ss.spawn(team.n_agents))
    ]
    shared = SharedMemory(cfg.protocol.memory_capacity, mem_ss)
    schedule = cfg.phase_schedule()
    eval_rng = np.random.default_rng(eval_ss)
    env_config = cfg.spacebattle_config() if cfg.env.kind == "spacebattle" else None
    pairs = list(itertools.combinations(range(len(agents)), 2))

    files = [open(seed_dir / f"agent_{a.agent_id}.csv", "w", newline="") for a in agents]
    pair_fh = open(seed_dir / "pairs.csv", "w", newline="")
    timing_fh = open(seed_dir / "timing.csv", "w", newline="")
    try:
        writers = [csv.writer(fh, lineterminator="\n") for fh in files]
        for w in writers:
            w.writerow(METRIC_FIELDS)
        pair_w = csv.writer(pair_fh, lineterminator="\n")
        pair_w.writerow(["frame"] + [f"kl_{i}_{j}" for i, j in pairs])
        timing_w = csv.writer(timing_fh, lineterminator="\n")
        timing_w.writerow(["frame", "wall_time"])
        start = time.perf_counter()

        probe = None
        c51: list[list[float]] = [[] for _ in agents]
        distill: list[list[float]] = [[] for _ in agents]
        round_index = 0
        while agents[0].frame < cfg.total_frames:
            report = run_round(
                agents,
                team,
                schedule,
                shared,
                round_index,
                subset_size=cfg.protocol.subset_size,
                upload_rate=cfg.protocol.upload_rate,
            )
            round_index += 1
            for i, a in enumerate(agents):
                c51[i].append(report.c51_loss[a.agent_id])
                distill[i].append(report.distill_loss[a.agent_id])
            if probe is None and len(shared) >= cfg.protocol.probe_size:
                probe = [f for f, _ in itertools.islice(shared.features, cfg.protocol.probe_size)]
            frame = agents[0].frame
            if frame % cfg.evaluation.interval:
                continue
            returns = evaluate_team(agents, cfg.env.kind, env_config, cfg.evaluation.episodes, eval_rng)
            kls = pairwise_kl(agents, probe) if probe and pairs else {}
            for i, a in enumerate(agents):
                mine = [v for (x, y), v in kls.items() if a.agent_id in (x, y)]
                writers[i].writerow(
                    [
                        frame,
                        a.agent_id,
                        fmt(returns[i]),
                        fmt(_mean_finite(c51[i])),
                        fmt(_mean_finite(distill[i])),
                        fmt(float(np.mean(mine)) if mine else math.nan),
                        fmt(a.epsilon),
                    ]
                )
                files[i].flush()
                c51[i].clear()
                distill[i].clear()
            pair_w.writerow([frame] + [fmt(kls.get(p, math.nan)) for p in pairs])
            pair_fh.flush()
            timing_w.writerow([frame, f"{time.perf_counter() - start:.3f}"])
            timing_fh.flush()
        for a in agents:
            save_params(a.params, seed_dir / f"agent_{a.agent_id}.ltcrnet")
        (seed_dir / "protocol.json").write_text(
            json.dumps(
                {
                    "rounds_committed": shared.round,
                    "features_evicted": shared.evicted,
                    "noops": len(shared.noops),
                    "c51_updates": {a.agent_id: a.c51_updates for a in agents},
                    "distill_updates": {a.agent_id: a.distill_updates for a in agents},
                },
                indent=2,
                sort_keys=True,
            )
        )
    finally:
        for fh in (*files, pair_fh, timing_fh):
            fh.close()


def _write_manifest(run_dir: Path, manifest: dict) -> None:
    tmp = run_dir / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    tmp.replace(run_dir / "manifest.json")


def _seed_worker(args) -> tuple[int, str | None]:
    cfg_dict, seed, seed_dir = args
    cfg = ExperimentConfig.model_validate(cfg_dict)
    try:
        run_seed(cfg, seed, Path(seed_dir))
    except Exception as exc:  # reported through the manifest
        log.exception("seed %d failed", seed)
        return seed, f"{type(exc).__name__}: {exc}"
    return seed, None


def run_experiment(cfg: ExperimentConfig, output_dir: str | Path | None = None) -> Path:
    """Run every seed of ``cfg``; returns the run directory.

    Raises `RunFailure` if any seed failed; completed seeds and partial metrics
    stay on disk and the manifest records which seeds are incomplete.
    """
    run_dir = Path(output_dir or cfg.output_dir) / cfg.name
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "name": cfg.name,
        "schedule": cfg.schedule_label,
        "config": cfg.model_dump(mode="json"),
        "code_version": code_version(),
        "seeds": {str(s): "incomplete" for s in cfg.seeds},
        "complete": False,
    }
    _write_manifest(run_dir, manifest)
    jobs = [(cfg.model_dump(mode="json"), s, str(run_dir / f"seed_{s}")) for s in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_seed_worker, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_seed_worker(job))
            manifest["seeds"][str(job[1])] = "complete" if results[-1][1] is None else "failed"
            _write_manifest(run_dir, manifest)
    failures = {s: err for s, err in results if err is not None}
    for s, err in results:
        manifest["seeds"][str(s)] = "complete" if err is None else "failed"
    manifest["errors"] = {str(s): e for s, e in failures.items()}
    manifest["complete"] = not failures
    _write_manifest(run_dir, manifest)
    if failures:
        raise RunFailure(f"{len(failures)} seed(s) failed: {failures}")
    return run_dir


# -- reading runs back -------------------------------------------------------


@dataclass
class AgentSeries:
    seed: int
    agent_id: int
    frames: list[int]
    returns: list[float]
    teammate_kl: list[float]
    c51_loss: list[float] = field(default_factory=list)
    distill_loss: list[float] = field(default_factory=list)


@dataclass
class RunData:
    path: Path
    name: str
    schedule: str
    eval_interval: int
    smoothing_window: int
    series: list[AgentSeries]
    skipped_rows: int = 0

    @property
    def window_points(self) -> int:
        return max(1, self.smoothing_window // self.eval_interval)


def _float(s: str) -> float:
    return float(s)


def read_metrics(path: Path) -> tuple[list[dict], int]:
    """Parse one agent CSV; malformed rows are skipped and counted."""
    rows, skipped = [], 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != METRIC_FIELDS:
            return [], 0 if header is None else 1
        for rec in reader:
            try:
                if len(rec) != len(METRIC_FIELDS):
                    raise ValueError
                row = dict(zip(METRIC_FIELDS, rec))
                rows.append(
                    {
                        "frame": int(row["frame"]),
                        "agent_id": int(row["agent_id"]),
                        **{k: _float(row[k]) for k in METRIC_FIELDS[2:]},
                    }
                )
            except ValueError:
                skipped += 1
    return rows, skipped


def load_run(run_dir: str | Path) -> RunData:
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    ev = manifest["config"]["evaluation"]
    data = RunData(run_dir, manifest["name"], manifest["schedule"], ev["interval"], ev["smoothing_window"], [])
    for seed_dir in sorted(run_dir.glob("seed_*"), key=lambda p: int(p.name.split("_")[1])):
        seed = int(seed_dir.name.split("_")[1])
        for f in sorted(seed_dir.glob("agent_*.csv"), key=lambda p: int(p.stem.split("_")[1])):
            rows, skipped = read_metrics(f)
            data.skipped_rows += skipped
            if not rows:
                continue
            data.series.append(
                AgentSeries(
                    seed,
                    rows[0]["agent_id"],
                    [r["frame"] for r in rows],
                    [r["eval_return"] for r in rows],
                    [r["teammate_kl"] for r in rows],
                    [r["c51_loss"] for r in rows],
                    [r["distill_loss"] for r in rows],
                )
            )
    return data


@dataclass
class ConditionSummary:
    condition: str
    runs: int
    average: float
    highest: float
    gain_average: float | None = None
    gain_highest: float | None = None
    median_frames_to_threshold: float | None = None
    note: str = ""


def gain(ltcr: float, baseline: float) -> float:
    """Relative improvement over the baseline, in percent."""
    return (ltcr - baseline) / abs(baseline) * 100.0


def summarize(runs: Sequence[RunData], threshold: float | None = None) -> list[ConditionSummary]:
    """Per-condition average and highest smoothed return, plus gain versus baseline.

    Each (seed, agent) series is smoothed with the run's window; its mean and
    max are taken, then averaged over all series of the condition.
    """
    by_condition: dict[str, list[tuple[RunData, AgentSeries]]] = {}
    for run in runs:
        for s in run.series:
            by_condition.setdefault(run.schedule, []).append((run, s))
    out = []
    for cond, items in by_condition.items():
        avgs, highs, ftts = [], [], []
        for run, s in items:
            sm = moving_average(s.returns, run.window_points)
            avgs.append(float(np.mean(sm)))
            highs.append(float(np.max(sm)))
            if threshold is not None:
                ftts.append(frames_to_threshold(s.frames, sm, threshold))
        out.append(
            ConditionSummary(
                cond,
                len(items),
                float(np.mean(avgs)),
                float(np.mean(highs)),
                median_frames_to_threshold=float(np.median(ftts)) if ftts else None,
            )
        )
    base = next((c for c in out if c.condition == "baseline"), None)
    for c in out:
        if c.condition == "baseline":
            continue
        if base is None:
            c.note = "no baseline run; gain omitted"
        elif base.average == 0 or base.highest == 0:
            c.note = "baseline score is zero; gain undefined"
        else:
            c.gain_average = gain(c.average, base.average)
            c.gain_highest = gain(c.highest, base.highest)
    return out


def format_summary(rows: Sequence[ConditionSummary]) -> str:
    def g(x):
        return "-" if x is None else f"{x:.0f}%"

    lines = [
        "| condition | series | average score | highest score | gain (avg) | gain (high) | median frames to threshold |",
        "|---|---|---|---|---|---|---|",
    ]
    for r in rows:
        ftt = "-" if r.median_frames_to_threshold is None else (
            "never" if math.isinf(r.median_frames_to_threshold) else f"{r.median_frames_to_threshold:.0f}"
        )
        lines.append(
            f"| {r.condition} | {r.runs} | {r.average:.2f} | {r.highest:.2f} | {g(r.gain_average)} | {g(r.gain_highest)} | {ftt} |"
        )
    notes = [f"- {r.condition}: {r.note}" for r in rows if r.note]
    return "\n".join(lines + ([""] + notes if notes else []))
