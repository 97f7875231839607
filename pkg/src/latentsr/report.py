"""Baseline vs policy-steered evaluation and CSV report emission.

``evaluate`` runs the sampler over the held-out split (zero actions when no
policy is given, deterministic mean actions otherwise), aggregates per-category
means with fsum (so aggregation is permutation-invariant), and the writers
emit fixed-order, 4-decimal CSVs that reproduce byte-for-byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

from .diffusion import Denoiser, NoiseSchedule, StepAction, ZERO_ACTION
from .env import EnvConfig, SuperResEnv
from .errors import ConfigurationError, InvalidInputError
from .ppo import EpochStats
from .rng import mix_seed
from .scenes import SceneCategory, ScenePair

_SALT_EVAL = 0xE7A1


@dataclass
class CategoryResult:
    mode: str  # "baseline" | "rl"
    category: SceneCategory
    n_images: int
    mean_psnr_db: float
    mean_ssim: float
    mean_lpips_proxy: float
    mean_steps_used: float


@dataclass
class DeltaRow:
    category: SceneCategory
    delta_psnr_db: float
    delta_ssim: float
    delta_lpips_proxy: float


@dataclass
class DeltaTable:
    rows: list[DeltaRow]
    win_count: int  # categories where the steered run improves PSNR


def evaluate(
    denoiser: Denoiser,
    policy,
    test_pairs: list[ScenePair],
    schedule: NoiseSchedule,
    config: EnvConfig,
    seed: int,
) -> list[CategoryResult]:
    """Per-category metric means over the test split for one mode.

    ``policy`` is an object with ``mean_action(features) -> StepAction`` (the
    evaluation is deterministic: actions are the policy means) or None for the
    zero-action baseline. Episode seeds depend only on (seed, pair index), so
    baseline and steered runs see matched noise.
    """
    if not test_pairs:
        raise ConfigurationError("test split is empty")
    env = SuperResEnv(denoiser, schedule, config)
    mode = "baseline" if policy is None else "rl"
    per_cat: dict[SceneCategory, list] = {}
    for idx, pair in enumerate(test_pairs):
        state = env.reset(pair, mix_seed(seed, _SALT_EVAL + idx))
        done = False
        while not done:
            action = ZERO_ACTION if policy is None else policy.mean_action(state.features)
            state, _, done = env.step(action)
        out = env.last_outcome
        per_cat.setdefault(pair.category, []).append(
            (out.breakdown.psnr_db, out.breakdown.ssim, out.breakdown.perceptual, out.steps_used)
        )
    results = []
    for category in SceneCategory:
        if category not in per_cat:
            continue
        rows = per_cat[category]
        n = len(rows)
        results.append(
            CategoryResult(
                mode=mode,
                category=category,
                n_images=n,
                mean_psnr_db=math.fsum(r[0] for r in rows) / n,
                mean_ssim=math.fsum(r[1] for r in rows) / n,
                mean_lpips_proxy=math.fsum(r[2] for r in rows) / n,
                mean_steps_used=math.fsum(r[3] for r in rows) / n,
            )
        )
    return results


def compare(baseline: list[CategoryResult], rl: list[CategoryResult]) -> DeltaTable:
    """Per-category (rl - baseline) deltas plus the PSNR win count."""
    base_by_cat = {r.category: r for r in baseline}
    rl_by_cat = {r.category: r for r in rl}
    if set(base_by_cat) != set(rl_by_cat):
        raise InvalidInputError("baseline and rl results cover different categories")
    rows = []
    wins = 0
    for category in SceneCategory:
        if category not in base_by_cat:
            continue
        b, r = base_by_cat[category], rl_by_cat[category]
        d_psnr = r.mean_psnr_db - b.mean_psnr_db
        rows.append(
            DeltaRow(
                category=category,
                delta_psnr_db=d_psnr,
                delta_ssim=r.mean_ssim - b.mean_ssim,
                delta_lpips_proxy=r.mean_lpips_proxy - b.mean_lpips_proxy,
            )
        )
        if d_psnr > 0.0:
            wins += 1
    return DeltaTable(rows=rows, win_count=wins)


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def _write_lines(path: Path, lines: list[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


TABLE_HEADER = "mode,category,psnr_db,ssim,lpips_proxy,steps_used"
DELTAS_HEADER = "category,delta_psnr_db,delta_ssim,delta_lpips_proxy"
CURVE_HEADER = "epoch,mean_reward,policy_loss,value_loss,clip_fraction"


def write_metric_table(results: list[CategoryResult], path) -> None:
    lines = [TABLE_HEADER]
    for r in results:
        lines.append(
            ",".join(
                [
                    r.mode,
                    r.category.value,
                    _fmt(r.mean_psnr_db),
                    _fmt(r.mean_ssim),
                    _fmt(r.mean_lpips_proxy),
                    _fmt(r.mean_steps_used),
                ]
            )
        )
    _write_lines(Path(path), lines)


def write_deltas(deltas: DeltaTable, path) -> None:
    lines = [DELTAS_HEADER]
    for row in deltas.rows:
        lines.append(
            ",".join(
                [
                    row.category.value,
                    _fmt(row.delta_psnr_db),
                    _fmt(row.delta_ssim),
                    _fmt(row.delta_lpips_proxy),
                ]
            )
        )
    _write_lines(Path(path), lines)


def write_reward_curve(curve: list[EpochStats], path) -> None:
    lines = [CURVE_HEADER]
    for s in curve:
        lines.append(
            ",".join(
                [
                    str(s.epoch),
                    _fmt(s.mean_reward),
                    _fmt(s.policy_loss),
                    _fmt(s.value_loss),
                    _fmt(s.clip_fraction),
                ]
            )
        )
    _write_lines(Path(path), lines)


def write_reports(results, deltas, curve, out_dir) -> list[Path]:
    """Emit whichever of the three report files have data; returns the paths.

    table2_analog.csv gets all result rows (baseline first, then rl);
    deltas.csv and reward_curve.csv are written when their inputs are not
    None (an empty curve still writes a header-only file).
    """
    out = Path(out_dir)
    written = []
    if results is not None:
        path = out / "table2_analog.csv"
        write_metric_table(results, path)
        written.append(path)
    if deltas is not None:
        path = out / "deltas.csv"
        write_deltas(deltas, path)
        written.append(path)
    if curve is not None:
        path = out / "reward_curve.csv"
        write_reward_curve(curve, path)
        written.append(path)
    return written
