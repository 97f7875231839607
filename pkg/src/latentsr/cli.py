"""Command-line pipeline: gen-data -> pretrain -> train-rl -> evaluate.

Every command reads the same flat config (flags/ORL_SEED override the seed),
echoes the resolved settings to config_resolved.txt under --out, and refuses
to overwrite its own outputs unless --overwrite is passed. With a fixed seed
the whole four-command pipeline is byte-reproducible.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import RunConfig, render_config, resolve_config
from .diffusion import load_denoiser, make_schedule, save_denoiser, smoothed_tail_mean, train_denoiser
from .env import EnvConfig, SuperResEnv
from .errors import ConfigurationError, LatentsrError
from .ppo import ActorCritic, PpoConfig
from .report import compare, evaluate, write_deltas, write_metric_table, write_reward_curve
from .scenes import build_corpus, load_corpus, save_corpus

LOSS_SMOOTH_WINDOW = 100


def _env_config(cfg: RunConfig) -> EnvConfig:
    return EnvConfig(
        timesteps=cfg.timesteps,
        gamma=cfg.gamma,
        image_side=cfg.image_side,
        latent_side=cfg.latent_side,
        seed=cfg.seed,
        psnr_norm_db=cfg.psnr_norm_db,
        perceptual_norm=cfg.perceptual_norm,
    )


def _ppo_config(cfg: RunConfig) -> PpoConfig:
    return PpoConfig(
        learning_rate=cfg.learning_rate,
        gamma=cfg.gamma,
        gae_lambda=cfg.gae_lambda,
        clip=cfg.clip,
        value_coef=cfg.value_coef,
        entropy_coef=cfg.entropy_coef,
        update_epochs=cfg.update_epochs,
        batch_size=cfg.batch_size,
        train_epochs=cfg.train_epochs,
        steps_per_epoch=cfg.steps_per_epoch,
        seed=cfg.seed,
        policy_hidden=cfg.policy_hidden,
        value_hidden=cfg.value_hidden,
        log_std_init=cfg.log_std_init,
        stop_bias_init=cfg.stop_bias_init,
    )


def _guard_outputs(paths, overwrite: bool) -> None:
    existing = [p for p in paths if Path(p).exists()]
    if existing and not overwrite:
        raise ConfigurationError(
            f"refusing to overwrite {existing[0]}; pass --overwrite to replace outputs"
        )


def _echo_config(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_resolved.txt").write_text(render_config(cfg))


def _load_corpus_for(cfg: RunConfig, out: Path):
    manifest = out / "corpus" / "manifest.csv"
    if not manifest.exists():
        raise ConfigurationError(f"corpus manifest not found: {manifest}; run gen-data first")
    return load_corpus(manifest, cfg.image_side, cfg.degrade_factor, cfg.degrade_noise_sigma)


def _require_denoiser(out: Path):
    path = out / "denoiser.orlm"
    if not path.exists():
        raise ConfigurationError(f"denoiser checkpoint not found: {path}; run pretrain first")
    return load_denoiser(path)


def cmd_gen_data(cfg: RunConfig, out: Path, overwrite: bool) -> None:
    corpus_dir = out / "corpus"
    _guard_outputs([corpus_dir / "manifest.csv"], overwrite)
    corpus = build_corpus(
        cfg.scenes_per_category,
        cfg.seed,
        side=cfg.image_side,
        factor=cfg.degrade_factor,
        noise_sigma=cfg.degrade_noise_sigma,
    )
    manifest = save_corpus(corpus, corpus_dir)
    print(
        f"gen-data: wrote {len(corpus.pairs)} scene pairs "
        f"({len(corpus.train)} train / {len(corpus.test)} test) to {manifest}"
    )


def cmd_pretrain(cfg: RunConfig, out: Path, overwrite: bool) -> None:
    ckpt = out / "denoiser.orlm"
    loss_csv = out / "pretrain_loss.csv"
    _guard_outputs([ckpt, loss_csv], overwrite)
    corpus = _load_corpus_for(cfg, out)
    sched = make_schedule(cfg.timesteps, cfg.beta_min, cfg.beta_max)
    den, losses = train_denoiser(
        [(p.hr, p.lr) for p in corpus.train],
        sched,
        steps=cfg.pretrain_steps,
        batch_size=cfg.pretrain_batch,
        seed=cfg.seed,
        latent_side=cfg.latent_side,
        hidden=cfg.denoiser_hidden,
        learning_rate=cfg.pretrain_lr,
    )
    save_denoiser(den, ckpt)
    lines = ["step,mse,smoothed_mse"]
    for i, loss in enumerate(losses):
        smooth = smoothed_tail_mean(losses[: i + 1], LOSS_SMOOTH_WINDOW)
        lines.append(f"{i},{loss:.6f},{smooth:.6f}")
    loss_csv.write_text("\n".join(lines) + "\n")
    final = smoothed_tail_mean(losses, LOSS_SMOOTH_WINDOW) if losses else float("nan")
    print(f"pretrain: {len(losses)} steps, final smoothed mse {final:.4f}, wrote {ckpt}")


def cmd_train_rl(cfg: RunConfig, out: Path, overwrite: bool) -> None:
    policy_ckpt = out / "policy.orlm"
    curve_csv = out / "reward_curve.csv"
    _guard_outputs([policy_ckpt, curve_csv], overwrite)
    corpus = _load_corpus_for(cfg, out)
    den = _require_denoiser(out)
    sched = make_schedule(cfg.timesteps, cfg.beta_min, cfg.beta_max)
    env = SuperResEnv(den, sched, _env_config(cfg), scenes=corpus.train)
    from .ppo import train

    agent, curve = train(env, _ppo_config(cfg))
    agent.save(policy_ckpt)
    write_reward_curve(curve, curve_csv)
    if curve:
        print(
            f"train-rl: {len(curve)} epochs, mean reward {curve[0].mean_reward:.4f} -> "
            f"{curve[-1].mean_reward:.4f}, wrote {policy_ckpt}"
        )
    else:
        print(f"train-rl: 0 epochs (untrained policy), wrote {policy_ckpt}")


def cmd_evaluate(cfg: RunConfig, out: Path, overwrite: bool, policy_path) -> None:
    table_csv = out / "table2_analog.csv"
    deltas_csv = out / "deltas.csv"
    guarded = [table_csv] + ([deltas_csv] if policy_path else [])
    _guard_outputs(guarded, overwrite)
    corpus = _load_corpus_for(cfg, out)
    den = _require_denoiser(out)
    sched = make_schedule(cfg.timesteps, cfg.beta_min, cfg.beta_max)
    env_cfg = _env_config(cfg)
    baseline = evaluate(den, None, corpus.test, sched, env_cfg, cfg.seed)
    results = list(baseline)
    if policy_path:
        policy_file = Path(policy_path)
        if not policy_file.exists():
            raise ConfigurationError(f"policy checkpoint not found: {policy_file}")
        agent = ActorCritic.load(policy_file)
        rl = evaluate(den, agent, corpus.test, sched, env_cfg, cfg.seed)
        results += rl
        deltas = compare(baseline, rl)
        write_metric_table(results, table_csv)
        write_deltas(deltas, deltas_csv)
        print(
            f"evaluate: wrote {table_csv} and {deltas_csv} "
            f"(PSNR wins in {deltas.win_count}/{len(deltas.rows)} categories)"
        )
    else:
        write_metric_table(results, table_csv)
        print(f"evaluate: baseline only, wrote {table_csv}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentsr",
        description="Desk-scale latent-diffusion super-resolution with PPO-steered sampling.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    common.add_argument("--overwrite", action="store_true", help="allow replacing existing outputs")
    common.add_argument("--threads", type=int, help="worker cap (default 1; kept at 1 for bit-reproducible runs)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate the synthetic scene corpus")
    sub.add_parser("pretrain", parents=[common], help="train the latent denoiser")
    sub.add_parser("train-rl", parents=[common], help="train the PPO sampling policy")
    evaluate_p = sub.add_parser("evaluate", parents=[common], help="run the metric comparison")
    evaluate_p.add_argument("--policy", metavar="PATH", help="policy checkpoint for the steered mode")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.config, args.seed, args.threads)
        out = Path(args.out)
        _echo_config(cfg, out)
        if args.command == "gen-data":
            cmd_gen_data(cfg, out, args.overwrite)
        elif args.command == "pretrain":
            cmd_pretrain(cfg, out, args.overwrite)
        elif args.command == "train-rl":
            cmd_train_rl(cfg, out, args.overwrite)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, out, args.overwrite, args.policy)
    except LatentsrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
