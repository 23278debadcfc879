"""Single-binary operator CLI.

Every configuration key lives on ``RunConfig`` with a documented default;
values merge as: built-in default < COLDSTART_DATA_DIR env (data_dir only)
< --config file < explicit command-line flag. Unknown config-file keys are
rejected. Outputs land in a run directory named by timestamp + config hash.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class RunConfig:
    data_dir: str = "data/ml-1m"
    out_dir: str = "runs"
    seed: int = 0
    # evaluation split
    user_fraction: float = 0.75
    movie_fraction: float = 0.75
    # matrix factorization
    bpmf_latent_dim: int = 10
    bpmf_iterations: int = 200
    bpmf_burn_in: int = 50
    bpmf_obs_precision: float = 2.0
    bpmf_prior_scale: float = 2.0
    bpmf_init_noise: float = 0.1
    # interview model training
    model: str = "q_rating"
    questions: int = 3
    epochs: int = 500
    users_per_batch: int = 100
    gamma: float = 1.0
    epsilon_start: float = 1.0
    epsilon_decrement: float = 0.05
    epsilon_floor: float = 0.2
    dqn_learning_rate: float = 5e-4
    restart_learning_rate: float = 1e-5
    head_learning_rate: float = 1e-4
    retrain_patience: int = 50
    rating_pairs_per_interview: int = 32
    eval_stride: int = 1
    dqn_loss: str = "mse"
    reward_scope: str = "non_interviewed"
    rmse_average: str = "micro"
    # service
    port: int = 8080
    session_ttl: float = 3600.0
    cors_origin: str = "*"


_FIELD_HELP = {
    "data_dir": "directory holding ratings.dat and movies.dat",
    "out_dir": "directory that receives per-run output directories",
    "seed": "master seed for splits, sampling and training",
    "user_fraction": "fraction of users assigned to training",
    "movie_fraction": "fraction of movies assigned to the interview set",
    "bpmf_latent_dim": "latent dimension of the factor model",
    "bpmf_iterations": "Gibbs sweeps",
    "bpmf_burn_in": "Gibbs sweeps discarded before averaging",
    "bpmf_obs_precision": "rating noise precision",
    "bpmf_prior_scale": "Normal-Wishart scale on the mean's precision",
    "bpmf_init_noise": "stddev of the random factor initialization",
    "model": "q_embedding or q_rating",
    "questions": "interview length",
    "epochs": "training epochs",
    "users_per_batch": "users rolled out between parameter updates",
    "gamma": "reward discount",
    "epsilon_start": "initial exploration rate",
    "epsilon_decrement": "exploration decay per epoch",
    "epsilon_floor": "minimum exploration rate",
    "dqn_learning_rate": "q-network Adam learning rate",
    "restart_learning_rate": "q-network learning rate after a restart",
    "head_learning_rate": "head Adam learning rate",
    "retrain_patience": "non-improving epochs before restarting from best",
    "rating_pairs_per_interview": "sampled (movie, rating) pairs per head update",
    "eval_stride": "epochs between test-RMSE evaluations",
    "dqn_loss": "mse or softmax_ce",
    "reward_scope": "ratings pooled into the reward: non_interviewed or all_observed",
    "rmse_average": "micro (pooled) or macro (per-user mean) evaluation RMSE",
    "port": "HTTP port for serve",
    "session_ttl": "idle seconds before an interview session expires",
    "cors_origin": "origin allowed to call the API from a browser",
}


def _merge_config(args: argparse.Namespace) -> RunConfig:
    values = {f.name: f.default for f in dataclasses.fields(RunConfig)}
    env_dir = os.environ.get("COLDSTART_DATA_DIR")
    if env_dir:
        values["data_dir"] = env_dir
    if args.config:
        loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        unknown = set(loaded) - set(values)
        if unknown:
            raise SystemExit(f"unknown config keys: {sorted(unknown)}")
        values.update(loaded)
    for name in values:
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            values[name] = flag_value
    return RunConfig(**values)


def _config_hash(cfg: RunConfig) -> str:
    payload = json.dumps(dataclasses.asdict(cfg), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:8]


def _run_dir(cfg: RunConfig) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
    path = Path(cfg.out_dir) / f"{stamp}-{_config_hash(cfg)}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _require(path: str | Path, what: str, producer: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise SystemExit(f"{what} not found at {path}; produce it with `coldstart {producer}`")
    return path


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("configuration (defaults shown; all keys "
                                      "also accepted in the --config file)")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        group.add_argument(flag, type=type(f.default), default=None,
                           help=f"{_FIELD_HELP[f.name]} (default: {f.default})")


def _load_dataset_and_split(args, cfg):
    from . import data

    dataset = data.load_dataset(_require(args.dataset, "dataset cache", "ingest"))
    split = data.load_split(_require(args.split, "split file", "split"))
    return dataset, split


def cmd_ingest(args, cfg: RunConfig) -> int:
    from . import data

    ratings = Path(args.ratings or Path(cfg.data_dir) / "ratings.dat")
    movies = Path(args.movies or Path(cfg.data_dir) / "movies.dat")
    for p in (ratings, movies):
        if not p.exists():
            raise SystemExit(f"input file not found: {p} "
                             f"(set --data-dir or COLDSTART_DATA_DIR)")
    dataset = data.load_movielens(ratings, movies)
    out = _run_dir(cfg) / "dataset.npz"
    data.save_dataset(dataset, out)
    print(f"users={dataset.user_count} movies={dataset.movie_count} "
          f"ratings={len(dataset.ratings)} global_mean={dataset.global_mean:.6f}")
    print(f"wrote {out} and {out.with_suffix('.mapping.json')}")
    return 0


def cmd_split(args, cfg: RunConfig) -> int:
    from . import data

    dataset = data.load_dataset(_require(args.dataset, "dataset cache", "ingest"))
    split = data.make_split(dataset, cfg.user_fraction, cfg.movie_fraction, cfg.seed)
    out = _run_dir(cfg) / "split.json"
    data.save_split(split, out)
    print(f"train_users={len(split.train_users)} test_users={len(split.test_users)} "
          f"interview_movies={len(split.interview_movies)} "
          f"test_movies={len(split.test_movies)} seed={split.seed}")
    print(f"wrote {out}")
    return 0


def cmd_bpmf_train(args, cfg: RunConfig) -> int:
    from . import bpmf

    dataset, split = _load_dataset_and_split(args, cfg)
    config = bpmf.BpmfConfig(latent_dim=cfg.bpmf_latent_dim,
                             gibbs_iterations=cfg.bpmf_iterations,
                             burn_in=cfg.bpmf_burn_in,
                             obs_precision=cfg.bpmf_obs_precision,
                             prior_scale=cfg.bpmf_prior_scale,
                             init_noise=cfg.bpmf_init_noise, seed=cfg.seed)
    factors = bpmf.train_bpmf(dataset, config, train_users=split.train_users)
    out = _run_dir(cfg) / "factors.npz"
    bpmf.save_factors(factors, out, config)
    print(f"factor matrices {factors.user_factors.shape} x "
          f"{factors.movie_factors.shape}, user_scale={factors.user_scale:.4f}")
    print(f"wrote {out}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    from . import bpmf, training

    dataset, split = _load_dataset_and_split(args, cfg)
    factors = bpmf.load_factors(_require(args.factors, "factor checkpoint", "bpmf-train"))
    tcfg = training.TrainConfig(
        model=cfg.model, questions=cfg.questions, epochs=cfg.epochs,
        users_per_batch=cfg.users_per_batch, gamma=cfg.gamma,
        epsilon_start=cfg.epsilon_start, epsilon_decrement=cfg.epsilon_decrement,
        epsilon_floor=cfg.epsilon_floor, dqn_learning_rate=cfg.dqn_learning_rate,
        restart_learning_rate=cfg.restart_learning_rate,
        head_learning_rate=cfg.head_learning_rate,
        retrain_patience=cfg.retrain_patience,
        rating_pairs_per_interview=cfg.rating_pairs_per_interview,
        eval_stride=cfg.eval_stride, dqn_loss=cfg.dqn_loss,
        reward_scope=cfg.reward_scope, seed=cfg.seed)
    run_dir = _run_dir(cfg)
    bundle, metrics = training.train(
        tcfg, dataset, split, factors,
        checkpoint_dir=run_dir / "checkpoints", metrics_path=run_dir / "metrics.csv")
    from .bundle import save_bundle

    out = run_dir / "bundle.npz"
    save_bundle(bundle, out)
    print(f"best test RMSE {bundle.best_test_rmse:.4f} at epoch {bundle.epoch_of_best}")
    print(f"wrote {out} and {run_dir / 'metrics.csv'}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    from . import evaluation
    from .bundle import load_bundle

    dataset, split = _load_dataset_and_split(args, cfg)
    bundle = load_bundle(_require(args.bundle, "model bundle", "train"))
    sample_users = sorted(split.test_users)[:2]
    report = evaluation.evaluate(bundle, dataset, split, cfg.questions,
                                 average=cfg.rmse_average, sample_users=sample_users)
    text_path, json_path = evaluation.write_report(report, _run_dir(cfg))
    print(Path(text_path).read_text(encoding="utf-8"))
    print(f"wrote {text_path} and {json_path}")
    return 0


def cmd_interview(args, cfg: RunConfig) -> int:
    """Interactive interview loop on stdin/stdout."""
    from . import data
    from .bundle import load_bundle
    from .dqn import q_forward, select_action
    from .interview import asked_mask, initial_state, step

    dataset = data.load_dataset(_require(args.dataset, "dataset cache", "ingest"))
    bundle = load_bundle(_require(args.bundle, "model bundle", "train"))
    k = cfg.questions
    state = initial_state(bundle.action_space.size)
    answers = []
    print(f"Answer each question with 1-5, or 0 if you haven't seen it. ({k} questions)")
    for turn in range(1, k + 1):
        q = q_forward(bundle.dqn, state, training=False)
        slot = select_action(q, asked_mask(state), 0.0, rng=None)
        movie = bundle.action_space.movies[slot]
        title, genres = dataset.movie_titles[movie]
        while True:
            try:
                text = input(f"[{turn}/{k}] Do you like {title} ({', '.join(genres)})? ")
            except EOFError:
                print("\ninterview aborted")
                return 1
            try:
                rating = int(text.strip())
                if 0 <= rating <= 5:
                    break
            except ValueError:
                pass
            print("please answer 0..5")
        state = step(state, slot, rating)
        answers.append((movie, rating))

    seen = {m for m, r in answers if r >= 1}
    predict = bundle.predictor(state)
    scores = predict(np.arange(dataset.movie_count))
    order = np.lexsort((dataset.movie_ids, -scores))
    print(f"\nTop {args.top_n} recommendations:")
    shown = 0
    for movie in order:
        movie = int(movie)
        if movie in seen:
            continue
        title, genres = dataset.movie_titles[movie]
        print(f"  {scores[movie]:.2f}  {title} ({', '.join(genres)})")
        shown += 1
        if shown >= args.top_n:
            break
    return 0


def cmd_serve(args, cfg: RunConfig) -> int:
    import uvicorn

    from . import data
    from .bundle import load_bundle
    from .service import create_app

    dataset = data.load_dataset(_require(args.dataset, "dataset cache", "ingest"))
    bundle = load_bundle(_require(args.bundle, "model bundle", "train"))
    app = create_app(bundle, dataset, session_ttl=cfg.session_ttl,
                     journal_path=args.journal,
                     cors_origins=(cfg.cors_origin,))
    print(f"serving {bundle.model} bundle on port {cfg.port}")
    uvicorn.run(app, host="0.0.0.0", port=cfg.port, log_level="info")
    return 0


def cmd_report(args, cfg: RunConfig) -> int:
    from . import data, evaluation, training
    from .bundle import load_bundle

    rows = training.MetricsLog.load(_require(args.metrics, "metrics file", "train"))
    run_dir = _run_dir(cfg)
    series = run_dir / "rmse_series.csv"
    with open(series, "w", encoding="utf-8") as fh:
        fh.write("epoch,test_rmse\n")
        for row in rows:
            fh.write(f"{row.epoch},{row.test_rmse:.6f}\n")
    print(f"wrote {series} ({len(rows)} epochs, "
          f"best {min(r.test_rmse for r in rows):.4f})")

    if args.bundle and args.dataset and args.split:
        dataset, split = _load_dataset_and_split(args, cfg)
        bundle = load_bundle(_require(args.bundle, "model bundle", "train"))
        users = sorted(split.test_users)[: args.sample_users]
        interviews = evaluation.sample_interviews(bundle, dataset, split, users,
                                                  k=cfg.questions)
        diversity = evaluation.genre_diversity(interviews)
        out = run_dir / "sample_interviews.txt"
        with open(out, "w", encoding="utf-8") as fh:
            for i, rows_ in enumerate(interviews, start=1):
                fh.write(f"interview {i}\n")
                fh.write("turn | movie | genre | rating\n")
                for row in rows_:
                    fh.write(f"{row['turn']} | {row['movie']} | "
                             f"{row['genre']} | {row['rating']}\n")
                fh.write("\n")
            fh.write(f"genre diversity: {diversity:.3f}\n")
        print(f"wrote {out} (genre diversity {diversity:.3f})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coldstart",
        description="adaptive cold-start interview recommender pipeline")
    parser.add_argument("--config", help="JSON config file; flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        _add_config_flags(p)
        p.set_defaults(fn=fn)
        return p

    p = command("ingest", cmd_ingest, "parse raw ratings/movies into the dataset cache")
    p.add_argument("--ratings", help="ratings.dat path (default <data-dir>/ratings.dat)")
    p.add_argument("--movies", help="movies.dat path (default <data-dir>/movies.dat)")

    p = command("split", cmd_split, "draw the user/movie evaluation split")
    p.add_argument("--dataset", required=True, help="dataset cache from ingest")

    p = command("bpmf-train", cmd_bpmf_train, "fit the latent factor model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", required=True)

    p = command("train", cmd_train, "train an interview model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--factors", required=True, help="factor checkpoint from bpmf-train")

    p = command("eval", cmd_eval, "evaluate a trained bundle on the test protocol")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--bundle", required=True)

    p = command("interview", cmd_interview, "run a terminal interview")
    p.add_argument("--dataset", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--top-n", type=int, default=10)

    p = command("serve", cmd_serve, "serve live interviews over HTTP")
    p.add_argument("--dataset", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--journal", help="append-only session journal file")

    p = command("report", cmd_report, "export plot-ready series and sample interviews")
    p.add_argument("--metrics", required=True, help="metrics.csv from train")
    p.add_argument("--dataset")
    p.add_argument("--split")
    p.add_argument("--bundle")
    p.add_argument("--sample-users", type=int, default=2)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    cfg = _merge_config(args)
    try:
        return args.fn(args, cfg)
    except SystemExit:
        raise
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
