"""Command-line entry point: ``orderattack <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import statistics
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from .blackbox import SurrogateObjective
from .core import (AttackResult, BudgetExhausted, OrderAttackError, Perturbation, RankingList,
                   format_epsilon, mean_rank)
from .harness import (ExperimentConfig, load_dataset, run_kn_oa, run_sweep, sample_permutation,
                      sweep_table)
from .metrics import compute_src
from .oracle import (LocalOracle, RankingModel, RemoteOracle, load_db, rank, save_db, serve)
from .oracle.client import ProtocolError, TransportError
from .oracle.database import EmbeddingFileError
from .synthetic import gen_synthetic_db
from .whitebox import PGDOrderAttack

log = logging.getLogger("orderattack")

META_KEYS = ("description", "sweep")

EXIT_CONFIG = 2
EXIT_TRANSPORT = 3


class ConfigError(Exception):
    pass


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("orderattack.presets").iterdir()
                  if p.name.endswith(".json"))


def read_config(path=None, preset=None) -> dict:
    if path is not None and preset is not None:
        raise ConfigError("give either --config or --preset, not both")
    if preset is not None:
        if preset not in preset_names():
            raise ConfigError(f"unknown preset {preset!r}; available: {', '.join(preset_names())}")
        text = resources.files("orderattack.presets").joinpath(f"{preset}.json").read_text("utf-8")
    elif path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    else:
        return {}
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


def parse_overrides(pairs) -> dict:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def resolve_config(args, flag_values: dict) -> tuple[ExperimentConfig, dict]:
    """Preset/config file, then ``--set`` pairs, then explicit flags."""
    data = read_config(getattr(args, "config", None), getattr(args, "preset", None))
    sweep = data.pop("sweep", None)
    data.pop("description", None)
    data.update(parse_overrides(getattr(args, "set", None)))
    data.update({k: v for k, v in flag_values.items() if v is not None})
    try:
        cfg = ExperimentConfig.from_dict(data)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc).strip("'\"")) from None
    if sweep is not None:
        if not isinstance(sweep, dict):
            raise ConfigError("'sweep' must map config keys to lists of values")
        for key, values in sweep.items():
            if not isinstance(values, list) or not values:
                raise ConfigError(f"sweep values for {key!r} must be a non-empty list")
            try:
                for v in values:
                    cfg.with_overrides({key: v})
            except (KeyError, ValueError, TypeError) as exc:
                raise ConfigError(f"sweep {key}: {exc}") from None
    return cfg, sweep


def _write(text: str, output):
    if output is None or output == "-":
        sys.stdout.write(text)
    else:
        Path(output).parent.mkdir(parents=True, exist_ok=True)
        Path(output).write_text(text, encoding="utf-8")


def _load_query_file(path, dim):
    path = Path(path)
    q = np.load(path) if path.suffix == ".npy" else np.loadtxt(path, delimiter=None)
    q = np.asarray(q, dtype=np.float64).ravel()
    if dim is not None and q.size != dim:
        raise ConfigError(f"query file has {q.size} values, model expects {dim}")
    return q


def cmd_gen_data(args) -> int:
    db, model = gen_synthetic_db(args.classes, args.per_class, args.embed_dim, args.std,
                                 args.seed, args.center_scale, tuple(args.image_shape))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_db(db, out / "db.tsv")
    model.save(out / "model.npz")
    print(json.dumps({"db": str(out / "db.tsv"), "model": str(out / "model.npz"),
                      "entries": len(db), "embed_dim": db.dim, "input_dim": model.input_dim}))
    return 0


def cmd_serve(args) -> int:
    db = load_db(args.db)
    model = RankingModel.load(args.model)
    server = serve(db, model, args.host, args.port, visible_range=args.n,
                   per_client_limit=args.limit, background=True)
    print(f"serving {len(db)} entries on {server.url}/v1/query", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        server.server_close()
    return 0


def cmd_attack(args) -> int:
    flags = {"attack": args.optimizer, "epsilon": args.epsilon, "Q": args.q, "k": args.k,
             "N": args.n, "seed": args.seed}
    cfg, _ = resolve_config(args, flags)
    rng = np.random.default_rng(cfg.seed)
    if args.endpoint and cfg.attack == "pgd":
        raise ConfigError("the white-box attack needs a local model, not an endpoint")

    if args.db or args.model:
        if not (args.db and args.model):
            raise ConfigError("--db and --model must be given together")
        db, model = load_db(args.db), RankingModel.load(args.model)
    elif args.endpoint is None or args.query_file is None:
        db, model = load_dataset(cfg)
    else:
        db = model = None

    if args.query_file:
        q = _load_query_file(args.query_file, model.input_dim if model else None)
    elif db is not None:
        idx = args.query_index if args.query_index is not None else int(rng.integers(len(db)))
        if not 0 <= idx < len(db):
            raise ConfigError(f"query index {idx} out of range for {len(db)} entries")
        q = model.preimage(db.embeddings[idx])
    else:
        raise ConfigError("remote attacks need --query-file or a local --db/--model pair")

    if args.endpoint:
        probe = RemoteOracle(args.endpoint, token=args.token, top_k=cfg.N)
        clean = probe.query(q)
        oracle = RemoteOracle(args.endpoint, token=args.token, top_k=cfg.N, budget=cfg.Q)
    else:
        clean = rank(model, db, q, cfg.N)
        oracle = LocalOracle(model, db, cfg.N, budget=cfg.Q)
    if len(clean) < cfg.k:
        raise ConfigError(f"ranking has only {len(clean)} entries, fewer than k={cfg.k}")
    C = tuple(clean[:cfg.k])
    p = sample_permutation(rng, cfg.k, cfg.permutation)

    baseline = compute_src(C, p, clean)
    if cfg.attack == "pgd":
        est = PGDOrderAttack(epsilon=float(cfg.epsilon), eta=cfg.pgd_eta, steps=cfg.pgd_steps,
                             xi=cfg.xi, margin_gamma=cfg.margin_gamma,
                             qa_distractor_count=cfg.qa_distractors, quantize=cfg.quantize,
                             random_state=cfg.seed)
        est.fit(q, model=model, db=db, candidates=C, permutation=p, visible_range=cfg.N)
        result = est.result()
    elif cfg.attack == "none":
        mr = mean_rank(clean, C) if cfg.N is None else None
        result = AttackResult(Perturbation.zeros(q.size, float(cfg.epsilon)), baseline, mr, 0)
    else:
        est = cfg.optimizer_config(cfg.seed).build(float(cfg.epsilon))
        est.fit(q, objective=SurrogateObjective(oracle, C, p))
        result = est.result()
        if not args.endpoint and cfg.N is None:
            result.mean_rank = mean_rank(rank(model, db, q + est.perturbation_.delta, None), C)

    payload = {
        "config": cfg.to_dict(),
        "candidates": [str(c) for c in C],
        "permutation": list(p),
        "baseline_tau_s": baseline,
    }
    payload.update(result.to_dict(include_delta=args.include_delta))
    payload["epsilon"] = format_epsilon(cfg.epsilon)
    _write(json.dumps(payload, indent=2) + "\n", args.output)
    return 0


def cmd_experiment(args) -> int:
    flags = {"seed": args.seed, "jobs": args.jobs, "trials": args.trials}
    cfg, sweep = resolve_config(args, flags)
    prefix = Path(args.output)
    if sweep:
        results = run_sweep(cfg, sweep)
        for overrides, report in results:
            tag = "_".join(f"{k}-{str(v).replace('/', 'over')}" for k, v in overrides.items())
            report.write(prefix.parent / f"{prefix.name}_{tag}")
        table = sweep_table(results)
        (prefix.parent / f"{prefix.name}_table.txt").write_text(table, encoding="utf-8")
        summary = {"config": cfg.to_dict(), "sweep": sweep,
                   "results": [{"overrides": ov, "summary": rep.summary} for ov, rep in results]}
        prefix.with_suffix(".json").write_text(json.dumps(summary, indent=2) + "\n", "utf-8")
        sys.stdout.write(table)
    else:
        report = run_kn_oa(cfg)
        report.write(prefix)
        sys.stdout.write(report.to_text())
    return 0


def cmd_bench_src(args) -> int:
    rng = np.random.default_rng(args.seed)
    rows = []
    for k in args.k:
        if k < 2 or k > args.n:
            raise ConfigError(f"k={k} must lie in [2, N={args.n}]")
        ids = [f"c{i:04d}" for i in range(args.n)]
        C = ids[:k]
        p = rng.permutation(k)
        X = [ids[i] for i in rng.permutation(args.n)]
        X = RankingList(tuple(X))
        times = []
        for _ in range(args.repetitions):
            t0 = time.perf_counter_ns()
            compute_src(C, p, X)
            times.append(time.perf_counter_ns() - t0)
        rows.append((k, args.n, args.repetitions, statistics.median(times),
                     statistics.fmean(times)))
    out = sys.stdout
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(("k", "n", "repetitions", "median_ns", "mean_ns"))
    for k, n, reps, med, mean in rows:
        writer.writerow((k, n, reps, f"{med:.0f}", f"{mean:.0f}"))
    return 0


def cmd_validate(args) -> int:
    cfg, sweep = resolve_config(args, {})
    out = {"config": cfg.to_dict()}
    if sweep:
        out["sweep"] = sweep
    if args.db:
        db = load_db(args.db)
        out["db"] = {"entries": len(db), "embed_dim": db.dim}
        if args.model:
            model = RankingModel.load(args.model)
            if model.embed_dim != db.dim:
                raise ConfigError(f"model embeds into {model.embed_dim} dims, db has {db.dim}")
            out["model"] = {"input_dim": model.input_dim, "embed_dim": model.embed_dim}
    print(json.dumps(out, indent=2))
    return 0


def _add_config_args(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", help="bundled preset name")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orderattack", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic embedding database and model")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--std", type=float, default=0.1)
    p.add_argument("--center-scale", type=float, default=1.0)
    p.add_argument("--image-shape", type=int, nargs=3, default=(3, 32, 32))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("serve", help="serve a truncated-ranking HTTP API")
    p.add_argument("--db", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--n", type=int, default=50, help="visible range")
    p.add_argument("--limit", type=int, default=500, help="queries per token per day")
    p.add_argument("--seed", type=int, default=0, help="accepted for symmetry; serving is deterministic")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("attack", help="run one attack and print the result as JSON")
    _add_config_args(p)
    p.add_argument("--optimizer", choices=("none", "pgd", "rand", "beta", "pso", "nes", "spsa"))
    p.add_argument("--epsilon", help="budget, e.g. 4/255 or 0.0157")
    p.add_argument("--q", type=int, help="query budget")
    p.add_argument("--k", type=int)
    p.add_argument("--n", help="visible range (integer or inf)")
    p.add_argument("--endpoint", help="remote ranking server URL")
    p.add_argument("--token", help="client token (default: $ORDERATTACK_TOKEN)")
    p.add_argument("--db")
    p.add_argument("--model")
    p.add_argument("--query-index", type=int)
    p.add_argument("--query-file")
    p.add_argument("--include-delta", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--output")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("experiment", help="run the (k, N) protocol and write reports")
    _add_config_args(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--output", required=True, help="output path prefix")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("bench-src", help="time the correlation metric")
    p.add_argument("--k", type=int, nargs="+", default=[2, 5, 10, 25])
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--repetitions", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench_src)

    p = sub.add_parser("validate", help="resolve and check a config (and optionally data files)")
    _add_config_args(p)
    p.add_argument("--db")
    p.add_argument("--model")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, EmbeddingFileError) as exc:
        print(f"orderattack: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TransportError, ProtocolError, BudgetExhausted) as exc:
        print(f"orderattack: remote error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (OrderAttackError, ValueError, OSError) as exc:
        print(f"orderattack: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
