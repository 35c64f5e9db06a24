"""Command line entry point: gen-data, train, predict, rollout, eval.

Options may also come from a ``key = value`` config file (``--config``);
flags given on the command line win. Relative output paths resolve under
``$CROSSDISP_OUT`` when it is set. Exit codes: 0 success, 1 invalid input,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .cloth.anchor import AnchorSpec, Regime
from .cloth.env import EvaluationPolicy, PseudoExpertPolicy, make_scene, run_episode
from .cloth.sim import SimulationError
from .dataset import DatasetError, DemoRecord, deserialize, make_training_set, serialize
from .demos import DEFAULT_COUNTS, InsufficientDemosError, Task, generate_demos
from .diffusion import sample
from .metrics import MetricRow, coverage_rmse, precision_rmse, rmse, success_rate, write_csv
from .model import ModelConfig
from .train import CheckpointError, TrainConfig, TrainingError, load_checkpoint, new_state, save_checkpoint, train
from .variants import VARIANTS

log = logging.getLogger("crossdisp")

OUT_ENV = "CROSSDISP_OUT"
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def read_config_file(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; keys may use dashes or underscores."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise UsageError(f"cannot read config file {path}: {e}") from None
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def out_path(p) -> Path:
    p = Path(p)
    root = os.environ.get(OUT_ENV)
    return p if p.is_absolute() or not root else Path(root) / p


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _resolved(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}


# ---------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    task = Task(args.task)
    count = args.count if args.count is not None else DEFAULT_COUNTS[task][args.regime]
    demos = generate_demos(task, args.regime, count, args.seed, num_anchor_points=args.num_anchor_points, max_attempts=args.max_attempts)
    out = out_path(args.out)
    serialize(demos, out, extra={"config": _resolved(args)})
    print(f"wrote {len(demos)} demos to {out}")
    return EXIT_OK


def _load_records(path) -> list[DemoRecord]:
    recs = deserialize(path)
    if not recs:
        raise DatasetError(f"dataset {path} has no records")
    return recs


def cmd_train(args) -> int:
    recs = _load_records(args.data)
    data = make_training_set(recs, args.num_points, args.num_anchor_points)
    out = out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.resume:
        state = load_checkpoint(args.resume)
    else:
        mcfg = ModelConfig(args.variant, args.depth, args.num_heads, args.hidden_size, args.encoder_width)
        tcfg = TrainConfig(
            learning_rate=args.learning_rate,
            warmup_steps=args.warmup_steps,
            weight_decay=args.weight_decay,
            epochs=args.epochs,
            max_steps=args.max_steps,
            batch_size=args.batch_size,
            augment_rotation=not args.no_augment,
            seed=args.seed,
        )
        state = new_state(mcfg, tcfg)
    _write_json(out / "config.json", {"args": _resolved(args), "model": state.model.cfg.to_dict(), "train": state.cfg.to_dict(), "schedule": state.schedule.to_dict()})
    loss_file = out / "loss.csv"
    mode = "a" if args.resume and loss_file.exists() else "w"
    with open(loss_file, mode) as f:
        if mode == "w":
            f.write("step,loss,lr\n")

        def on_step(step, loss, lr):
            f.write(f"{step},{loss!r},{lr!r}\n")
            if args.checkpoint_every and (step + 1) % args.checkpoint_every == 0:
                save_checkpoint(state, out / f"checkpoint_{step + 1:07d}.ckpt")

        train(state, data, on_step=on_step)
    save_checkpoint(state, out / "checkpoint.ckpt")
    print(f"trained {state.step} steps; checkpoint at {out / 'checkpoint.ckpt'}")
    return EXIT_OK


def _load_model(args):
    state = load_checkpoint(args.checkpoint)
    if getattr(args, "variant", None) and args.variant != state.model.cfg.variant:
        raise CheckpointError(f"checkpoint variant {state.model.cfg.variant} does not match requested {args.variant}")
    return state


def _pick(recs: list[DemoRecord], i: int) -> DemoRecord:
    if not 0 <= i < len(recs):
        raise UsageError(f"record {i} out of range for {len(recs)} records")
    return recs[i]


def cmd_predict(args) -> int:
    state = _load_model(args)
    rec = _pick(_load_records(args.data), args.record)
    preds = sample(state.model, rec.p_a, rec.p_b, state.schedule, args.seed, n_samples=args.n_samples)
    out = out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as f:
        np.save(f, preds.astype("<f8"), allow_pickle=False)
    _write_json(out.with_name(out.name + ".json"), {"args": _resolved(args), "shape": list(preds.shape)})
    print(f"wrote {preds.shape[0]} predictions of {preds.shape[1]} points to {out}")
    return EXIT_OK


def _episode(rec: DemoRecord, targets: np.ndarray | None, log_path=None):
    scene = make_scene(rec.cloth_spec, AnchorSpec(pose=rec.anchor_pose))
    policy = PseudoExpertPolicy(scene, rec.hole) if targets is None else EvaluationPolicy(targets, scene.gripper_indices)
    frames = [] if log_path else None
    res = run_episode(scene, policy, record=None if frames is None else (lambda s: frames.append(s.x.copy())))
    if log_path:
        p = out_path(log_path)
        p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "wb") as f:
            np.save(f, np.stack(frames).astype("<f8"), allow_pickle=False)
    return res


def cmd_rollout(args) -> int:
    rec = _pick(_load_records(args.data), args.record)
    if args.oracle:
        res = _episode(rec, None, args.episode_log)
    else:
        state = _load_model(args)
        pred = sample(state.model, rec.p_a, rec.p_b, state.schedule, args.seed)
        res = _episode(rec, pred, args.episode_log)
    summary = {"success": res.success, "centroid_ok": res.centroid_ok, "polygon_ok": res.polygon_ok}
    print(json.dumps(summary, sort_keys=True))
    if args.out:
        _write_json(out_path(args.out), dict(summary, args=_resolved(args)))
    return EXIT_OK


def evaluate(state, recs: list[DemoRecord], n_samples: int, seed: int, episodes: bool = True) -> dict[str, float]:
    """Success of the first sample's rollout plus RMSE, coverage and precision against the references."""
    gts, preds, by_cloth_refs, by_cloth_preds, single, results = [], [], {}, {}, [], []
    for i, rec in enumerate(recs):
        ps = sample(state.model, rec.p_a, rec.p_b, state.schedule, seed + i, n_samples=n_samples)
        gts.append(rec.p_a_goal)
        preds.append(list(ps))
        single.append(rmse(ps[0], rec.p_a_goal))
        by_cloth_refs.setdefault(rec.cloth_id, []).append(rec.p_a_goal)
        by_cloth_preds.setdefault(rec.cloth_id, []).extend(ps)
        if episodes:
            results.append(_episode(rec, ps[0]))
    out = {
        "rmse": float(np.mean(single)),
        "coverage_rmse": coverage_rmse(gts, preds),
        "precision_rmse": precision_rmse(by_cloth_refs, by_cloth_preds),
    }
    if episodes:
        out["success_rate"] = success_rate(results)
    return out


def cmd_eval(args) -> int:
    if args.data:
        recs = _load_records(args.data)[: args.trials]
    else:
        recs = generate_demos(args.task, args.regime, args.trials, args.seed)
    regime = args.regime
    rows = []
    if args.oracle:
        rate = success_rate(_episode(r, None) for r in recs)
        rows.append(MetricRow(regime, "oracle", "success_rate", rate, len(recs), args.seed))
    else:
        state = _load_model(args)
        res = evaluate(state, recs, args.n_samples, args.seed, episodes=not args.no_rollout)
        for k, v in res.items():
            rows.append(MetricRow(regime, state.model.cfg.variant, k, v, len(recs), args.seed))
    out = out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out)
    _write_json(out.with_name(out.name + ".json"), {"args": _resolved(args)})
    for r in rows:
        print(f"{r.regime},{r.variant},{r.metric},{r.value:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="crossdisp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    regimes = [r.value for r in Regime]

    g = sub.add_parser("gen-data", help="generate pseudo-expert demonstrations")
    g.add_argument("--task", choices=[t.value for t in Task], default="simple")
    g.add_argument("--regime", choices=regimes, default="train")
    g.add_argument("--count", type=int, help="number of demos (default from the task table)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--num-anchor-points", type=int, default=512)
    g.add_argument("--max-attempts", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--variant", choices=sorted(VARIANTS), default="CD")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, default=2000, help="passes over the demos (20000 for the full schedule)")
    t.add_argument("--max-steps", type=int, help="gradient steps; overrides --epochs")
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--learning-rate", type=float, default=1e-4)
    t.add_argument("--warmup-steps", type=int, default=100)
    t.add_argument("--weight-decay", type=float, default=1e-5)
    t.add_argument("--depth", type=int, default=5)
    t.add_argument("--num-heads", type=int, default=4)
    t.add_argument("--hidden-size", type=int, default=128)
    t.add_argument("--encoder-width", type=int, default=64)
    t.add_argument("--num-points", type=int, default=512)
    t.add_argument("--num-anchor-points", type=int, default=512)
    t.add_argument("--no-augment", action="store_true", help="disable anchor z-rotation augmentation")
    t.add_argument("--checkpoint-every", type=int, default=0)
    t.add_argument("--resume", help="checkpoint to continue from (its configs win)")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="sample goal clouds for one record")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--record", type=int, default=0)
    pr.add_argument("--n-samples", type=int, default=20)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--variant", choices=sorted(VARIANTS))
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    r = sub.add_parser("rollout", help="run one evaluation episode")
    r.add_argument("--data", required=True)
    r.add_argument("--record", type=int, default=0)
    r.add_argument("--checkpoint")
    r.add_argument("--oracle", action="store_true", help="use the pseudo-expert instead of a model")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--variant", choices=sorted(VARIANTS))
    r.add_argument("--episode-log", help="write per-step particle positions (.npy)")
    r.add_argument("--out")
    r.set_defaults(func=cmd_rollout)

    e = sub.add_parser("eval", help="success rate and RMSE metrics as CSV")
    e.add_argument("--checkpoint")
    e.add_argument("--oracle", action="store_true")
    e.add_argument("--data", help="held-out dataset; generated on the fly when omitted")
    e.add_argument("--task", choices=[t.value for t in Task], default="simple")
    e.add_argument("--regime", choices=regimes, default="unseen")
    e.add_argument("--trials", type=int, default=40)
    e.add_argument("--n-samples", type=int, default=20)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--variant", choices=sorted(VARIANTS))
    e.add_argument("--no-rollout", action="store_true", help="skip episodes, report RMSE metrics only")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)
    for cmd in (g, t, pr, r, e):
        cmd.add_argument("--config", help="key = value file supplying defaults for this command's options")
    return p


def _apply_config(parser, argv) -> argparse.Namespace:
    """Parse ``argv`` with defaults taken from ``--config`` (command-line flags still win)."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        subs = parser._subparsers._group_actions[0].choices
        cmd = next((a for a in argv if a in subs), None)
        if cmd is None:
            raise UsageError("missing command")
        sub = subs[cmd]
        actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for k, v in read_config_file(known.config).items():
            a = actions.get(k)
            if a is None or k in ("help", "config"):
                raise UsageError(f"unknown option {k!r} in {known.config} for {cmd}")
            if isinstance(a, argparse._StoreTrueAction):
                defaults[k] = v.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    defaults[k] = a.type(v) if a.type else v
                except ValueError:
                    raise UsageError(f"bad value {v!r} for {k} in {known.config}") from None
                if a.choices and defaults[k] not in a.choices:
                    raise UsageError(f"{k} must be one of {sorted(a.choices)}")
            a.required = False
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, sys.argv[1:] if argv is None else argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        if args.command in ("predict", "eval") and not args.checkpoint and not getattr(args, "oracle", False):
            raise UsageError(f"{args.command} needs --checkpoint" + (" or --oracle" if args.command == "eval" else ""))
        if args.command == "rollout" and not args.checkpoint and not args.oracle:
            raise UsageError("rollout needs --checkpoint or --oracle")
        return args.func(args)
    except (UsageError, DatasetError, CheckpointError, ValueError, IndexError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (TrainingError, SimulationError, InsufficientDemosError, RuntimeError, OSError) as e:
        print(f"failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
