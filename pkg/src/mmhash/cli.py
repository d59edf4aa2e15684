"""Command-line surface: synthesize, pairs, train, hash, retrieve,
evaluate, baseline, gradcheck.

Every subcommand accepts --config FILE holding `key = value` lines (keys
are the long flag names without the leading dashes); explicit flags win
over config entries. Commands with an --out-dir echo the config file
verbatim into that directory and always write the resolved settings to
run.cfg there, so a run can be reproduced from its output directory alone.
"""

from __future__ import annotations

import argparse
import os
import shutil
import sys

import numpy as np

from . import cmssh, data, hashing, model, retrieval, trainer
from .errors import MmhashError
from .loss import LossConfig
from .trainer import TrainConfig

DIRECTIONS = ("xy", "yx", "xx", "yy")


def _nonneg_float(text: str) -> float:
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return value


def _pos_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _pos_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {text}")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return value


def _unit_float(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in [0, 1], got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmhash",
        description="Multimodal similarity-preserving hashing: train coupled "
        "embedding networks, hash, retrieve and evaluate in Hamming space.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value file supplying flag defaults")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument(
            "--deterministic",
            action="store_true",
            help="insist on deterministic reductions (always on in this "
            "implementation; accepted for interface stability)",
        )
        return p

    p = add("synthesize", "generate a synthetic two-modality benchmark")
    p.add_argument("--classes", type=_pos_int, default=10)
    p.add_argument("--per-class", type=_pos_int, default=100)
    p.add_argument("--dim-x", type=_pos_int, default=32)
    p.add_argument("--dim-y", type=_pos_int, default=64)
    p.add_argument("--spread", type=_nonneg_float, default=0.2)
    p.add_argument("--consistency", type=_unit_float, default=1.0)
    p.add_argument("--geometry", choices=("clusters", "shells"), default="clusters")
    p.add_argument("--radius-step", type=_pos_float, default=1.0)
    p.add_argument("--shell-width", type=_nonneg_float, default=0.1)
    p.add_argument("--out-x", required=True)
    p.add_argument("--out-y", required=True)
    p.add_argument("--out-labels-x", required=True)
    p.add_argument("--out-labels-y", required=True)

    p = add("pairs", "sample the six supervision pair sets from labels")
    p.add_argument("--labels-x", required=True)
    p.add_argument("--labels-y", required=True)
    p.add_argument("--pos-x", type=_nonneg_int, default=1000)
    p.add_argument("--neg-x", type=_nonneg_int, default=1000)
    p.add_argument("--pos-y", type=_nonneg_int, default=1000)
    p.add_argument("--neg-y", type=_nonneg_int, default=1000)
    p.add_argument("--pos-xy", type=_nonneg_int, default=1000)
    p.add_argument("--neg-xy", type=_nonneg_int, default=1000)
    p.add_argument("--out", required=True)

    p = add("train", "train the coupled networks on features and pairs")
    _add_data_flags(p)
    p.add_argument("--pairs", required=True)
    p.add_argument("--bits", type=_pos_int, default=16)
    p.add_argument("--layers", type=int, choices=(1, 2), default=1)
    p.add_argument("--hidden", type=_pos_int, default=model.DEFAULT_HIDDEN)
    p.add_argument("--beta", type=_pos_float, default=1.0)
    p.add_argument("--mx", type=_nonneg_float, default=1.0, help="intra-modal margin for X")
    p.add_argument("--my", type=_nonneg_float, default=1.0, help="intra-modal margin for Y")
    p.add_argument("--mxy", type=_nonneg_float, default=3.0, help="cross-modal margin")
    p.add_argument("--alpha-x", type=_nonneg_float, default=0.1)
    p.add_argument("--alpha-y", type=_nonneg_float, default=0.3)
    p.add_argument("--optimizer", choices=trainer.OPTIMIZERS, default="conjugate_gradient")
    p.add_argument("--max-epochs", type=_pos_int, default=500)
    p.add_argument("--tolerance", type=_pos_float, default=1e-6)
    p.add_argument("--learning-rate", type=_pos_float, default=0.05)
    p.add_argument("--momentum", type=_unit_float, default=0.9)
    p.add_argument("--batch-size", type=_pos_int, default=128)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--model-name", default="model.mmhm")
    p.add_argument("--trace-name", default="trace.csv")

    p = add("hash", "hash features with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--modality", choices=("x", "y"), required=True)
    p.add_argument("--out", required=True)

    p = add("retrieve", "rank database codes for each query code")
    p.add_argument("--database", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=_pos_int, default=10)
    p.add_argument("--out", required=True)

    p = add("evaluate", "hash and score retrieval in all four directions")
    _add_data_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument(
        "--directions",
        default="xy,yx,xx,yy",
        help="comma-separated subset of xy,yx,xx,yy",
    )
    p.add_argument("--exclude-self", action="store_true")
    p.add_argument(
        "--unnormalized-ap",
        action="store_true",
        help="report the bare sum of P(r)*rel(r) instead of normalized AP",
    )
    p.add_argument("--out-dir", required=True)

    p = add("baseline", "fit the boosted linear baseline and evaluate it")
    _add_data_flags(p)
    p.add_argument("--pairs", required=True)
    p.add_argument("--bits", type=_pos_int, default=16)
    p.add_argument("--exclude-self", action="store_true")
    p.add_argument("--unnormalized-ap", action="store_true")
    p.add_argument("--directions", default="xy,yx,xx,yy")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--model-name", default="baseline.mmhm")

    p = add("gradcheck", "compare analytic and finite-difference gradients")
    _add_data_flags(p)
    p.add_argument("--pairs", required=True)
    p.add_argument("--bits", type=_pos_int, default=8)
    p.add_argument("--layers", type=int, choices=(1, 2), default=1)
    p.add_argument("--hidden", type=_pos_int, default=8)
    p.add_argument("--beta", type=_pos_float, default=1.0)
    p.add_argument("--mx", type=_nonneg_float, default=1.0)
    p.add_argument("--my", type=_nonneg_float, default=1.0)
    p.add_argument("--mxy", type=_nonneg_float, default=3.0)
    p.add_argument("--alpha-x", type=_nonneg_float, default=0.1)
    p.add_argument("--alpha-y", type=_nonneg_float, default=0.3)
    p.add_argument("--step", type=_pos_float, default=1e-6)
    p.add_argument("--threshold", type=_pos_float, default=1e-5)

    return parser


def _add_data_flags(p):
    p.add_argument("--features-x", required=True)
    p.add_argument("--features-y", required=True)
    p.add_argument("--labels-x", required=True)
    p.add_argument("--labels-y", required=True)


# ---------------------------------------------------------------------------
# pair-set file format (MMHP1)

PAIRS_MAGIC = "MMHP1"
_SET_NAMES = ("pos_x", "neg_x", "pos_y", "neg_y", "pos_xy", "neg_xy")


def save_pairsets(path, sets) -> None:
    """Text format: magic line, then one `SET <name> <count>` section per
    pair set with `idx_a idx_b weight` rows."""
    with open(path, "w") as fh:
        fh.write(PAIRS_MAGIC + "\n")
        for name in _SET_NAMES:
            batch = getattr(sets, name)
            fh.write(f"SET {name} {len(batch)}\n")
            for a, b, w in zip(batch.idx_a, batch.idx_b, batch.weight):
                fh.write("%d %d %.17g\n" % (a, b, w))


def load_pairsets(path):
    from .errors import FormatError
    from .loss import PairBatch, PairSets

    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != PAIRS_MAGIC:
        raise FormatError(f"expected '{PAIRS_MAGIC}' magic", path=path, line=1)
    batches = {}
    pos = 1
    while pos < len(lines):
        if not lines[pos].strip():
            pos += 1
            continue
        head = lines[pos].split()
        if len(head) != 3 or head[0] != "SET" or head[1] not in _SET_NAMES:
            raise FormatError("expected 'SET <name> <count>'", path=path, line=pos + 1)
        name = head[1]
        try:
            count = int(head[2])
        except ValueError:
            raise FormatError("non-integer pair count", path=path, line=pos + 1)
        pos += 1
        idx_a, idx_b, weight = [], [], []
        for r in range(count):
            if pos >= len(lines):
                raise FormatError("unexpected end of file", path=path, line=len(lines))
            parts = lines[pos].split()
            if len(parts) not in (2, 3):
                raise FormatError("expected 'idx_a idx_b [weight]'", path=path, line=pos + 1)
            try:
                idx_a.append(int(parts[0]))
                idx_b.append(int(parts[1]))
                weight.append(float(parts[2]) if len(parts) == 3 else 1.0)
            except ValueError:
                raise FormatError("malformed pair row", path=path, line=pos + 1)
            pos += 1
        positive = name.startswith("pos")
        batches[name] = PairBatch(
            np.array(idx_a, dtype=np.int64),
            np.array(idx_b, dtype=np.int64),
            np.full(count, positive, dtype=bool),
            np.array(weight),
        )
    missing = [n for n in _SET_NAMES if n not in batches]
    if missing:
        raise FormatError(f"missing pair sets: {', '.join(missing)}", path=path)
    return PairSets(**batches)


# ---------------------------------------------------------------------------
# config file expansion


def _expand_config(argv):
    """Splice `--config FILE` entries into the argv as long-form flags so
    explicit flags (parsed later) override them."""
    if "--config" not in argv:
        return argv
    at = argv.index("--config")
    if at + 1 >= len(argv):
        return argv  # let argparse report the missing value
    path = argv[at + 1]
    injected = []
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise MmhashError(f"config line without '=': {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            flag = "--" + key.replace("_", "-")
            if value.lower() in ("true", "yes", "on"):
                injected.append(flag)
            elif value.lower() in ("false", "no", "off"):
                continue
            else:
                injected.extend([flag, value])
    # Keep the subcommand first, then config-derived flags, then user flags.
    return argv[:1] + injected + argv[1:]


def _echo_run_config(args, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    if getattr(args, "config", None):
        shutil.copyfile(args.config, os.path.join(out_dir, "config.txt"))
    skip = {"command", "func", "config"}
    with open(os.path.join(out_dir, "run.cfg"), "w") as fh:
        for key in sorted(vars(args)):
            if key in skip:
                continue
            fh.write(f"{key.replace('_', '-')} = {getattr(args, key)}\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synthesize(args) -> int:
    if args.geometry == "clusters":
        fx, fy = data.synthesize(
            data.SyntheticSpec(
                n_classes=args.classes,
                samples_per_class=args.per_class,
                dim_x=args.dim_x,
                dim_y=args.dim_y,
                cluster_spread=args.spread,
                cross_modal_consistency=args.consistency,
                seed=args.seed,
            )
        )
    else:
        fx, fy = data.synthesize_shells(
            data.ShellSpec(
                n_classes=args.classes,
                samples_per_class=args.per_class,
                dim_x=args.dim_x,
                dim_y=args.dim_y,
                radius_step=args.radius_step,
                shell_width=args.shell_width,
                cross_modal_consistency=args.consistency,
                seed=args.seed,
            )
        )
    data.save(args.out_x, fx, labels_path=args.out_labels_x)
    data.save(args.out_y, fy, labels_path=args.out_labels_y)
    print(f"wrote {fx.n_samples} x {fx.dim} and {fy.n_samples} x {fy.dim} samples")
    return 0


def cmd_pairs(args) -> int:
    labels_x = data.load_labels(args.labels_x)
    labels_y = data.load_labels(args.labels_y)
    sets = data.build_pairsets(
        labels_x,
        labels_y,
        (args.pos_x, args.neg_x, args.pos_y, args.neg_y, args.pos_xy, args.neg_xy),
        seed=args.seed,
    )
    save_pairsets(args.out, sets)
    print(f"wrote {sets.total_pairs()} pairs to {args.out}")
    return 0


def _load_dataset(args):
    fx = data.load(args.features_x, labels_path=args.labels_x)
    fy = data.load(args.features_y, labels_path=args.labels_y)
    return fx, fy


def cmd_train(args) -> int:
    fx, fy = _load_dataset(args)
    sets = load_pairsets(args.pairs)
    loss_cfg = LossConfig(
        margin_x=args.mx,
        margin_y=args.my,
        margin_xy=args.mxy,
        alpha_x=args.alpha_x,
        alpha_y=args.alpha_y,
    )
    train_cfg = TrainConfig(
        optimizer=args.optimizer,
        max_epochs=args.max_epochs,
        learning_rate=args.learning_rate,
        momentum=args.momentum,
        batch_size=args.batch_size,
        tolerance=args.tolerance,
        seed=args.seed,
        deterministic=True,
    )
    start = model.init_coupled(
        fx.dim, fy.dim, args.bits,
        n_layers=args.layers, hidden=args.hidden, beta=args.beta, seed=args.seed,
    )
    trained, report = trainer.train(start, fx, fy, sets, loss_cfg, train_cfg)
    _echo_run_config(args, args.out_dir)
    model.save_model(os.path.join(args.out_dir, args.model_name), trained)
    trainer.write_trace_csv(os.path.join(args.out_dir, args.trace_name), report.loss_trace)
    final = report.loss_trace[-1] if report.loss_trace else float("nan")
    print(
        f"trained {report.epochs_run} epochs, final loss {final:.6g}, "
        f"converged={report.converged}"
    )
    return 0


def cmd_hash(args) -> int:
    m = model.load_model(args.model)
    features = data.load_features(args.features)
    net = m.net_x if args.modality == "x" else m.net_y
    emb, _ = model.forward_batch(net, features.values)
    hashing.save_codes(args.out, hashing.binarize_batch(emb))
    print(f"hashed {features.n_samples} samples into {m.m}-bit codes")
    return 0


def cmd_retrieve(args) -> int:
    database = hashing.load_codes(args.database)
    queries = hashing.load_codes(args.queries)
    index = retrieval.HashIndex(codes=database)
    with open(args.out, "w") as fh:
        fh.write("query_id,rank,db_id,distance\n")
        for qi in range(len(queries)):
            ranked = retrieval.query(index, queries.code(qi), args.k)
            for rank, (db_id, dist) in enumerate(ranked, start=1):
                fh.write(f"{qi},{rank},{db_id},{dist}\n")
    print(f"ranked {len(queries)} queries against {len(database)} codes")
    return 0


def _codes_for(m: model.CoupledModel, features):
    emb_x, _ = model.forward_batch(m.net_x, features[0].values)
    emb_y, _ = model.forward_batch(m.net_y, features[1].values)
    return hashing.binarize_batch(emb_x), hashing.binarize_batch(emb_y)


def _evaluate_directions(codes_x, codes_y, labels_x, labels_y, args):
    sides = {"x": (codes_x, labels_x), "y": (codes_y, labels_y)}
    directions = [d.strip() for d in args.directions.split(",") if d.strip()]
    bad = [d for d in directions if d not in DIRECTIONS]
    if bad:
        raise MmhashError(f"unknown directions: {', '.join(bad)}")
    results = {}
    for direction in directions:
        q_codes, q_labels = sides[direction[0]]
        db_codes, db_labels = sides[direction[1]]
        index = retrieval.HashIndex(codes=db_codes, labels=db_labels)
        results[direction] = retrieval.evaluate_retrieval(
            index,
            q_codes,
            q_labels,
            exclude_self=args.exclude_self,
            unnormalized=args.unnormalized_ap,
        )
    return results


def _print_and_write_reports(results, out_dir) -> None:
    print("direction,map,p_at_1,p_at_5,p_at_10")
    for direction, report in results.items():
        retrieval.write_report_csv(
            os.path.join(out_dir, f"eval_{direction}.csv"), report
        )
        print(
            "%s,%.6f,%.6f,%.6f,%.6f"
            % (
                direction,
                report.map,
                report.precision_at_k[1],
                report.precision_at_k[5],
                report.precision_at_k[10],
            )
        )


def cmd_evaluate(args) -> int:
    fx, fy = _load_dataset(args)
    m = model.load_model(args.model)
    codes_x, codes_y = _codes_for(m, (fx, fy))
    results = _evaluate_directions(codes_x, codes_y, fx.labels, fy.labels, args)
    _echo_run_config(args, args.out_dir)
    _print_and_write_reports(results, args.out_dir)
    return 0


def cmd_baseline(args) -> int:
    fx, fy = _load_dataset(args)
    sets = load_pairsets(args.pairs)
    fitted = cmssh.fit(fx, fy, sets.cross(), args.bits)
    _echo_run_config(args, args.out_dir)
    model.save_model(
        os.path.join(args.out_dir, args.model_name), fitted.to_coupled_model()
    )
    codes_x = cmssh.hash_batch(fitted, fx, "x")
    codes_y = cmssh.hash_batch(fitted, fy, "y")
    results = _evaluate_directions(codes_x, codes_y, fx.labels, fy.labels, args)
    _print_and_write_reports(results, args.out_dir)
    return 0


def cmd_gradcheck(args) -> int:
    fx, fy = _load_dataset(args)
    sets = load_pairsets(args.pairs)
    loss_cfg = LossConfig(
        margin_x=args.mx,
        margin_y=args.my,
        margin_xy=args.mxy,
        alpha_x=args.alpha_x,
        alpha_y=args.alpha_y,
    )
    start = model.init_coupled(
        fx.dim, fy.dim, args.bits,
        n_layers=args.layers, hidden=args.hidden, beta=args.beta, seed=args.seed,
    )
    err = trainer.gradient_check(start, fx, fy, sets, loss_cfg, step=args.step)
    print(f"max relative gradient error: {err:.3e}")
    if err >= args.threshold:
        print(f"FAIL: above threshold {args.threshold:g}", file=sys.stderr)
        return 1
    return 0


_COMMANDS = {
    "synthesize": cmd_synthesize,
    "pairs": cmd_pairs,
    "train": cmd_train,
    "hash": cmd_hash,
    "retrieve": cmd_retrieve,
    "evaluate": cmd_evaluate,
    "baseline": cmd_baseline,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _expand_config(argv)
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except MmhashError as exc:
        print(f"mmhash: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"mmhash: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
