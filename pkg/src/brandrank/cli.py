"""Command-line entry point: ``brandrank <subcommand> [flags]``.

Exit status is 0 on success, 1 on a usage error and 2 when the data, a file
or a contract check is at fault. Diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
               "VECLIB_MAXIMUM_THREADS", "NUMEXPR_NUM_THREADS")

SYNTH_HELP = """\
outputs (in --data):
  items.csv          item_id,brand_id,category_id,price
  events.csv         user_id,item_id,event_type,timestamp,amount
                     event_type in search, impression, click, add_to_cart, purchase;
                     amount is nonzero only for purchases
  actions.csv        user_id,brand_id,action_type,timestamp   (action_type click|purchase)
  truth.csv          user_id,brand_id,score   (static planted preference)
  synth_config.json  every generator setting, including the seed
"""

FEATURIZE_HELP = """\
inputs (in --data unless given explicitly):
  items.csv    item_id,brand_id,category_id,price
  events.csv   user_id,item_id,event_type,timestamp,amount
  actions.csv  optional; brands that appear only here get all-zero vectors
output:
  features.csv brand_id,L1_ctr,L1_cvr,L1_gmv,L1_atip,L1_search,L1_click,L1_cart,L1_txn,
               L2_ctr,...,L7_txn  (57 columns; values min-max normalized after log1p)
"""

PREPARE_HELP = """\
input:
  actions.csv  user_id,brand_id,action_type,timestamp
outputs (in --data unless --out is given):
  train.jsonl, test.jsonl  one JSON object per line:
      {"history": [[brand_id, action_type, delta_t], ... 10 steps],
       "query_brand": str, "query_time": float, "label": 0|1, "user_id": str}
      delta_t is in seconds; the last step's interval runs to query_time.
      Every positive is paired with one negative (random other brand).
      The test set holds each user's last window.
  vocab.csv  brand_id,index   (dense index 0..N-1)
"""

TRAIN_HELP = """\
inputs (in --data): train.jsonl, vocab.csv, features.csv
output (--out, default <data>/checkpoint.json): UTF-8 JSON with
  format, version, model_config, train_config, vocab_hash, trace (per-epoch
  loss and training AUC), checksum, and params / accumulators as records
  {"name", "shape", "values"} with row-major values at 17 significant digits.
"""

EVAL_HELP = """\
inputs: --checkpoint, and in --data: test.jsonl (or --split), vocab.csv, features.csv
output (--out, optional; a table always goes to stdout): CSV with header
  variant,auc,f1,n,n_pos,threshold,config_hash
The data vocabulary must match the checkpoint's vocabulary hash.
"""

ABLATE_HELP = """\
inputs (in --data): train.jsonl, test.jsonl, vocab.csv, features.csv
output (--out, default <data>/ablation.csv): CSV with header
  variant,auc,f1,n,n_pos,threshold,config_hash
one row each for attn3m, no_mod1, no_mod2, no_mod3 (plus gru and attn with --compare).
"""

GRADCHECK_HELP = """\
Checks analytic gradients against central differences for the GRU baseline and
all eight modification combinations (hidden 8, input 6, 4 steps, 5 instances).
output: one line per variant with its max relative error; exit 2 if any exceeds --tol.
"""


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _mods(text: str) -> tuple[int, ...]:
    if text.strip().lower() in ("", "none"):
        return ()
    try:
        mods = tuple(sorted({int(t) for t in text.split(",")}))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma list drawn from 1,2,3; got {text!r}")
    if not set(mods) <= {1, 2, 3}:
        raise argparse.ArgumentTypeError(f"modifications must be among 1, 2, 3; got {text!r}")
    return mods


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=("gru", "attn", "attn3m"), default="attn3m")
    p.add_argument("--mods", type=_mods, default=None,
                   help="comma list of modifications to enable, e.g. 1,3 or none "
                        "(default: all for attn3m, none otherwise)")
    p.add_argument("--hidden", type=int, default=256, help="hidden size (default 256)")
    p.add_argument("--query-attention", action="store_true",
                   help="let the query brand enter the attention scores")


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float, default=0.01, help="AdaGrad learning rate (default 0.01)")
    p.add_argument("--w", type=float, default=0.5,
                   help="weight on the negative-class loss, in (0, 1] (default 0.5)")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=64)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="brandrank", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=1,
                        help="cap on BLAS worker threads (default 1, fully deterministic)")
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset", epilog=SYNTH_HELP,
                       formatter_class=fmt)
    p.add_argument("--data", required=True, type=Path, help="output directory")
    p.add_argument("--preset", default="default")
    p.add_argument("--users", type=int)
    p.add_argument("--brands", type=int)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("featurize", help="build brand feature vectors", epilog=FEATURIZE_HELP,
                       formatter_class=fmt)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--items", type=Path)
    p.add_argument("--events", type=Path)
    p.add_argument("--actions", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--allow-small-categories", action="store_true",
                   help="accept categories with fewer than 7 items")

    p = sub.add_parser("prepare", help="window, sample negatives, split and write instances",
                       epilog=PREPARE_HELP, formatter_class=fmt)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--actions", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-user-actions", type=int, default=11)
    p.add_argument("--min-brand-actions", type=int, default=20)
    p.add_argument("--sliding", action="store_true", help="use sliding instead of disjoint windows")

    p = sub.add_parser("train", help="train one model variant", epilog=TRAIN_HELP,
                       formatter_class=fmt)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--seed", type=int, default=0)
    _model_flags(p)
    _train_flags(p)

    p = sub.add_parser("eval", help="score a checkpoint on held-out instances", epilog=EVAL_HELP,
                       formatter_class=fmt)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("ablate", help="train and evaluate the full model and its ablations",
                       epilog=ABLATE_HELP, formatter_class=fmt)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--compare", action="store_true", help="also train the gru and attn baselines")
    _train_flags(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of every variant",
                       epilog=GRADCHECK_HELP, formatter_class=fmt)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


# -- subcommands -------------------------------------------------------------
# Library imports happen inside the handlers, after the thread cap is set.

def _load_prepared(data: Path, split: str):
    from .dataset import Vocabulary, read_jsonl
    from .features import read_features
    return (read_jsonl(data / f"{split}.jsonl"), Vocabulary.load(data / "vocab.csv"),
            read_features(data / "features.csv"))


def cmd_synth(args) -> None:
    from .synth import generate, preset
    overrides = {}
    if args.users is not None:
        overrides["n_users"] = args.users
    if args.brands is not None:
        overrides["n_brands"] = args.brands
    data = generate(preset(args.preset, args.seed, **overrides))
    data.write(args.data)
    print(f"wrote {len(data.actions)} users, {len(data.items)} items, "
          f"{len(data.events)} events to {args.data}")


def cmd_featurize(args) -> None:
    from .dataset import parse_action_log
    from .features import build_brand_feature_vectors, read_events, read_items, write_features
    items = read_items(args.items or args.data / "items.csv")
    events = read_events(args.events or args.data / "events.csv")
    brands = {it.brand_id for it in items}
    actions_path = args.actions or args.data / "actions.csv"
    if args.actions is not None or actions_path.exists():
        brands |= {a.brand_id for seq in parse_action_log(actions_path).values() for a in seq}
    feats = build_brand_feature_vectors(events, items, sorted(brands),
                                        allow_small_categories=args.allow_small_categories)
    out = args.out or args.data / "features.csv"
    write_features(out, feats)
    print(f"wrote {len(feats.brand_ids)} brand feature vectors to {out}")


def cmd_prepare(args) -> None:
    from .dataset import Vocabulary, build_datasets, label_balance, parse_action_log, write_jsonl
    actions = parse_action_log(args.actions or args.data / "actions.csv")
    train, test, brands = build_datasets(actions, args.seed, args.min_user_actions,
                                         args.min_brand_actions, args.sliding)
    out = args.out or args.data
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "train.jsonl", train)
    write_jsonl(out / "test.jsonl", test)
    Vocabulary(brands).save(out / "vocab.csv")
    pos, neg = label_balance(train)
    print(f"wrote {len(train)} training ({pos} positive, {neg} negative) and {len(test)} test "
          f"instances over {len(brands)} brands to {out}")


def _model_config(args, vocab_size: int):
    from .models import make_config
    return make_config(args.model, args.mods, hidden_size=args.hidden,
                       brand_vocab_size=vocab_size, query_attention=args.query_attention)


def cmd_train(args) -> None:
    from .dataset import encode_batch
    from .train import TrainConfig, save_checkpoint, train
    instances, vocab, feats = _load_prepared(args.data, "train")
    config = _model_config(args, len(vocab))
    batch = encode_batch(instances, feats, config.brand_repr_mode, vocab)
    tconf = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, w=args.w,
                        seed=args.seed)
    ckpt = train(batch, tconf, config, vocab.hash,
                 callback=lambda row: print(_trace_line(row), file=sys.stderr))
    out = args.out or args.data / "checkpoint.json"
    save_checkpoint(ckpt, out)
    print(f"wrote {out}")


def _trace_line(row: dict) -> str:
    return "  ".join(f"{k} {v:.4f}" if isinstance(v, float) else f"{k} {v}"
                     for k, v in row.items())


def cmd_eval(args) -> None:
    from .dataset import encode_batch
    from .evaluate import evaluate, format_table, write_reports
    from .train import load_checkpoint
    instances, vocab, feats = _load_prepared(args.data, args.split)
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.model()
    batch = encode_batch(instances, feats, model.config.brand_repr_mode, vocab)
    report = evaluate(model, batch, threshold=args.threshold, vocab_hash=vocab.hash,
                      expected_vocab_hash=ckpt.vocab_hash)
    print(format_table([report]))
    if args.out:
        write_reports(args.out, [report])


def cmd_ablate(args) -> None:
    from .dataset import read_jsonl
    from .evaluate import format_table, write_reports
    from .pipeline import ABLATION_VARIANTS, COMPARISON_VARIANTS, PreparedData, compare
    from .train import TrainConfig
    train, vocab, feats = _load_prepared(args.data, "train")
    test = read_jsonl(args.data / "test.jsonl")
    data = PreparedData(feats, vocab, train, test)
    tconf = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, w=args.w,
                        seed=args.seed)
    variants = COMPARISON_VARIANTS if args.compare else ABLATION_VARIANTS
    reports = compare(data, variants, tconf, hidden_size=args.hidden)
    out = args.out or args.data / "ablation.csv"
    write_reports(out, reports)
    print(format_table(reports))


def cmd_gradcheck(args) -> int:
    from .gradcheck import ablation_configs, gradient_check
    worst = 0.0
    print(f"{'variant':<10} {'max_rel_error':>14}  worst parameter")
    for config in ablation_configs():
        res = gradient_check(config, seed=args.seed)
        worst = max(worst, res.max_error)
        print(f"{res.variant:<10} {res.max_error:14.3e}  {res.worst_param}")
    if worst > args.tol:
        print(f"gradient check failed: {worst:.3e} > {args.tol:g}", file=sys.stderr)
        return 2
    return 0


COMMANDS = {"synth": cmd_synth, "featurize": cmd_featurize, "prepare": cmd_prepare,
            "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    if "numpy" not in sys.modules:
        for var in THREAD_VARS:
            os.environ[var] = str(args.threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    from .errors import BrandRankError
    try:
        return COMMANDS[args.command](args) or 0
    except (BrandRankError, OSError) as exc:
        print(f"brandrank {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
