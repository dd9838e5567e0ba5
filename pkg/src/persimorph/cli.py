"""``persimorph`` command line: one binary, one subcommand per pipeline stage.

Exit codes: 0 success, 1 data error, 2 configuration error, 3 numeric failure.
Flags override values from ``--config``. ``PERSIMORPH_OUTPUT_DIR`` and
``PERSIMORPH_THREADS`` supply defaults for ``--output`` and ``--threads``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .augment import augment_with_params
from .config import EvalConfig, load_run_config, merge_overrides, run_config_from_dict
from .contrastive import TrainConfig
from .encoders import DualEncoder, load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError, NonFiniteLoss, PersimorphError
from .morphometrics import FEATURES, morphometrics
from .parallel import default_workers, parallel_map
from .pimage import Bounds, ImageConfig, compute_bounds, export_png, export_raw, render
from .swc import load_tree, write_swc
from .synthetic import generate_synthetic_dataset
from .tmd import read_diagram_csv, tree_diagram, write_diagram_csv

log = logging.getLogger("persimorph")

OUTPUT_ENV = "PERSIMORPH_OUTPUT_DIR"
CHECKPOINT_NAME = "model.ckpt"
LABELS_NAME = "labels.csv"


# --- helpers ----------------------------------------------------------------------

def _output_dir(args, config_value=None, default="persimorph_out"):
    out = args.output or os.environ.get(OUTPUT_ENV) or config_value or default
    os.makedirs(out, exist_ok=True)
    return out


def _workers(args):
    return args.threads if getattr(args, "threads", None) else default_workers()


def _list_files(path, ext):
    if os.path.isdir(path):
        files = sorted(f for f in os.listdir(path) if f.lower().endswith(ext))
        return [os.path.join(path, f) for f in files]
    if os.path.isfile(path):
        return [path]
    raise ConfigError(f"input path does not exist: {path}")


def _stem(path):
    return os.path.splitext(os.path.basename(path))[0]


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_labels(path):
    """``neuron_id,label`` rows -> dict of int labels."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as e:
        raise DataError(f"cannot read labels {path}: {e}") from None
    try:
        return {r["neuron_id"]: int(r["label"]) for r in rows}
    except (KeyError, ValueError, TypeError) as e:
        raise DataError(f"{path}: expected columns neuron_id,label with integer labels ({e})") from None


def _load_sample(args):
    from .pipeline import make_sample

    path, label = args
    return make_sample(load_tree(path), label=label, neuron_id=_stem(path))


def load_dataset(input_dir, workers=1):
    """Samples for every labelled SWC file in ``input_dir``, sorted by id."""
    if not os.path.isdir(input_dir):
        raise ConfigError(f"input directory does not exist: {input_dir}")
    labels = read_labels(os.path.join(input_dir, LABELS_NAME))
    files = _list_files(input_dir, ".swc")
    missing = [_stem(f) for f in files if _stem(f) not in labels]
    if missing:
        raise DataError(f"no label for {len(missing)} file(s), e.g. {missing[0]}")
    if not files:
        raise DataError(f"no .swc files in {input_dir}")
    return parallel_map(_load_sample, [(f, labels[_stem(f)]) for f in files], workers)


class _ConfigAction:
    """Registers flags whose ``dest`` is a dotted run-config key (prefixed ``@``)."""

    def __init__(self, parser):
        self.parser = parser

    def __call__(self, *flags, key, **kw):
        kw.setdefault("default", None)
        if "choices" not in kw and kw.get("action") is None:
            kw.setdefault("metavar", flags[-1].lstrip("-").upper().replace("-", "_"))
        self.parser.add_argument(*flags, dest="@" + key, **kw)


def _overrides(args):
    return {k[1:]: v for k, v in vars(args).items() if k.startswith("@")}


def _run_config(args):
    base = load_run_config(args.config) if getattr(args, "config", None) else {}
    return run_config_from_dict(merge_overrides(base, _overrides(args)))


def _add_common(p, output=True):
    if output:
        p.add_argument("-o", "--output", help=f"output directory (default: ${OUTPUT_ENV} or ./persimorph_out)")
    p.add_argument("--threads", type=int, help="worker processes (default: $PERSIMORPH_THREADS or 1)")
    p.add_argument("--config", help="JSON run configuration; flags given on the command line take precedence")


def _add_image_flags(opt):
    opt("--height", key="image.height", type=int, help="image height in pixels (default 112)")
    opt("--width", key="image.width", type=int, help="image width in pixels (default 112)")
    opt("--sigma", key="image.sigma", type=float, help="Gaussian kernel width in pixels (default 16)")
    opt("--channels", key="image.channels", help="channel subset, e.g. RGB, RG, R (default RGB)")
    opt("--bounds-mode", key="image.bounds_mode", choices=("global", "per_image"),
        help="shared bounds over the collection, or each image's own (default global)")
    opt("--truncation-radius", key="image.truncation_radius", type=float,
        help="kernel support in units of sigma (default 4)")


def _add_augment_flags(opt):
    opt("--no-jitter", key="augment.enable_jitter", action="store_const", const=False,
        help="disable birth/death jitter")
    opt("--no-scale", key="augment.enable_scale", action="store_const", const=False,
        help="disable persistence-length scaling")
    opt("--no-radius", key="augment.enable_radius", action="store_const", const=False,
        help="disable radius perturbation")
    opt("--jitter-range", key="augment.jitter_fraction_range", type=float, nargs=2, metavar=("LO", "HI"),
        help="jitter std as a fraction of the birth range (default 0.01 0.05)")
    opt("--scale-range", key="augment.scale_range", type=float, nargs=2, metavar=("LO", "HI"),
        help="persistence-length scale factor range (default 0.9 1.1)")
    opt("--radius-range", key="augment.radius_range", type=float, nargs=2, metavar=("LO", "HI"),
        help="radius factor range (default 0.85 1.15)")
    opt("--apply-probability", key="augment.apply_probability", type=float,
        help="probability of applying each enabled operation (default 0.5)")


def _add_train_flags(opt):
    d = TrainConfig()
    opt("--batch-size", key="train.batch_size", type=int, help=f"pairs per step (default {d.batch_size})")
    opt("--lr", key="train.lr", type=float, help=f"learning rate (default {d.lr})")
    opt("--weight-decay", key="train.weight_decay", type=float, help=f"decoupled weight decay (default {d.weight_decay})")
    opt("--steps", key="train.steps", type=int, help=f"optimisation steps (default {d.steps})")
    opt("--init-tau", key="train.init_tau", type=float, help=f"initial temperature (default {d.init_tau})")
    opt("--schedule", key="train.schedule", choices=("constant", "warmup_cosine"),
        help="learning-rate schedule (default constant)")
    opt("--warmup-steps", key="train.warmup_steps", type=int, help="linear warmup steps for warmup_cosine")
    opt("--adam-betas", key="train.adam_betas", type=float, nargs=2, metavar=("B1", "B2"),
        help="recorded for full-scale runs; unused by the desk-scale optimiser")
    opt("--epochs", key="train.epochs", type=int, help="recorded for full-scale runs; unused")
    opt("--warmup-epochs", key="train.warmup_epochs", type=int, help="recorded for full-scale runs; unused")


def _add_model_flags(opt):
    opt("--hidden-dim", key="model.hidden_dim", type=int, help="TreeLSTM hidden size (default 32)")
    opt("--patch-size", key="model.patch_size", type=int, help="image patch size (default 16)")
    opt("--image-dim", key="model.image_dim", type=int, help="image encoder width (default 48)")
    opt("--proj-hidden", key="model.proj_hidden", type=int, help="projection head hidden size (default 32)")
    opt("--proj-out", key="model.proj_out", type=int, help="shared embedding size (default 16)")
    opt("--head-activation", key="model.head_activation", choices=("tanh", "identity"),
        help="projection head nonlinearity (default tanh)")


def _add_eval_flags(opt):
    opt("--k", key="eval.k", type=int, action="append",
        help="kNN neighbours; repeat to evaluate several values (default 20)")
    opt("--fusion", key="eval.fusion", choices=("concat", "add", "weighted_add"),
        help="fusion strategy (default concat)")
    opt("--fusion-weight", key="eval.fusion_weight", type=float, help="tree weight for weighted_add (default 0.5)")
    opt("--space", key="eval.space", choices=("encoder", "projection"),
        help="embeddings used for kNN (default encoder)")
    opt("--metric", key="eval.metric", choices=("cosine", "euclidean"), help="kNN distance (default cosine)")
    opt("--n-permutations", key="eval.n_permutations", type=int,
        help="RSA permutation count (default 1000)")


# --- subcommands ------------------------------------------------------------------

def _persist_one(job):
    path, out_dir, include_root = job
    try:
        tree = load_tree(path)
        diagram = tree_diagram(tree, include_root_pair=include_root)
        diagram.neuron_id = _stem(path)
        target = os.path.join(out_dir, _stem(path) + ".csv")
        write_diagram_csv(diagram, target)
        return path, None, diagram
    except (PersimorphError, OSError, UnicodeDecodeError) as e:
        return path, f"{type(e).__name__}: {e}", None


def cmd_persistence(args):
    out = _output_dir(args)
    files = _list_files(args.input, ".swc")
    if not files:
        raise DataError(f"no .swc files under {args.input}")
    results = parallel_map(_persist_one, [(f, out, not args.no_root_pair) for f in files], _workers(args))
    failed = [(p, msg) for p, msg, _ in results if msg]
    for path, msg in failed:
        print(f"error: {path}: {msg}", file=sys.stderr)
    if args.figures:
        from .plotting import plot_diagram

        for path, msg, diagram in results:
            if diagram is not None and len(diagram):
                plot_diagram(diagram, os.path.join(out, _stem(path) + "_diagram.png"))
    if failed:
        _write_csv(os.path.join(out, "errors.csv"), ("file", "error"), failed)
    print(f"{len(files) - len(failed)}/{len(files)} diagrams written to {out}")
    return 1 if failed else 0


def cmd_image(args):
    cfg = _run_config(args)
    ic = cfg.image
    out = _output_dir(args, cfg.output)
    files = _list_files(args.input, ".csv")
    diagrams = [read_diagram_csv(f) for f in files if _stem(f) != "errors"]
    if not diagrams:
        raise DataError(f"no diagram CSVs under {args.input}")
    if args.bounds:
        bounds = Bounds.from_json(args.bounds)
    elif ic.bounds_mode == "global":
        bounds = compute_bounds(diagrams)
        bounds.to_json(os.path.join(out, "bounds.json"))
    else:
        bounds = None
    from .pimage import render_many

    images = render_many(diagrams, ic, bounds, _workers(args))
    for d, img in zip(diagrams, images):
        export_png(img, os.path.join(out, d.neuron_id + ".png"))
        export_raw(img, os.path.join(out, d.neuron_id + ".pimg"))
    if args.figures:
        from .plotting import plot_image_channels

        for d, img in zip(diagrams, images):
            plot_image_channels(img, os.path.join(out, d.neuron_id + "_channels.png"))
    print(f"{len(images)} images ({ic.height}x{ic.width}x{len(ic.channels)}) written to {out}")
    return 0


def _diagram_from(path):
    if path.lower().endswith(".swc"):
        d = tree_diagram(load_tree(path))
        d.neuron_id = _stem(path)
        return d
    return read_diagram_csv(path)


def cmd_augment_preview(args):
    cfg = _run_config(args)
    out = _output_dir(args, cfg.output)
    diagram = _diagram_from(args.input)
    views, applied = [], []
    for v in range(args.views):
        d, a = augment_with_params(diagram, cfg.augment, view=v)
        write_diagram_csv(d, os.path.join(out, f"{diagram.neuron_id}_view{v}.csv"))
        views.append(d)
        applied.append(a)
    keys = ("view", "sigma_b", "sigma_d", "alpha", "beta")
    _write_csv(os.path.join(out, "augment_params.csv"), keys,
               [[a.get(k, "") for k in keys] for a in applied])
    bounds = compute_bounds([diagram, *views])
    from .plotting import plot_augment_preview

    plot_augment_preview(render(diagram, cfg.image, bounds), [render(d, cfg.image, bounds) for d in views],
                         applied, os.path.join(out, f"{diagram.neuron_id}_augment.png"))
    print(f"{args.views} augmented views of {diagram.neuron_id} written to {out}")
    return 0


def cmd_synth(args):
    out = _output_dir(args)
    data = generate_synthetic_dataset(args.n_per_class, classes=args.classes, seed=args.seed)
    rows = []
    for tree, label in data:
        write_swc(tree, os.path.join(out, tree.name + ".swc"), header=f"synthetic class {label}")
        rows.append((tree.name, label))
    _write_csv(os.path.join(out, LABELS_NAME), ("neuron_id", "label"), rows)
    print(f"{len(data)} synthetic neurons ({args.classes} classes) written to {out}")
    return 0


def cmd_morphometrics(args):
    out = _output_dir(args)
    files = _list_files(args.input, ".swc")
    rows = []
    for f in files:
        vec = morphometrics(load_tree(f))
        rows.append([_stem(f), *(repr(float(v)) for v in vec)])
    _write_csv(os.path.join(out, "morphometrics.csv"), ("neuron_id", *FEATURES), rows)
    print(f"morphometrics for {len(rows)} neurons written to {out}")
    return 0


def cmd_train(args):
    from .pipeline import fit_preprocessing, stratified_split, train

    cfg = _run_config(args)
    if not cfg.input:
        raise ConfigError("train needs --input (or 'input' in the config)")
    cfg.validate_paths()
    out = _output_dir(args, cfg.output)
    samples = load_dataset(cfg.input, _workers(args))
    labels = [s.label for s in samples]
    tr, te = stratified_split(labels, cfg.test_fraction, cfg.seed)
    train_set = [samples[i] for i in tr]
    prep = fit_preprocessing(train_set, cfg.image)
    model = DualEncoder.init(cfg.seed, cfg.model_dims(), tau=cfg.train.init_tau)
    model.extra["split"] = {"train": [samples[i].neuron_id for i in tr],
                            "test": [samples[i].neuron_id for i in te]}
    model.extra["run_config"] = cfg.to_dict()
    _write_json(os.path.join(out, "run_config.json"), cfg.to_dict())
    ckpt = os.path.join(out, CHECKPOINT_NAME)
    log_path = os.path.join(out, "train_log.jsonl")
    history = []
    with open(log_path, "w") as logf:
        def on_step(rec, _model):
            history.append(rec)
            logf.write(json.dumps(rec) + "\n")

        try:
            result = train(model, train_set, prep, cfg.train, cfg.augment, on_step=on_step)
        except NonFiniteLoss:
            # the failing step raised before updating, so the model holds the last good state
            save_checkpoint(model, ckpt, {"status": "aborted", "steps_completed": len(history),
                                          "config_hash": cfg.hash()})
            raise
    save_checkpoint(model, ckpt, {"status": "complete", "steps_completed": len(history),
                                  "config_hash": cfg.hash(),
                                  "initial_full_loss": result.initial_full_loss,
                                  "final_full_loss": result.final_full_loss})
    if history:
        from .plotting import plot_loss_curve

        plot_loss_curve(history, os.path.join(out, "loss_curve.png"))
    print(f"trained {len(history)} steps on {len(train_set)} pairs; "
          f"loss {result.initial_full_loss:.4f} -> {result.final_full_loss:.4f}; checkpoint {ckpt}")
    return 0


def _resolve_split(model, samples, cfg):
    from .pipeline import stratified_split

    split = model.extra.get("split")
    pos = {s.neuron_id: i for i, s in enumerate(samples)}
    if split and all(n in pos for n in split["train"] + split["test"]):
        return (np.array(sorted(pos[n] for n in split["train"]), dtype=np.int64),
                np.array(sorted(pos[n] for n in split["test"]), dtype=np.int64))
    return stratified_split([s.label for s in samples], cfg.test_fraction, cfg.seed)


def format_report(report):
    lines = [f"{'k':>4}  {'tree':>8}  {'image':>8}  {'fused':>8}"]
    for k, r in report["knn"].items():
        lines.append(f"{k:>4}  {r['tree']:8.2f}  {r['image']:8.2f}  {r['fused']:8.2f}")
    lines.append("")
    c = report["complementarity"]
    width = max(len(k) for k in c if k != "metadata")
    lines.append(f"complementarity (k={c['k']})")
    for k, v in c.items():
        if k == "metadata":
            continue
        lines.append(f"  {k:<{width}}  {v:.6g}" if isinstance(v, float) else f"  {k:<{width}}  {v}")
    lines.append("")
    lines.append("retrieval (test split, shared space)")
    for direction, r in report["retrieval"].items():
        lines.append(f"  {direction:<14}" + "  ".join(f"{m}={v:.2f}" for m, v in r.items()))
    return "\n".join(lines) + "\n"


def cmd_eval(args):
    from .pipeline import Preprocessing, embed, evaluate, fit_preprocessing

    cfg = _run_config(args)
    if not cfg.input:
        raise ConfigError("eval needs --input (or 'input' in the config)")
    cfg.validate_paths()
    if not os.path.isfile(args.checkpoint):
        raise ConfigError(f"checkpoint does not exist: {args.checkpoint}")
    out = _output_dir(args, cfg.output)
    model = load_checkpoint(args.checkpoint)
    samples = load_dataset(cfg.input, _workers(args))
    tr, te = _resolve_split(model, samples, cfg)
    if "preprocessing" in model.extra:
        prep = Preprocessing.from_dict(model.extra["preprocessing"])
    else:
        prep = fit_preprocessing([samples[i] for i in tr], cfg.image)
    ev = cfg.eval
    report = evaluate(model, samples, tr, te, prep, ks=ev.k, fusion=ev.fusion, fusion_weight=ev.fusion_weight,
                      space=ev.space, metric=ev.metric, n_perm=ev.n_permutations, seed=cfg.seed)
    report["checkpoint"] = os.path.abspath(args.checkpoint)
    _write_json(os.path.join(out, "report.json"), report)
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write(format_report(report))
    rows = []
    for k, preds in report["predictions"].items():
        for j, sid in enumerate(report["test_ids"]):
            rows.append((k, sid, report["y_test"][j], preds["tree"][j], preds["image"][j], preds["fused"][j]))
    _write_csv(os.path.join(out, "predictions.csv"),
               ("k", "sample_id", "true", "pred_tree", "pred_image", "pred_fused"), rows)
    from .plotting import plot_accuracy_bars, plot_similarity

    plot_accuracy_bars(report, os.path.join(out, "accuracy.png"))
    Zt, Zv = embed(model, [samples[i] for i in te], prep, "projection")
    plot_similarity(Zt, Zv, os.path.join(out, "similarity.png"))
    sys.stdout.write(format_report(report))
    return 0


# --- parser -----------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="persimorph", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("persistence", help="SWC file or directory -> one persistence diagram CSV per neuron")
    p.add_argument("input", help="SWC file or directory of .swc files")
    p.add_argument("--no-root-pair", action="store_true", help="omit the global (soma) pair")
    p.add_argument("--figures", action="store_true", help="also write a scatter plot per diagram")
    _add_common(p)
    p.set_defaults(func=cmd_persistence)

    p = sub.add_parser("image", help="diagram CSVs -> PNG and PIMG persistence images")
    p.add_argument("input", help="diagram CSV or directory of CSVs")
    p.add_argument("--bounds", help="bounds JSON to reuse (otherwise computed and written as bounds.json)")
    p.add_argument("--figures", action="store_true", help="also write a per-channel figure per image")
    _add_common(p)
    _add_image_flags(_ConfigAction(p))
    p.set_defaults(func=cmd_image)

    p = sub.add_parser("augment-preview", help="augmented views of one diagram, with a preview figure")
    p.add_argument("input", help="diagram CSV or SWC file")
    p.add_argument("--views", type=int, default=4, help="number of augmented views")
    p.add_argument("--seed", dest="@seed", type=int, default=None, help="root seed (default 0)")
    _add_common(p)
    opt = _ConfigAction(p)
    _add_augment_flags(opt)
    _add_image_flags(opt)
    p.set_defaults(func=cmd_augment_preview)

    p = sub.add_parser("synth", help="write a seeded synthetic labelled SWC dataset")
    p.add_argument("--n-per-class", type=int, default=64, help="neurons per class")
    p.add_argument("--classes", type=int, default=2, help="number of classes (2-5)")
    p.add_argument("--seed", type=int, default=0, help="root seed")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("morphometrics", help="classical morphometric features per neuron (CSV)")
    p.add_argument("input", help="SWC file or directory of .swc files")
    _add_common(p)
    p.set_defaults(func=cmd_morphometrics)

    p = sub.add_parser("train", help="contrastive training on a labelled SWC directory")
    _add_common(p)
    opt = _ConfigAction(p)
    opt("--input", key="input", help="directory of .swc files with labels.csv")
    opt("--seed", key="seed", type=int, help="root seed for split, init, batches and augmentation (default 0)")
    opt("--test-fraction", key="test_fraction", type=float, help="held-out fraction per class (default 0.3)")
    _add_train_flags(opt)
    _add_model_flags(opt)
    _add_image_flags(opt)
    _add_augment_flags(opt)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="frozen kNN, retrieval and complementarity for a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint written by train")
    _add_common(p)
    opt = _ConfigAction(p)
    opt("--input", key="input", help="directory of .swc files with labels.csv")
    opt("--seed", key="seed", type=int, help="root seed for the split fallback and permutation tests")
    opt("--test-fraction", key="test_fraction", type=float,
        help="held-out fraction when the checkpoint carries no split (default 0.3)")
    _add_eval_flags(opt)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PersimorphError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
