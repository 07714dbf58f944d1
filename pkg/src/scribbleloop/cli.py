"""Command line front end for corpus generation, training, simulation, and serving.

All subcommands resolve their data root from --data-root, the
SCRIBBLELOOP_DATA_ROOT environment variable, or ./data, in that order.
Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import json
import os
import socket
import sys
from pathlib import Path

from .backbone import TrainConfig, load_model, save_model
from .corpus import generate_corpus, load_manifest, load_slide, write_manifest
from .corrector import CorrectionPolicy
from .errors import DegenerateInputError
from .evalsim import (
    METRIC_NAMES,
    corpus_experiment,
    experiment_markdown,
    load_experiment_json,
    tune_n_epoch,
    write_experiment_csv,
    write_experiment_json,
    write_run_results,
    write_timings,
)
from .pipeline import (
    bundles_for_split,
    calibration_from_split,
    predict_slide,
    slide_scribbles,
    store_calibration,
    train_rough,
)
from .scribbles import write_scribbles
from .server import ENV_DATA_ROOT, create_app
from .uncertainty import wsi_uncertainty

SPLIT_CHOICES = ("train", "val", "test")


def _data_root(args: argparse.Namespace) -> Path:
    root = args.data_root or os.environ.get(ENV_DATA_ROOT) or "data"
    return Path(root)


def _corpus_dir(args: argparse.Namespace) -> Path:
    if getattr(args, "corpus", None):
        return Path(args.corpus)
    return _data_root(args) / "corpus"


def _load_trained(args: argparse.Namespace):
    path = Path(args.model) if getattr(args, "model", None) else _data_root(args) / "model.json"
    model, threshold = load_model(path)
    if threshold is None:
        raise DegenerateInputError(f"checkpoint {path} lacks a decision threshold; rerun train")
    return model, threshold


def _split_entries(manifest, split: str):
    if split == "all":
        return manifest.slides()
    return manifest.slides(split)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_corpus(args: argparse.Namespace) -> int:
    out = Path(args.out) if args.out else _data_root(args) / "corpus"
    manifest = generate_corpus(
        out,
        args.slides,
        seed=args.seed,
        size=args.size,
        delta_range=(args.delta_min, args.delta_max),
    )
    counts = {s: len(manifest.slides(s)) for s in SPLIT_CHOICES}
    print(f"wrote {len(manifest.entries)} slides to {out} (splits {counts})")
    return 0


def cmd_gen_scribbles(args: argparse.Namespace) -> int:
    manifest = load_manifest(_corpus_dir(args))
    out = Path(args.out) if args.out else _data_root(args) / "scribbles"
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for entry in _split_entries(manifest, args.split):
        scribbles = slide_scribbles(manifest, entry.slide_id, seed=args.seed)
        write_scribbles(out / f"{entry.slide_id}.jsonl", scribbles)
        n += len(scribbles)
    print(f"wrote {n} scribbles for {args.split} slides to {out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    manifest = load_manifest(_corpus_dir(args))
    cfg = TrainConfig(seed=args.seed, epochs=args.epochs)
    model, threshold = train_rough(manifest, cfg)
    try:
        calib = calibration_from_split(manifest, model, threshold, n_mc=args.n_mc, seed=args.seed)
        store_calibration(manifest, calib)
        write_manifest(manifest)
        calib_note = f"calibration [{calib.h_min:.4f}, {calib.h_max:.4f}]"
    except DegenerateInputError as exc:
        calib_note = f"calibration skipped ({exc})"
    out = Path(args.model_out) if args.model_out else _data_root(args) / "model.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(out, model, threshold)
    print(f"saved model to {out} (t_thresh {threshold.t_thresh:.2f}, {calib_note})")
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    manifest = load_manifest(_corpus_dir(args))
    model, threshold = _load_trained(args)
    image, _tumor, tissue = load_slide(manifest, args.slide)
    grid, records = predict_slide(model, image, tissue, n_mc=args.n_mc, seed=args.seed)
    wsi = wsi_uncertainty(records, threshold.t_thresh)
    payload = {
        "slide_id": args.slide,
        "t_thresh": threshold.t_thresh,
        "h_wsi": wsi.h_wsi,
        "grid": {
            "rows": grid.n_rows,
            "cols": grid.n_cols,
            "patch_size": grid.spec.patch_size,
            "overlap": grid.spec.overlap,
        },
        "patches": [
            {
                "id": p.id,
                "i": p.i,
                "j": p.j,
                "score": round(r.score, 6),
                "tumor": bool(r.score > threshold.t_thresh),
            }
            for p, r in zip(grid.patches, records)
        ],
    }
    out = Path(args.out) if args.out else _data_root(args) / "predictions" / f"{args.slide}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(records)} patch scores to {out}")
    return 0


def cmd_tune_nepoch(args: argparse.Namespace) -> int:
    manifest = load_manifest(_corpus_dir(args))
    model, threshold = _load_trained(args)
    candidates = [int(tok) for tok in args.candidates.split(",") if tok.strip()]
    bundles = bundles_for_split(manifest, model, threshold, split=args.split, seed=args.seed)
    result = tune_n_epoch(
        candidates, bundles, n_pass=args.passes, runs=args.runs, base_seed=args.seed
    )
    out = Path(args.out) if args.out else _data_root(args) / "tune.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(
            {
                "best": result.best,
                "scores": {str(k): round(v, 6) for k, v in result.scores.items()},
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    print(f"best n_epoch* = {result.best} (written to {out})")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    manifest = load_manifest(_corpus_dir(args))
    model, threshold = _load_trained(args)
    bundles = bundles_for_split(manifest, model, threshold, split=args.split, seed=args.seed)
    policy = CorrectionPolicy(
        mode=args.policy, n_epoch_star=args.n_epoch_star, n_pass=args.passes
    )
    table = corpus_experiment(
        bundles, policy, runs=args.runs, n_pass=args.passes, base_seed=args.seed
    )
    out = Path(args.out) if args.out else _data_root(args) / "results"
    out.mkdir(parents=True, exist_ok=True)
    write_run_results(out / f"runs_{args.policy}.json", table.results)
    write_timings(out / f"timings_{args.policy}.json", table.results)
    write_experiment_csv(out / f"experiment_{args.policy}.csv", table)
    write_experiment_json(out / f"experiment_{args.policy}.json", table)
    f1 = table.means[args.passes, METRIC_NAMES.index("f1")]
    print(f"{args.policy}: final-pass mean F1 {f1:.4f} over {len(bundles)} slides "
          f"x {args.runs} runs (files in {out})")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    sections = [experiment_markdown(load_experiment_json(path)) for path in args.experiment]
    text = "\n".join(sections)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
        print(f"wrote report to {args.out}")
    else:
        print(text, end="")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    app = create_app(_data_root(args))
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((args.host, args.port))
    port = sock.getsockname()[1]
    print(f"listening on http://{args.host}:{port}", flush=True)
    config = uvicorn.Config(app, log_level="warning")
    uvicorn.Server(config).run(sockets=[sock])
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Parser whose usage failures exit 1 instead of argparse's 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scribbleloop", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--data-root", help="base directory for corpus, model, and results")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gen-corpus", help="generate a synthetic slide corpus")
    common(p)
    p.add_argument("--slides", type=int, required=True)
    p.add_argument("--out", help="corpus directory (default <data-root>/corpus)")
    p.add_argument("--size", type=int, default=1024)
    p.add_argument("--delta-min", type=float, default=0.3)
    p.add_argument("--delta-max", type=float, default=0.9)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("gen-scribbles", help="synthesize annotation scribbles from masks")
    common(p)
    p.add_argument("--corpus", help="corpus directory (default <data-root>/corpus)")
    p.add_argument("--out", help="output directory (default <data-root>/scribbles)")
    p.add_argument("--split", default="train", choices=SPLIT_CHOICES + ("all",))
    p.set_defaults(func=cmd_gen_scribbles)

    p = sub.add_parser("train", help="train the rough patch classifier")
    common(p)
    p.add_argument("--corpus")
    p.add_argument("--model-out", help="checkpoint path (default <data-root>/model.json)")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--n-mc", type=int, default=20, help="forward passes for calibration")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score one slide with the trained model")
    common(p)
    p.add_argument("--corpus")
    p.add_argument("--model")
    p.add_argument("--slide", required=True)
    p.add_argument("--out")
    p.add_argument("--n-mc", type=int, default=20)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("tune-nepoch", help="grid-search the reference epoch count")
    common(p)
    p.add_argument("--corpus")
    p.add_argument("--model")
    p.add_argument("--candidates", default="10,20,30,40")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--passes", type=int, default=4)
    p.add_argument("--split", default="val", choices=SPLIT_CHOICES)
    p.add_argument("--out")
    p.set_defaults(func=cmd_tune_nepoch)

    p = sub.add_parser("simulate", help="run the automated correction experiment")
    common(p)
    p.add_argument("--corpus")
    p.add_argument("--model")
    p.add_argument("--policy", required=True, choices=("naive", "uncertainty"))
    p.add_argument("--passes", type=int, default=4)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--n-epoch-star", type=int, default=30)
    p.add_argument("--split", default="test", choices=SPLIT_CHOICES)
    p.add_argument("--out", help="results directory (default <data-root>/results)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="render experiment tables as markdown")
    p.add_argument("--experiment", nargs="+", required=True, help="experiment JSON files")
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="serve the interactive correction API")
    p.add_argument("--data-root")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
