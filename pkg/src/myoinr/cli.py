"""Command-line entry point: ``myoinr {synth,train,track,strain,gradcheck,ablate}``.

Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .io import (
    METRIC_COLUMNS,
    RUN_CONFIG,
    DataError,
    load_checkpoint,
    load_train_state,
    read_array,
    read_dataset,
    save_checkpoint,
    write_array,
    write_csv,
    write_dataset,
    write_json,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DTYPE_ENV = "MYOINR_DTYPE"

log = logging.getLogger("myoinr")


class UsageError(Exception):
    pass


def _pair(text: str) -> tuple:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO,HI got {text!r}")
    return lo, hi


def _floats(text: str) -> list:
    vals = [v for v in text.split(",") if v.strip()]
    try:
        return [float(v) for v in vals]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _run_config(args, **extra) -> dict:
    d = {k: v for k, v in vars(args).items() if k not in ("func", "corrupt")}
    d = json.loads(json.dumps(d, default=str))
    d["command"] = args.command
    d["version"] = __version__
    d.update(extra)
    return d


# -- synth ------------------------------------------------------------------

def cmd_synth(args) -> int:
    from .synth import SynthConfig, generate_dataset

    if args.frames < 2:
        raise UsageError("need at least 2 frames")
    if args.cases < 1:
        raise UsageError("need at least 1 case")
    overrides = {k: v for k, v in (
        ("endo_contraction", args.contraction), ("twist", args.twist), ("drift", args.drift),
        ("noise", args.noise), ("thickening_fraction", args.thickening_fraction),
    ) if v is not None}
    try:
        cfg = SynthConfig(frame_count=args.frames, **overrides)
    except ValueError as e:
        raise UsageError(str(e))
    cases = generate_dataset(args.seed, args.cases, cfg)
    out = Path(args.out)
    write_dataset(out, cases, generator={"seed": args.seed, "cases": args.cases, "config": cfg.to_dict()})
    write_json(out / RUN_CONFIG, _run_config(args))
    print(f"wrote {len(cases)} cases to {out}")
    return EXIT_OK


# -- train ------------------------------------------------------------------

def _train_config(args):
    from .diffnet import ModelConfig
    from .losses import LossWeights
    from .train import TrainConfig

    model = ModelConfig(hidden_size=args.hidden_size, hidden_layers=args.hidden_layers,
                        latent_size=args.latent_size, omega=args.omega,
                        encoder_channels=tuple(int(c) for c in args.channels.split(",")),
                        image_size=args.image_size)
    return TrainConfig(learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs, seed=args.seed,
                       weights=LossWeights(args.alpha, args.beta), omega=args.omega,
                       jacobian_sample_policy=args.jacobian_points, model=model,
                       dtype=args.dtype, workers=args.workers)


def _load_cases(path):
    cases = read_dataset(path)
    if not cases:
        raise DataError(f"dataset {path} has no cases")
    return cases


def cmd_train(args) -> int:
    from . import plotting
    from .train import new_state, train

    try:
        config = _train_config(args)
    except ValueError as e:
        raise UsageError(str(e))
    cases = _load_cases(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / RUN_CONFIG, _run_config(args, train_config=config.to_dict()))
    state = load_train_state(args.resume, config) if args.resume else None

    def on_epoch(st):
        write_csv(out / "metrics.csv", st.history, METRIC_COLUMNS)
        if args.checkpoint_every and st.epoch % args.checkpoint_every == 0:
            save_checkpoint(out / f"checkpoint_{st.epoch:04d}.ckpt", st.model, st, config)

    if state is None:
        state = new_state(config)
    model, history = train(cases, config, state=state, on_epoch=on_epoch)
    save_checkpoint(out / "model.ckpt", model, state, config)
    write_csv(out / "metrics.csv", history, METRIC_COLUMNS)
    if history:
        plotting.loss_history(history, out / "loss.png")
    print(f"trained {config.epochs} epochs; checkpoint {out / 'model.ckpt'}")
    return EXIT_OK


# -- track ------------------------------------------------------------------

def cmd_track(args) -> int:
    from .evaluate import dense_displacement, track_landmarks

    model, header = load_checkpoint(args.model)
    cases = read_dataset(args.data, case_ids=args.case or None)
    size = model.config.image_size
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = {"model": str(args.model), "mode": args.mode, "resolutions": args.resolution, "cases": []}
    for case in cases:
        if case.series.image_size != size:
            raise DataError(f"{case.case_id}: image size {case.series.image_size} != model {size}")
        entry = {"case_id": case.case_id, "frame_count": case.series.frame_count}
        if args.mode in ("landmarks", "both"):
            if case.landmarks is None:
                raise DataError(f"{case.case_id}: landmark mode needs reference points")
            grid = track_landmarks(model, case.series, case.landmarks)
            name = f"{case.case_id}.landmarks.bin"
            write_array(out / name, grid.points)
            entry["landmarks"] = {"file": name, "rings": grid.rings, "spokes": grid.spokes}
        if args.mode in ("dense", "both"):
            entry["dense"] = {}
            for R in args.resolution:
                name = f"{case.case_id}.dense_{R}.bin"
                write_array(out / name, dense_displacement(model, case.series, R))
                entry["dense"][str(R)] = name
        index["cases"].append(entry)
    write_json(out / "track.json", index)
    write_json(out / RUN_CONFIG, _run_config(args))
    print(f"tracked {len(cases)} cases into {out}")
    return EXIT_OK


def read_tracking(pred_dir):
    """{case_id: LandmarkGrid} from a track output directory."""
    from .core import LandmarkGrid

    root = Path(pred_dir)
    path = root / "track.json"
    if not path.exists():
        raise DataError(f"no track.json in {pred_dir}")
    index = json.loads(path.read_text())
    grids = {}
    for e in index["cases"]:
        if "landmarks" not in e:
            continue
        lm = e["landmarks"]
        grids[e["case_id"]] = LandmarkGrid(lm["rings"], lm["spokes"], read_array(root / lm["file"]))
    return grids


# -- strain -----------------------------------------------------------------

REPORT_COLUMNS = ("point_error_mm", "gcs", "gcs_bias", "gcs_error", "grs", "grs_bias", "grs_error")
CASE_COLUMNS = ("case_id", "es_frame", "point_error_mm", "gcs", "gcs_ref", "grs", "grs_ref")


def strain_tables(preds: dict, refs: dict, spacing=None, ed_from_ref: bool = True):
    """Per-case rows and the cohort row. Strains in percent."""
    from .core import LandmarkGrid
    from .strain import agreement, end_systole_index, gcs, grs

    rows, sq = [], []
    for cid, ref_case in refs.items():
        ref = ref_case.landmarks
        pred = preds[cid]
        if not pred.same_topology(ref) or pred.points.shape != ref.points.shape:
            raise DataError(f"{cid}: topology mismatch between prediction and reference")
        pts = np.array(pred.points, dtype=np.float64)
        if ed_from_ref:
            pts[0] = ref.points[0]
        pred = LandmarkGrid(pred.rings, pred.spokes, pts)
        mm = spacing if spacing is not None else ref_case.series.pixel_spacing_mm
        es = end_systole_index(ref)
        d2 = ((pred.points[1:] - ref.points[1:]) ** 2).sum(-1) * mm * mm
        sq.append(d2.ravel())
        rows.append({
            "case_id": cid, "es_frame": es,
            "point_error_mm": float(np.sqrt(d2.mean())),
            "gcs": 100 * gcs(pred, pred, 0, es)[0], "gcs_ref": 100 * gcs(ref, ref, 0, es)[0],
            "grs": 100 * grs(pred, pred, 0, es)[0], "grs_ref": 100 * grs(ref, ref, 0, es)[0],
        })
    g = agreement([r["gcs"] / 100 for r in rows], [r["gcs_ref"] / 100 for r in rows])
    r_ = agreement([r["grs"] / 100 for r in rows], [r["grs_ref"] / 100 for r in rows])
    cohort = {
        "point_error_mm": float(np.sqrt(np.concatenate(sq).mean())),
        "gcs": float(np.mean([r["gcs"] for r in rows])), "gcs_bias": g.bias, "gcs_sd": g.sd,
        "gcs_error": g.error,
        "grs": float(np.mean([r["grs"] for r in rows])), "grs_bias": r_.bias, "grs_sd": r_.sd,
        "grs_error": r_.error, "n_cases": len(rows),
    }
    return rows, cohort


def cmd_strain(args) -> int:
    from . import plotting

    preds = read_tracking(args.pred)
    if not preds:
        raise DataError(f"{args.pred} holds no landmark predictions")
    refs = {c.case_id: c for c in read_dataset(args.ref, case_ids=sorted(preds))}
    for cid, case in refs.items():
        if case.landmarks is None:
            raise DataError(f"{cid}: reference has no landmarks")
    rows, cohort = strain_tables(preds, refs, args.spacing, ed_from_ref=args.ed_from == "ref")
    out = Path(args.out)
    write_csv(out / "per_case.csv", rows, CASE_COLUMNS)
    write_csv(out / "report.csv", [cohort], REPORT_COLUMNS + ("gcs_sd", "grs_sd", "n_cases"))
    if not args.no_figures:
        for row in rows:
            case = refs[row["case_id"]]
            es = row["es_frame"]
            plotting.overlay(case.series.frames[es], case.landmarks.points[es],
                             preds[row["case_id"]].points[es], out / "overlays" / f"{row['case_id']}_es.png",
                             title=f"{row['case_id']} frame {es}")
        plotting.strain_agreement([r["gcs"] / 100 for r in rows], [r["gcs_ref"] / 100 for r in rows],
                                  out / "gcs_agreement.png", "GCS (%)")
        plotting.strain_agreement([r["grs"] / 100 for r in rows], [r["grs_ref"] / 100 for r in rows],
                                  out / "grs_agreement.png", "GRS (%)")
    write_json(out / RUN_CONFIG, _run_config(args))
    print(",".join(REPORT_COLUMNS))
    print(",".join(f"{cohort[c]:.4f}" for c in REPORT_COLUMNS))
    return EXIT_OK


# -- gradcheck --------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    ok = True
    t0 = time.perf_counter()
    for seed in range(args.seed, args.seed + args.seeds):
        for r in run_gradcheck(seed, draws=args.draws, corrupt=args.corrupt):
            print(f"seed={seed}  {r.line()}")
            ok &= r.passed
    print(f"{'PASS' if ok else 'FAIL'}  gradcheck ({time.perf_counter() - t0:.1f}s)")
    return EXIT_OK if ok else EXIT_NUMERIC


# -- ablate -----------------------------------------------------------------

def cmd_ablate(args) -> int:
    from . import plotting
    from .evaluate import ABLATION_COLUMNS, ablation_sweep

    if not args.alphas:
        raise UsageError("--alphas must list at least one value")
    try:
        config = _train_config(args)
    except ValueError as e:
        raise UsageError(str(e))
    cases = _load_cases(args.data)
    if args.test_data:
        train_cases, test_cases = cases, _load_cases(args.test_data)
    else:
        n_test = max(1, int(round(args.holdout * len(cases))))
        if n_test >= len(cases):
            raise UsageError("holdout leaves no training cases")
        train_cases, test_cases = cases[:-n_test], cases[-n_test:]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / RUN_CONFIG, _run_config(args, train_config=config.to_dict()))

    def keep(alpha, model, history):
        save_checkpoint(out / f"model_alpha_{alpha:g}.ckpt", model)
        write_csv(out / f"metrics_alpha_{alpha:g}.csv", history, METRIC_COLUMNS)

    rows = ablation_sweep(train_cases, test_cases, args.alphas, config, on_model=keep)
    write_csv(out / "ablation.csv", rows, ABLATION_COLUMNS)
    plotting.ablation(rows, out / "ablation.png")
    print(",".join(ABLATION_COLUMNS))
    for r in rows:
        print(",".join(f"{r[c]:g}" for c in ABLATION_COLUMNS))
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def _add_train_flags(p, default_dtype):
    p.add_argument("--alpha", type=float, default=1e-3, help="Jacobian loss weight")
    p.add_argument("--beta", type=float, default=1e-4, help="latent loss weight")
    p.add_argument("--omega", type=float, default=15.0)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--epochs", type=int, default=14)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--dtype", choices=("float32", "float64"), default=default_dtype)
    p.add_argument("--jacobian-points", choices=("supervision_points", "random_interior"),
                   default="supervision_points")
    p.add_argument("--hidden-size", type=int, default=256)
    p.add_argument("--hidden-layers", type=int, default=3)
    p.add_argument("--latent-size", type=int, default=32)
    p.add_argument("--channels", default="16,32,64,128,256", help="encoder channel plan")
    p.add_argument("--image-size", type=int, default=128)


def build_parser() -> argparse.ArgumentParser:
    default_dtype = os.environ.get(DTYPE_ENV, "float32")
    if default_dtype not in ("float32", "float64"):
        default_dtype = "float32"
    parser = argparse.ArgumentParser(prog="myoinr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic tagging dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=64)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--out", required=True)
    p.add_argument("--contraction", type=_pair, help="endocardial radius shrink fraction LO,HI")
    p.add_argument("--twist", type=_pair, help="peak twist in radians LO,HI")
    p.add_argument("--drift", type=float, help="max translation drift in pixels")
    p.add_argument("--noise", type=_pair, help="noise sigma LO,HI")
    p.add_argument("--thickening-fraction", type=float, help="share of wall-thickening cases")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the conditioned INR")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint-every", type=int, default=1, help="epochs between checkpoints (0: final only)")
    p.add_argument("--resume", help="checkpoint carrying optimizer state")
    _add_train_flags(p, default_dtype)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="predict landmarks and/or dense displacement")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--case", action="append", help="case id (repeatable; default all)")
    p.add_argument("--mode", choices=("landmarks", "dense", "both"), default="landmarks")
    p.add_argument("--resolution", type=int, action="append", help="dense grid size R (repeatable)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("strain", help="strain and agreement reports")
    p.add_argument("--pred", required=True, help="track output directory")
    p.add_argument("--ref", required=True, help="reference dataset directory")
    p.add_argument("--spacing", type=float, help="pixel spacing in mm (default: from dataset)")
    p.add_argument("--ed-from", choices=("ref", "pred"), default="ref",
                   help="source of end-diastolic positions for predicted strain")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_strain)

    p = sub.add_parser("gradcheck", help="finite-difference derivative checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p.add_argument("--size", choices=("tiny",), default="tiny")
    p.add_argument("--draws", type=int, default=100)
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="Jacobian-weight ablation sweep")
    p.add_argument("--data", required=True)
    p.add_argument("--test-data", help="held-out dataset (default: tail of --data)")
    p.add_argument("--holdout", type=float, default=0.2)
    p.add_argument("--alphas", type=_floats, default=[0.0, 0.001, 0.005, 0.01, 0.1])
    p.add_argument("--out", required=True)
    _add_train_flags(p, default_dtype)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "resolution", "unset") is None:
        args.resolution = [128]
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"myoinr {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"myoinr {args.command}: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as e:
        print(f"myoinr {args.command}: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
