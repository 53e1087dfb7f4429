"""Command-line entry point wiring the pipeline stages together.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric divergence.
Progress goes to stderr; machine-readable results go to files only.
"""

import argparse
import json
import sys

import numpy as np

from .errors import (BinpickError, ConfigError, DataError, DivergenceError,
                     InstabilityError)

_SCENE_KEYS = {"asset", "count", "drop_height", "tray", "seed", "approx_parts",
               "collision", "density", "settle_steps"}
_TRAIN_KEYS = {"learning_rate", "momentum", "batch_size", "epochs", "seed"}
_SCAN_KEYS = {"grid", "orientations", "crop_side", "opening", "good_threshold",
              "decision_threshold", "height_range"}
_TOP_KEYS = {"scene", "train", "scan", "master_seed", "trials_per_scene",
             "train_fraction"}


def load_run_config(path):
    """Schema-checked run config; unknown keys are rejected."""
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("run config must be a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for section, allowed in (("scene", _SCENE_KEYS), ("train", _TRAIN_KEYS),
                             ("scan", _SCAN_KEYS)):
        sub = raw.get(section, {})
        if not isinstance(sub, dict):
            raise ConfigError(f"{section} section must be an object")
        bad = set(sub) - allowed
        if bad:
            raise ConfigError(f"unknown {section} keys: {sorted(bad)}")
    return raw


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def cmd_approx(args):
    from .geometry import build_approx_model, load_mesh
    mesh = load_mesh(args.mesh)
    model = build_approx_model(mesh, args.parts)
    with open(args.out, "w") as fh:
        fh.write(model.to_json())
    _log(f"{args.mesh}: {model.part_count} fitted boxes -> {args.out}")
    return 0


def _scene_from_config(raw, seed_override=None):
    from .trials import SceneConfig
    kw = dict(raw.get("scene", {}))
    if "tray" in kw:
        kw["tray"] = tuple(kw["tray"])
    if seed_override is not None:
        kw["seed"] = seed_override
    return SceneConfig(**kw)


def cmd_collect(args):
    from .trials import CollectConfig, collect, save_dataset
    raw = load_run_config(args.config) if args.config else {}
    cc = CollectConfig(scene=_scene_from_config(raw),
                       master_seed=raw.get("master_seed", args.seed),
                       trials_per_scene=raw.get("trials_per_scene", 6),
                       train_fraction=raw.get("train_fraction", 0.9))
    if args.seed is not None:
        cc.master_seed = args.seed
    records, split = collect(
        cc, args.successes, max_trials=args.max_trials, workers=args.workers,
        progress=lambda t, s: _log(f"trials {t}, successes {s}"))
    save_dataset(args.out, cc, records, split)
    _log(f"dataset: {len(records)} records -> {args.out}")
    return 0


def cmd_train(args):
    from .evaluation import dataset_inputs, evaluate, metrics
    from .nn import NetConfig, Network, TrainConfig, train
    from .trials import augment_records, load_dataset
    records, rcfg = load_dataset(args.data)
    train_recs = [r for r in records if r["split"] == "train"]
    verify_recs = [r for r in records if r["split"] == "verify"]
    if not train_recs:
        raise DataError("dataset has no training split")
    if args.augment:
        train_recs = augment_records(train_recs, rcfg)
    d, g, y = dataset_inputs(train_recs, rcfg, args.crop)
    verify = dataset_inputs(verify_recs, rcfg, args.crop) if verify_recs else None
    net = Network(NetConfig(crop_size=args.crop, seed=args.seed))
    tc = TrainConfig(learning_rate=args.lr, batch_size=args.batch,
                     epochs=args.epochs, seed=args.seed)
    history = train(net, (d, g, y), tc, verify_set=verify, log=_log)
    net.save_params(args.out)
    if args.history:
        with open(args.history, "w") as fh:
            json.dump(history, fh, indent=2)
    if verify_recs:
        m, _ = evaluate(net, verify_recs, rcfg, args.crop)
        try:
            p, r, f = metrics(m)
            _log(f"verify: TP={m.tp} FP={m.fp} FN={m.fn} TN={m.tn} "
                 f"P={p:.3f} R={r:.3f} F={f:.3f}")
        except BinpickError as exc:
            _log(f"verify metrics undefined: {exc}")
    _log(f"parameters -> {args.out}")
    return 0


def cmd_eval(args):
    from .evaluation import ConfusionMatrix, evaluate, metrics
    if args.cells_file:
        with open(args.cells_file) as fh:
            cells = json.load(fh)
        m = ConfusionMatrix(cells["tp"], cells["fp"], cells["fn"], cells["tn"])
    elif args.cells:
        tp, fp, fn, tn = (int(v) for v in args.cells.split(","))
        m = ConfusionMatrix(tp, fp, fn, tn)
    else:
        from .nn import Network
        from .trials import load_dataset
        if not (args.data and args.params):
            raise ConfigError("eval needs --cells/--cells-file or --data with --params")
        records, rcfg = load_dataset(args.data)
        verify = [r for r in records if r["split"] == "verify"]
        net = Network.load_params(args.params)
        m, scores = evaluate(net, verify, rcfg, net.config.crop_size)
        if args.scores:
            np.asarray(scores, dtype="<f4").tofile(args.scores)
    p, r, f = metrics(m)
    print(f"TP={m.tp} FP={m.fp} FN={m.fn} TN={m.tn}")
    print(f"Precision={p:.3f} Recall={r:.3f} F-value={f:.3f}")
    return 0


def cmd_detect(args):
    from .grasp import (ScanConfig, find_best_grasp, overlay_image, write_pgm8,
                        write_report)
    from .nn import Network
    from .render import DepthImage, RenderConfig
    rcfg = RenderConfig()
    vals = np.fromfile(args.image, dtype="<f4")
    side = int(round(np.sqrt(vals.size)))
    if side * side != vals.size:
        raise DataError(f"{args.image}: not a square float32 image")
    rcfg.width = rcfg.height = side
    img = DepthImage(vals.reshape(side, side), rcfg.pixel_size, rcfg.sensor_z,
                     rcfg.floor_z)
    net = Network.load_params(args.params)
    cfg = ScanConfig(crop_side=net.config.crop_size)
    best, good, cands = find_best_grasp(net, img, rcfg, cfg)
    if args.out:
        write_pgm8(args.out, overlay_image(img, best, good, rcfg, cfg))
    if args.report:
        write_report(args.report, best, cands)
    _log(f"best grasp: x={best.pose.x:.3f} y={best.pose.y:.3f} "
         f"theta={best.pose.theta:.3f} score={best.score:.3f}; "
         f"{len(good)} candidates above {cfg.good_threshold}")
    return 0


def cmd_bench(args):
    from .evaluation import timing_benchmark
    parts = tuple(int(v) for v in args.parts.split(","))
    rows = timing_benchmark(asset=args.asset, part_counts=parts,
                            trials=args.trials, seed=args.seed,
                            out_csv=args.out)
    for row in rows:
        _log(f"K={row['parts']}: median {row['median_step_s'] * 1e3:.3f} ms/step")
    return 0


def cmd_sweep(args):
    from .evaluation import SweepConfig, approx_effect_experiment
    rates = tuple(float(v) for v in args.rates.split(","))
    cfg = SweepConfig(rates=rates, n_success_target=args.successes,
                      max_trials=args.max_trials, master_seed=args.seed,
                      epochs=args.epochs)
    report = approx_effect_experiment(cfg, progress=_log, out_json=args.out)
    for row in report["rates"]:
        _log(f"rate {row['rate']}: probe y0 {row['probe_y0']:.3f}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="binpick",
                                 description="simulation-trained bin picking pipeline")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("approx", help="fit a box model to a mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--parts", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_approx)

    p = sub.add_parser("collect", help="generate a labeled trial dataset")
    p.add_argument("--config")
    p.add_argument("--successes", type=int, required=True)
    p.add_argument("--max-trials", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_collect)

    p = sub.add_parser("train", help="train the classifier on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history")
    p.add_argument("--crop", type=int, default=64)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-augment", dest="augment", action="store_false")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="confusion-matrix metrics")
    p.add_argument("--data")
    p.add_argument("--params")
    p.add_argument("--cells", help="TP,FP,FN,TN")
    p.add_argument("--cells-file")
    p.add_argument("--scores", help="write per-record y0 as float32")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("detect", help="raster-scan best grasp on a depth image")
    p.add_argument("--params", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out")
    p.add_argument("--report")
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("bench", help="step-cost vs decomposition resolution")
    p.add_argument("--asset", default="workpiece")
    p.add_argument("--parts", default="1,5,10,20")
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("sweep", help="approximation-rate effect experiment")
    p.add_argument("--rates", default="0,0.3,1.0")
    p.add_argument("--successes", type=int, default=80)
    p.add_argument("--max-trials", type=int, default=600)
    p.add_argument("--epochs", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sweep)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return 2
    except DataError as exc:
        _log(f"data error: {exc}")
        return 3
    except (DivergenceError, InstabilityError) as exc:
        _log(f"numeric failure: {exc}")
        return 4
    except BinpickError as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
