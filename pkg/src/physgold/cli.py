"""Batch command line front end.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from physgold.config import RunConfig
from physgold.dataset import ALL_CHANNELS, DataFormatError, synth_generate, write_series
from physgold.fusion import ComboId
from physgold.metrics import aggregate_agreement, correlation_matrix, mean_absolute_change, skewness
from physgold.pipeline import (
    as_prediction,
    build_golds,
    feature_sets_of,
    load_dataset,
    partitions_for,
    read_series_dir,
    targets_for,
    write_gold,
    write_json,
)
from physgold.training import SubjectData, TrainedModel, evaluate, grid_search, late_fuse, predict

log = logging.getLogger("physgold")


class UsageError(Exception):
    pass


def _write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _combos(cfg: RunConfig) -> list[ComboId]:
    if any(c.lower() == "all" for c in cfg.combos):
        return list(ComboId)
    return [ComboId.parse(c) for c in cfg.combos]


def _need(value, flag: str):
    if value is None:
        raise UsageError(f"{flag} is required")
    return value


def _csv_list(text: str, cast=str) -> list:
    return [cast(t) for t in text.split(",") if t.strip()]


# -- commands ----------------------------------------------------------------


def cmd_synth(cfg: RunConfig, jobs: int) -> int:
    out = Path(_need(cfg.out, "--out"))
    parts = synth_generate(cfg.synth, out, jobs)
    cfg.echo(out)
    counts = {p: len(parts.subjects(p)) for p in ("train", "devel", "test")}
    print(
        f"wrote {cfg.synth.n_subjects} subjects ({cfg.synth.duration_s:g} s each, seed {cfg.synth.seed}) to {out}; "
        + ", ".join(f"{p} {n}" for p, n in counts.items())
    )
    return 0


def cmd_fuse(cfg: RunConfig, jobs: int) -> int:
    data = _need(cfg.data, "--data")
    out = Path(_need(cfg.out, "--out"))
    dataset = load_dataset(data, cfg.load, jobs=jobs)
    bundles = {s: b for s, (b, _) in dataset.items()}
    failures = 0
    rows = []
    for combo in _combos(cfg):
        golds = build_golds(bundles, combo, cfg.fusion_config(), jobs)
        for sid, gold in golds.items():
            if isinstance(gold, str):
                failures += 1
                print(f"error: {gold}", file=sys.stderr)
                rows.append([combo.cli_name, sid, "error"])
                continue
            write_gold(out / combo.cli_name, gold)
            rows.append([combo.cli_name, sid, "ok"])
    _write_csv(out / "fuse_summary.csv", ["combo", "subject", "status"], rows)
    cfg.echo(out)
    print(f"fused {len(rows) - failures}/{len(rows)} gold standards into {out}")
    return 1 if failures else 0


def cmd_agreement(cfg: RunConfig, jobs: int) -> int:
    data = _need(cfg.data, "--data")
    out = Path(_need(cfg.out, "--out"))
    dataset = load_dataset(data, cfg.load, jobs=jobs)
    bundles = {s: b for s, (b, _) in dataset.items()}
    summary, detail, reports = [], [], {}
    failures = 0
    for combo in _combos(cfg):
        golds = build_golds(bundles, combo, cfg.fusion_config(), jobs)
        per_subject = {}
        for sid, gold in golds.items():
            if isinstance(gold, str):
                failures += 1
                print(f"error: {gold}", file=sys.stderr)
            else:
                per_subject[sid] = gold.alignment_meta["post_agreement"]
        if not per_subject:
            continue
        report = aggregate_agreement(per_subject, combo.cli_name)
        reports[combo.cli_name] = report.to_dict()
        summary.append([combo.cli_name, report.mu, report.sd, len(per_subject)])
        detail.extend([combo.cli_name, s, cc] for s, cc in report.per_subject.items())
        detail.append([combo.cli_name, "mu", report.mu])
        detail.append([combo.cli_name, "sd", report.sd])
        print(f"{combo.cli_name:20s} mu {report.mu:.3f}  sd {report.sd:.3f}  (n={len(per_subject)})")
    _write_csv(out / "agreement.csv", ["combo", "mu", "sd", "n_subjects"], summary)
    _write_csv(out / "agreement_subjects.csv", ["combo", "subject", "cc"], detail)
    write_json(out / "agreement.json", reports)
    cfg.echo(out)
    return 1 if failures else 0


def cmd_corr(cfg: RunConfig, jobs: int) -> int:
    data = _need(cfg.data, "--data")
    out = Path(_need(cfg.out, "--out"))
    subjects = None
    if cfg.partition != "all":
        subjects = partitions_for(data, [p.name for p in Path(data).iterdir() if p.is_dir()])[cfg.partition]
    dataset = load_dataset(data, cfg.load, subjects=subjects, jobs=jobs)
    matrix = correlation_matrix([b for b, _ in dataset.values()], list(ALL_CHANNELS))
    path = out / "corr.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(matrix.to_long_csv())
    cfg.echo(out)
    print("      " + " ".join(f"{n:>6s}" for n in matrix.names))
    for name, row in zip(matrix.names, matrix.entries):
        print(f"{name:>6s}" + " ".join(f"{v:6.3f}" for v in row))
    return 0


def cmd_stats(cfg: RunConfig, jobs: int, gold_dir: str | None) -> int:
    out = Path(_need(cfg.out, "--out"))
    series: dict[str, dict] = {}
    if gold_dir is not None:
        root = Path(gold_dir)
        combo_dirs = sorted(p for p in root.iterdir() if p.is_dir()) if root.is_dir() else []
        if not combo_dirs and root.is_dir():
            combo_dirs = [root]
        if not combo_dirs:
            raise DataFormatError(root, None, "no gold-standard directory")
        for d in combo_dirs:
            series[d.name] = {s: ts.values for s, ts in read_series_dir(d).items()}
    else:
        data = _need(cfg.data, "--data or --gold")
        dataset = load_dataset(data, cfg.load, jobs=jobs)
        bundles = {s: b for s, (b, _) in dataset.items()}
        for combo in _combos(cfg):
            golds = build_golds(bundles, combo, cfg.fusion_config(), jobs)
            errors = [g for g in golds.values() if isinstance(g, str)]
            if errors:
                raise ValueError("; ".join(errors))
            series[combo.cli_name] = {s: g.series.values for s, g in golds.items()}
    detail, summary = [], []
    for combo, per_subject in series.items():
        macs, skews, sds = [], [], []
        for sid, values in per_subject.items():
            mac, sk, sd = mean_absolute_change(values), skewness(values), float(np.std(values))
            macs.append(mac)
            skews.append(sk)
            sds.append(sd)
            detail.append([combo, sid, mac, sk, sd])
        summary.append([combo, float(np.mean(macs)), float(np.mean(skews)), float(np.mean(sds)), len(macs)])
        print(f"{combo:20s} MAC {summary[-1][1]:.4f}  skew {summary[-1][2]:+.3f}  sd {summary[-1][3]:.3f}")
    _write_csv(out / "stats.csv", ["combo", "mac_mean", "skewness_mean", "sd_mean", "n_subjects"], summary)
    _write_csv(out / "stats_subjects.csv", ["combo", "subject", "mac", "skewness", "sd"], detail)
    cfg.echo(out)
    return 0


def _training_inputs(cfg: RunConfig, jobs: int):
    data = _need(cfg.data, "--data")
    dataset = load_dataset(data, cfg.load, jobs=jobs)
    parts = partitions_for(data, list(dataset))
    combo = _combos(cfg)[0]
    targets = targets_for(dataset, cfg.target, combo, cfg.fusion_config(), jobs)
    combo_name = "latent" if cfg.target == "latent" else combo.cli_name
    return dataset, parts, targets, combo_name


def _result_row(name, combo_name, scores):
    return [
        name,
        combo_name,
        scores["devel"]["ccc"],
        scores["test"]["ccc"],
        scores["devel"]["ccc_subject_mean"],
        scores["test"]["ccc_subject_mean"],
    ]


RESULT_HEADER = ["model", "combo", "devel_ccc", "test_ccc", "devel_ccc_subject_mean", "test_ccc_subject_mean"]


def cmd_train(cfg: RunConfig, jobs: int) -> int:
    out = Path(_need(cfg.out, "--out"))
    dataset, parts, targets, combo_name = _training_inputs(cfg, jobs)
    for sid, ts in targets.items():
        (out / "targets").mkdir(parents=True, exist_ok=True)
        write_series(out / "targets" / f"{sid}.csv", ts)
    rows = []
    for set_name in feature_sets_of(dataset, cfg.feature_sets):
        data = {s: SubjectData(s, feats[set_name].values, targets[s].values) for s, (_, feats) in dataset.items()}
        best, board = grid_search(
            cfg.grid, [data[s] for s in parts["train"]], [data[s] for s in parts["devel"]], cfg.model, jobs
        )
        best.save(_mkparent(out / "models" / f"{set_name}.json"))
        _write_csv(
            out / "leaderboard" / f"{set_name}.csv",
            ["rank", "index", "config", "devel_ccc", "epochs"],
            [[r + 1, e["index"], e["config"], e["devel_ccc"], e["epochs"]] for r, e in enumerate(board)],
        )
        for sid, d in sorted(data.items()):
            pred = as_prediction(sid, predict(best, d.features), targets[sid])
            write_series(_mkparent(out / "predictions" / set_name / f"{sid}.csv"), pred)
        scores = evaluate(best, list(data.values()), parts)
        rows.append(_result_row(set_name, combo_name, scores))
        print(f"{set_name:12s} best {best.config.label():22s} devel {scores['devel']['ccc']:.4f}  test {scores['test']['ccc']:.4f}")
    _write_csv(out / "results.csv", RESULT_HEADER, rows)
    cfg.echo(out)
    return 0


def _mkparent(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def cmd_eval(cfg: RunConfig, jobs: int, model_path: str | None) -> int:
    out = Path(_need(cfg.out, "--out"))
    model_path = Path(_need(model_path, "--model"))
    if not model_path.is_file():
        raise FileNotFoundError(f"model file not found: {model_path}")
    model = TrainedModel.load(model_path)
    dataset, parts, targets, combo_name = _training_inputs(cfg, jobs)
    set_name = (cfg.feature_sets or [model_path.stem])[0]
    feature_sets_of(dataset, [set_name])
    data = [SubjectData(s, feats[set_name].values, targets[s].values) for s, (_, feats) in sorted(dataset.items())]
    scores = evaluate(model, data, parts)
    for d in data:
        pred = as_prediction(d.subject_id, predict(model, d.features), targets[d.subject_id])
        write_series(_mkparent(out / "predictions" / set_name / f"{d.subject_id}.csv"), pred)
    rows = [[set_name, combo_name, part, s["ccc"], s["ccc_subject_mean"]] for part, s in scores.items()]
    _write_csv(out / "eval.csv", ["model", "combo", "partition", "ccc", "ccc_subject_mean"], rows)
    cfg.echo(out)
    for part, s in scores.items():
        print(f"{part:6s} CCC {s['ccc']:.4f}")
    return 0


def cmd_latefuse(cfg: RunConfig, jobs: int, from_dir: str | None) -> int:
    out = Path(_need(cfg.out, "--out"))
    src = Path(_need(from_dir, "--from"))
    data = _need(cfg.data, "--data")
    pred_root = src / "predictions"
    if not pred_root.is_dir():
        raise FileNotFoundError(f"no predictions under {src}; run 'train' first")
    available = sorted(p.name for p in pred_root.iterdir() if p.is_dir())
    preds = {n: {s: ts.values for s, ts in read_series_dir(pred_root / n, "PRED").items()} for n in available}
    targets = read_series_dir(src / "targets")
    gold = {s: ts.values for s, ts in targets.items()}
    parts = partitions_for(data, list(gold))
    combo_name = "latent" if cfg.target == "latent" else _combos(cfg)[0].cli_name

    if cfg.fusions:
        fusions = [f.split("+") for f in cfg.fusions]
    else:
        fusions = [list(c) for k in range(2, len(available) + 1) for c in itertools.combinations(available, k)]
    if not fusions:
        raise ValueError("late fusion needs at least two prediction sets")
    rows = []
    late_model = replace(cfg.late_model, seed=cfg.seed)
    for members in fusions:
        unknown = [m for m in members if m not in preds]
        if unknown:
            raise ValueError(f"unknown prediction set(s) {', '.join(unknown)}; have {', '.join(available)}")
        name = "+".join(members)
        fused, scores, model = late_fuse({m: preds[m] for m in members}, gold, parts, late_model)
        model.save(_mkparent(out / "models" / f"{name}.json"))
        for sid, values in sorted(fused.items()):
            write_series(_mkparent(out / "predictions" / name / f"{sid}.csv"), as_prediction(sid, values, targets[sid]))
        rows.append(_result_row(name, combo_name, scores))
        print(f"{name:24s} devel {scores['devel']['ccc']:.4f}  test {scores['test']['ccc']:.4f}")
    _write_csv(out / "latefusion.csv", RESULT_HEADER, rows)
    cfg.echo(out)
    return 0


# -- argument parsing --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration; flags override it")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (output does not depend on it)")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="dataset root")
    data.add_argument("--combo", action="append", help="gold-standard combination, e.g. a123, a12-eda, phys-only, all")
    data.add_argument("--savgol-window", type=int)
    data.add_argument("--savgol-order", type=int)
    data.add_argument("--band-fraction", type=float)
    data.add_argument("--max-iters", type=int)
    data.add_argument("--raw-scale", action="store_true", help="keep fused traces in z-space")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--target", choices=["gold", "latent"])
    model.add_argument("--feature-set", action="append", dest="feature_sets")
    model.add_argument("--max-epochs", type=int)
    model.add_argument("--patience", type=int)

    parser = argparse.ArgumentParser(prog="physgold", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--subjects", type=int)
    p.add_argument("--duration", type=float, help="seconds per subject")
    p.add_argument("--rater-noise", type=float)

    sub.add_parser("fuse", parents=[common, data], help="build gold standards")
    sub.add_parser("agreement", parents=[common, data], help="inter-rater agreement after alignment")
    p = sub.add_parser("corr", parents=[common, data], help="cross-signal correlation matrix")
    p.add_argument("--partition", choices=["train", "devel", "test", "all"])
    p = sub.add_parser("stats", parents=[common, data], help="MAC and skewness of gold standards")
    p.add_argument("--gold", help="directory written by 'fuse'")

    p = sub.add_parser("train", parents=[common, data, model], help="grid-search an LSTM per feature set")
    p.add_argument("--directions", help="comma list of uni,bi")
    p.add_argument("--hidden", help="comma list, e.g. 32,64,128")
    p.add_argument("--layers", help="comma list, e.g. 1,2,4")
    p.add_argument("--lr", help="comma list, e.g. 0.0001,0.001,0.005")

    p = sub.add_parser("eval", parents=[common, data, model], help="evaluate a saved model")
    p.add_argument("--model", help="model file written by 'train'")

    p = sub.add_parser("latefuse", parents=[common, data, model], help="decision-level fusion of trained models")
    p.add_argument("--from", dest="from_dir", help="output directory of 'train'")
    p.add_argument("--fusion", action="append", dest="fusions", help="'+'-joined feature sets, e.g. audio+video")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    cfg.command = args.command
    get = lambda name: getattr(args, name, None)  # noqa: E731
    if get("seed") is not None:
        cfg.seed = args.seed
    if get("out") is not None:
        cfg.out = args.out
    if get("data") is not None:
        cfg.data = args.data
    if get("combo"):
        cfg.combos = args.combo
    if get("feature_sets"):
        cfg.feature_sets = args.feature_sets
    if get("target"):
        cfg.target = args.target
    if get("partition"):
        cfg.partition = args.partition
    if get("fusions"):
        cfg.fusions = args.fusions
    if get("savgol_window") is not None:
        cfg.load.savgol_window = args.savgol_window
    if get("savgol_order") is not None:
        cfg.load.savgol_polyorder = args.savgol_order
    if get("band_fraction") is not None:
        cfg.align.band_fraction = args.band_fraction
    if get("max_iters") is not None:
        cfg.align.max_iters = args.max_iters
    if get("raw_scale"):
        cfg.scale = None
    if get("max_epochs") is not None:
        cfg.model.max_epochs = args.max_epochs
        cfg.late_model = replace(cfg.late_model, max_epochs=args.max_epochs)
    if get("patience") is not None:
        cfg.model.patience = args.patience
        cfg.late_model = replace(cfg.late_model, patience=args.patience)
    if get("subjects") is not None:
        cfg.synth.n_subjects = args.subjects
    if get("duration") is not None:
        cfg.synth.duration_s = args.duration
    if get("rater_noise") is not None:
        cfg.synth.rater_noise_sd = args.rater_noise
    grid = cfg.grid
    if get("directions"):
        dirs = _csv_list(args.directions)
        bad = [d for d in dirs if d not in ("uni", "bi")]
        if bad:
            raise UsageError(f"--directions accepts uni,bi; got {','.join(bad)}")
        grid = replace(grid, bidirectional=tuple(d == "bi" for d in dirs))
    if get("hidden"):
        grid = replace(grid, hidden=tuple(_csv_list(args.hidden, int)))
    if get("layers"):
        grid = replace(grid, layers=tuple(_csv_list(args.layers, int)))
    if get("lr"):
        grid = replace(grid, lr=tuple(_csv_list(args.lr, float)))
    cfg.grid = grid
    cfg.synth.seed = cfg.seed
    cfg.model.seed = cfg.seed
    cfg.late_model = replace(cfg.late_model, seed=cfg.seed)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cfg = resolve_config(args)
        if args.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        if args.command == "synth":
            try:
                cfg.synth.validate()
            except ValueError as exc:
                raise UsageError(str(exc)) from None
    except UsageError as exc:
        parser.error(f"{args.command}: {exc}")
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    handlers = {
        "synth": lambda: cmd_synth(cfg, args.jobs),
        "fuse": lambda: cmd_fuse(cfg, args.jobs),
        "agreement": lambda: cmd_agreement(cfg, args.jobs),
        "corr": lambda: cmd_corr(cfg, args.jobs),
        "stats": lambda: cmd_stats(cfg, args.jobs, args.gold),
        "train": lambda: cmd_train(cfg, args.jobs),
        "eval": lambda: cmd_eval(cfg, args.jobs, args.model),
        "latefuse": lambda: cmd_latefuse(cfg, args.jobs, args.from_dir),
    }
    try:
        return handlers[args.command]()
    except UsageError as exc:
        parser.error(f"{args.command}: {exc}")
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
