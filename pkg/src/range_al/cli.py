"""Command-line surface: project, run, le, ttda, tensor-check, synth.

Configuration is a flat key=value text file whose names mirror the published
experiment table (init_set_size, budget, mc_dropout, al_steps, aggregation,
...). The RANGE_AL_SEED environment variable overrides manifest seeds.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import al_loop, dataset_io, metrics, scorer, synth_data
from .augmentation import AugKind, AugmentationSpec
from .errors import RangeAlError
from .projection import SensorConfig, project, valid_fraction
from .uncertainty import HeuristicKind

# --- flat key=value config ----------------------------------------------------

FULL_SCALE_CONFIG = {
    "range_image_resolution": "1024x64",
    "fov_up_deg": "3.0",
    "fov_down_deg": "25.0",
    "total_pool_size": "6000",
    "test_pool_size": "2000",
    "init_set_size": "240",
    "budget": "240",
    "mc_dropout": "0.2",
    "mc_iterations": "8",
    "al_steps": "25",
    "aggregation": "sum",
    "max_train_iterations": "100000",
    "learning_rate": "0.01",
    "lr_decay": "0.99",
    "weight_decay": "0.0001",
    "batch_size": "16",
    "evaluation_period": "500",
    "early_stop_metric": "train_miou",
    "patience": "15",
    "seed": "0",
}

DESK_SCALE_OVERRIDES = {
    "range_image_resolution": "128x32",
    "total_pool_size": "600",
    "test_pool_size": "200",
    "init_set_size": "24",
    "budget": "24",
    "al_steps": "25",
    "mc_iterations": "8",
    "max_train_iterations": "700",
    "learning_rate": "8.0",
    "lr_decay": "0.90",
    "evaluation_period": "40",
    "patience": "6",
    "pixels_per_image": "512",
    "eval_max_images": "80",
    "da_coarse_max_height": "8",
    "da_coarse_max_width": "16",
    "da_remission_sigma2_min": "0.0005",
    "da_remission_sigma2_max": "0.002",
}


def parse_flat_config(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise RangeAlError(f"config line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path: str | None, desk_scale: bool = False) -> dict:
    cfg = dict(FULL_SCALE_CONFIG)
    if desk_scale:
        cfg.update(DESK_SCALE_OVERRIDES)
    if path:
        cfg.update(parse_flat_config(Path(path).read_text()))
    return cfg


def sensor_from_config(cfg: dict) -> SensorConfig:
    w, h = cfg["range_image_resolution"].lower().split("x")
    return SensorConfig(
        fov_up=math.radians(float(cfg["fov_up_deg"])),
        fov_down=math.radians(float(cfg["fov_down_deg"])),
        width=int(w),
        height=int(h),
    )


def scorer_config_from(cfg: dict) -> scorer.ScorerConfig:
    def opt_int(key):
        return int(cfg[key]) if cfg.get(key) not in (None, "", "none") else None

    return scorer.ScorerConfig(
        kind=cfg.get("scorer_kind", "builtin"),
        mc_iterations=int(cfg["mc_iterations"]),
        dropout_rate=float(cfg["mc_dropout"]),
        learning_rate=float(cfg["learning_rate"]),
        lr_decay=float(cfg["lr_decay"]),
        weight_decay=float(cfg["weight_decay"]),
        batch_size=int(cfg["batch_size"]),
        max_iterations=int(cfg["max_train_iterations"]),
        eval_period=int(cfg["evaluation_period"]),
        patience=int(cfg["patience"]),
        early_stop_metric=cfg["early_stop_metric"],
        pixels_per_image=opt_int("pixels_per_image"),
        eval_max_images=opt_int("eval_max_images"),
        external_dir=cfg.get("external_dir"),
    )


_DA_DEFAULT_LIST = "cyclic_shift,gaussian_depth_noise,gaussian_remission_noise,random_dropout_mask,coarse_dropout,instance_cut_paste"


def da_specs_from(cfg: dict) -> tuple:
    """Build the training-time pipeline from da_* config keys."""
    names = [n.strip() for n in cfg.get("da_transforms", _DA_DEFAULT_LIST).split(",") if n.strip()]
    prob = float(cfg.get("da_probability", "0.5"))
    specs = []
    for name in names:
        kind = AugKind(name)
        params = {}
        if kind is AugKind.RANDOM_DROPOUT_MASK:
            params = {
                "p_min": float(cfg.get("da_dropout_p_min", "0.1")),
                "p_max": float(cfg.get("da_dropout_p_max", "0.5")),
            }
        elif kind is AugKind.GAUSSIAN_DEPTH_NOISE:
            params = {
                "sigma2_min": float(cfg.get("da_depth_sigma2_min", "0.05")),
                "sigma2_max": float(cfg.get("da_depth_sigma2_max", "0.1")),
                "sigma_is_std": cfg.get("da_sigma_is_std", "false") == "true",
            }
        elif kind is AugKind.GAUSSIAN_REMISSION_NOISE:
            params = {
                "sigma2_min": float(cfg.get("da_remission_sigma2_min", "0.5")),
                "sigma2_max": float(cfg.get("da_remission_sigma2_max", "1.0")),
                "sigma_is_std": cfg.get("da_sigma_is_std", "false") == "true",
            }
        elif kind is AugKind.CYCLIC_SHIFT:
            params = {"max_angle_deg": float(cfg.get("da_shift_max_deg", "22.5"))}
        elif kind is AugKind.COARSE_DROPOUT:
            params = {
                "max_holes": int(cfg.get("da_coarse_max_holes", "5")),
                "min_holes": int(cfg.get("da_coarse_min_holes", "2")),
                "max_height": int(cfg.get("da_coarse_max_height", "16")),
                "min_height": int(cfg.get("da_coarse_min_height", "1")),
                "max_width": int(cfg.get("da_coarse_max_width", "64")),
                "min_width": int(cfg.get("da_coarse_min_width", "1")),
            }
        elif kind is AugKind.INSTANCE_CUT_PASTE:
            classes = cfg.get("da_paste_classes", "")
            params = {"classes": tuple(int(c) for c in classes.split(",") if c.strip())}
        specs.append(AugmentationSpec(kind, params=params, probability=prob))
    return tuple(specs)


def al_config_from(cfg: dict, heuristic: HeuristicKind, da_on: bool, seed: int) -> al_loop.AlConfig:
    return al_loop.AlConfig(
        init_size=int(cfg["init_set_size"]),
        budget=int(cfg["budget"]),
        steps=int(cfg["al_steps"]),
        heuristic=heuristic,
        da=da_specs_from(cfg) if da_on else (),
        scorer=scorer_config_from(cfg),
        seed=seed,
        aggregation=cfg["aggregation"],
    )


# --- data loading ---------------------------------------------------------------


def load_dataset(manifest_path: str, label_map_path: str, cfg: dict, seed: int) -> al_loop.AlData:
    """Parse, label and project the pool/test split of a dataset manifest."""
    manifest = dataset_io.load_manifest(manifest_path, seed=seed)
    label_map = dataset_io.load_label_map(label_map_path)
    pool_idx, test_idx = dataset_io.split_pool(
        manifest, int(cfg["total_pool_size"]), int(cfg["test_pool_size"]), seed
    )
    sensor = sensor_from_config(cfg)
    root = Path(manifest_path).parent

    def load_entry(i: int):
        entry = manifest.entries[i]
        cloud = dataset_io.parse_point_cloud((root / entry.scan_path).read_bytes(), name=Path(entry.scan_path).stem)
        labels, instances = dataset_io.parse_labels((root / entry.label_path).read_bytes(), label_map)
        cloud.labels, cloud.instances = labels, instances
        return project(cloud, sensor)

    pool_images = [load_entry(int(i)) for i in pool_idx]
    test_images = [load_entry(int(i)) for i in test_idx]
    return al_loop.AlData(
        pool_images=pool_images,
        test_images=test_images,
        num_classes=label_map.num_classes,
        pool_ids=[int(i) for i in pool_idx],
        test_ids=[int(i) for i in test_idx],
    )


# --- subcommands -----------------------------------------------------------------


def cmd_project(args) -> int:
    sensor = SensorConfig(
        fov_up=math.radians(args.fov_up_deg),
        fov_down=math.radians(args.fov_down_deg),
        width=args.width,
        height=args.height,
    )
    label_map = dataset_io.load_label_map(args.label_map) if args.label_map else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failures = 0
    for scan in args.scans:
        try:
            scan_path = Path(scan)
            cloud = dataset_io.parse_point_cloud(scan_path.read_bytes(), name=scan_path.stem)
            if label_map is not None and args.labels_dir:
                label_path = Path(args.labels_dir) / (scan_path.stem + ".label")
                cloud.labels, cloud.instances = dataset_io.parse_labels(label_path.read_bytes(), label_map)
            img = project(cloud, sensor)
            dest = out / (scan_path.stem + ".mcpt")
            scorer.write_range_image(img, dest)
            print(f"{scan} -> {dest}  valid_fraction={dataset_io.fmt_float(valid_fraction(img))}")
        except (RangeAlError, OSError) as exc:
            print(f"error: {scan}: {exc}", file=sys.stderr)
            failures += 1
    return 1 if failures else 0


def _write_curves_csv(rows, path: Path) -> None:
    lines = ["curve_id,heuristic,da_flag,n_labeled,miou"]
    for curve_id, heuristic, da_flag, n, miou in rows:
        lines.append(f"{curve_id},{heuristic},{da_flag},{n},{dataset_io.fmt_float(miou)}")
    path.write_text("\n".join(lines) + "\n")


def _run_cell(cfg, data, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    return al_loop.run_and_write(cfg, data, out_dir, progress=True, checkpoints=True)


def cmd_run(args) -> int:
    manifest_cfg = parse_flat_config(Path(args.manifest).read_text())
    for key in ("dataset_manifest", "output_dir", "matrix"):
        if key not in manifest_cfg:
            print(f"error: run manifest missing {key!r}", file=sys.stderr)
            return 1
    cfg = load_config(manifest_cfg.get("config"), desk_scale=args.desk_scale)
    out_root = Path(manifest_cfg["output_dir"])
    out_root.mkdir(parents=True, exist_ok=True)

    env_seed = os.environ.get("RANGE_AL_SEED")
    if env_seed is not None:
        seeds = [int(env_seed)]
    elif "seeds" in manifest_cfg:
        seeds = [int(s) for s in manifest_cfg["seeds"].split(",")]
    else:
        seeds = [int(cfg["seed"])]

    cells = []
    for cell in manifest_cfg["matrix"].split(","):
        cell = cell.strip()
        if not cell:
            continue
        heuristic_name, da_flag = cell.split(":")
        cells.append((HeuristicKind(heuristic_name.strip()), da_flag.strip() == "on"))

    label_map_path = manifest_cfg.get("label_map", str(Path(manifest_cfg["dataset_manifest"]).parent / "labelmap.txt"))

    failures = []
    curve_rows = []

    def execute(job):
        heuristic, da_on, seed = job
        curve_id = f"{heuristic.value}_{'da' if da_on else 'noda'}_s{seed}"
        try:
            data = load_dataset(manifest_cfg["dataset_manifest"], label_map_path, cfg, seed)
            al_cfg = al_config_from(cfg, heuristic, da_on, seed)
            record = _run_cell(al_cfg, data, out_root / curve_id)
            return curve_id, heuristic.value, da_on, record, None
        except Exception as exc:  # noqa: BLE001 - cell isolation is the contract
            return curve_id, heuristic.value, da_on, None, exc

    jobs = [(h, d, s) for s in seeds for (h, d) in cells]
    if args.jobs > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(execute, jobs))
    else:
        results = [execute(j) for j in jobs]

    for curve_id, heuristic, da_on, record, exc in results:
        if exc is not None:
            failures.append((curve_id, exc))
            print(f"error: cell {curve_id}: {exc}", file=sys.stderr)
            continue
        for step in record.steps:
            curve_rows.append((curve_id, heuristic, "on" if da_on else "off", step.n_labeled, step.test_miou))

    _write_curves_csv(curve_rows, out_root / "curves.csv")
    if failures:
        print(f"{len(failures)} cell(s) failed: {', '.join(c for c, _ in failures)}", file=sys.stderr)
        return 1
    return 0


def _read_curves_csv(path: Path) -> dict:
    curves = {}
    lines = path.read_text().splitlines()
    for line in lines[1:]:
        curve_id, _, _, n, miou = line.split(",")
        curves.setdefault(curve_id, []).append((int(n), float(miou)))
    return {cid: metrics.LearningCurve(points=pts) for cid, pts in curves.items()}


def cmd_le(args) -> int:
    curves = _read_curves_csv(Path(args.curves))
    if args.baseline not in curves:
        print(f"error: baseline {args.baseline!r} not in curves", file=sys.stderr)
        return 1
    levels = [float(x) for x in args.levels.split(",")]
    baseline = curves[args.baseline]
    lines = ["curve_id,level,le,le_inverse,reachable"]
    for curve_id, curve in sorted(curves.items()):
        for level in levels:
            try:
                le = metrics.labeling_efficiency(baseline, curve, level)
                lines.append(
                    f"{curve_id},{dataset_io.fmt_float(level)},{dataset_io.fmt_float(le)},"
                    f"{dataset_io.fmt_float(1.0 / le)},1"
                )
            except RangeAlError:
                lines.append(f"{curve_id},{dataset_io.fmt_float(level)},nan,nan,0")
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote {args.out}")
    return 0


def cmd_ttda(args) -> int:
    cfg = load_config(args.config, desk_scale=args.desk_scale)
    record = dataset_io.read_run_record(Path(args.record))
    model = scorer.load_model(args.checkpoint)
    seed = record.config["seed"]

    data = load_dataset(args.dataset_manifest, args.label_map, cfg, seed)
    state = al_loop.init_pools(range(len(data.pool_images)), record.config["init_size"], seed)
    for step_rec in record.steps[: args.step]:
        state.labeled |= set(step_rec.selected_ids)
        state.unlabeled -= set(step_rec.selected_ids)
    state.check()

    al_cfg = al_loop.AlConfig.from_dict(record.config)
    curves = al_loop.analyze_tt_da(model, data, state, list(da_specs_from(cfg)), al_cfg, step=args.step)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("L", "U", "TTDA_L", "TTDA_U"):
        lines = ["rank,score,within_budget"]
        for rank, score in enumerate(curves.curves[name]):
            lines.append(f"{rank},{dataset_io.fmt_float(score)},{1 if rank < curves.budget_cutoff else 0}")
        (out / f"scores_{name}.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote 4 score curves to {out} (budget cutoff {curves.budget_cutoff})")
    return 0


def cmd_tensor_check(args) -> int:
    failures = 0
    for path in args.files:
        try:
            t = scorer.load_external_tensor(path)
            sums = t.probs.sum(axis=2)
            normalized = bool(np.all(np.abs(sums - 1.0) <= 1e-4))
            print(
                f"{path}: ok dims={t.probs.shape[1]}x{t.probs.shape[0]}x{t.num_classes}x{t.mc_iterations} "
                f"probability_normalized={'yes' if normalized else 'no'}"
            )
        except (RangeAlError, OSError) as exc:
            print(f"{path}: FAIL {exc}", file=sys.stderr)
            failures += 1
    return 1 if failures else 0


def cmd_synth(args) -> int:
    w, h = args.grid.lower().split("x")
    spec = synth_data.SceneSpec(
        num_classes=args.classes,
        seed=args.seed,
        duplicates=args.duplicates,
        sensor=SensorConfig(width=int(w), height=int(h)),
    )
    manifest = synth_data.emit_dataset(spec, args.samples, args.out)
    print(f"wrote {args.samples} scans under {args.out} (manifest {manifest})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="range-al", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project", help="project scans to range-image container files")
    p.add_argument("scans", nargs="+", help="scan .bin files")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--width", type=int, default=1024)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--fov-up-deg", type=float, default=3.0)
    p.add_argument("--fov-down-deg", type=float, default=25.0)
    p.add_argument("--labels-dir", help="directory of matching .label files")
    p.add_argument("--label-map", help="label map file")
    p.set_defaults(fn=cmd_project)

    p = sub.add_parser("run", help="execute a heuristic/DA experiment matrix")
    p.add_argument("--manifest", required=True, help="run manifest (key=value)")
    p.add_argument("--desk-scale", action="store_true", help="apply the desk-scale preset")
    p.add_argument("--jobs", type=int, default=1, help="concurrent matrix cells")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("le", help="labeling-efficiency table from a curves CSV")
    p.add_argument("--curves", required=True)
    p.add_argument("--baseline", required=True, help="baseline curve id")
    p.add_argument("--levels", required=True, help="comma-separated mIoU levels")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_le)

    p = sub.add_parser("ttda", help="test-time-DA score analysis of a finished run")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--record", required=True, help="run record CSV")
    p.add_argument("--dataset-manifest", required=True)
    p.add_argument("--label-map", required=True)
    p.add_argument("--config", help="flat config file")
    p.add_argument("--desk-scale", action="store_true")
    p.add_argument("--step", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ttda)

    p = sub.add_parser("tensor-check", help="validate MCPT tensor files")
    p.add_argument("files", nargs="+")
    p.set_defaults(fn=cmd_tensor_check)

    p = sub.add_parser("synth", help="emit a synthetic dataset in the standard formats")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=60)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duplicates", type=int, default=8)
    p.add_argument("--grid", default="512x64", help="generation grid WxH")
    p.set_defaults(fn=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
