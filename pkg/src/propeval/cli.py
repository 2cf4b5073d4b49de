"""``propeval`` command line.

Every option can also come from a TOML file given with ``--config``; keys
are option names (dashes or underscores), either at top level or inside a
table named after the subcommand. Flags on the command line win.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import BASELINES, BoxParamStats, estimate_box_stats
from .data_io import (
    POLICIES,
    FormatError,
    ImageProposals,
    PolicyError,
    ProposalSet,
    apply_blacklist,
    load_blacklist,
    load_ground_truth,
    load_proposals,
    proposals_record,
    select_image,
    select_proposals,
)
from .detection import average_precision, filter_by_proposals, load_detections, mean_ap, nms
from .evaluation import DEFAULT_COUNTS, RepeatabilityResult, evaluate_recall, evaluate_repeatability
from .geometry import RECALL_THRESHOLDS, REPEATABILITY_THRESHOLDS, BoundingBox, size_bin_edges
from .imaging import ImageDecodeError, decode_image, encode_png, list_images
from .perturbations import KINDS, PerturbationSpec, perturbation_suite, rotation_crop, perturbed_size
from .pipeline import STOCHASTIC, default_threads, derive_seed, generate, image_repeatability, merge_by_spec, parallel_map
from .report import (
    CURVE_COLUMNS,
    base_meta,
    grid_desc,
    pr_rows,
    recall_rows,
    recall_summary,
    render_csv_svg,
    repeatability_rows,
    repeatability_summary,
    write_ap_csv,
    write_csv,
    write_json,
)

logger = logging.getLogger("propeval")

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


PERTURBATION_KINDS = ("scale", "blur", "rotation", "illumination", "jpeg")


def _int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    return [int(x) for x in str(text).split(",") if x.strip()]


def _kinds(text) -> list[str]:
    items = text if isinstance(text, (list, tuple)) else str(text).split(",")
    kinds = []
    for k in (x.strip() for x in items):
        if k == "all":
            kinds.extend(PERTURBATION_KINDS)
        elif k in KINDS:
            kinds.append(k)
        elif k:
            raise ConfigError(f"unknown perturbation kind {k!r}")
    return list(dict.fromkeys(kinds))


def _specs(kinds: list[str]) -> list[PerturbationSpec]:
    return [s for k in kinds for s in perturbation_suite(k)]


def _need_path(path, what: str) -> Path:
    if path is None:
        raise ConfigError(f"missing {what}")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} {p} does not exist")
    return p


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _spec_dir(spec: PerturbationSpec) -> str:
    return spec.param_label() or "none"


def _report_failures(failed: list[str]) -> int:
    if failed:
        print(f"failed for {len(failed)} image(s): {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


# ---- perturb -----------------------------------------------------------------


def cmd_perturb(args) -> int:
    images = list_images(_need_path(args.images, "image directory"))
    specs = _specs(_kinds(args.kinds))
    out = _out_dir(args)

    def work(path: Path):
        try:
            image = decode_image(path)
        except ImageDecodeError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return path.stem, None
        h, w = image.shape[:2]
        crop = rotation_crop(w, h, args.max_angle)
        lines = []
        for spec in specs:
            target = out / spec.kind / _spec_dir(spec)
            target.mkdir(parents=True, exist_ok=True)
            pert = _apply(image, spec, crop)
            encode_png(pert, target / f"{path.stem}.png")
            lines.append(_meta_record(path.stem, w, h, spec, crop, pert.shape[1], pert.shape[0]))
        return path.stem, lines

    results = parallel_map(work, images, args.threads)
    with open(out / "metadata.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for _, lines in results:
            for rec in lines or ():
                fh.write(json.dumps(rec) + "\n")
    return _report_failures([i for i, lines in results if lines is None])


def _apply(image, spec, crop):
    from .perturbations import apply_perturbation

    return apply_perturbation(image, spec, crop)


def _meta_record(image_id, w, h, spec, crop, pw, ph) -> dict:
    return {
        "image_id": image_id,
        "kind": spec.kind,
        "param": spec.param_label(),
        "width": w,
        "height": h,
        "perturbed_width": pw,
        "perturbed_height": ph,
        "crop": [crop.x0, crop.y0, crop.x1, crop.y1] if spec.kind == "rotation" else None,
    }


# ---- baseline ----------------------------------------------------------------


def _load_stats(args) -> BoxParamStats | None:
    if args.method not in STOCHASTIC:
        return None
    if args.train_gt is None:
        raise ConfigError(f"--train-gt is required for the {args.method} baseline")
    if args.seed is None:
        raise ConfigError(f"--seed is required for the {args.method} baseline")
    src = _need_path(args.train_gt, "training ground truth")
    if src.suffix == ".json":
        return BoxParamStats.from_dict(json.loads(src.read_text(encoding="utf-8")))
    return estimate_box_stats(load_ground_truth(src), trim=args.trim)


def cmd_baseline(args) -> int:
    stats = _load_stats(args)
    n = args.n
    failed = []
    if args.images is not None:
        paths = list_images(_need_path(args.images, "image directory"))
        units = [(p.stem, p) for p in paths]
    elif args.method == "superpixels":
        raise ConfigError("--images is required for the superpixels baseline")
    elif args.gt is not None:
        gt = load_ground_truth(_need_path(args.gt, "ground truth"))
        units = [(a.image_id, (int(a.width), int(a.height))) for a in gt.images.values()]
    else:
        raise ConfigError("need --images or --gt to know the image sizes")

    def work(unit):
        image_id, src = unit
        if isinstance(src, Path):
            try:
                image = decode_image(src)
            except ImageDecodeError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return image_id, None
        else:
            image = np.zeros((src[1], src[0], 3), dtype=np.uint8)
        seed = derive_seed(args.seed, image_id) if args.seed is not None else None
        return image_id, generate(args.method, image, n, image_id, seed, stats)

    results = parallel_map(work, units, args.threads)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for image_id, props in results:
            if props is None:
                failed.append(image_id)
                continue
            fh.write(json.dumps(proposals_record(props), separators=(", ", ": ")) + "\n")
    if args.save_stats and stats is not None:
        Path(args.save_stats).write_text(json.dumps(stats.to_dict(), indent=2) + "\n", encoding="utf-8")
    return _report_failures(failed)


# ---- eval-recall -------------------------------------------------------------


def _load_gt(args):
    gt = load_ground_truth(_need_path(args.gt, "ground truth"), args.gt_format)
    if getattr(args, "blacklist", None):
        gt = apply_blacklist(gt, load_blacklist(_need_path(args.blacklist, "blacklist")))
    return gt


def cmd_eval_recall(args) -> int:
    gt = _load_gt(args)
    counts = _int_list(args.n) if args.n else list(DEFAULT_COUNTS)
    out = _out_dir(args)
    paths = [_need_path(p, "proposal file") for p in args.proposals]
    reports = parallel_map(
        lambda p: evaluate_recall(
            gt,
            load_proposals(p, args.method if len(paths) == 1 else None),
            counts,
            args.policy,
            include_difficult=not args.exclude_difficult,
        ),
        paths,
        args.threads,
    )
    meta = base_meta(
        command="eval-recall",
        thresholds=grid_desc(RECALL_THRESHOLDS),
        auc="trapezoid over the threshold range, normalised by its width",
        policy=args.policy,
        counts=",".join(map(str, counts)),
        difficult="excluded" if args.exclude_difficult else "included",
    )
    files: dict[str, list] = {}
    for r in reports:
        for name, rows in recall_rows(r).items():
            files.setdefault(name, []).extend(rows)
    for name, rows in files.items():
        write_csv(out / name, CURVE_COLUMNS, rows, meta)
    write_json(out / "summary.json", {"meta": dict(meta), "methods": [recall_summary(r) for r in reports]})
    return 0


# ---- eval-repeatability ------------------------------------------------------


def _repeatability_internal(args, specs):
    stats = _load_stats(args)
    paths = list_images(_need_path(args.images, "image directory"))

    def work(path: Path):
        try:
            image = decode_image(path)
        except ImageDecodeError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return path.stem, None
        return path.stem, image_repeatability(
            image, path.stem, args.method, specs, args.n[0], args.seed, stats, args.hull, args.max_angle
        )

    return parallel_map(work, paths, args.threads)


def _read_metadata(root: Path) -> dict[tuple[str, str, str], dict]:
    meta = {}
    path = _need_path(root / "metadata.jsonl", "perturbation metadata")
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    rec = json.loads(line)
                    meta[(rec["image_id"], rec["kind"], rec["param"])] = rec
                except (json.JSONDecodeError, KeyError) as exc:
                    raise FormatError(f"{path}:{lineno}: bad metadata record ({exc})") from None
    return meta


def _repeatability_external(args, specs):
    n = args.n[0]
    ref_set = load_proposals(_need_path(args.reference, "reference proposals"))
    root = _need_path(args.perturbed_root, "perturbed proposal root")
    meta = _read_metadata(root)
    pert_sets = {}
    for spec in specs:
        pert_sets[spec] = load_proposals(_need_path(root / spec.kind / _spec_dir(spec) / "proposals.jsonl", f"proposals for {spec}"))

    def work(item):
        image_id, ref = item
        ref = select_image(ref, n, args.policy)
        out = []
        for spec in specs:
            rec = meta.get((image_id, spec.kind, spec.param_label()))
            pert = pert_sets[spec].images.get(image_id)
            if rec is None or pert is None:
                return image_id, None
            w, h = float(rec["width"]), float(rec["height"])
            crop = BoundingBox(*rec["crop"]) if rec.get("crop") else None
            pert = select_image(pert, n, args.policy)
            out.append(evaluate_repeatability(ref, pert, spec, crop, (w, h), size_bin_edges(w, h), hull=args.hull))
        return image_id, out

    return parallel_map(work, sorted(ref_set.images.items()), args.threads)


def cmd_eval_repeatability(args) -> int:
    specs = _specs(_kinds(args.kinds))
    if args.reference is not None:
        per_image = _repeatability_external(args, specs)
        method = args.method or Path(args.reference).stem
    elif args.images is not None:
        if args.method is None:
            raise ConfigError("--method is required when generating proposals from --images")
        per_image = _repeatability_internal(args, specs)
        method = args.method
    else:
        raise ConfigError("need --images (built-in baselines) or --reference with --perturbed-root")
    ok = [res for _, res in per_image if res is not None]
    failed = [i for i, res in per_image if res is None]
    merged = merge_by_spec(ok)
    out = _out_dir(args)
    meta = base_meta(
        command="eval-repeatability",
        method=method,
        n=args.n[0],
        seed=args.seed if args.seed is not None else "",
        thresholds=grid_desc(REPEATABILITY_THRESHOLDS),
        size_bins="10 log-spaced sqrt-area bins from 10 px to the image diagonal",
        rotation_match="axis-aligned hull" if args.hull else "polygon",
        max_angle=args.max_angle,
    )
    for name, rows in repeatability_rows(method, args.n[0], merged).items():
        write_csv(out / name, CURVE_COLUMNS, rows, meta)
    write_json(
        out / "summary.json",
        {"meta": dict(meta), "method": method, "specs": repeatability_summary(merged), "failed": failed},
    )
    return _report_failures(failed)


# ---- eval-detection ----------------------------------------------------------


def cmd_eval_detection(args) -> int:
    gt = _load_gt(args)
    dets = load_detections(_need_path(args.detections, "detection file"))
    n_raw = sum(len(d) for d in dets.values())
    method = args.method
    if args.proposals:
        props = load_proposals(_need_path(args.proposals, "proposal file"))
        props = select_proposals(props, args.n[0], args.policy)
        dets = filter_by_proposals(dets, props, args.min_iou)
        method = method or props.method
    method = method or "sliding_window"
    n_filtered = sum(len(d) for d in dets.values())
    dets = nms(dets, args.nms)
    curves = {
        cls: average_precision(dets, gt, cls, args.iou, use_11_point=not args.continuous_ap, use_difficult=args.use_difficult)
        for cls in gt.classes
    }
    aps = {cls: c.ap for cls, c in curves.items()}
    m = mean_ap(aps.values()) if aps else float("nan")
    out = _out_dir(args)
    meta = base_meta(
        command="eval-detection",
        method=method,
        min_iou=f"> {args.min_iou}" if args.proposals else "no filtering",
        nms=args.nms,
        ap="continuous" if args.continuous_ap else "VOC2007 11-point",
        match_iou=args.iou,
    )
    write_ap_csv(out / "ap.csv", aps, m, meta)
    write_csv(out / "pr_curves.csv", ("method", "class", "recall", "precision"), pr_rows(method, curves), meta)
    write_json(
        out / "summary.json",
        {
            "meta": dict(meta),
            "method": method,
            "mAP": m,
            "ap": aps,
            "detections": {"raw": n_raw, "filtered": n_filtered, "after_nms": sum(len(d) for d in dets.values())},
        },
    )
    return 0


# ---- report ------------------------------------------------------------------


def cmd_report(args) -> int:
    csvs = []
    for p in args.paths:
        p = _need_path(p, "report input")
        csvs.extend(sorted(p.glob("*.csv")) if p.is_dir() else [p])
    for c in csvs:
        try:
            svg = render_csv_svg(c, logx=args.logx)
        except (KeyError, ValueError) as exc:
            print(f"skipping {c}: {exc}", file=sys.stderr)
            continue
        print(svg)
    return 0


# ---- parser ------------------------------------------------------------------


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with option defaults")
    common.add_argument("--threads", type=int, default=default_threads(), help="worker threads (env PROPEVAL_THREADS)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="propeval", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"propeval {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("perturb", parents=[common], help="write perturbed image trees")
    p.add_argument("--images", help="directory of reference images")
    p.add_argument("--kinds", default="all", help="comma list of perturbation kinds, or 'all'")
    p.add_argument("--max-angle", type=float, default=20.0)
    p.add_argument("--out", required=False, default="perturbed")
    p.set_defaults(func=cmd_perturb)
    subs["perturb"] = p

    p = sub.add_parser("baseline", parents=[common], help="generate baseline proposals")
    p.add_argument("--method", choices=BASELINES, required=False)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--images")
    p.add_argument("--gt", help="JSONL ground truth used for image sizes")
    p.add_argument("--train-gt", help="training annotations (JSONL/VOC) or saved stats (.json)")
    p.add_argument("--trim", type=float, default=0.005)
    p.add_argument("--seed", type=int)
    p.add_argument("--save-stats")
    p.add_argument("--out", default="proposals.jsonl")
    p.set_defaults(func=cmd_baseline)
    subs["baseline"] = p

    p = sub.add_parser("eval-recall", parents=[common], help="ground-truth recall")
    p.add_argument("--gt")
    p.add_argument("--gt-format", choices=("jsonl", "voc-xml-dir"))
    p.add_argument("--proposals", nargs="+", default=[])
    p.add_argument("--method")
    p.add_argument("--n", default=",".join(map(str, DEFAULT_COUNTS)))
    p.add_argument("--policy", choices=POLICIES, default="auto")
    p.add_argument("--blacklist")
    p.add_argument("--exclude-difficult", action="store_true")
    p.add_argument("--out", default="recall")
    p.set_defaults(func=cmd_eval_recall)
    subs["eval-recall"] = p

    p = sub.add_parser("eval-repeatability", parents=[common], help="repeatability under perturbations")
    p.add_argument("--images", help="reference images; proposals come from a built-in baseline")
    p.add_argument("--method")
    p.add_argument("--train-gt")
    p.add_argument("--trim", type=float, default=0.005)
    p.add_argument("--seed", type=int)
    p.add_argument("--reference", help="reference proposals JSONL for an external method")
    p.add_argument("--perturbed-root", help="tree written by 'perturb' holding <kind>/<param>/proposals.jsonl")
    p.add_argument("--policy", choices=POLICIES, default="auto")
    p.add_argument("--n", type=_int_list, default=[1000])
    p.add_argument("--kinds", default="none,all")
    p.add_argument("--max-angle", type=float, default=20.0)
    p.add_argument("--hull", action="store_true", help="match rotated proposals by their axis-aligned hulls")
    p.add_argument("--out", default="repeatability")
    p.set_defaults(func=cmd_eval_repeatability)
    subs["eval-repeatability"] = p

    p = sub.add_parser("eval-detection", parents=[common], help="detection AP with proposal filtering")
    p.add_argument("--gt")
    p.add_argument("--gt-format", choices=("jsonl", "voc-xml-dir"))
    p.add_argument("--detections")
    p.add_argument("--proposals")
    p.add_argument("--method")
    p.add_argument("--n", type=_int_list, default=[1000])
    p.add_argument("--policy", choices=POLICIES, default="auto")
    p.add_argument("--min-iou", type=float, default=0.8)
    p.add_argument("--nms", type=float, default=0.5)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--continuous-ap", action="store_true")
    p.add_argument("--use-difficult", action="store_true")
    p.add_argument("--blacklist")
    p.add_argument("--out", default="detection")
    p.set_defaults(func=cmd_eval_detection)
    subs["eval-detection"] = p

    p = sub.add_parser("report", parents=[common], help="render curve CSVs as SVG charts")
    p.add_argument("paths", nargs="+")
    p.add_argument("--logx", action="store_true")
    p.set_defaults(func=cmd_report)
    subs["report"] = p
    return parser, subs


def _config_defaults(path: str, command: str) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from None
    merged = {k: v for k, v in data.items() if not isinstance(v, dict)}
    merged.update(data.get(command, {}))
    return {k.replace("-", "_"): v for k, v in merged.items()}


def parse_args(argv=None) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        defaults = _config_defaults(args.config, args.command)
        sub = subs[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(defaults) - known)
        if unknown:
            raise ConfigError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
        if "n" in defaults and args.command in ("eval-repeatability", "eval-detection"):
            defaults["n"] = _int_list(defaults["n"])
        if "proposals" in defaults and isinstance(defaults["proposals"], str):
            defaults["proposals"] = [defaults["proposals"]]
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, PolicyError, ImageDecodeError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
