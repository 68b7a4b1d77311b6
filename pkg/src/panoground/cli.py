"""Command-line surface.

Exit codes: 0 success, 1 contract violation (bad shapes, unknown classes,
invalid parameter values), 2 I/O or file-format failure.  Every command is
a pure function of its inputs and flags, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from scipy.special import expit

from .densify import (AffordanceMap, DensifierParams, cosine_affinity,
                      confidence_map, densify, select_seeds)
from .errors import ContractError, ParameterError, PFTFormatError
from .geometry import (AugmentParams, KeypointAnnotation, annotation_from_dict,
                       augment, blur_supervision, keypoints_to_heatmap,
                       load_vocabulary, sample_augment_params)
from .metrics import evaluate_dataset
from .objectives import LossWeights, optimize_heatmap, two_blob_target
from .pft import read_pft, write_pft, write_pgm
from .pipeline import forward, load_config, load_params
from .spectral import TextEmbeddings, VisualTokens


def _load_annotation_file(path) -> list[KeypointAnnotation]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    objs = raw if isinstance(raw, list) else [raw]
    return [annotation_from_dict(obj) for obj in objs]


def _load_annotations(path) -> list[KeypointAnnotation]:
    path = Path(path)
    if path.is_dir():
        anns = []
        for item in sorted(path.glob("*.json")):
            anns.extend(_load_annotation_file(item))
        if not anns:
            raise FileNotFoundError(f"{path}: no *.json annotation files")
        return anns
    return _load_annotation_file(path)


def _write_pgm_stack(base: Path, values: np.ndarray, classes) -> None:
    for idx, name in enumerate(classes):
        write_pgm(base.with_suffix(f".{name}.pgm"), values[idx])


def cmd_gen_supervision(args) -> int:
    anns = _load_annotation_file(args.annotations)
    if len(anns) != 1:
        raise ParameterError("gen-supervision expects a single-image annotation file")
    ann = anns[0]
    classes = load_vocabulary(args.classes)
    heat = keypoints_to_heatmap(ann, classes, args.sigma)
    if not ann.entries:
        print(f"warning: {ann.image_id}: no keypoints, writing all-zero maps",
              file=sys.stderr)
    out = blur_supervision(heat, args.sigma)
    write_pft(args.out, out)
    if args.pgm:
        _write_pgm_stack(Path(args.out), out, classes)
    return 0


def cmd_eval(args) -> int:
    classes = load_vocabulary(args.classes)
    annotations = _load_annotations(args.annotations)
    report = evaluate_dataset(args.pred, annotations, classes, args.sigma,
                              jobs=args.jobs)
    base = Path(args.report)
    if base.suffix in (".json", ".csv"):
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    report.write_json(base.with_suffix(".json"))
    report.write_csv(base.with_suffix(".csv"))
    if args.pgm:
        evaluated = {row.image_id for row in report.rows}
        for ann in annotations:
            if ann.image_id not in evaluated:
                continue
            gt = blur_supervision(
                keypoints_to_heatmap(ann, classes, args.sigma), args.sigma)
            for idx, name in enumerate(classes):
                if ann.points_for(name):
                    write_pgm(base.with_suffix(f".{ann.image_id}.{name}.pgm"),
                              gt[idx])
    for image_id in report.skipped:
        print(f"skipped: {image_id} (missing prediction)", file=sys.stderr)
    if report.skipped or not report.rows:
        return 1
    return 0


def cmd_forward(args) -> int:
    cfg = load_config(args.config)
    params = load_params(args.params)
    features = read_pft(args.features)
    text = read_pft(args.text)
    if features.ndim != 2 or text.ndim != 2:
        raise ContractError("features and text must be 2-D PFT tensors")
    if text.shape[0] != len(cfg.classes):
        raise ContractError(
            f"text rows {text.shape[0]} != {len(cfg.classes)} configured classes")
    v = VisualTokens(features, cfg.grid)
    t = TextEmbeddings(text, cfg.classes)
    heat = forward(v, t, params, cfg)
    write_pft(args.out, heat.values)
    if args.pgm:
        _write_pgm_stack(Path(args.out), heat.values, cfg.classes)
    return 0


def cmd_demo_train(args) -> int:
    try:
        l1, l2, l3 = (float(x) for x in args.weights.split(","))
    except ValueError as exc:
        raise ParameterError(f"bad --weights {args.weights!r}: "
                             "expected three comma-separated numbers") from exc
    weights = LossWeights(lambda1=l1, lambda2=l2, lambda3=l3)
    if args.gt is not None:
        gt = read_pft(args.gt)
        if gt.ndim != 2:
            raise ContractError("--gt must be a 2-D H×W PFT map")
    else:
        gt = two_blob_target()
    logits, trace = optimize_heatmap(gt, args.steps, args.lr, weights,
                                     seed=args.seed)
    with open(args.trace, "w", encoding="utf-8") as fh:
        fh.write("step,bce,kl,rtc,total\n")
        for step, row in enumerate(trace):
            fh.write(f"{step},{row.bce:.8f},{row.kl:.8f},"
                     f"{row.rtc:.8f},{row.total:.8f}\n")
    out = Path(args.out)
    write_pft(out, expit(logits.astype(np.float64)).astype(np.float32))
    write_pft(out.with_suffix(".logits.pft"), logits)
    return 0


def cmd_inspect_affinity(args) -> int:
    features = read_pft(args.features)
    if features.ndim != 2:
        raise ContractError("--features must be an L×D PFT tensor")
    acts_arr = read_pft(args.class_activations)
    if acts_arr.ndim != 2 or acts_arr.shape[1] != features.shape[0]:
        raise ContractError(
            f"--class-activations must be C×L with L={features.shape[0]}")
    tokens = VisualTokens(features, (1, features.shape[0]))
    acts = AffordanceMap(acts_arr, "token", tokens.grid)
    params = DensifierParams(seeds_k=args.topk, temperature=args.temperature,
                             alpha=args.alpha, clamp_negative=not args.no_clamp)
    affinity = cosine_affinity(tokens)
    conf = confidence_map(acts, params.temperature)
    seeds = select_seeds(acts, params.seeds_k)
    refined = densify(acts, affinity, conf, seeds, params)
    out = Path(args.out)
    write_pft(out, refined.values)
    write_pft(out.with_suffix(".affinity.pft"), affinity.values)
    with open(out.with_suffix(".seeds.json"), "w", encoding="utf-8") as fh:
        json.dump({"topk": args.topk, "seeds": seeds}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_augment(args) -> int:
    image = read_pft(args.image)
    maps = read_pft(args.maps)
    explicit = any(x is not None for x in
                   (args.rotation, args.scale, args.shift, args.flip))
    if explicit:
        params = AugmentParams(
            rotation_deg=args.rotation if args.rotation is not None else 0.0,
            scale=args.scale if args.scale is not None else 1.0,
            wrap_shift_px=args.shift if args.shift is not None else 0,
            flip=bool(args.flip),
            seed=args.seed,
        )
    else:
        params = sample_augment_params(args.seed, image.shape[-1])
    image_out, maps_out = augment(image, maps, params)
    prefix = Path(args.out_prefix)
    if prefix.parent != Path("") and not prefix.parent.exists():
        raise FileNotFoundError(f"output directory {prefix.parent} does not exist")
    write_pft(f"{prefix}.image.pft", image_out)
    write_pft(f"{prefix}.maps.pft", maps_out)
    with open(f"{prefix}.params.json", "w", encoding="utf-8") as fh:
        json.dump({
            "rotation_deg": params.rotation_deg,
            "scale": params.scale,
            "wrap_shift_px": params.wrap_shift_px,
            "flip": params.flip,
            "seed": params.seed,
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panoground",
        description="Panoramic affordance heatmap toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-supervision",
                       help="keypoint annotations -> soft heatmap PFT")
    p.add_argument("--annotations", required=True)
    p.add_argument("--classes", required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pgm", action="store_true")
    p.set_defaults(func=cmd_gen_supervision)

    p = sub.add_parser("eval", help="score prediction PFTs against annotations")
    p.add_argument("--pred", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--classes", required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--pgm", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("forward",
                       help="token features + text embeddings -> heatmap PFT")
    p.add_argument("--features", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pgm", action="store_true")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("demo-train",
                       help="fit a free heatmap to supervision by gradient descent")
    p.add_argument("--gt", default=None)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--weights", default="1,1,0")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_demo_train)

    p = sub.add_parser("inspect-affinity",
                       help="dump affinity, seeds, and the densified map")
    p.add_argument("--features", required=True)
    p.add_argument("--topk", type=int, required=True)
    p.add_argument("--class-activations", dest="class_activations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--no-clamp", action="store_true")
    p.set_defaults(func=cmd_inspect_affinity)

    p = sub.add_parser("augment", help="seeded panoramic augmentation")
    p.add_argument("--image", required=True)
    p.add_argument("--maps", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", dest="out_prefix", required=True)
    p.add_argument("--rotation", type=float, default=None)
    p.add_argument("--scale", type=float, default=None)
    p.add_argument("--shift", type=int, default=None)
    p.add_argument("--flip", action="store_const", const=True, default=None)
    p.set_defaults(func=cmd_augment)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"io error: invalid JSON: {exc}", file=sys.stderr)
        return 2
    except (PFTFormatError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
