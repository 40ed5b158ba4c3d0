"""Command-line interface.

Exit codes: 0 success, 1 malformed input, 2 internal invariant violation.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from solokit import _backend
from solokit.io import InputError, format_report, read_instances, read_tensor, write_instances
from solokit.masks import BinaryMask, DimensionMismatch, SoftMask
from solokit.nms import DecayKind


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None


def _decay(args) -> DecayKind:
    return DecayKind.linear() if args.decay == "linear" else DecayKind.gaussian(args.sigma)


def cmd_nms(args) -> int:
    from solokit.pipeline import NmsConfig

    s = read_instances(args.input)
    cfg = NmsConfig(args.method, _decay(args), args.iou_threshold, args.score_floor)
    out = cfg.apply(s)
    if args.output == "-":
        from solokit.io import instances_to_json
        import json

        sys.stdout.write(json.dumps(instances_to_json(out)) + "\n")
    else:
        write_instances(args.output, out)
    return 0


def cmd_bench(args) -> int:
    from solokit.bench import bench_nms

    result = bench_nms(args.n, args.size, args.repeats, args.profile, args.seed, args.backend)
    sys.stdout.write(result.tsv())
    return 0


def _matte_set(path):
    from solokit.metrics import MatteSet

    t = read_tensor(path)
    if t.size and (t.min() < 0 or t.max() > 1):
        raise InputError(f"{path}: matte values outside [0, 1]")
    return MatteSet(t.shape[0], t.shape[1], tuple(SoftMask(t[:, :, c]) for c in range(t.shape[2])))


def cmd_eval(args) -> int:
    from solokit import metrics

    if args.kind == "sofi":
        pred, gt = _matte_set(args.pred), _matte_set(args.gt)
        value = metrics.sofi_error(pred, gt, args.error)
        sys.stdout.write(format_report({f"sofi_{args.error}": value, "n_pred": len(pred), "n_gt": len(gt)}))
    elif args.kind == "matting":
        pred, gt = _matte_set(args.pred), _matte_set(args.gt)
        if len(pred) != 1 or len(gt) != 1:
            raise InputError("matting evaluation expects single-channel tensors")
        region = None
        if args.region:
            r = read_tensor(args.region)
            region = BinaryMask(r[:, :, 0] > 0)
        p, g = pred.mattes[0], gt.mattes[0]
        sys.stdout.write(format_report({
            "mse": metrics.matting_error(p, g, region, "mse"),
            "sad": metrics.matting_error(p, g, region, "sad"),
        }))
    else:
        pred, gt = read_instances(args.pred), read_instances(args.gt)
        cfg = metrics.ApConfig(tuple(args.iou), match_kind=args.match)
        res = metrics.average_precision([pred], [gt], cfg)
        report = {f"ap@{t:g}": v for t, v in res.per_threshold.items()}
        report["map"] = res.mean
        sys.stdout.write(format_report(report))
    return 0


def cmd_assign(args) -> int:
    from solokit.head import GridSpec, assign_labels

    gt = read_instances(args.gt)
    res = assign_labels([(inst.mask, inst.class_id) for inst in gt], GridSpec.from_grids(args.grids), args.epsilon)
    sys.stdout.write("".join(f"{lv}\t{i}\t{j}\t{g}\n" for lv, i, j, g in res.cells()))
    return 0


def run_demo(seed: int, shapes: int, size=(64, 64), method: str = "matrix") -> dict:
    """Scene -> exact selector head outputs -> inference -> AP against the scene."""
    from solokit.metrics import ApConfig, average_precision
    from solokit.pipeline import NmsConfig, PipelineConfig, generate_scene, run_inference, selector_inputs

    scene = generate_scene(seed, size[0], size[1], shapes, "disjoint")
    inputs = selector_inputs(scene, grids=(40, 36, 24, 16, 12))
    cfg = PipelineConfig(nms=NmsConfig(method))
    pred = run_inference(inputs.category_scores, inputs.kernels, inputs.mask_feature, cfg)
    for inst in pred:
        if not 0.0 <= inst.score <= 1.0:
            raise AssertionError(f"score {inst.score} escaped [0, 1]")
    res = average_precision([pred], [scene.gts], ApConfig((0.5, 0.75)))
    return {
        "seed": seed,
        "shapes": shapes,
        "instances": len(pred),
        "ap@0.5": res.per_threshold[0.5],
        "ap@0.75": res.per_threshold[0.75],
    }


def cmd_demo(args) -> int:
    sys.stdout.write(format_report(run_demo(args.seed, args.shapes, args.size, args.method)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="solokit", description=__doc__.splitlines()[0])
    p.add_argument("--backend", choices=["auto", "compiled", "python"], default="auto")
    p.add_argument("--threads", type=int, default=None, help="threads for parallel kernels")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("nms", help="suppress duplicates in an RLE-JSON instance file")
    q.add_argument("--method", choices=["hard", "soft", "fast", "matrix"], default="matrix")
    q.add_argument("--decay", choices=["linear", "gauss"], default="gauss")
    q.add_argument("--sigma", type=float, default=0.5)
    q.add_argument("--iou-threshold", type=float, default=0.5)
    q.add_argument("--score-floor", type=float, default=0.001)
    q.add_argument("--input", required=True)
    q.add_argument("--output", default="-")
    q.set_defaults(func=cmd_nms)

    q = sub.add_parser("bench", help="time the four NMS methods")
    q.add_argument("--n", type=int, default=500)
    q.add_argument("--size", type=_size, default=(64, 64))
    q.add_argument("--repeats", type=int, default=11)
    q.add_argument("--profile", choices=["disjoint", "moderate", "heavy"], default="moderate")
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(func=cmd_bench)

    q = sub.add_parser("eval", help="evaluate predictions")
    ev = q.add_subparsers(dest="kind", required=True)
    e = ev.add_parser("sofi", help="SOFI error between matte tensors (H, W, N)")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--error", choices=["mse", "sad"], default="mse")
    e.set_defaults(func=cmd_eval)
    e = ev.add_parser("ap", help="average precision between RLE-JSON files")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--iou", type=_floats, default=[0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95])
    e.add_argument("--match", choices=["mask", "box"], default="mask")
    e.set_defaults(func=cmd_eval)
    e = ev.add_parser("matting", help="MSE/SAD between single-channel matte tensors")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--region", default=None, help="tensor; non-zero pixels form the region")
    e.set_defaults(func=cmd_eval)

    q = sub.add_parser("assign", help="list positive grid cells for ground-truth masks")
    q.add_argument("--gt", required=True)
    q.add_argument("--grids", type=_ints, default=[40, 36, 24, 16, 12])
    q.add_argument("--epsilon", type=float, default=0.2)
    q.set_defaults(func=cmd_assign)

    q = sub.add_parser("demo", help="synthetic end-to-end run scored against its own ground truth")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--shapes", type=int, default=3)
    q.add_argument("--size", type=_size, default=(64, 64))
    q.add_argument("--method", choices=["hard", "soft", "fast", "matrix"], default="matrix")
    q.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _backend.use(args.backend)
        if args.threads is not None:
            _backend.set_threads(args.threads)
        return args.func(args)
    except (InputError, DimensionMismatch, FileNotFoundError) as exc:
        print(f"solokit: error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"solokit: error: {exc}", file=sys.stderr)
        return 1
    except AssertionError as exc:
        print(f"solokit: internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
