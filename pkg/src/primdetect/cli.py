"""Command-line surface: generate, detect, evaluate, bench.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 data validation error.
Environment: PRIMDETECT_BACKEND selects the voting backend (numba or numpy),
PRIMDETECT_THREADS the worker-thread count (0 = serial reference mode).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import cloudio
from .cloudio import CloudFormatError
from .datagen import SceneSpec, generate_scene
from .detector import (
    TYPE_ORDER,
    DetectorConfig,
    default_backend,
    detect,
    dump_accumulators,
)
from .metrics import default_epsilon_grid, evaluate_detection


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="primdetect", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", help="render a synthetic scene from a spec")
    gen.add_argument("--spec", required=True, help="scene spec JSON file")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--seed", type=int, default=None, help="override the scene spec's seed")
    gen.add_argument(
        "--cloud-format", default="ply", choices=["ply", "ply-binary", "xyzn"],
        help="cloud file format (default: ascii PLY)",
    )

    det = sub.add_parser("detect", help="detect primitives in a point cloud")
    det.add_argument("cloud", help="input cloud (.ply or .xyzn)")
    det.add_argument("--out", required=True, help="output report JSON")
    det.add_argument("--format", default=None, help="input format override")
    det.add_argument("--types", default=None,
                     help="comma-separated subset of plane,sphere,cylinder,cone")
    det.add_argument("--seed", type=int, default=0)
    det.add_argument("--refs", type=int, default=2048, help="reference point count")
    det.add_argument("--pairs", type=int, default=2048, help="pair partners per reference")
    det.add_argument("--no-spread", action="store_true",
                     help="disable vote spreading and constraint weights")
    det.add_argument("--no-bin-avg", action="store_true",
                     help="disable weighted averaging of neighboring bins")
    det.add_argument("--nms-cluster", action="store_true",
                     help="keep the strongest candidate per cluster instead of averaging")
    det.add_argument("--per-type-extraction", action="store_true",
                     help="emit one candidate per primitive type per reference point")
    det.add_argument("--labels", default=None, help="also write per-point labels CSV")
    det.add_argument("--dump-acc", default=None,
                     help="dump first reference point's accumulators to this directory")
    det.add_argument("--backend", default=None, choices=["numba", "numpy"])
    det.add_argument("--threads", type=int, default=None)

    ev = sub.add_parser("evaluate", help="score a detection report against ground truth")
    ev.add_argument("--cloud", required=True)
    ev.add_argument("--format", default=None)
    ev.add_argument("--gt", required=True, help="ground truth JSON")
    ev.add_argument("--report", required=True, help="detection report JSON")
    ev.add_argument("--out", required=True, help="output directory")

    bench = sub.add_parser("bench", help="repeat detection and print per-stage timings")
    bench.add_argument("cloud")
    bench.add_argument("--format", default=None)
    bench.add_argument("--repeats", type=int, default=3)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--backend", default=None, choices=["numba", "numpy", "both"])
    bench.add_argument("--per-type", action="store_true",
                       help="also time each single-type detection mode")
    bench.add_argument("--threads", type=int, default=0)
    return parser


def _detector_config(args) -> DetectorConfig:
    types = TYPE_ORDER
    if args.types:
        types = tuple(t.strip() for t in args.types.split(",") if t.strip())
    return DetectorConfig(
        n_reference=args.refs,
        n_pair=args.pairs,
        enabled_types=types,
        use_vote_spreading=not args.no_spread,
        use_bin_averaging=not args.no_bin_avg,
        use_cluster_averaging=not args.nms_cluster,
        per_type_extraction=args.per_type_extraction,
        rng_seed=args.seed,
        backend=args.backend,
        threads=args.threads,
    )


def _cmd_generate(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if args.seed is not None:
        data["rng_seed"] = args.seed
    spec = SceneSpec.from_dict(data)
    cloud, gt = generate_scene(spec)
    os.makedirs(args.out, exist_ok=True)
    ext = "xyzn" if args.cloud_format == "xyzn" else "ply"
    cloud_path = os.path.join(args.out, f"cloud.{ext}")
    cloudio.write_cloud(cloud_path, cloud, fmt=args.cloud_format)
    cloudio.write_ground_truth(os.path.join(args.out, "groundtruth.json"), gt)
    print(f"wrote {cloud_path} ({len(cloud)} points, {len(gt.primitives)} primitives)")
    return 0


def _cmd_detect(args) -> int:
    cloud = cloudio.read_cloud(args.cloud, fmt=args.format)
    config = _detector_config(args)
    report = detect(cloud, config)
    cloudio.write_report(args.out, report)
    if args.labels:
        cloudio.write_labels_csv(args.labels, report.labels)
    if args.dump_acc:
        dump_accumulators(cloud, config, args.dump_acc)
    kinds = ",".join(p.kind for p in report.primitives) or "none"
    print(f"detected {len(report.primitives)} primitives ({kinds})")
    for stage, ms in report.timings_ms.items():
        print(f"  {stage}: {ms:.2f} ms")
    return 0


def _cmd_evaluate(args) -> int:
    cloud = cloudio.read_cloud(args.cloud, fmt=args.format)
    gt = cloudio.read_ground_truth(args.gt)
    report = cloudio.read_report(args.report)
    metrics, p_curve, s_curve = evaluate_detection(
        cloud, gt.primitives, gt.labels, report.primitives, report.labels,
        eps_grid=default_epsilon_grid(), sigma_abs=gt.sigma_abs,
    )
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "metrics.json"), "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=1)
        fh.write("\n")
    cloudio.write_curves_csv(os.path.join(args.out, "curves.csv"), p_curve, s_curve)
    print(
        "precision {precision:.3f} recall {recall:.3f} "
        "missed {missed_rate:.3f} noise {noise_rate:.3f}".format(**metrics)
    )
    if metrics["dod_mean"] is not None:
        print(f"mean DOD {metrics['dod_mean']:.6g}")
    return 0


def _bench_once(cloud, config) -> dict:
    report = detect(cloud, config)
    return report.timings_ms


def _cmd_bench(args) -> int:
    cloud = cloudio.read_cloud(args.cloud, fmt=args.format)
    backends = [args.backend or default_backend()]
    if args.backend == "both":
        backends = ["numba", "numpy"]
    modes = [("joint", TYPE_ORDER)]
    if args.per_type:
        modes += [(t, (t,)) for t in TYPE_ORDER]
    for backend in backends:
        for name, types in modes:
            config = DetectorConfig(
                enabled_types=types, rng_seed=args.seed, backend=backend,
                threads=args.threads,
            )
            _bench_once(cloud, config)  # warmup (includes JIT compilation)
            stages: dict = {}
            for _ in range(args.repeats):
                for stage, ms in _bench_once(cloud, config).items():
                    stages.setdefault(stage, []).append(ms)
            summary = " ".join(f"{k}={np.mean(v):.1f}ms" for k, v in stages.items())
            print(f"[{backend}] {name}: {summary}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handlers = {
        "generate": _cmd_generate,
        "detect": _cmd_detect,
        "evaluate": _cmd_evaluate,
        "bench": _cmd_bench,
    }
    try:
        return handlers[args.command](args)
    except (FileNotFoundError, PermissionError, IsADirectoryError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    except (CloudFormatError, ValueError) as exc:
        print(f"invalid data: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
