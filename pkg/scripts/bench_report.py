#!/usr/bin/env python3
"""Optimized-vs-baseline benchmark of the desk-scale pipeline.

Measures the sequential composition with and without graph optimization
(fusion + static memory planning; FP16 lowering optional) and prints the
comparison beside the published Jetson reference ratios.
"""

import argparse
import sys
import time

from edgevad import bench
from edgevad.extractor import build_extractor, desk_scale_config
from edgevad.pipeline import PipelineConfig, run_sequential


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--frames", type=int, default=128)
    ap.add_argument("--snippets", type=int, default=8)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--fp16", action="store_true", help="include FP16 lowering in the optimized variant")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    base_kw = dict(
        source={"kind": "synthetic", "pattern": "moving_square", "frames": args.frames,
                "width": 64, "height": 64, "seed": args.seed},
        snippet_count=args.snippets,
        extractor_profile="desk",
        seed=args.seed,
    )
    variants = {
        "baseline": PipelineConfig(**base_kw, fuse=False, memplan=False, fp16=False),
        "optimized": PipelineConfig(**base_kw, fuse=True, memplan=True, fp16=args.fp16),
    }
    graph = build_extractor(desk_scale_config(), seed=args.seed)
    params, flops = bench.count_params_flops(graph)
    fingerprint = f"{graph.fingerprint()}-s{args.seed}-t{args.snippets}"

    reports = {}
    for name, cfg in variants.items():
        run_sequential(cfg)  # warmup
        candidates = []
        for _ in range(args.repeats):
            candidates.append(bench.measure(
                lambda: run_sequential(cfg).summary["frames"],
                params=params, flops=flops, fingerprint=fingerprint,
                optimized=(name == "optimized"), config=cfg.echo(),
            ))
        candidates.sort(key=lambda r: r.wall_s)
        reports[name] = candidates[len(candidates) // 2]
        print(f"{name}: {reports[name].fps:.2f} fps over {reports[name].frames} frames "
              f"({reports[name].wall_s:.2f}s, peak rss {reports[name].peak_rss_bytes / 2**20:.0f} MiB)")

    text, _ = bench.compare_with_reference(reports["optimized"], reports["baseline"])
    print("\n" + text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
