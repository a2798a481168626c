#!/usr/bin/env python3
"""
Script to run the desk-scale benchmark end to end on scenario B
(25% dose, 2.0mm -> 100% dose, 1.0mm) and print the trend checks.

Usage:
    python scripts/run_desk_benchmark.py [output_dir] [iterations]

Or from project root:
    python -m scripts.run_desk_benchmark
"""

import logging
import sys
from pathlib import Path

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from services.exceptions import CTNormError
from services.pipeline_service import default_manifest, run_pipeline, save_manifest

SCENARIO = 'B'


def main():
    print("=" * 60)
    print("Desk-Scale CT Normalization Benchmark")
    print("=" * 60)

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    output_dir = sys.argv[1] if len(sys.argv) > 1 else "runs/desk_benchmark"
    iterations = int(sys.argv[2]) if len(sys.argv) > 2 else 2000

    manifest = default_manifest(seed=0, output_dir=output_dir)
    manifest = manifest.model_copy(update={
        'scenarios': {SCENARIO: manifest.scenarios[SCENARIO]},
        'train': manifest.train.model_copy(update={'iterations': iterations}),
    })
    manifest_path = save_manifest(manifest, Path(output_dir) / "manifest.json")
    print(f"\nManifest: {manifest_path}")
    print(f"Cases: {len(manifest.cases)} (train {len(manifest.split.train)}, "
          f"val {len(manifest.split.val)}, test {len(manifest.split.test)})")
    print(f"Iterations per model: {iterations}")

    print("\n" + "-" * 60)
    print("Running phantom -> scan -> train -> normalize -> evaluate...")
    print("-" * 60)

    try:
        result = run_pipeline(manifest, [SCENARIO], threads=1, force=True)
    except CTNormError as e:
        print(f"ERROR: {e}")
        sys.exit(e.exit_code)

    summary = result["summary"]
    print("\n" + "=" * 60)
    print("RESULTS")
    print("=" * 60)

    improvement = summary["perceptual_improvement"][SCENARIO]
    print(f"\nPerceptual improvement of GAN over CNN: {improvement.get('average')}")
    for name, value in summary["trends"][SCENARIO].items():
        print(f"  {name}: {value}")

    print("\nGAN vs raw Wilcoxon p-values:")
    for feature, p in summary["gan_vs_raw_p"][SCENARIO].items():
        print(f"  {feature}: {p:.4g}")

    if not summary["trends"][SCENARIO]["gan_perceptual_below_raw_all_planes"]:
        print("\nWARNING: GAN output is not perceptually closer to the reference than the raw input")
        sys.exit(1)
    print(f"\nReport: {Path(output_dir) / 'reports' / 'report.txt'}")


if __name__ == "__main__":
    main()
