"""Walk through planning and executing cross-domain augmentation.

Builds a small three-domain toy dataset, plans CDGA-PG generation over its
training domains, runs the pixel-blending backend, and materializes the
augmented tree next to the originals.  A second pass shows balanced mode
equalizing a deliberately imbalanced dataset.

Usage:
    python3 demos/augment_dataset.py --out /tmp/cdga_demo
"""

import argparse
import tempfile
from collections import Counter
from pathlib import Path

from cdga.backends import PixelBlendBackend
from cdga.dataset import (
    AugmentationKind,
    AugmentationMode,
    augmented_size,
    balanced_batch_sizes,
    count_per_class_domain,
    scan_dataset,
    training_group,
)
from cdga.generation import execute_plan, materialize_augmented_dataset, plan_cdga
from cdga.toydata import make_toy_dataset

DESCRIPTIONS = {
    "red": "a photo in warm red tones",
    "blue": "a photo in cool blue tones",
    "purple": "a photo in deep purple tones",
}


def show_counts(manifest) -> None:
    table = count_per_class_domain(manifest)
    header = " ".join(f"{c:>8}" for c in manifest.classes)
    print(f"  {'domain':<10} {header}")
    for di, domain in enumerate(manifest.domains):
        row = " ".join(f"{int(table.counts[di, ci]):>8}" for ci in range(len(manifest.classes)))
        print(f"  {domain:<10} {row}")


def run_cross_domain(root: Path, out: Path, batch_size: int, seed: int) -> None:
    print("== cross-domain augmentation ==")
    manifest = make_toy_dataset(root / "toy", per_class=8, seed=seed)
    print(f"scanned {len(manifest.entries)} images, domains={list(manifest.domains)}")
    show_counts(manifest)

    train_domains = ["blue", "red"]  # hold purple out as the unseen target
    mode = AugmentationMode(kind=AugmentationKind.CDGA_PG, batch_size=batch_size)
    plan = plan_cdga(manifest, train_domains, mode, descriptions=DESCRIPTIONS, seed=seed)
    n, b = len(train_domains), batch_size
    per_domain = 8 * len(manifest.classes)
    print(f"planned {len(plan.tasks)} tasks; each training-domain cell grows "
          f"{per_domain} -> {augmented_size(per_domain, n, b, mode)} (factor b*n+1 = {b * n + 1})")
    print(f"sample prompt: {plan.tasks[0].prompt!r}")

    backend = PixelBlendBackend(image_size=24)
    result = execute_plan(plan, backend, out / "gen_work")
    print(f"executed {result.tasks_done}/{result.tasks_total} tasks "
          f"({result.backend_calls} backend calls, {result.wall_time:.1f}s), status={result.status}")

    augmented = materialize_augmented_dataset(
        manifest, result.records, out / "gen_work", out / "augmented"
    )
    groups = Counter(training_group(augmented.domains[e.domain_index]) for e in augmented.entries)
    print("materialized sizes by training group:")
    for group, count in sorted(groups.items()):
        print(f"  {group:<10} {count}")
    sample = next(e for e in augmented.entries if augmented.domains[e.domain_index].startswith("gen_"))
    print(f"example synthetic entry: {sample.relative_path}")


def run_balanced(out: Path, seed: int) -> None:
    print("\n== balanced generation on an imbalanced dataset ==")
    root = out / "imbalanced"
    manifest = make_toy_dataset(root, per_class=12, seed=seed)
    # Thin two cells out so the class balance is skewed.
    for victim, keep in (("blue/square", 3), ("red/disk", 5)):
        files = sorted((root / victim).iterdir())
        for path in files[keep:]:
            path.unlink()
    manifest = scan_dataset(root)
    show_counts(manifest)

    table = count_per_class_domain(manifest)
    sizes = balanced_batch_sizes(table)
    print(f"largest cell m={int(table.max_cell)}; per-cell batch sizes:\n{sizes}")

    mode = AugmentationMode(kind=AugmentationKind.CDGA_PG, batch_size=sizes)
    plan = plan_cdga(manifest, list(manifest.domains), mode, descriptions=DESCRIPTIONS, seed=seed)
    result = execute_plan(plan, PixelBlendBackend(image_size=24), out / "balanced_work")
    per_cell = Counter((r.source_domain, r.class_name, r.guidance_domain) for r in result.records)
    print("generated per (source domain, class, guidance) cell:")
    for key, count in sorted(per_cell.items()):
        print(f"  {'/'.join(key):<28} {count}")
    print("every cell now clears the largest original count")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=None,
                        help="output directory (default: a fresh temp dir)")
    parser.add_argument("--batch-size", type=int, default=2,
                        help="images per source image per guidance domain")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out = args.out if args.out is not None else Path(tempfile.mkdtemp(prefix="cdga_demo_"))
    out.mkdir(parents=True, exist_ok=True)
    print(f"writing to {out}\n")
    run_cross_domain(out, out, args.batch_size, args.seed)
    run_balanced(out, args.seed)
    print(f"\nartifacts left in {out}")


if __name__ == "__main__":
    main()
