"""Ablation table: full model against no-ensemble, no-fine-tuning and no-hyperlocal variants."""

import dataclasses

from _common import parser, write_csv

from geolevels.analysis import evaluate
from geolevels.scaling import PipelineConfig, train_stages
from geolevels.synthworld import WorldSpec, generate_world

VARIANTS = {
    "full": {},
    "no_ensemble": {"no_ensemble": True},
    "no_finetune": {"no_finetune": True},
    "no_hyperlocal": {"no_hyperlocal": True},
}


def main():
    args = parser(__doc__).parse_args()
    reps = 10 if args.quick else 100
    world = generate_world(WorldSpec(), args.seed)
    base = PipelineConfig()
    stages = train_stages(world, base, args.seed)
    rows = []
    for indicator in ("power", "power_per_tile"):
        for name, kw in VARIANTS.items():
            rep = evaluate(world, indicator, dataclasses.replace(base, **kw), reps, args.seed, stages=stages)
            rows.append([indicator, name, rep.mean, rep.std, rep.median])
            print(f"{indicator:15s} {name:14s} mean R2 {rep.mean:.3f} +- {rep.std:.3f}")
    write_csv(args.out / "ablation.csv", ["indicator", "variant", "mean_r2", "std_r2", "median_r2"], rows)


if __name__ == "__main__":
    main()
