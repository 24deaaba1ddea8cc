"""Test R² as the training share shrinks, with and without district augmentation."""

from _common import parser, write_csv

from geolevels.analysis import robustness_curve
from geolevels.scaling import PipelineConfig, train_stages
from geolevels.synthworld import WorldSpec, generate_world


def main():
    args = parser(__doc__).parse_args()
    reps = 3 if args.quick else 10
    world = generate_world(WorldSpec(), args.seed)
    stages = train_stages(world, PipelineConfig(), args.seed)
    rows = []
    for aug in (True, False):
        curve = robustness_curve(world, "power", (0.2, 0.4, 0.6, 0.8), aug, args.seed, repetitions=reps,
                                 stages=stages)
        for frac, rep in curve.items():
            rows.append([frac, int(aug), rep.median, rep.mean, rep.std])
            print(f"fraction {frac:.1f} augmented={aug!s:5s} median R2 {rep.median:.3f}")
    write_csv(args.out / "robustness.csv", ["train_fraction", "augmented", "median_r2", "mean_r2", "std_r2"], rows)


if __name__ == "__main__":
    main()
