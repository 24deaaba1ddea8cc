"""Rank-size fit of the learned district scaling factors next to the latent ones."""

from _common import parser, write_csv

from geolevels.analysis import zipf_fit
from geolevels.scaling import scaling_factors, train_pipeline
from geolevels.synthworld import WorldSpec, generate_world


def main():
    args = parser(__doc__).parse_args()
    world = generate_world(WorldSpec(), args.seed)
    fit = zipf_fit(scaling_factors(train_pipeline(world, "power", seed=args.seed), world))
    latent = zipf_fit(world.factors)
    print(f"learned factors: slope {fit.slope:.3f} r2 {fit.r2:.3f}")
    print(f"latent factors:  slope {latent.slope:.3f} r2 {latent.r2:.3f}")
    write_csv(args.out / "zipf.csv", ["log_rank", "log_scaling_factor"], zip(fit.log_rank, fit.log_size))


if __name__ == "__main__":
    main()
