"""Train on one synthetic country, predict on every other; Spearman grid."""

import dataclasses

from _common import parser, write_csv

from geolevels.analysis import transfer_grid
from geolevels.synthworld import WorldSpec, generate_world

COUNTRIES = {
    "balanced": {},
    "rural": {"class_mixture": ((0.50, 0.45, 0.05), (0.20, 0.45, 0.35))},
    "urban": {"class_mixture": ((0.20, 0.55, 0.25), (0.05, 0.25, 0.70))},
}


def main():
    args = parser(__doc__).parse_args()
    spec = WorldSpec(n_districts=30) if args.quick else WorldSpec()
    # same seeds as the acceptance grid
    worlds = [generate_world(dataclasses.replace(spec, **kw), args.seed + 200 + k)
              for k, kw in enumerate(COUNTRIES.values())]
    grid = transfer_grid(worlds, "power", seed=args.seed)
    names = list(COUNTRIES)
    for i, src in enumerate(names):
        print(f"{src:9s} " + " ".join(f"{grid[i, j]:.3f}" for j in range(len(names))))
    write_csv(args.out / "transfer.csv", ["source", "target", "spearman"],
              [[names[i], names[j], grid[i, j]] for i in range(len(names)) for j in range(len(names))])


if __name__ == "__main__":
    main()
