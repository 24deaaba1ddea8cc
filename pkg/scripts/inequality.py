"""National Gini from scores, district factors and adjusted scores, against the oracle."""

from _common import parser, write_csv

from geolevels.analysis import inequality_suite
from geolevels.synthworld import WorldSpec, generate_world


def main():
    args = parser(__doc__).parse_args()
    alphas = (1.1, 1.8) if args.quick else (1.1, 1.4, 1.8, 2.4)
    worlds = [generate_world(WorldSpec(pareto_alpha=a), args.seed + k) for k, a in enumerate(alphas)]
    rows, corr = inequality_suite(worlds, seed=args.seed)
    for a, r in zip(alphas, rows):
        print(f"alpha {a}: " + " ".join(f"{k}={v:.3f}" for k, v in r.items()))
    print("correlation with oracle: " + " ".join(f"{k}={v:.3f}" for k, v in corr.items()))
    write_csv(args.out / "inequality.csv", ["pareto_alpha", "oracle", "original", "factor", "adjusted"],
              [[a, r["oracle"], r["original"], r["factor"], r["adjusted"]] for a, r in zip(alphas, rows)])


if __name__ == "__main__":
    main()
