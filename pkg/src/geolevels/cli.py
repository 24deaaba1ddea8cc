"""Command-line entry point: ``geolevels <command> --config <path> --seed <int> --out <dir>``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, checkpoint
from .config import ConfigError, RunConfig, load, world_spec
from .neural import DivergenceError
from .scaling import LabelError, MultiLevelModel, Stages, StageError, district_parts, train_pipeline
from .synthworld import World, generate_world, load_world, world_to_text

COMMANDS = ("gen", "train", "predict", "evaluate", "robustness", "transfer", "inequality", "zipf")
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4, 5
MANIFEST = "manifest.json"


class DataError(ValueError):
    pass


class Run:
    """Collects write-once artifacts in memory; ``commit`` writes them all, then the manifest."""

    def __init__(self, out: Path, command: str, cfg: RunConfig, seed: int):
        self.out, self.command, self.cfg, self.seed = out, command, cfg, seed
        self.files: dict[str, bytes] = {}

    def add(self, name: str, data: bytes | str) -> None:
        if name in self.files:
            raise RuntimeError(f"artifact {name} written twice")
        self.files[name] = data.encode() if isinstance(data, str) else data

    def table(self, name: str, header, rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        self.add(name, buf.getvalue())

    def json(self, name: str, obj) -> None:
        self.add(name, json.dumps(obj, indent=2, sort_keys=True, default=_num) + "\n")

    def commit(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        clash = [n for n in list(self.files) + [MANIFEST] if (self.out / n).exists()]
        if clash:
            raise FileExistsError(f"{self.out} already holds {clash}; outputs are write-once")
        config = self.cfg.to_dict()
        manifest = {
            "command": self.command,
            "seed": self.seed,
            "config": config,
            "config_fingerprint": analysis.fingerprint(config),
            "format_version": checkpoint.VERSION,
            "artifacts": {n: hashlib.sha256(d).hexdigest() for n, d in sorted(self.files.items())},
        }
        for name, data in self.files.items():
            checkpoint.atomic_write(self.out / name, data)
        checkpoint.atomic_write(self.out / MANIFEST,
                                (json.dumps(manifest, indent=2, sort_keys=True, default=_num) + "\n").encode())


def _num(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serialisable: {type(x).__name__}")


def _f(x) -> str:
    return repr(float(x))


def _world(cfg: RunConfig, seed: int) -> World:
    if cfg.dataset is not None:
        try:
            return load_world(cfg.dataset)
        except (ValueError, KeyError) as e:
            raise DataError(str(e)) from None
    return generate_world(cfg.world, seed)


def _extra_worlds(specs, seed: int) -> list[World]:
    out = []
    for k, w in enumerate(specs):
        w = dict(w)
        s = int(w.pop("seed", seed + k))
        out.append(generate_world(world_spec(w, f"harness world {k}"), s))
    return out


def _model(cfg: RunConfig, world: World, seed: int) -> MultiLevelModel:
    if cfg.checkpoint is not None:
        model = checkpoint.load(cfg.checkpoint)
        if not isinstance(model, MultiLevelModel):
            raise DataError(f"{cfg.checkpoint} does not hold a multi-level model")
        return model
    return train_pipeline(world, cfg.indicator, cfg.pipeline, seed)


def _stages(cfg: RunConfig) -> Stages | None:
    """Steps 1-2 from a checkpoint, shared across repetitions."""
    if cfg.checkpoint is None:
        return None
    model = checkpoint.load(cfg.checkpoint)
    if not isinstance(model, MultiLevelModel):
        raise DataError(f"{cfg.checkpoint} does not hold a multi-level model")
    return Stages(model.score_model, [e for e, _ in model.members], list(model.tags))


def cmd_gen(run: Run, world: World) -> None:
    run.add("world.jsonl", world_to_text(world))
    run.table("districts.csv", ["district", "n_tiles", "factor", *sorted(world.districts[0].labels)],
              [[d.district_id, len(d), _f(m), *(_f(d.labels[k]) for k in sorted(d.labels))]
               for d, m in zip(world.districts, world.factors)])


def cmd_train(run: Run, world: World) -> None:
    model = train_pipeline(world, run.cfg.indicator, run.cfg.pipeline, run.seed)
    run.add("model.ckpt", checkpoint.dumps(model))
    run.json("train_report.json", {"indicator": run.cfg.indicator, **model.report,
                                   "score_history": model.score_model.history})


def cmd_predict(run: Run, world: World) -> None:
    model = _model(run.cfg, world, run.seed)
    mult, h = district_parts(model, world, world.districts)
    pred = mult * np.exp(h)
    run.table("predictions.csv", ["district", "truth", "prediction", "multiplier", "scaling_factor"],
              [[d.district_id, _f(d.labels[run.cfg.indicator]), _f(p), _f(m), _f(np.exp(x))]
               for d, p, m, x in zip(world.districts, pred, mult, h)])


def cmd_evaluate(run: Run, world: World) -> None:
    h = run.cfg.harness
    rep = analysis.evaluate(world, run.cfg.indicator, run.cfg.pipeline, h.repetitions, run.seed,
                            h.train_fraction, _stages(run.cfg), h.share_stages)
    run.table("evaluate.csv", ["repetition", "r2", "guard_flags"], rep.rows())
    run.json("summary.json", rep.summary())


def cmd_robustness(run: Run, world: World) -> None:
    h = run.cfg.harness
    stages = _stages(run.cfg)
    rows, summary = [], {}
    for aug in (True, False):
        curve = analysis.robustness_curve(world, run.cfg.indicator, h.train_fractions, aug, run.seed,
                                          run.cfg.pipeline, h.robustness_repetitions, stages)
        for frac, rep in curve.items():
            rows += [[_f(frac), int(aug), k, r2] for k, r2, _ in rep.rows()]
            summary[f"{frac}/{'aug' if aug else 'noaug'}"] = rep.summary()
    run.table("robustness.csv", ["train_fraction", "augmented", "repetition", "r2"], rows)
    run.json("summary.json", summary)


def cmd_transfer(run: Run, world: World) -> None:
    worlds = [world] + _extra_worlds(run.cfg.harness.transfer_worlds, run.seed + 1)
    grid = analysis.transfer_grid(worlds, run.cfg.indicator, run.cfg.pipeline, run.seed)
    run.table("transfer.csv", ["source", "target", "spearman"],
              [[i, j, _f(grid[i, j])] for i in range(len(worlds)) for j in range(len(worlds))])
    run.json("summary.json", {"diagonal": np.diag(grid).tolist(), "grid": grid.tolist()})


def cmd_inequality(run: Run, world: World) -> None:
    model = _model(run.cfg, world, run.seed)
    res = analysis.inequality_eval(world, model, run.cfg.harness.factor_mode)
    run.table("district_gini.csv", ["district", "gini", "oracle_gini"],
              [[k, _f(v), _f(res.oracle_district_gini[k])] for k, v in res.district_gini.items()])
    summary = {"national": res.national, "oracle_national": res.oracle_national}
    if run.cfg.harness.inequality_worlds:
        worlds = _extra_worlds(run.cfg.harness.inequality_worlds, run.seed + 1)
        rows, corr = analysis.inequality_suite(worlds, run.cfg.pipeline, run.seed, run.cfg.indicator,
                                               run.cfg.harness.factor_mode)
        run.table("national_gini.csv", ["world", "oracle", "original", "factor", "adjusted"],
                  [[k, *(_f(r[c]) for c in ("oracle", "original", "factor", "adjusted"))]
                   for k, r in enumerate(rows)])
        summary["suite_correlation"] = corr
    run.json("summary.json", summary)


def cmd_zipf(run: Run, world: World) -> None:
    model = _model(run.cfg, world, run.seed)
    q = run.cfg.harness.zipf_quantile
    fit = analysis.zipf_fit(np.exp(district_parts(model, world, world.districts)[1]), q)
    latent = analysis.zipf_fit(world.factors, q)
    run.table("zipf.csv", ["log_rank", "log_scaling_factor"],
              [[_f(x), _f(y)] for x, y in zip(fit.log_rank, fit.log_size)])
    run.json("summary.json", {
        "scaling_factors": {"slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2, "points": fit.n_points},
        "latent_factors": {"slope": latent.slope, "intercept": latent.intercept, "r2": latent.r2,
                           "points": latent.n_points}})


HANDLERS = {"gen": cmd_gen, "train": cmd_train, "predict": cmd_predict, "evaluate": cmd_evaluate,
            "robustness": cmd_robustness, "transfer": cmd_transfer, "inequality": cmd_inequality,
            "zipf": cmd_zipf}


def run(command: str, cfg: RunConfig, seed: int, out) -> None:
    """Execute one command; artifacts land in ``out`` only if it completes."""
    r = Run(Path(out), command, cfg, seed)
    HANDLERS[command](r, _world(cfg, seed))
    r.commit()


def _exit_code(err: BaseException) -> int:
    if isinstance(err, StageError) and err.__cause__ is not None:
        return _exit_code(err.__cause__)
    if isinstance(err, DivergenceError):
        return EXIT_DIVERGENCE
    if isinstance(err, ConfigError):
        return EXIT_CONFIG
    if isinstance(err, (OSError, checkpoint.CheckpointError)):
        return EXIT_IO
    if isinstance(err, (DataError, LabelError, analysis.DegenerateError, ValueError, KeyError)):
        return EXIT_DATA
    raise err


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="geolevels", description="Multi-level economic estimation on tiles.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True)
    parser.add_argument("--seed", type=int, required=True)
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    categories = {EXIT_CONFIG: "config error", EXIT_DATA: "data error", EXIT_DIVERGENCE: "training diverged",
                  EXIT_IO: "I/O error"}
    try:
        cfg = load(args.config)
        run(args.command, cfg, args.seed, args.out)
    except Exception as e:  # noqa: BLE001 - mapped to categorised exit codes
        code = _exit_code(e)
        print(f"geolevels: {categories[code]}: {e}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
