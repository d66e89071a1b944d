"""Command-line entry point: ``gen-data``, ``pretrain`` and ``run``.

Every failure prints one line ``error: <stage>: <detail>`` to stderr.  Bad
configuration exits with status 2, anything else with status 1.
"""
import argparse
import json
import os
import sys
import time

from . import __version__, config as cfgmod, experiment, metrics, tcgan
from .data import DatasetFormatError, dataset_from_json, dataset_to_json, make_world, sample_dataset


class StageError(Exception):
    def __init__(self, stage, detail, code=1):
        self.stage, self.detail, self.code = stage, detail, code
        super().__init__(f"{stage}: {detail}")


class _Clock:
    def __init__(self):
        self.stages = {}

    def time(self, name, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kw)
        except StageError:
            raise
        except cfgmod.ConfigError as exc:
            raise StageError("config", str(exc), 2) from exc
        except Exception as exc:
            raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
        finally:
            self.stages[name] = round(time.perf_counter() - t0, 3)


def _write(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return os.path.abspath(path)


def _read(path, stage):
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise StageError(stage, f"cannot read {path}: {exc.strerror}") from exc


def _load_config(args):
    try:
        cfg = cfgmod.load(args.config)
    except OSError as exc:
        raise StageError("config", f"cannot read {args.config}: {exc.strerror}", 2) from exc
    except cfgmod.ConfigError as exc:
        raise StageError("config", str(exc), 2) from exc
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise StageError("config", f"seed: must be an unsigned 64-bit integer, got {args.seed}", 2)
        cfg = cfg.with_seed(args.seed)
    return cfg


def _outdir(args, cfg):
    out = args.out or cfg.output_dir
    if not out:
        raise StageError("config", "output_dir: pass --out or set output_dir", 2)
    os.makedirs(out, exist_ok=True)
    return out


def _manifest(out, cfg, paths, clock):
    for p in paths.values():
        if not os.path.exists(p):
            raise StageError("manifest", f"missing artifact {p}")
    doc = {"version": __version__, "config_hash": cfg.digest(), "paths": paths, "wall_clock_s": clock.stages}
    return _write(os.path.join(out, "manifest.json"), json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_dataset(path, cfg):
    try:
        world, split = dataset_from_json(_read(path, "data"))
    except DatasetFormatError as exc:
        raise StageError("data", str(exc)) from exc
    if world.config != cfg.world:
        raise StageError("data", "dataset world does not match the config's world section")
    return world, split


# ---------------------------------------------------------------- commands

def cmd_gen_data(args):
    cfg = _load_config(args)
    out = _outdir(args, cfg)
    clock = _Clock()

    def build():
        world = make_world(cfg.world)
        return dataset_to_json(world, sample_dataset(world))

    text = clock.time("gen-data", build)
    path = _write(os.path.join(out, "dataset.json"), text)
    _manifest(out, cfg, {"dataset": path}, clock)
    return 0


def cmd_pretrain(args):
    cfg = _load_config(args)
    out = _outdir(args, cfg)
    clock = _Clock()
    world, split = _load_dataset(args.data, cfg)
    seed = cfg.seeds[0]
    ckpt_path = os.path.join(out, "checkpoint.json")
    meta = {"experiment": cfg.to_dict(), "pretrain_seed": seed}

    state = None
    if args.resume:
        try:
            state, _ = tcgan.checkpoint_from_json(_read(args.resume, "pretrain"))
        except tcgan.CheckpointError as exc:
            raise StageError("pretrain", str(exc)) from exc
        if state.seed != seed:
            raise StageError("pretrain", f"resume checkpoint has seed {state.seed}, config wants {seed}")
    else:
        state = tcgan.init_pretrain(world.config, cfg.gan, seed)

    def on_epoch(s):
        if args.checkpoint_every and s.epoch % args.checkpoint_every == 0:
            _write(ckpt_path, tcgan.checkpoint_to_json(s, meta))

    clock.time("pretrain", tcgan.pretrain_representation, split.train_base, world.config, cfg.gan,
               cfg.train, seed, state=state, on_epoch=on_epoch)
    _write(ckpt_path, tcgan.checkpoint_to_json(state, meta))
    log_path = _write(os.path.join(out, "pretrain_log.csv"), experiment.pretrain_csv(state.log))
    _manifest(out, cfg, {"dataset": os.path.abspath(args.data), "checkpoint": ckpt_path, "log": log_path}, clock)
    return 0


def cmd_run(args):
    cfg = _load_config(args)
    out = _outdir(args, cfg)
    clock = _Clock()
    world, split = _load_dataset(args.data, cfg)
    try:
        state, meta = tcgan.checkpoint_from_json(_read(args.checkpoint, "run"))
    except tcgan.CheckpointError as exc:
        raise StageError("run", str(exc)) from exc
    try:
        threads = experiment.grid_threads()
    except ValueError as exc:
        raise StageError("config", str(exc), 2) from exc
    seed = state.seed
    T = clock.time("baseline", metrics.pretrain_baseline_classifier, split.train_base, world.config,
                   cfg.gan, cfg.train, seed)
    oracle = clock.time("oracle", metrics.train_quality_oracle, split, seed, epochs=cfg.oracle_epochs)
    grid = clock.time("grid", experiment.run_grid, split, state.G, state.D, T, cfg, oracle, threads)
    summary = experiment.summarize(grid, cfg.arms)

    paths = {"dataset": os.path.abspath(args.data), "checkpoint": os.path.abspath(args.checkpoint)}
    paths["ablation"] = _write(os.path.join(out, "ablation.csv"), experiment.ablation_csv(summary.records))
    if "SPL-D'G" in summary.evolution:
        paths["evolution"] = _write(os.path.join(out, "evolution.csv"),
                                    experiment.evolution_csv(summary.evolution["SPL-D'G"]))
    if "SPL-D'" in summary.evolution:
        paths["evolution_spl_d"] = _write(os.path.join(out, "evolution_spl_d.csv"),
                                          experiment.evolution_csv(summary.evolution["SPL-D'"]))
    paths["chunks"] = _write(os.path.join(out, "chunks.csv"), experiment.chunk_csv(summary.chunks))
    _manifest(out, cfg, paths, clock)
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="spargan", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"spargan {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="experiment JSON config")
        sp.add_argument("--out", help="output directory (defaults to the config's output_dir)")
        sp.add_argument("--seed", type=int, help="replace the config's seed list with this one seed")

    g = sub.add_parser("gen-data", help="sample the synthetic dataset")
    common(g)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("pretrain", help="adversarial pretraining on base classes")
    t.add_argument("--data", required=True)
    t.add_argument("--resume", help="continue from this checkpoint")
    t.add_argument("--checkpoint-every", type=int, default=0, metavar="N",
                   help="also write checkpoint.json every N epochs")
    common(t)
    t.set_defaults(func=cmd_pretrain)

    r = sub.add_parser("run", help="ablation grid: adapt, initialize, self-paced loop, evaluate")
    r.add_argument("--data", required=True)
    r.add_argument("--checkpoint", required=True)
    common(r)
    r.set_defaults(func=cmd_run)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc.stage}: {exc.detail}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
