"""``texture-forge`` command-line interface.

Every command writes a run manifest next to its output (``<stem>.manifest.json``)
holding the resolved configuration, input hashes, timings and the tool
version.  The manifest's ``config`` block can be passed back with ``--config``
to repeat the run.
"""
import argparse
import csv
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .crystal_plasticity import ALL_MODES, as_mode
from .dataset_io import (
    dataset_manifest,
    generate_dataset,
    generate_initial_odfs,
    hash_file,
    load_mesh,
    load_models,
    load_odf,
    load_trajectory,
    manifest_path,
    model_filename,
    read_json,
    read_records,
    records_by_mode,
    relative_l2,
    save_mesh,
    save_model,
    save_trajectory,
    split,
    stiffness_error,
    write_json,
    write_records,
)
from .errors import ConfigurationError, DataFormatError, TextureForgeError
from .fundamental_mesh import assemble_property_matrix, build_mesh
from .homogenization import COPPER, ObjectiveWeights, homogenize, objective, stiffness_at_quadrature
from .path_search import SearchConfig, SimulatorOracle, SurrogateOracle, search, time_expansion
from .surrogate_nn import ModelSuite, TrainConfig, forward, init_model, train
from .texture_evolution import ProcessStepConfig, VelocityCache, simulate_path

log = logging.getLogger("texture_forge")

WORKERS_ENV = "TEXTURE_FORGE_WORKERS"


def default_workers():
    value = os.environ.get(WORKERS_ENV)
    if value is None:
        return os.cpu_count() or 1
    try:
        workers = int(value)
    except ValueError:
        raise ConfigurationError(f"{WORKERS_ENV} must be an integer, got {value!r}") from None
    if workers < 1:
        raise ConfigurationError(f"{WORKERS_ENV} must be at least 1")
    return workers


class Timer:
    def __init__(self):
        self.phases = {}

    def __call__(self, name):
        timer = self

        class _Phase:
            def __enter__(self):
                self.start = time.perf_counter()

            def __exit__(self, *exc):
                timer.phases[name] = timer.phases.get(name, 0.0) + time.perf_counter() - self.start

        return _Phase()


def _modes_arg(text):
    try:
        return [as_mode(part.strip()) for part in text.split(",") if part.strip()]
    except TextureForgeError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _step_cfg(args):
    return ProcessStepConfig(dt_total=args.dt, substeps=args.substeps)


def _add_step_flags(p):
    p.add_argument("--dt", type=float, default=0.1, help="seconds per processing step")
    p.add_argument("--substeps", type=int, default=10, help="explicit Euler substeps per step")


def build_parser():
    parser = argparse.ArgumentParser(prog="texture-forge", description="Texture evolution and processing-path search.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="JSON file of option defaults (flags override it)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    parser.commands = sub.choices

    p = sub.add_parser("mesh", help="build the fundamental-region mesh")
    p.add_argument("--subdivision", type=int, default=3)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gen-data", help="simulate a random-ODF dataset for all modes")
    p.add_argument("--mesh", required=True)
    p.add_argument("--n", type=int, default=500, help="number of initial ODFs")
    p.add_argument("--seed", type=int, default=0)
    _add_step_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train surrogate models")
    p.add_argument("--mesh", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", help="mask of the mode to train; omit with --all")
    p.add_argument("--all", action="store_true", help="train all 31 modes into the --out directory")
    p.add_argument("--seed", type=int, default=0, help="master seed; each mode uses seed + mode id")
    p.add_argument("--ratio", type=float, default=0.8, help="train fraction of input ODFs")
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--lr-max", type=float, default=TrainConfig.lr_max)
    p.add_argument("--lr-min", type=float, default=TrainConfig.lr_min)
    p.add_argument("--t0", type=int, default=TrainConfig.t0)
    p.add_argument("--t-mult", type=int, default=TrainConfig.t_mult)
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", help="run the physics simulator along a mode path")
    p.add_argument("--mesh", required=True)
    p.add_argument("--odf", required=True)
    p.add_argument("--modes", required=True, type=_modes_arg, help="comma-separated masks")
    _add_step_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("search", help="exponential-weights path search")
    p.add_argument("--mesh", required=True)
    p.add_argument("--models", help="model directory (surrogate oracle)")
    p.add_argument("--odf", required=True)
    p.add_argument("--restarts", type=int, default=1000)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--beta", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle", choices=("surrogate", "simulator"), default="surrogate")
    p.add_argument("--flavor", choices=("base", "exp"), default="base")
    p.add_argument("--greedy", action="store_true", help="always take the best mode")
    _add_step_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="per-mode accuracy table on the held-out split")
    p.add_argument("--models", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mesh", help="defaults to the mesh recorded in the dataset manifest")
    p.add_argument("--seed", type=int, default=0, help="split seed used in training")
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--out", required=True)

    p = sub.add_parser("compare", help="simulator vs surrogate along one path")
    p.add_argument("--mesh", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--odf", required=True)
    p.add_argument("--modes", required=True, type=_modes_arg)
    p.add_argument("--repeats", type=int, default=3, help="timing repetitions (best is kept)")
    _add_step_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("export-plot", help="flatten a trajectory to CSV")
    p.add_argument("--traj", required=True)
    p.add_argument("--mesh", help="needed only if the trajectory has no node coordinates")
    p.add_argument("--out", required=True)
    return parser


def _load_config(path):
    data = read_json(path)
    if isinstance(data, dict) and isinstance(data.get("config"), dict):
        data = data["config"]  # a run manifest
    if not isinstance(data, dict):
        raise DataFormatError("config must be a JSON object", path)
    return {key.replace("-", "_"): value for key, value in data.items()}


def parse_args(argv):
    """Parse ``argv``; options from ``--config`` become defaults that flags override."""
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((arg for arg in argv if arg in parser.commands), None)
    if known.config and command:
        config = _load_config(known.config)
        config.pop("command", None)
        config.pop("config", None)
        sub = parser.commands[command]
        unknown = sorted(set(config) - {a.dest for a in sub._actions})
        if unknown:
            raise ConfigurationError(f"{known.config}: unknown options for {command}: {', '.join(unknown)}")
        for action in sub._actions:
            if action.dest in config:
                value = config[action.dest]
                if action.type is _modes_arg and isinstance(value, (str, list)):
                    value = _modes_arg(value if isinstance(value, str) else ",".join(value))
                action.default = value
                action.required = False
    return parser, parser.parse_args(argv)


def _config_echo(args):
    out = {}
    for key, value in vars(args).items():
        if key in ("config", "verbose", "argv"):
            continue
        if isinstance(value, list):
            value = [str(v) for v in value]
        out[key] = value
    return out


def _write_manifest(out, args, inputs, timer, extra=None, path=None):
    manifest = {
        "command": args.command,
        "tool_version": __version__,
        "argv": args.argv,
        "config": _config_echo(args),
        "seed": getattr(args, "seed", None),
        "inputs": {str(p): hash_file(p) for p in inputs},
        "outputs": {str(out): hash_file(out)} if Path(out).is_file() else {},
        "timings_s": timer.phases,
    }
    if extra:
        manifest.update(extra)
    write_json(path or manifest_path(out), manifest)
    return manifest


def cmd_mesh(args, timer):
    with timer("build"):
        mesh = build_mesh(args.subdivision)
    save_mesh(args.out, mesh)
    _write_manifest(args.out, args, [], timer, {"n_independent": mesh.n_independent, "mesh_hash": mesh.content_hash})
    print(f"mesh: subdivision {mesh.subdivision}, {mesh.n_independent} independent nodes -> {args.out}")


def cmd_gen_data(args, timer):
    mesh = load_mesh(args.mesh)
    cfg = _step_cfg(args)
    with timer("generate"):
        odfs = generate_initial_odfs(args.n, args.seed, mesh)
        records = generate_dataset(mesh, odfs, ALL_MODES, cfg, seed=args.seed, workers=default_workers())
    with timer("write"):
        write_records(args.out, records)
    extra = dataset_manifest(args.out, records, args.seed, mesh, cfg)
    extra["mesh_path"] = str(args.mesh)
    _write_manifest(args.out, args, [args.mesh], timer, extra)
    print(f"dataset: {extra['n_odfs']} ODFs, {extra['n_records']} records -> {args.out}")


def _train_config(args, mode):
    return TrainConfig(
        batch_size=args.batch_size,
        epochs=args.epochs,
        t0=args.t0,
        t_mult=args.t_mult,
        lr_max=args.lr_max,
        lr_min=args.lr_min,
        seed=args.seed + mode.id,
    )


def cmd_train(args, timer):
    if bool(args.all) == bool(args.mode):
        raise ConfigurationError("pass exactly one of --mode MASK or --all")
    mesh = load_mesh(args.mesh)
    with timer("read"):
        records = read_records(args.data)
    train_set, test_set = split(records, args.ratio, args.seed)
    train_by, test_by = records_by_mode(train_set), records_by_mode(test_set)
    modes = list(ALL_MODES) if args.all else [as_mode(args.mode)]

    def fit(mode):
        model = init_model(mode, mesh.node_weights, seed=args.seed + mode.id)
        return train(model, train_by.get(mode.mask, []), test_by.get(mode.mask, []), _train_config(args, mode))

    with timer("train"):
        results = [fit(mode) for mode in modes]
    summary = {}
    if args.all:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for (model, hist), mode in zip(results, modes):
            save_model(out_dir / model_filename(mode), model)
            summary[mode.mask] = {"train_wmse": hist["train"][-1], "test_wmse": hist["test"][-1]}
        _write_manifest(out_dir, args, [args.mesh, args.data], timer, {"models": summary}, out_dir / "run.manifest.json")
    else:
        model, hist = results[0]
        save_model(args.out, model)
        summary[modes[0].mask] = {"history": hist}
        _write_manifest(args.out, args, [args.mesh, args.data], timer, {"models": summary})
    for mask, info in summary.items():
        last = info.get("test_wmse", info.get("history", {}).get("test", [None])[-1])
        print(f"model {mask}: test WMSE {last}")


def cmd_simulate(args, timer):
    mesh = load_mesh(args.mesh)
    a0 = load_odf(args.odf, mesh)
    with timer("simulate"):
        traj = simulate_path(mesh, a0, args.modes, _step_cfg(args))
    save_trajectory(args.out, traj, mesh)
    _write_manifest(args.out, args, [args.mesh, args.odf], timer)
    print(f"final objective {traj.objectives[-1]:.4f} GPa -> {args.out}")


def cmd_search(args, timer):
    mesh = load_mesh(args.mesh)
    a0 = load_odf(args.odf, mesh)
    cfg = SearchConfig(args.restarts, args.steps, args.beta, args.seed, args.oracle, args.flavor, args.greedy)
    inputs = [args.mesh, args.odf]
    if args.oracle == "surrogate":
        if not args.models:
            raise ConfigurationError("the surrogate oracle needs --models")
        oracle = SurrogateOracle(_load_suite(args.models, mesh))
        inputs += sorted(Path(args.models).glob("model_*.json"))
    else:
        oracle = SimulatorOracle(mesh, _step_cfg(args))
    p = assemble_property_matrix(mesh, COPPER)
    with timer("search"):
        result = search(oracle, a0, cfg, ObjectiveWeights(), p, workers=default_workers())
    write_json(args.out, {**result.to_dict(), "search_config": cfg.to_dict()})
    _write_manifest(args.out, args, inputs, timer)
    print(f"best objective {result.best_objective:.4f} GPa via {','.join(m.mask for m in result.best_modes)}")


def _load_suite(directory, mesh):
    models = load_models(directory)
    suite = ModelSuite(models)
    if suite.norm_weights.shape != mesh.node_weights.shape or not np.allclose(suite.norm_weights, mesh.node_weights):
        raise ConfigurationError(f"models in {directory} were trained on a different mesh")
    return suite


def cmd_eval(args, timer):
    mesh_path = args.mesh
    if mesh_path is None:
        info = read_json(manifest_path(args.data))
        mesh_path = info.get("mesh_path")
        if mesh_path is None:
            raise ConfigurationError("dataset manifest has no mesh_path; pass --mesh")
    mesh = load_mesh(mesh_path)
    suite = _load_suite(args.models, mesh)
    records = read_records(args.data)
    _, test = split(records, args.ratio, args.seed)
    by_mode = records_by_mode(test)
    c_quad = stiffness_at_quadrature(mesh, COPPER)
    rows = []
    with timer("evaluate"):
        for mode in ALL_MODES:
            recs = by_mode.get(mode.mask, [])
            if not recs:
                raise ConfigurationError(f"no held-out records for mode {mode.mask}")
            x = np.array([r.input_odf for r in recs])
            y = np.array([r.output_odf for r in recs])
            pred = forward(suite[mode], x)
            rel = np.mean([relative_l2(t, q) for t, q in zip(y, pred)])
            stiff = np.mean([stiffness_error(mesh, COPPER, t, q, c_quad=c_quad) for t, q in zip(y, pred)])
            rows.append((mode.mask, 100.0 * rel, stiff, len(recs)))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "relative_l2_percent", "stiffness_error_gpa", "n_test"])
        for mask, rel, stiff, n in rows:
            writer.writerow([mask, repr(float(rel)), repr(float(stiff)), n])
    _write_manifest(args.out, args, [mesh_path, args.data], timer)
    worst = max(rows, key=lambda r: r[1])
    print(f"eval: 31 modes, worst relative L2 {worst[1]:.4f}% (mode {worst[0]}) -> {args.out}")


def cmd_compare(args, timer):
    mesh = load_mesh(args.mesh)
    a0 = load_odf(args.odf, mesh)
    suite = _load_suite(args.models, mesh)
    cfg = _step_cfg(args)
    with timer("simulate"):
        sim = simulate_path(mesh, a0, args.modes, cfg, velocities=VelocityCache(mesh))
    c_quad = stiffness_at_quadrature(mesh, COPPER)
    with timer("surrogate"):
        sur_odfs, a = [a0], a0
        for mode in args.modes:
            a = forward(suite[mode], a)
            sur_odfs.append(a)
    sur_obj = [objective(homogenize(mesh, COPPER, x, c_quad)) for x in sur_odfs]
    steps = [
        {
            "step": i,
            "relative_l2": relative_l2(sim.odfs[i], sur_odfs[i]),
            "stiffness_gap_gpa": abs(sim.objectives[i] - sur_obj[i]),
        }
        for i in range(len(sur_odfs))
    ]
    with timer("timing"):
        t_sur = time_expansion(SurrogateOracle(suite), a0, args.repeats)
        t_sim = time_expansion(SimulatorOracle(mesh, cfg, cached=False, workers=default_workers()), a0, args.repeats)
    timing = {"surrogate_expansion_s": t_sur, "simulator_expansion_s": t_sim, "speedup": t_sim / t_sur}
    report = {
        "modes": [m.mask for m in args.modes],
        "simulator": sim.to_dict(),
        "surrogate": {"odfs": [np.asarray(x).tolist() for x in sur_odfs], "objectives": sur_obj},
        "steps": steps,
        "timing": timing,
    }
    write_json(args.out, report)
    inputs = [args.mesh, args.odf] + sorted(Path(args.models).glob("model_*.json"))
    _write_manifest(args.out, args, inputs, timer, {"timing": timing})
    print(
        f"final objective simulator {sim.objectives[-1]:.4f} / surrogate {sur_obj[-1]:.4f} GPa; "
        f"speedup {timing['speedup']:.1f}x"
    )


def cmd_export_plot(args, timer):
    traj, data = load_trajectory(args.traj)
    if "nodes" in data:
        nodes = np.asarray(data["nodes"], dtype=float)
    elif args.mesh:
        nodes = load_mesh(args.mesh).independent_nodes
    else:
        raise ConfigurationError("trajectory has no node coordinates; pass --mesh")
    if any(len(a) != len(nodes) for a in traj.odfs):
        raise DataFormatError("trajectory ODFs do not match the node count", args.traj)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "node", "r1", "r2", "r3", "odf", "objective"])
        for step, (a, f) in enumerate(zip(traj.odfs, traj.objectives)):
            for node, (r, value) in enumerate(zip(nodes, a)):
                writer.writerow([step, node, repr(float(r[0])), repr(float(r[1])), repr(float(r[2])), repr(float(value)), repr(f)])
    inputs = [args.traj] + ([args.mesh] if args.mesh else [])
    _write_manifest(args.out, args, inputs, timer)
    print(f"{len(traj.odfs)} steps x {len(nodes)} nodes -> {args.out}")


COMMANDS = {
    "mesh": cmd_mesh,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "simulate": cmd_simulate,
    "search": cmd_search,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "export-plot": cmd_export_plot,
}


def run(argv=None):
    """Run one command; returns the process exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        _, args = parse_args(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    except TextureForgeError as exc:
        print(f"texture-forge: error: {exc}", file=sys.stderr)
        return 1
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args, Timer())
    except TextureForgeError as exc:
        print(f"texture-forge {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"texture-forge {args.command}: error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
