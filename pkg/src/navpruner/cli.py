"""Command-line entry point: ``navpruner <subcommand> [--flags]``.

Exit codes: 0 success, 2 invalid configuration, 3 I/O error, 4 no successful
trajectories for the exemplar memory, 5 remote navigator protocol errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .encoder import TextEncoder
from .errors import DimensionMismatch, FormatVersionMismatch, InvalidConfig, NavError, NoFeasiblePair
from .evaluation import RunConfig, load_split, run_split, write_report
from .exemplars import build_memory, load_memory, save_memory
from .retriever import FINETUNE_PRESET, Hyper, load_model, make_training_examples, save_examples, save_model, train_retriever
from .world import EpisodeConfig, WorldConfig, generate_episodes, generate_world, save_world

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NO_SUCCESS, EXIT_PROTOCOL = 0, 2, 3, 4, 5
SEED_ENV = "NAVPRUNER_SEED"
MODES = ("baseline", "exemplar-only", "prune-only", "full")

log = logging.getLogger("navpruner")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _seed(args) -> int:
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise CliError(EXIT_CONFIG, f"{SEED_ENV} must be an integer (got {env!r})") from None
    return args.seed


def _need_files(paths) -> None:
    for p in paths:
        if not Path(p).is_file():
            raise CliError(EXIT_IO, f"input file not found: {p}")


def _need_out(path) -> Path:
    path = Path(path)
    parent = path.parent if str(path.parent) else Path(".")
    if not parent.is_dir():
        raise CliError(EXIT_IO, f"output directory does not exist: {parent}")
    if not os.access(parent, os.W_OK):
        raise CliError(EXIT_IO, f"output directory is not writable: {parent}")
    return path


# ---------------------------------------------------------------- subcommands

def cmd_gen_world(args) -> int:
    out = _need_out(args.out)
    seed = _seed(args)
    wcfg = WorldConfig(num_viewpoints=args.viewpoints, width=args.width, depth=args.depth,
                       radius=args.radius, num_rooms=args.rooms)
    ecfg = EpisodeConfig(num_episodes=args.episodes, min_len=args.min_len, max_len=args.max_len)
    world = generate_world(wcfg, seed)
    episodes = generate_episodes(world, ecfg, seed)
    save_world(out, world, episodes)
    print(f"wrote {out}: {len(world.viewpoints)} viewpoints, {len(world.edges)} edges, {len(episodes)} episodes")
    return EXIT_OK


def cmd_build_memory(args) -> int:
    _need_files(args.world)
    out = _need_out(args.out)
    cfg = RunConfig(max_steps=args.max_steps, seed=_seed(args))
    worlds, warnings = load_split(args.world)
    if warnings and not worlds:
        raise CliError(EXIT_IO, warnings[0])
    split = run_split(None, "oracle", cfg, parallelism=args.jobs, worlds=worlds)
    by_id = {e.id: w for w, eps in worlds for e in eps}
    ok = [r for r, m in zip(split.results, split.report.episodes) if m.success]
    if not ok:
        print("no successful trajectories; memory not written", file=sys.stderr)
        return EXIT_NO_SUCCESS
    memory = build_memory(ok, {r.episode_id: by_id[r.episode_id] for r in ok}, cap=args.cap)
    save_memory(memory, out)
    print(f"wrote {out}: {len(memory)} exemplars from {len(ok)}/{len(split.results)} successful episodes")
    return EXIT_OK


def cmd_train(args) -> int:
    _need_files(args.world)
    out = _need_out(args.out)
    loss_csv = _need_out(args.loss_csv or str(out) + ".loss.csv")
    base = FINETUNE_PRESET if args.preset == "finetune" else Hyper()
    hyper = Hyper(
        epochs=args.epochs if args.epochs is not None else base.epochs,
        batch_size=args.batch if args.batch is not None else base.batch_size,
        lr=args.lr if args.lr is not None else base.lr,
        weight_decay=args.weight_decay if args.weight_decay is not None else base.weight_decay,
        hidden=args.hidden if args.hidden is not None else base.hidden,
    )
    hyper.validate()
    worlds, warnings = load_split(args.world)
    if warnings:
        raise CliError(EXIT_IO, warnings[0])
    examples = [ex for w, eps in worlds for ex in make_training_examples(w, eps)]
    if args.dump_examples:
        save_examples(examples, _need_out(args.dump_examples))
    model, curve = train_retriever(examples, hyper, _seed(args), TextEncoder())
    save_model(model, out)
    loss_csv.write_text("epoch,mean_loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(curve, 1)))
    print(f"wrote {out} ({len(examples)} examples, final loss {curve[-1]:.4f}) and {loss_csv}")
    return EXIT_OK


def cmd_eval(args) -> int:
    _need_files(args.world)
    if args.mode in ("prune-only", "full") and not args.model:
        raise CliError(EXIT_CONFIG, f"--mode {args.mode} requires --model")
    if args.mode in ("exemplar-only", "full") and not args.memory:
        raise CliError(EXIT_CONFIG, f"--mode {args.mode} requires --memory")
    extra = [p for p in (args.model, args.memory) if p]
    _need_files(extra)
    try:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create output directory for {args.out}: {exc}") from exc
    _need_out(args.out)
    cfg = RunConfig(max_steps=args.max_steps, prune_k=args.k, exemplar_k=args.exemplar_k,
                    seed=_seed(args), timeout=args.timeout)
    cfg.validate()
    model = load_model(args.model) if args.mode in ("prune-only", "full") else None
    memory = load_memory(args.memory) if args.mode in ("exemplar-only", "full") else None
    split = run_split(args.world, args.policy, cfg, parallelism=args.jobs, retriever=model, memory=memory)
    for w in split.warnings:
        print(f"warning: {w}", file=sys.stderr)
    paths = write_report(split, args.out)
    agg = split.report.aggregate
    if agg["n"]:
        print(f"n={agg['n']} SR={agg['SR']:.2f} OSR={agg['OSR']:.2f} SPL={agg['SPL']:.4f} "
              f"NE={agg['NE']:.2f} TL={agg['TL']:.2f}")
    else:
        print("n=0 (no episodes evaluated)")
    print("wrote " + ", ".join(str(p) for p in paths))
    if split.warnings:
        print(f"{len(split.warnings)} world file(s) skipped", file=sys.stderr)
    protocol = sum("ProtocolError" in r.termination_reason for r in split.results)
    if protocol:
        print(f"{protocol} episode(s) aborted by remote protocol errors", file=sys.stderr)
        return EXIT_PROTOCOL
    return EXIT_OK


REPORT_COLUMNS = ("TL_m", "steps", "NE", "SR", "OSR", "SPL")
_AGG_KEYS = {"TL_m": "TL", "steps": "steps", "NE": "NE", "SR": "SR", "OSR": "OSR", "SPL": "SPL"}


def render_table(rows: list[tuple[str, dict]]) -> str:
    header = ["report", "n", *REPORT_COLUMNS]
    body = []
    for name, agg in rows:
        cells = [name, str(agg.get("n", 0))]
        for col in REPORT_COLUMNS:
            v = agg.get(_AGG_KEYS[col])
            cells.append("-" if v is None else f"{v:.2f}")
        body.append(cells)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    fmt = lambda r: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
    return "\n".join([fmt(header)] + [fmt(r) for r in body])


def cmd_report(args) -> int:
    rows = []
    for path in args.reports:
        try:
            doc = json.loads(Path(path).read_text())
            rows.append((Path(path).stem, doc["aggregate"]))
        except (OSError, ValueError, KeyError) as exc:
            raise CliError(EXIT_IO, f"cannot read report {path}: {exc}") from exc
    print(render_table(rows))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="navpruner", description=__doc__.splitlines()[0],
                                allow_abbrev=False)
    p.add_argument("--config", help="JSON file of flag values (keys are flag names with '_' for '-')")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        sp = sub.add_parser(name, help=help, allow_abbrev=False)
        sp.set_defaults(func=fn)
        sp.add_argument("--seed", type=int, default=0, help=f"global seed (overridden by ${SEED_ENV})")
        return sp

    g = add("gen-world", cmd_gen_world, "generate a synthetic world with episodes")
    d = WorldConfig()
    g.add_argument("--viewpoints", type=int, default=d.num_viewpoints)
    g.add_argument("--episodes", type=int, default=EpisodeConfig().num_episodes)
    g.add_argument("--radius", type=float, default=d.radius)
    g.add_argument("--width", type=float, default=d.width)
    g.add_argument("--depth", type=float, default=d.depth)
    g.add_argument("--rooms", type=int, default=d.num_rooms)
    g.add_argument("--min-len", type=float, default=EpisodeConfig().min_len)
    g.add_argument("--max-len", type=float, default=EpisodeConfig().max_len)
    g.add_argument("--out", required=True)

    m = add("build-memory", cmd_build_memory, "build the exemplar memory from oracle trajectories")
    m.add_argument("--world", nargs="+", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--cap", type=int, default=20)
    m.add_argument("--max-steps", type=int, default=RunConfig().max_steps)
    m.add_argument("--jobs", type=int, default=1)

    t = add("train-retriever", cmd_train, "train the candidate retriever by imitation learning")
    t.add_argument("--world", nargs="+", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--loss-csv")
    t.add_argument("--preset", choices=("default", "finetune"), default="default",
                   help="'finetune' uses lr 2e-5; explicit flags still win")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--weight-decay", type=float)
    t.add_argument("--hidden", type=int)
    t.add_argument("--dump-examples", help="write the training set as JSON lines")

    e = add("eval", cmd_eval, "run episodes and write JSON/CSV reports")
    e.add_argument("--world", nargs="+", required=True)
    e.add_argument("--policy", default="oracle", help="oracle | follower:<eps> | remote:cmd:<command> | remote:tcp:<host>:<port>")
    e.add_argument("--mode", choices=MODES, default="baseline")
    e.add_argument("--k", type=int, default=RunConfig().prune_k)
    e.add_argument("--exemplar-k", type=int, default=RunConfig().exemplar_k)
    e.add_argument("--model")
    e.add_argument("--memory")
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--max-steps", type=int, default=RunConfig().max_steps)
    e.add_argument("--timeout", type=float, default=60.0)
    e.add_argument("--out", required=True, help="output prefix; writes .json, .csv and .trace.jsonl")

    r = add("report", cmd_report, "render an aligned table from report JSON files")
    r.add_argument("reports", nargs="+")
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: list[str], args) -> argparse.Namespace:
    try:
        overrides = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config {args.config}: {exc}") from exc
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"config {args.config} is not valid JSON: {exc}") from exc
    if not isinstance(overrides, dict):
        raise CliError(EXIT_CONFIG, "config file must hold a JSON object")
    known = set(vars(args))
    unknown = [k for k in overrides if k.replace("-", "_") not in known]
    if unknown:
        raise CliError(EXIT_CONFIG, f"unknown config keys: {', '.join(sorted(unknown))}")
    # config values act as defaults, so explicit command-line flags still win
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    subparser.set_defaults(**{k.replace("-", "_"): v for k, v in overrides.items()})
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            args = _apply_config(parser, argv, args)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (InvalidConfig, NoFeasiblePair, DimensionMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FormatVersionMismatch, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NavError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
