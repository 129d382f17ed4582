"""Command-line entry point.

Every subcommand runs in-process by default. ``count-params``, ``complete``
and ``report`` also accept ``--api URL`` to send the request to a running
``modelsplit serve`` instead.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_PROTOCOL = 3
EXIT_NUMERIC = 4


class CliError(Exception):
    def __init__(self, message, code=EXIT_CONFIG):
        super().__init__(message)
        self.code = code


def _load(args):
    from .config import load_config
    if not args.config:
        raise CliError("--config is required for this subcommand")
    cfg = load_config(args.config)
    updates = {}
    if getattr(args, "out", None):
        updates["output_dir"] = args.out
    if getattr(args, "workers", None):
        updates["workers"] = args.workers
    return cfg.model_copy(update=updates) if updates else cfg


def _seed(args, cfg) -> int:
    return args.seed if args.seed is not None else cfg.seed_offset


# ---- in-process subcommands ------------------------------------------------

def cmd_train(args) -> int:
    from .completion.experiment import TaskRunner
    from .nn.optim import LrSchedule
    from .nn.params import init_params
    from .records import ResultRecord, curve_id, meta_record, persist_results
    from .tensor import STREAM_INIT, RngStream
    cfg = _load(args)
    seed = _seed(args, cfg)
    model = cfg.model_spec()
    task = TaskRunner(cfg, model)
    run = task.train(model, init_params(model, RngStream(seed, STREAM_INIT)), seed, cfg.budget,
                     LrSchedule(tuple(map(tuple, cfg.schedule))), seed)
    exp = f"{cfg.experiment_id}-train"
    path = Path(cfg.output_dir) / exp / f"seed-{seed}.jsonl"
    path.unlink(missing_ok=True)
    persist_results([meta_record(exp, cfg.digest(), seed, config=cfg.dump()),
                     ResultRecord("curve", exp, seed, "train", None,
                                  {"partition": None, "id": curve_id(seed, None, "train"), "run": run.to_dict()})],
                    path)
    print(f"seed {seed}: {len(run.points)} evaluations, initial loss {run.initial_loss:.6g}, "
          f"best {min(run.losses):.6g}, final {run.losses[-1]:.6g}")
    print(f"records: {path}")
    return EXIT_OK


def _split(args, role_name: str) -> int:
    from .nn.params import init_params
    from .completion.experiment import load_task_data
    from .runs import Dataset
    from .splitproto import Role, boundary_after, connect, listen, run_split_training
    from .tensor import STREAM_INIT, RngStream
    cfg = _load(args)
    if cfg.task == "rl_gridworld":
        raise CliError("split training runs supervised tasks only")
    seed = _seed(args, cfg)
    model = cfg.model_spec()
    if args.boundary is None:
        raise CliError("--boundary LAYER is required (last layer Alice holds, or a parametric-layer count)")
    try:
        boundary = int(args.boundary) if args.boundary.isdigit() else boundary_after(model, args.boundary)
        role = Role(args.role or role_name, boundary)
        role.cut(model)
    except (KeyError, ValueError) as e:
        raise CliError(f"bad --boundary: {e}") from None
    data = load_task_data(cfg, model)
    if role.name == "alice":
        train, test = Dataset(data.train.x, None), Dataset(data.test.x, None)
    else:
        train, test = Dataset(None, data.train.y), Dataset(None, data.test.y)
    # both parties derive their initial layers from the shared seed, as in monolithic training
    params = init_params(model, RngStream(seed, STREAM_INIT)).subset(role.layer_names(model))
    if args.listen:
        transport = listen(args.listen, timeout=args.timeout,
                           on_bound=lambda port: print(f"listening on port {port}", flush=True))
    else:
        transport = connect(args.connect, timeout=args.timeout)
    try:
        run = run_split_training(role, transport, model, params, cfg.train_config(seed), train, test)
    finally:
        transport.close()
    summary = {"role": role.name, "boundary": boundary, "layers": role.layer_names(model),
               "committed": run.committed, "aborted": run.aborted, "transcript": run.extras["transcript"]}
    if run.points:
        summary["final_loss"] = run.losses[-1]
        summary["best_loss"] = min(run.losses)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_split_serve(args) -> int:
    if not args.listen:
        raise CliError("split-serve needs --listen ADDR")
    args.connect = None
    return _split(args, "bob")


def cmd_split_train(args) -> int:
    if not args.connect:
        raise CliError("split-train needs --connect ADDR")
    args.listen = None
    return _split(args, "alice")


def _print_estimates(rows):
    print(f"{'partition':<16}{'alpha':>6}  {'estimate':>9}  best procedure")
    for r in rows:
        if r.get("estimate") is None:
            print(f"{r['partition']:<16}{r['alpha']:>6.2f}  {'-':>9}  {r.get('error')}")
        else:
            print(f"{r['partition']:<16}{r['alpha']:>6.2f}  {r['estimate']:>9.3f}  {r['best_procedure']}")


def cmd_complete(args) -> int:
    cfg = _load(args)
    seeds = [args.seed] if args.seed is not None else None
    if args.api:
        # an unset output_dir defers to the server's own --out
        explicit = "output_dir" in cfg.model_fields_set
        config = cfg.dump() if explicit else {k: v for k, v in cfg.dump().items() if k != "output_dir"}
        body = {"config": config, "seeds": seeds, "output_dir": cfg.output_dir if explicit else None, "wait": False}
        status = _api(args.api, "post", "/experiments", json=body)
        while status["status"] in ("queued", "running"):
            time.sleep(args.poll)
            status = _api(args.api, "get", f"/experiments/{status['experiment_id']}")
        if status["status"] == "failed":
            code = {"numeric": EXIT_NUMERIC, "config": EXIT_CONFIG}.get(status.get("error_kind"), EXIT_FAILURE)
            raise CliError(status["error"], code)
        _print_estimates(status["estimates"])
        return EXIT_OK
    from .completion.experiment import run_completion_experiment
    from .service.app import _estimates
    res = run_completion_experiment(cfg, seeds=seeds)
    _print_estimates([e.model_dump() for e in _estimates(res.estimates)])
    print(f"records: {res.directory}")
    return EXIT_OK


def cmd_count_params(args) -> int:
    from .counting import CountTable, CountRow, builtin_table, count_table, format_count_table
    if bool(args.name) == bool(args.config):
        raise CliError("give either a built-in model name or --config PATH")
    if args.api:
        if args.name:
            d = _api(args.api, "get", f"/count-params/{args.name}", params={"width": args.width})
        else:
            d = _api(args.api, "post", "/count-params", json={"config": _load(args).dump()})
        table = CountTable(d["model"], [CountRow(**r) for r in d["rows"]], d["total"], d["printed_total"],
                           d["notes"])
    elif args.name:
        try:
            table = builtin_table(args.name, args.width)
        except KeyError as e:
            raise CliError(str(e.args[0])) from None
    else:
        cfg = _load(args)
        table = count_table(cfg.model_spec(), cfg.model if isinstance(cfg.model, str) else "inline model")
    print(json.dumps(table.to_dict(), indent=2) if args.json else format_count_table(table))
    return EXIT_OK


def cmd_report(args) -> int:
    out = args.out or args.results
    if args.api:
        d = _api(args.api, "post", "/report", json={"results_dir": str(Path(args.results).resolve()),
                                                    "alphas": args.alpha, "out_dir": str(Path(out).resolve())})
        print(d["table"])
        for k, v in d["files"].items():
            print(f"{k}: {v}")
        return EXIT_OK
    from .report import write_report
    paths = write_report(args.results, out, args.alpha)
    print(paths["table"].read_text(), end="")
    for k, v in paths.items():
        print(f"{k}: {v}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn
    from .service.app import create_app
    uvicorn.run(create_app(args.out or "results"), host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def _api(base: str, method: str, path: str, **kw):
    import httpx
    try:
        r = httpx.request(method.upper(), base.rstrip("/") + path, timeout=600, **kw)
    except httpx.HTTPError as e:
        raise CliError(f"cannot reach service at {base}: {e}", EXIT_FAILURE) from None
    if r.status_code >= 400:
        try:
            detail = r.json().get("detail")
        except ValueError:
            detail = r.text
        code = EXIT_CONFIG if r.status_code in (404, 409, 422) else EXIT_FAILURE
        raise CliError(f"service error {r.status_code}: {detail}", code)
    return r.json()


# ---- parser and dispatch ---------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="modelsplit", description="Split training and model-completion hardness.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, out=True):
        sp.add_argument("--config", help="experiment config (YAML or JSON)")
        if seed:
            sp.add_argument("--seed", type=int, help="run this seed only")
        if out:
            sp.add_argument("--out", help="output directory (overrides the config)")

    sp = sub.add_parser("train", help="monolithic training of one seed")
    common(sp)
    sp.set_defaults(func=cmd_train)

    for name, func, flag in (("split-serve", cmd_split_serve, "--listen"),
                             ("split-train", cmd_split_train, "--connect")):
        sp = sub.add_parser(name, help=f"split-training endpoint ({'listens' if flag == '--listen' else 'connects'})")
        common(sp)
        sp.add_argument(flag, metavar="ADDR", help="host:port")
        sp.add_argument("--role", choices=("alice", "bob"))
        sp.add_argument("--boundary", metavar="LAYER", help="last layer Alice holds (or a parametric-layer count)")
        sp.add_argument("--timeout", type=float, default=60.0, help="socket timeout in seconds")
        sp.set_defaults(func=func)

    sp = sub.add_parser("complete", help="run a model-completion experiment")
    common(sp)
    sp.add_argument("--workers", type=int, help="parallel seed workers")
    sp.add_argument("--api", metavar="URL", help="submit to a running service")
    sp.add_argument("--poll", type=float, default=1.0, help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_complete)

    sp = sub.add_parser("count-params", help="per-layer parameter counts")
    sp.add_argument("name", nargs="?", help="built-in model: alexnet_table4 or a3c_table6")
    sp.add_argument("--config", help="count the model of this experiment config")
    sp.add_argument("--width", type=float, default=1.0, help="width multiplier (alexnet_table4 only)")
    sp.add_argument("--json", action="store_true")
    sp.add_argument("--api", metavar="URL")
    sp.set_defaults(func=cmd_count_params)

    sp = sub.add_parser("report", help="summary table and plot data from result records")
    sp.add_argument("results", help="results directory")
    sp.add_argument("--out", help="where to write summary/plot files (default: the results directory)")
    sp.add_argument("--alpha", type=float, action="append", help="alpha level (repeatable)")
    sp.add_argument("--api", metavar="URL")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("serve", help="run the HTTP service")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    sp.add_argument("--out", help="default output directory for experiments")
    sp.set_defaults(func=cmd_serve)
    return p


def _exit_code(exc: BaseException) -> int:
    from .completion.experiment import ExperimentFailed
    from .config import ConfigError
    from .datasets import DatasetError
    from .records import RecordError
    from .splitproto import ProtocolError, TransportClosed
    from .splitproto.wire import FrameError
    if isinstance(exc, ExperimentFailed) and exc.__cause__ is not None:
        return _exit_code(exc.__cause__)
    if isinstance(exc, CliError):
        return exc.code
    if isinstance(exc, FloatingPointError):
        return EXIT_NUMERIC
    if isinstance(exc, (ProtocolError, TransportClosed, FrameError)):
        return EXIT_PROTOCOL
    if isinstance(exc, (ConfigError, DatasetError, RecordError)):
        return EXIT_CONFIG
    return EXIT_FAILURE


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130
    except Exception as e:  # noqa: BLE001 - mapped to an exit code below
        code = _exit_code(e)
        if code == EXIT_FAILURE:
            raise
        print(f"error: {e}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
