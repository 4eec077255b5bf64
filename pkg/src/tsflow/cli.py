"""Command-line front end.

    tsflow train      --pipeline def.json --data in.csv --out DIR
    tsflow run        --pipeline DIR|def.json --data in.csv --out DIR
    tsflow run-online --pipeline DIR|def.json --data in.csv --out DIR
    tsflow validate   --pipeline def.json

``train`` writes one ``<sink>.csv`` per sink plus the fitted pipeline in
``DIR/pipeline``; the run commands write the sink CSVs. Callback output goes
to ``DIR/callbacks``.

Exit codes: 0 success, 1 usage, 2 definition, 3 data, 4 execution.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .csvio import read_csv, write_csv
from .definition import parse_definition
from .engine.graph import Pipeline
from .engine.persistence import MANIFEST_NAME, load_pipeline
from .errors import DataError, ManifestNotFound, TsflowError, UsageError

log = logging.getLogger("tsflow")

EXIT_OK = 0
PIPELINE_SUBDIR = "pipeline"
CALLBACK_SUBDIR = "callbacks"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _read_definition(path: Path):
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read definition: {exc.strerror}", location=str(path)) from None
    return parse_definition(text, str(path))


def _load_any(path: Path) -> Pipeline:
    if path.is_dir():
        return load_pipeline(path)
    if path.is_file():
        return _read_definition(path).build()
    raise ManifestNotFound(f"{path} is neither a saved-pipeline directory nor a definition file")


def _read_data(path: Path):
    try:
        return read_csv(path)
    except OSError as exc:
        raise DataError(f"cannot read data: {exc.strerror}", location=str(path)) from None


def _write_outputs(outputs, out_dir: Path) -> None:
    for sink, data in outputs.items():
        write_csv(data, out_dir / f"{sink}.csv")
        log.info("wrote %s", out_dir / f"{sink}.csv")


def cmd_train(def_path, data_path, out_dir) -> Pipeline:
    out_dir = Path(out_dir)
    pipeline = _read_definition(Path(def_path)).build()
    data = _read_data(Path(data_path))
    outputs = pipeline.train(data, callback_dir=out_dir / CALLBACK_SUBDIR)
    _write_outputs(outputs, out_dir)
    pipeline.save(out_dir / PIPELINE_SUBDIR)
    return pipeline


def cmd_run(pipeline_path, data_path, out_dir, online: bool = False) -> None:
    out_dir = Path(out_dir)
    path = Path(pipeline_path)
    if path.is_dir() and not (path / MANIFEST_NAME).is_file() and (path / PIPELINE_SUBDIR).is_dir():
        path = path / PIPELINE_SUBDIR
    pipeline = _load_any(path)
    data = _read_data(Path(data_path))
    runner = pipeline.run_online if online else pipeline.run
    _write_outputs(runner(data, callback_dir=out_dir / CALLBACK_SUBDIR), out_dir)


def cmd_run_online(pipeline_path, data_path, out_dir) -> None:
    cmd_run(pipeline_path, data_path, out_dir, online=True)


def cmd_validate(def_path) -> None:
    defn = _read_definition(Path(def_path))
    print(f"{def_path}: ok ({len(defn.steps)} steps, sinks {', '.join(defn.sinks)})")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--seed", type=int, default=None, help="reserved; execution is deterministic")

    parser = _Parser(prog="tsflow", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, help_ in [
        ("train", "fit a pipeline definition and save it"),
        ("run", "execute a saved pipeline (or a fit-free definition)"),
        ("run-online", "execute one timestamp at a time"),
    ]:
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--pipeline", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
    p = sub.add_parser("validate", parents=[common], help="check a pipeline definition")
    p.add_argument("--pipeline", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required (train, run, run-online, validate)")
        logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
        if args.seed is not None:
            log.debug("--seed %d ignored: execution is deterministic", args.seed)
        if args.command == "train":
            cmd_train(args.pipeline, args.data, args.out)
        elif args.command == "run":
            cmd_run(args.pipeline, args.data, args.out)
        elif args.command == "run-online":
            cmd_run_online(args.pipeline, args.data, args.out)
        else:
            cmd_validate(args.pipeline)
    except TsflowError as exc:
        print(f"tsflow: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
