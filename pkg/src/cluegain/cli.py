"""Batch command line: ``pretrain``, ``impute``, ``evaluate`` and ``similarity``.

Settings come from an optional INI file (a ``[common]`` section plus one
section per command, keys spelled like the long flags with underscores)
and are overridden by flags given on the command line. Every CSV written
starts with a ``#`` comment recording the digest of the resolved settings
and the seed.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from .data import RngStreams, Schema, drop_sparse_columns, is_missing_token, load_csv, normalize, read_csv_text
from .errors import ClueGainError, ConfigurationError
from .evaluation import GAIN, results_csv, results_table, run_trials
from .gain import GainHyperparams, impute_full, train_gain
from .similarity import measure_similarity
from .transfer import STRATEGIES, PretrainedBundle, TransferPlan, finetune, pretrain

log = logging.getLogger("cluegain")

COMMANDS = ("pretrain", "impute", "evaluate", "similarity")

# setting name -> (parser for values read from the config file, default)
SETTINGS = {
    "seed": (int, 0),
    "out_dir": (str, "."),
    "schema": (str, None),
    "miss_rate": (float, 0.8),
    "miss_rates": (lambda s: [float(v) for v in s.replace(",", " ").split()], [0.6, 0.7, 0.8, 0.9]),
    "strategy": (str, "freeze_deep"),
    "strategies": (lambda s: s.replace(",", " ").split(), list(STRATEGIES)),
    "trials": (int, 10),
    "alpha": (float, 10.0),
    "hint_rate": (float, 0.9),
    "iterations": (int, 3000),
    "batch_size": (int, 128),
    "drop_missing_above": (float, None),
    "source": (str, None),
    "target": (str, None),
    "truth": (str, None),
    "bundle": (str, None),
    "candidates": (lambda s: s.split(), None),
    "exit_code_top": (lambda s: s.strip().lower() in ("1", "true", "yes", "on"), False),
}


def _parse_rates(text: str) -> List[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [common] and per-command sections")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out-dir", help="directory for output files")
    common.add_argument("--schema", help="JSON schema naming binary columns and the label column")
    common.add_argument("--alpha", type=float, help="reconstruction weight")
    common.add_argument("--hint-rate", type=float)
    common.add_argument("--iterations", type=int, help="training iterations per model")
    common.add_argument("--batch-size", type=int)
    common.add_argument("--drop-missing-above", type=float,
                        help="drop feature columns whose missing fraction exceeds this value")

    parser = argparse.ArgumentParser(prog="cluegain", description="GAIN and transfer-learning GAIN imputation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", parents=[common], help="pretrain on a complete source table")
    p.add_argument("--source", help="complete source CSV")

    p = sub.add_parser("impute", parents=[common], help="complete a target CSV")
    p.add_argument("--target", help="target CSV with missing cells")
    p.add_argument("--bundle", help="pretrained bundle; omit for plain GAIN")
    p.add_argument("--strategy", choices=STRATEGIES)

    p = sub.add_parser("evaluate", parents=[common], help="masked-RMSE sweep over miss rates and strategies")
    p.add_argument("--truth", help="complete ground-truth CSV")
    p.add_argument("--source", help="complete source CSV for the transfer strategies")
    p.add_argument("--miss-rates", type=_parse_rates, help="comma-separated miss rates")
    p.add_argument("--strategies", nargs="+", choices=STRATEGIES,
                   help="transfer strategies to evaluate next to GAIN (default: all five)")
    p.add_argument("--trials", type=int)

    p = sub.add_parser("similarity", parents=[common], help="rank candidates by transfer gain")
    p.add_argument("--target", help="complete target CSV to pretrain on")
    p.add_argument("--candidates", nargs="+", help="two or more complete candidate CSVs")
    p.add_argument("--miss-rate", type=float)
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--trials", type=int)
    p.add_argument("--exit-code-top", action="store_true", default=None,
                   help="exit with 10 + index of the top-ranked candidate")
    return parser


def resolve_config(args: argparse.Namespace) -> Dict:
    """Defaults, then the config file, then explicit flags."""
    config = {key: default for key, (_, default) in SETTINGS.items()}
    if args.config:
        ini = configparser.ConfigParser()
        if not ini.read(args.config, encoding="utf-8"):
            raise ConfigurationError(f"cannot read config file {args.config}")
        for section in ("common", args.command):
            if not ini.has_section(section):
                continue
            for key, raw in ini.items(section):
                key = key.replace("-", "_")
                if key not in SETTINGS:
                    raise ConfigurationError(f"[{section}] unknown key {key!r}")
                try:
                    config[key] = SETTINGS[key][0](raw)
                except ValueError as exc:
                    raise ConfigurationError(f"[{section}] {key} = {raw!r}: {exc}") from None
    for key, value in vars(args).items():
        if key in SETTINGS and value is not None:
            config[key] = value
    config["command"] = args.command
    return config


def config_digest(config: Dict) -> str:
    """Stable short hash of every setting that can affect outputs."""
    relevant = {k: v for k, v in config.items() if k != "out_dir"}
    return hashlib.sha256(json.dumps(relevant, sort_keys=True).encode()).hexdigest()[:16]


def _comment(config: Dict) -> str:
    return f"config_digest={config_digest(config)} seed={config['seed']}"


def _hyper(config: Dict) -> GainHyperparams:
    return GainHyperparams(alpha=config["alpha"], hint_rate=config["hint_rate"],
                           iterations=config["iterations"], batch_size=config["batch_size"])


def _require(config: Dict, *keys: str) -> None:
    for key in keys:
        if config.get(key) in (None, []):
            raise ConfigurationError(f"{config['command']}: --{key.replace('_', '-')} is required")


def _load(path: str, config: Dict):
    schema = Schema.load(config["schema"]) if config["schema"] else None
    table = load_csv(path, schema)
    keep = list(range(table.n_cols))
    if config["drop_missing_above"] is not None:
        table, keep = drop_sparse_columns(table, config["drop_missing_above"])
        if table.n_cols == 0:
            raise ConfigurationError(f"{path}: every column exceeds --drop-missing-above")
    return table, keep


def _out_dir(config: Dict) -> Path:
    out = Path(config["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# -- commands -----------------------------------------------------------------


def cmd_pretrain(config: Dict) -> int:
    _require(config, "source")
    table, _ = _load(config["source"], config)
    source, _ = normalize(table)
    bundle = pretrain(source, _hyper(config), config["seed"])
    out = _out_dir(config)
    bundle.save(out / "bundle.cgb")
    lines = [f"# {_comment(config)}\n", "iteration,d_loss,g_loss\n"]
    lines += [f"{i},{d:.10g},{g:.10g}\n"
              for i, (d, g) in enumerate(zip(bundle.history.d_loss, bundle.history.g_loss))]
    _write_text(out / "pretrain_loss.csv", "".join(lines))
    print(f"pretrained on {table.n_rows}x{table.n_cols}; wrote {out / 'bundle.cgb'}")
    return 0


def _format_value(value: float, binary: bool) -> str:
    if binary:
        return str(int(value))
    return repr(float(value))


def cmd_impute(config: Dict) -> int:
    _require(config, "target")
    table, keep = _load(config["target"], config)
    table_n, params = normalize(table)
    hyper = _hyper(config)
    streams = RngStreams.from_seed(config["seed"], 1)
    if config["bundle"]:
        bundle = PretrainedBundle.load(config["bundle"])
        plan = TransferPlan(config["strategy"], pretrain_hidden_count=hyper.hidden_layers)
        model = finetune(bundle, table_n, None, plan, hyper, config["seed"])
        mode = plan.label
    else:
        model = train_gain(table_n, None, hyper, config["seed"])
        mode = "GAIN"
    completed = impute_full(model, table_n, None, streams.noise, params)

    header, body = read_csv_text(config["target"])
    feature_cols = [j for j, name in enumerate(header) if name in table.column_names]
    columns = {header[j]: j for j in feature_cols}
    filled = 0
    for out_j, name in enumerate(table.column_names):
        j = columns[name]
        binary = table.column_kinds[out_j] == "binary"
        for i, row in enumerate(body):
            if is_missing_token(row[j]):
                row[j] = _format_value(completed[i, out_j], binary)
                filled += 1
    out = _out_dir(config) / "imputed.csv"
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# {_comment(config)}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(body)
    print(f"{mode}: imputed {filled} masked cells in {table.n_rows}x{table.n_cols}; wrote {out}")
    return 0


def cmd_evaluate(config: Dict) -> int:
    _require(config, "truth")
    truth, _ = _load(config["truth"], config)
    strategies = list(config["strategies"])
    source = None
    if strategies:
        _require(config, "source")
        source, _ = _load(config["source"], config)
    hyper = _hyper(config)
    rows = []
    cache: Dict[int, PretrainedBundle] = {}
    for rate in config["miss_rates"]:
        for strategy in [GAIN] + strategies:
            log.info("evaluate %s at miss rate %s", strategy, rate)
            result = run_trials(truth, strategy, rate, config["trials"], config["seed"], hyper,
                                source=source, bundle_cache=cache)
            rows.append(result["rmse"])
    out = _out_dir(config)
    _write_text(out / "evaluate.csv", results_csv(rows, _comment(config)))
    table = results_table(rows)
    _write_text(out / "evaluate.txt", table + "\n")
    print(table)
    return 0


def cmd_similarity(config: Dict) -> int:
    _require(config, "target")
    candidates = config["candidates"] or []
    if len(candidates) < 2:
        raise ConfigurationError("similarity needs at least two candidate CSVs")
    target, _ = _load(config["target"], config)
    tables = [_load(path, config)[0] for path in candidates]
    names = [Path(p).stem for p in candidates]
    if len(set(names)) != len(names):
        names = list(candidates)
    report = measure_similarity(target, tables, config["miss_rate"], TransferPlan(config["strategy"]),
                                _hyper(config), config["trials"], config["seed"], names)
    out = _out_dir(config)
    _write_text(out / "similarity.csv", report.to_csv(_comment(config)))
    _write_text(out / "similarity.txt", report.to_text() + "\n")
    print(report.to_text())
    print(f"top candidate: {report.top}")
    if config["exit_code_top"]:
        return 10 + report.top_index()
    return 0


HANDLERS = {"pretrain": cmd_pretrain, "impute": cmd_impute,
            "evaluate": cmd_evaluate, "similarity": cmd_similarity}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        config = resolve_config(args)
        return HANDLERS[args.command](config)
    except (ClueGainError, OSError) as exc:
        print(f"cluegain {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
