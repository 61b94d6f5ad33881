"""Command-line front door: score / curate / train / predict / eval / bench / synth.

Every option can also come from a key=value config file (--config); an
explicit flag wins over the file, the file wins over the built-in
default. The seed additionally falls back to the FEWER_SEED environment
variable. Each run logs its fully resolved configuration to stderr so a
result can always be traced back to its inputs.

Exit codes: 0 success, 2 data/format problems, 3 configuration problems,
4 numeric failure during training.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import bench as bench_mod
from . import dataset as ds
from . import evaluate as ev
from .errors import DataError, FewerError, NumericError, ParameterError
from .model import estimate, init_model, load_model, save_model
from .training import LabeledExample, TrainConfig, history_csv, train
from .wer import score_pair

PROG = "fewer"
AGG_NAMES = {"avg": "avg_pool", "bilstm": "bilstm"}


def _log(message: str) -> None:
    print(f"{PROG}: {message}", file=sys.stderr)


# -- option plumbing -------------------------------------------------------


def _parse_int(text: str) -> int:
    try:
        return int(text, 10)
    except ValueError:
        raise ParameterError(f"expected an integer, got {text!r}") from None


def _parse_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParameterError(f"expected a number, got {text!r}") from None
    if math.isnan(value):
        raise ParameterError("expected a number, got nan")
    return value


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ParameterError(f"expected true/false, got {text!r}")


def _parse_agg(text: str) -> str:
    if text not in AGG_NAMES:
        raise ParameterError(f"--agg must be one of {sorted(AGG_NAMES)}, got {text!r}")
    return text


@dataclass(frozen=True)
class Opt:
    flag: str
    parse: Callable[[str], object]
    default: object = None
    required: bool = False
    help: str = ""

    @property
    def dest(self) -> str:
        return self.flag.lstrip("-").replace("-", "_")


def _seed_opt() -> Opt:
    return Opt("--seed", _parse_int, default=0, help="random seed (falls back to FEWER_SEED)")


def _config_opt() -> Opt:
    return Opt("--config", str, help="key=value file supplying defaults for any flag")


def read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(f"{path}:{line_no}: expected key=value, got {raw.strip()!r}")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip().strip('"')
    return values


def resolve_options(cmd: str, opts: Sequence[Opt], args: argparse.Namespace) -> dict:
    file_values: dict[str, str] = {}
    config_path = getattr(args, "config", None)
    if config_path is not None:
        file_values = read_config_file(config_path)
        known = {o.dest for o in opts}
        for key in sorted(set(file_values) - known):
            _log(f"config: ignoring key {key!r} (not an option of {cmd!r})")
    resolved: dict[str, object] = {}
    for opt in opts:
        if opt.dest == "config":
            resolved[opt.dest] = config_path
            continue
        raw = getattr(args, opt.dest)
        if raw is None:
            raw = file_values.get(opt.dest)
        if raw is None and opt.dest == "seed":
            raw = os.environ.get("FEWER_SEED")
        if raw is None:
            if opt.required:
                raise ParameterError(f"{cmd}: missing required option {opt.flag}")
            resolved[opt.dest] = opt.default
        else:
            resolved[opt.dest] = opt.parse(raw)
    return resolved


# -- subcommand handlers ---------------------------------------------------


def cmd_score(cfg: dict) -> int:
    records = ds.load_manifest(cfg["manifest"])
    if not records:
        raise DataError("manifest holds no records")
    rows = []
    failures = 0
    for record in records:
        obj = ds.record_to_json(record)
        try:
            if record.reference is None:
                raise DataError("record has no reference transcript")
            pair = score_pair(record, clamp=cfg["clamp"])
        except DataError as exc:
            obj["error"] = str(exc)
            failures += 1
        else:
            obj["wer"] = pair.wer
            obj["substitutions"] = pair.counts.substitutions
            obj["insertions"] = pair.counts.insertions
            obj["deletions"] = pair.counts.deletions
            obj["reference_words"] = pair.counts.reference_words
        rows.append(obj)
    if failures == len(records):
        raise DataError("no record could be scored (are references present?)")
    with open(cfg["out"], "w", encoding="utf-8") as fh:
        for obj in rows:
            fh.write(json.dumps(obj) + "\n")
    _log(f"scored {len(records) - failures}/{len(records)} records -> {cfg['out']}")
    return 0


def _counts_free_table(rows_by_split: dict[str, list[ds.ScoredRow]]) -> str:
    headers = list(rows_by_split)
    lines = []
    specs = [
        ("Segments", lambda rows: f"{len(rows)}"),
        ("Hours", lambda rows: f"{sum(r.record.duration_sec for r in rows) / 3600.0:.2f}"),
        ("Avg. duration (s)", lambda rows: f"{sum(r.record.duration_sec for r in rows) / len(rows):.2f}"),
        ("Avg. WER (%)", lambda rows: f"{100 * np.mean([r.wer for r in rows]):.2f}"),
        ("Std. WER (%)", lambda rows: f"{100 * np.std([r.wer for r in rows]):.2f}"),
    ]
    label_w = max(len(label) for label, _ in specs)
    col_w = max(8, *(len(h) for h in headers))
    lines.append(" " * label_w + "  " + "  ".join(f"{h:>{col_w}}" for h in headers))
    for label, fmt in specs:
        cells = "  ".join(f"{fmt(rows_by_split[h]):>{col_w}}" for h in headers)
        lines.append(f"{label:<{label_w}}  {cells}")
    return "\n".join(lines)


def cmd_curate(cfg: dict) -> int:
    rows = ds.load_scored_manifest(cfg["manifest"], skip_errors=True)
    if not rows:
        raise DataError("manifest holds no scored records")
    kept = ds.filter_by_duration(rows, cfg["max_dur"])
    if not kept:
        raise DataError(f"duration filter at {cfg['max_dur']}s removed every record")
    train_rows = [r for r in kept if r.record.split == "train"]
    if train_rows:
        rng = np.random.default_rng(cfg["seed"])
        balanced = ds.balance_zero_wer(train_rows, bins=cfg["bins"], rng=rng)
        retained = {id(r) for r in balanced}
        final = [r for r in kept if r.record.split != "train" or id(r) in retained]
        _log(f"balancing kept {len(balanced)}/{len(train_rows)} train records")
    else:
        final = kept
        _log("no train split present; balancing skipped")
    ds.save_scored_manifest(final, cfg["out"])
    _log(f"curated {len(final)}/{len(rows)} records -> {cfg['out']}")

    by_split: dict[str, list[ds.ScoredRow]] = {}
    for row in final:
        by_split.setdefault(row.record.split, []).append(row)
    ordered = {s: by_split[s] for s in ds.SPLITS if s in by_split}
    if all(r.counts is not None for r in final):
        table = ds.stats_table(
            {s: ds.compute_stats(ds.scored_pairs(rows_)) for s, rows_ in ordered.items()}
        )
    else:
        _log("some rows lack alignment counts; word-based stats omitted")
        table = _counts_free_table(ordered)
    print(table)
    return 0


def _examples_for(rows: Sequence[ds.ScoredRow]) -> list[LabeledExample]:
    examples = []
    for row in rows:
        speech, text = ds.load_features_for(row.record)
        examples.append(LabeledExample(speech, text, row.wer))
    return examples


def cmd_train(cfg: dict) -> int:
    train_rows = ds.load_scored_manifest(cfg["train"])
    dev_rows = ds.load_scored_manifest(cfg["dev"])
    if not train_rows or not dev_rows:
        raise DataError("train and dev manifests must both be non-empty")
    train_examples = _examples_for(train_rows)
    dev_examples = _examples_for(dev_rows)
    speech_dim = train_examples[0].speech.dim
    text_dim = train_examples[0].text.dim
    # hash what shaped the training run, not where its artifacts land
    hashed = {k: v for k, v in cfg.items() if k not in ("out", "history", "config")}
    config_hash = hashlib.sha256(
        json.dumps(hashed, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()[:16]
    model = init_model(AGG_NAMES[cfg["agg"]], speech_dim, text_dim, cfg["seed"], config_hash)
    recipe = TrainConfig(
        lr_max=cfg["lr"],
        t_max_epochs=cfg["tmax"],
        max_epochs=cfg["max_epochs"],
        patience=cfg["patience"],
        batch_size=cfg["batch"],
        seed=cfg["seed"],
        dropout=cfg["dropout"],
    )
    result = train(model, train_examples, dev_examples, recipe)
    save_model(result.model, cfg["out"])
    if cfg["history"] is not None:
        Path(cfg["history"]).write_text(history_csv(result.history), encoding="utf-8")
    _log(
        f"trained {len(result.history)} epochs (stopped: {result.stopped}), "
        f"best dev MSE {result.best_dev_mse:.6f} -> {cfg['out']}"
    )
    return 0


def cmd_predict(cfg: dict) -> int:
    model = load_model(cfg["model"])
    records = ds.load_manifest(cfg["manifest"])
    if not records:
        raise DataError("manifest holds no records")
    with open(cfg["out"], "w", encoding="utf-8") as fh:
        for record in records:
            speech, text = ds.load_features_for(record)
            value = estimate(model, speech, text)
            fh.write(json.dumps({"id": record.id, "estimate": value}) + "\n")
    _log(f"estimated {len(records)} records -> {cfg['out']}")
    return 0


def _load_predictions(path: str) -> dict[str, float]:
    estimates: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {line_no}: invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict) or "id" not in obj or "estimate" not in obj:
                raise DataError(f"line {line_no}: expected an object with id and estimate")
            value = obj["estimate"]
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
                raise DataError(f"line {line_no}: estimate must be a finite number")
            if obj["id"] in estimates:
                raise DataError(f"line {line_no}: duplicate prediction for id {obj['id']!r}")
            estimates[obj["id"]] = float(value)
    if not estimates:
        raise DataError(f"no predictions found in {path}")
    return estimates


def cmd_eval(cfg: dict) -> int:
    predictions = _load_predictions(cfg["pred"])
    rows = ds.load_scored_manifest(cfg["scored"])
    scored_ids = {r.record.id for r in rows}
    missing = sorted(scored_ids - set(predictions))
    extra = sorted(set(predictions) - scored_ids)
    if missing:
        raise DataError(f"{len(missing)} scored records lack predictions, e.g. {missing[:3]}")
    if extra:
        raise DataError(f"{len(extra)} predictions match no scored record, e.g. {extra[:3]}")
    estimates = [predictions[r.record.id] for r in rows]
    if all(r.counts is not None for r in rows):
        report = ev.full_report(ds.scored_pairs(rows), estimates)
    else:
        _log("rows lack alignment counts; word-weighted columns omitted")
        report = ev.assemble_report(
            targets=[r.wer for r in rows],
            estimates=estimates,
            durations=[r.record.duration_sec for r in rows],
            speakers=[r.record.speaker for r in rows],
        )
    print(ev.report_table(report))
    if cfg["out"] is not None:
        Path(cfg["out"]).write_text(
            json.dumps(ev.report_json(report), indent=2) + "\n", encoding="utf-8"
        )
        _log(f"report -> {cfg['out']}")
    if cfg["hist_csv"] is not None:
        Path(cfg["hist_csv"]).write_text(ev.histogram_csv(report), encoding="utf-8")
    if cfg["speakers_csv"] is not None:
        Path(cfg["speakers_csv"]).write_text(ev.per_speaker_csv(report), encoding="utf-8")
    if cfg["plots"] is not None:
        plot_dir = Path(cfg["plots"])
        plot_dir.mkdir(parents=True, exist_ok=True)
        (plot_dir / "histogram.svg").write_text(ev.histogram_svg(report), encoding="utf-8")
        (plot_dir / "per_speaker.svg").write_text(ev.per_speaker_svg(report), encoding="utf-8")
        _log(f"plots -> {plot_dir}")
    return 0


def cmd_bench(cfg: dict) -> int:
    model = load_model(cfg["model"])
    records = ds.load_manifest(cfg["manifest"])
    report = bench_mod.bench_estimator(model, records, warmup=cfg["warmup"])
    print(bench_mod.timing_table(report))
    if cfg["out"] is not None:
        Path(cfg["out"]).write_text(
            json.dumps(bench_mod.timing_json(report), indent=2) + "\n", encoding="utf-8"
        )
        _log(f"timing report -> {cfg['out']}")
    if cfg["compare"] is not None:
        with open(cfg["compare"], encoding="utf-8") as fh:
            other = bench_mod.timing_from_json(json.load(fh))
        print()
        print(bench_mod.comparison_table(report, other))
    return 0


def cmd_synth(cfg: dict) -> int:
    result = ds.synth_dataset(
        out_dir=cfg["out"],
        n_train=cfg["train"],
        n_dev=cfg["dev"],
        n_test=cfg["test"],
        speech_dim=cfg["speech_dim"],
        text_dim=cfg["text_dim"],
        seed=cfg["seed"],
        noise_sigma=cfg["noise"],
    )
    _log(f"wrote {len(result.records)} records under {cfg['out']}")
    print(result.manifest_path)
    return 0


# -- wiring ----------------------------------------------------------------


COMMANDS: dict[str, tuple[Callable[[dict], int], list[Opt], str]] = {
    "score": (
        cmd_score,
        [
            Opt("--manifest", str, required=True, help="input manifest (JSONL)"),
            Opt("--out", str, required=True, help="scored manifest to write"),
            Opt("--clamp", _parse_bool, default=True, help="clamp per-utterance WER into [0,1]"),
            _config_opt(),
        ],
        "align hypotheses against references and write per-utterance WER",
    ),
    "curate": (
        cmd_curate,
        [
            Opt("--manifest", str, required=True, help="scored manifest to curate"),
            Opt("--out", str, required=True, help="curated manifest to write"),
            Opt("--max-dur", _parse_float, default=10.0, help="drop utterances longer than this (s); inf disables"),
            Opt("--bins", _parse_int, default=100, help="histogram bins for zero-WER balancing"),
            _seed_opt(),
            _config_opt(),
        ],
        "duration-filter, rebalance the train split, and print corpus stats",
    ),
    "train": (
        cmd_train,
        [
            Opt("--train", str, required=True, help="scored training manifest"),
            Opt("--dev", str, required=True, help="scored development manifest"),
            Opt("--out", str, required=True, help="model file to write"),
            Opt("--agg", _parse_agg, default="avg", help="speech aggregator: avg or bilstm"),
            Opt("--lr", _parse_float, default=1e-3, help="peak learning rate"),
            Opt("--tmax", _parse_int, default=15, help="cosine annealing period (epochs)"),
            Opt("--max-epochs", _parse_int, default=40, help="hard epoch cap"),
            Opt("--patience", _parse_int, default=5, help="early-stop patience on dev MSE"),
            Opt("--batch", _parse_int, default=64, help="minibatch size"),
            Opt("--dropout", _parse_float, default=0.1, help="dropout rate in the head"),
            Opt("--history", str, help="optional CSV path for the per-epoch curve"),
            _seed_opt(),
            _config_opt(),
        ],
        "fit the estimator and save the best-dev snapshot",
    ),
    "predict": (
        cmd_predict,
        [
            Opt("--model", str, required=True, help="trained model file"),
            Opt("--manifest", str, required=True, help="manifest to estimate"),
            Opt("--out", str, required=True, help="predictions JSONL to write"),
            _config_opt(),
        ],
        "write per-utterance WER estimates",
    ),
    "eval": (
        cmd_eval,
        [
            Opt("--pred", str, required=True, help="predictions JSONL from `predict`"),
            Opt("--scored", str, required=True, help="scored manifest with targets"),
            Opt("--out", str, help="optional JSON report path"),
            Opt("--hist-csv", str, help="optional histogram CSV path"),
            Opt("--speakers-csv", str, help="optional per-speaker CSV path"),
            Opt("--plots", str, help="optional directory for SVG plots"),
            _config_opt(),
        ],
        "compare predictions against targets and print the metric table",
    ),
    "bench": (
        cmd_bench,
        [
            Opt("--model", str, required=True, help="trained model file"),
            Opt("--manifest", str, required=True, help="manifest to time"),
            Opt("--warmup", _parse_int, default=2, help="unmeasured passes before timing"),
            Opt("--out", str, help="optional JSON timing report path"),
            Opt("--compare", str, help="timing JSON from another run to compare against"),
            _config_opt(),
        ],
        "measure per-stage inference time and the real-time factor",
    ),
    "synth": (
        cmd_synth,
        [
            Opt("--out", str, required=True, help="output directory"),
            Opt("--train", _parse_int, required=True, help="training utterance count"),
            Opt("--dev", _parse_int, required=True, help="development utterance count"),
            Opt("--test", _parse_int, required=True, help="test utterance count"),
            Opt("--speech-dim", _parse_int, default=32, help="speech feature width"),
            Opt("--text-dim", _parse_int, default=16, help="text feature width"),
            Opt("--noise", _parse_float, default=0.02, help="target noise sigma"),
            _seed_opt(),
            _config_opt(),
        ],
        "generate a labelled synthetic dataset with known structure",
    ),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG, description="WER estimation from precomputed speech/text embeddings"
    )
    subparsers = parser.add_subparsers(dest="cmd", required=True)
    for name, (_, opts, summary) in COMMANDS.items():
        sub = subparsers.add_parser(name, help=summary, description=summary)
        for opt in opts:
            sub.add_argument(opt.flag, dest=opt.dest, default=None, help=opt.help, metavar="V")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems; those are config errors here
        return 0 if exc.code in (0, None) else 3
    handler, opts, _ = COMMANDS[args.cmd]
    try:
        resolved = resolve_options(args.cmd, opts, args)
        _log(f"{args.cmd} config: {json.dumps(resolved, sort_keys=True)}")
        return handler(resolved)
    except NumericError as exc:
        _log(f"numeric failure: {exc}")
        return 4
    except ParameterError as exc:
        _log(f"configuration error: {exc}")
        return 3
    except FewerError as exc:
        _log(f"error: {exc}")
        return 2
    except OSError as exc:
        _log(f"io error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
