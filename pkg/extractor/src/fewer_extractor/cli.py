"""Command-line front end: a job list in, features and a manifest out.

Exit codes: 0 when at least one record was extracted, 1 when nothing
was (total failure), 2 for an unusable job list, config, or encoders.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ExtractionError
from .extract import (
    DEFAULT_SPEECH_MODEL,
    DEFAULT_TEXT_MODEL,
    SPLITS,
    ExtractorConfig,
    extract,
    read_jobs,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fewer-extract",
        description="Run pretrained speech/text encoders over audio + hypothesis "
        "pairs and write feature files plus a manifest for the estimator toolkit.",
    )
    parser.add_argument("--jobs", required=True, help="JSONL job list (id, audio, hypothesis per row)")
    parser.add_argument("--out", required=True, help="output directory (features/, manifest.jsonl)")
    parser.add_argument("--speech-model", default=DEFAULT_SPEECH_MODEL, help="transformers id or local path")
    parser.add_argument("--text-model", default=DEFAULT_TEXT_MODEL, help="transformers id or local path")
    parser.add_argument(
        "--layer", type=int, default=-1, help="hidden layer to export from both towers (-1 = final)"
    )
    parser.add_argument("--device", default="cpu", help="torch device string")
    parser.add_argument("--workers", type=int, default=1, help="concurrent extraction threads")
    parser.add_argument(
        "--split", default="test", choices=SPLITS, help="split for rows that do not name one"
    )
    parser.add_argument(
        "--include-special-tokens",
        action="store_true",
        help="keep begin/end token positions in the text features",
    )
    parser.add_argument(
        "--no-normalize",
        dest="normalize",
        action="store_false",
        help="feed raw waveforms instead of zero-mean unit-variance ones",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExtractorConfig(
            speech_model_id=args.speech_model,
            text_model_id=args.text_model,
            layer=args.layer,
            device=args.device,
            include_special_tokens=args.include_special_tokens,
            normalize_audio=args.normalize,
            workers=args.workers,
        )
        jobs = read_jobs(args.jobs, default_split=args.split)
        result = extract(jobs, cfg, args.out)
    except (ExtractionError, OSError) as exc:
        print(f"fewer-extract: error: {exc}", file=sys.stderr)
        return 2
    print(
        f"fewer-extract: {len(result.rows)} extracted, {len(result.skipped)} skipped, "
        f"{len(result.failed)} failed -> {result.manifest_path}",
        file=sys.stderr,
    )
    if not result.rows:
        print("fewer-extract: nothing extracted", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
