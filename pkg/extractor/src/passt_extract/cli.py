"""CLI: extract --in <glob> --out <dir> [--mapping map.csv] [--backend ...]."""

from __future__ import annotations

import argparse
import glob as globlib
import sys
from pathlib import Path

from . import backends, extract as ex
from .errors import BackendUnavailable, CompatibilityError, InputError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="passt-extract",
        description="Extract frame-level embeddings from hive audio into BEEV1 files.",
    )
    parser.add_argument("--in", dest="inputs", required=True,
                        help="glob of input WAV files")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--backend", default="passt", choices=sorted(backends.BACKENDS),
                        help="embedding backend (default: passt)")
    parser.add_argument("--mapping", default=None,
                        help="CSV mapping filename -> recording_id,hive_id,timestamp")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        paths = sorted(globlib.glob(args.inputs))
        if not paths:
            raise InputError(f"no files match {args.inputs!r}")
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        mapping = ex.read_mapping_csv(args.mapping) if args.mapping else {}
        config = ex.ExtractConfig(output_dir=out_dir, backend=args.backend)
        backend = backends.make_backend(args.backend)
        for path in paths:
            row = mapping.get(Path(path).name)
            rid = row.recording_id if row else None
            written = ex.extract(config, path, backend=backend, recording_id=rid)
            if row:
                ex.append_manifest_row(out_dir / "manifest.csv",
                                       written.stem, row.hive_id, row.timestamp)
            print(f"{path} -> {written}")
        return 0
    except (InputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (BackendUnavailable, CompatibilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
