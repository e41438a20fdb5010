"""Command line entry point: one clip in, one AVFS container out."""

import argparse
import sys

from .errors import DecodeError, JobError, ModelError
from .extract import ExtractionJob, extract

EXIT_OK = 0
EXIT_JOB = 2
EXIT_DECODE = 3
EXIT_MODEL = 4


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="avrn-extract",
        description="Extract aligned audiovisual feature tensors from a clip")
    p.add_argument("--video", required=True, help="video file or .npz clip bundle")
    p.add_argument("--out", required=True, help="output AVFS path")
    p.add_argument("--stride", type=int, default=15,
                   help="frames between visual samples (default 15)")
    p.add_argument("--window", type=float, default=1.0,
                   help="audio window length in seconds (default 1.0)")
    p.add_argument("--hop", type=float, default=0.5,
                   help="audio window hop in seconds (default 0.5)")
    p.add_argument("--visual-model", default="projection-v1")
    p.add_argument("--audio-model", default="projection-v1")
    p.add_argument("--l2-normalize", action="store_true",
                   help="L2-normalize embedding rows before writing")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = ExtractionJob(
            video=args.video, out=args.out, stride=args.stride,
            window=args.window, hop=args.hop,
            visual_model=args.visual_model, audio_model=args.audio_model,
            l2_normalize=args.l2_normalize)
        result = extract(job)
    except JobError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_JOB
    except DecodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DECODE
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    print(f"wrote {result.path}: {result.n_steps} steps "
          f"(visual {result.n_visual}, audio {result.n_audio} before "
          f"alignment), silent={str(result.silent).lower()}")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
