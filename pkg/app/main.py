import argparse
import logging
import sys
from collections.abc import Sequence

from dotenv import load_dotenv

# Load environment variables BEFORE importing app modules
# This ensures .env file is loaded before any module-level os.getenv() calls
load_dotenv()

from app.cli.commands import baseline, evaluate, gen, sweep, track  # noqa: E402
from app.core.errors import ToolkitError  # noqa: E402
from app.core.settings import get_settings  # noqa: E402

logger = logging.getLogger(__name__)

IO_EXIT_CODE = 4


def create_app() -> argparse.ArgumentParser:
    settings = get_settings()
    logging.basicConfig(
        level=getattr(logging, settings.log_level.upper(), logging.INFO),
        format="[%(levelname)s] %(name)s: %(message)s",
    )

    parser = argparse.ArgumentParser(
        prog="reprocs",
        description="Online robust PCA: tracking, synthetic data and experiments",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    gen.register(subparsers)
    track.register(subparsers)
    evaluate.register(subparsers)
    sweep.register(subparsers)
    baseline.register(subparsers)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = create_app()
    args = parser.parse_args(argv)
    try:
        return int(args.handler(args))
    except ToolkitError as exc:
        logger.error(f"[{args.command}] {exc}")
        return exc.exit_code
    except OSError as exc:
        logger.error(f"[{args.command}] I/O failure: {exc}")
        return IO_EXIT_CODE


if __name__ == "__main__":
    sys.exit(main())
