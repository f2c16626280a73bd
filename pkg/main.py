import logging
import sys

from dotenv import load_dotenv

load_dotenv()

from src.config import log_level  # noqa: E402

# Configure logging
logging.basicConfig(
    level=log_level(),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    stream=sys.stderr,
)
logger = logging.getLogger(__name__)


def main(argv=None) -> int:
    """
    Command-line entry point. Data goes to CSV files under --out, summaries
    to stdout, diagnostics to stderr.
    """
    from src.cli_io import run_command

    try:
        return run_command(argv)
    except Exception as e:
        logger.error(f"Unexpected failure: {str(e)}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
