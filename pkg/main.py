import logging
import sys
from typing import List, Optional

from cli_manager import CliManager, create_cli_parser, run_command
from config_manager import ConfigManager
from errors import DomainError, NotFoundError, NumericalError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def setup_logging(level: int = logging.INFO):
    """Set up logging configuration. Data goes to stdout, so the console handler writes to stderr."""
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler('tweezer_readout.log'),
            logging.StreamHandler(sys.stderr)
        ],
        force=True
    )


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the command line."""
    args = create_cli_parser().parse_args(argv)
    setup_logging(logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO)
    logging.info(f"Starting tweezer-readout {args.command}")

    try:
        config = ConfigManager(args.config, args.preset).config
        cli = CliManager(config, seed=args.seed, out=args.out, fmt=args.format, workers=args.threads)
        cli.emit(run_command(cli, args))
    except (DomainError, NotFoundError) as e:
        logging.error(f"Invalid input: {e}")
        return EXIT_VALIDATION
    except NumericalError as e:
        logging.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    except KeyboardInterrupt:
        logging.info("Interrupted by user")
        return 130
    finally:
        logging.info("Done")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
