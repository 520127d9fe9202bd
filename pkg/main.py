#!/usr/bin/env python3
"""
fracdiff - Main Entry Point
Regularized time schemes for evolution equations with the square root of an elliptic operator
"""

import logging
import sys

from app.config import APP_CONFIG


def configure_logging():
    """Configure root logging once for the whole process"""
    level = logging.DEBUG if APP_CONFIG["debug"] else getattr(logging, APP_CONFIG["log_level"], logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv=None):
    """Main entry point for the application"""
    configure_logging()
    from app.cli import main as cli_main

    try:
        return cli_main(argv)
    except KeyboardInterrupt:
        logging.getLogger(__name__).warning("Interrupted by user")
        return 130


if __name__ == "__main__":
    sys.exit(main())
