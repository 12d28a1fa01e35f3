"""Main entry point for the cardiora ECG pipeline."""

import sys

from src.front.cli import main


if __name__ == "__main__":
    sys.exit(main())
