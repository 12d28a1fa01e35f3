"""Frontend package: command-line interface."""
