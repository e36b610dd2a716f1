"""
Main entry point for the GOLD command line.
This allows running commands with: python -m gold_ocl <command> ...
"""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
