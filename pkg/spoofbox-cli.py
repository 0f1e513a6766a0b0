#!/usr/bin/env python3
"""
SpoofBox CLI - Command line interface for SpoofBox
"""

import sys

from spoofbox.cli import main

if __name__ == "__main__":
    sys.exit(main())
