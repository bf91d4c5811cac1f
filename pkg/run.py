"""Entry point for running the lab from the command line."""

import sys

from yt8m_lab.main import main

if __name__ == "__main__":
    sys.exit(main())
