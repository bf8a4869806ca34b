"""Run the acceptance suite and print one line per criterion.

    python scripts/run_acceptance.py [--quick]
"""

import os
import sys

import pytest

HERE = os.path.dirname(os.path.abspath(__file__))

if __name__ == "__main__":
    args = [os.path.join(HERE, os.pardir, "tests", "test_acceptance.py"), "-q"]
    if "--quick" in sys.argv:
        args += ["-m", "not slow"]
    sys.exit(pytest.main(args))
