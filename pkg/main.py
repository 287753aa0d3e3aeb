"""
Main entry point for the surface alignment toolkit.

    python main.py synth --out runs/demo
    python main.py pretrain --out runs/demo
    python main.py align --out runs/demo --regime finetune --modalities fVA
    python main.py eval --out runs/demo --eval-seeds 10
"""
import sys
import logging

from config import LOG_FORMAT

# Set up logging
logging.basicConfig(
    level=logging.INFO,
    format=LOG_FORMAT
)
logger = logging.getLogger(__name__)


def run_cli(argv=None):
    """
    Run one pipeline command.

    Returns:
        int: exit status
    """
    # Import here so logging is configured before the package loads
    from surfalign.app import run
    return run(argv)


if __name__ == "__main__":
    sys.exit(run_cli(sys.argv[1:]))
