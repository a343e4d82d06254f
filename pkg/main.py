"""
Entry-point для mlmc-sdde.
"""

import sys

# Импорт в порядке слоёв
from ui.cli import main as cli_main


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
