import sys

from fiedlernet.cli import main

if __name__ == "__main__":
    sys.exit(main())
