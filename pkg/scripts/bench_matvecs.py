"""Forward/adjoint matvec counts and wall times; pass --mtx PATH for a Matrix Market file."""

import sys

from krylovgrad.cli import main

if __name__ == "__main__":
    sys.exit(main(["bench-matvecs", *sys.argv[1:]]))
