"""Forward and gradient error of the Arnoldi exponential on the wave equation, per K."""

import sys

from krylovgrad.cli import main

if __name__ == "__main__":
    sys.exit(main(["wave-demo", *sys.argv[1:]]))
