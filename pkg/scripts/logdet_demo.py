"""Stochastic log-determinant of an RBF Gram matrix and its gradient checks."""

import sys

from krylovgrad.cli import main

if __name__ == "__main__":
    sys.exit(main(["logdet-demo", *sys.argv[1:]]))
