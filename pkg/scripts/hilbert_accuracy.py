"""Accuracy loss of the Arnoldi adjoint on Hilbert matrices, with and without re-projection."""

import sys

from krylovgrad.cli import main

if __name__ == "__main__":
    sys.exit(main(["hilbert-accuracy", *sys.argv[1:]]))
