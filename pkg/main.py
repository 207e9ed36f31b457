#!/usr/bin/env python3
"""
beta-ensembles - large-N expansion of beta-ensembles with r-body interactions

Solves the equilibrium measure, expands correlators and the partition function
in 1/N, and checks the predictions against Metropolis samples.
"""

import sys

from beta_ensembles.main import main

if __name__ == "__main__":
    sys.exit(main())
