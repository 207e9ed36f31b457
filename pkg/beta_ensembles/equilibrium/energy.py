"""Energy functional of a probability measure on the domain."""

from loguru import logger

from beta_ensembles.model.measure import GridMeasure
from beta_ensembles.model.potential import RBodyPotential

MASS_TOL = 1e-10


def energy(mu: GridMeasure, T: RBodyPotential, beta: float) -> float:
    """
    E[mu] = -(1/r!) int T dmu^r - (beta/2) int int ln|x - y| dmu(x) dmu(y).

    The logarithmic part integrates the exact log-potential of each cut
    against the Gauss-Jacobi rule, so the diagonal needs no special care.

    Raises:
        ValueError: if mu is not a probability measure
    """
    mass = mu.mass
    if abs(mass - 1.0) > MASS_TOL:
        raise ValueError(f"energy needs a probability measure, got mass {mass:.12g}")
    interaction = T.average(mu)
    coulomb = float(mu.integrate(mu.log_potential).real)
    value = -interaction - 0.5 * beta * coulomb
    logger.debug(f"Energy {value:.12g} (interaction {interaction:.6g}, log part {coulomb:.6g})")
    return value
