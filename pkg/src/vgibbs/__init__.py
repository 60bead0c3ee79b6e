"""Finite-volume Gibbs measures on vector-valued marked point configurations.

Modules, bottom-up: geometry (cube partition, halos), marks (the mark measure
|v|^-a exp(-|v|^b) dv), configuration, reference (marked Poisson process),
interaction (pair potentials, energies), specification (Gibbs kernels and
samplers), estimates (moment and Lyapunov bounds), cli.
"""
from .configuration import Configuration, CubeFunction, glue, project, restrict, temperedness, tv_mass, vector_mass
from .geometry import PartitionSpec, Region, halo, interaction_parameter, neighbor_cubes
from .interaction import PairPotential, bump, hamiltonian, hard_range, zero_potential
from .marks import MarkMeasure
from .reference import Batch, PoissonSpec, sample_poisson, sample_poisson_batch
from .specification import Event, MCMCKnobs, Model

__version__ = "0.1.0"
