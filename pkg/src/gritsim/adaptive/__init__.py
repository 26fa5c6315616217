from .hierarchy import HierarchicalGrid
from .resample import resample, split_particle, merge_particles, apic_angular_momentum
from .solver import AdaptiveSolver

__all__ = [
    "HierarchicalGrid",
    "AdaptiveSolver",
    "resample",
    "split_particle",
    "merge_particles",
    "apic_angular_momentum",
]
