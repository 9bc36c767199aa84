from .engine import (
    CCEParams,
    Cluster,
    CoherenceCurve,
    cce_coherence,
    element_decoupled_coherence,
    ensemble_average,
    enumerate_clusters,
    hahn_echo_cluster,
    time_grid,
)
from .hamiltonian import QubitSpec, hyperfine_point_dipole, nuclear_dipole
from .kernels import backend_name
from .oracle import exact_oracle

__all__ = [
    "CCEParams",
    "Cluster",
    "CoherenceCurve",
    "QubitSpec",
    "backend_name",
    "cce_coherence",
    "element_decoupled_coherence",
    "ensemble_average",
    "enumerate_clusters",
    "exact_oracle",
    "hahn_echo_cluster",
    "hyperfine_point_dipole",
    "nuclear_dipole",
    "time_grid",
]
