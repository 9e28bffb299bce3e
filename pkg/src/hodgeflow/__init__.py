"""Hodge decomposition, harmonic clustering, and flow metrics for directed networks.

The pipeline: antisymmetrize a directed weighted graph into net edge flows,
fill its 3-cliques into an oriented complex, split the flow into gradient,
curl, and harmonic parts (optionally under random-walk degree normalization),
cluster edges by their harmonic coordinates, reduce networks to flow-per-edge
measures, and regress outcomes on those measures with cluster-robust errors.
"""

from hodgeflow.complexes import (
    BettiNumbers,
    EdgeFlow,
    FlowNetwork,
    OrientedComplex,
    antisymmetrize,
    betti,
    build_clique_complex,
    complex_summary,
)
from hodgeflow.hodge import (
    HarmonicBasis,
    HodgeDecomposition,
    HodgeLaplacian,
    NormalizationDegrees,
    SolverConvergenceError,
    decompose,
    harmonic_basis,
    laplacian_l0,
    laplacian_l1,
    laplacian_l1_rw,
    laplacian_l1_symmetrized,
    normalization_degrees,
)
from hodgeflow.cluster import (
    EdgeClustering,
    ProviderGeo,
    adjusted_mutual_information,
    geo_kmeans,
    harmonic_cluster,
    system_pair_clusters,
)
from hodgeflow.metrics import (
    RegionMetrics,
    metrics_from_sums,
    metrics_table,
    region_metrics,
)
from hodgeflow.regress import (
    PanelRow,
    RegressionResult,
    WaldTest,
    fit_ols,
    wald_flow_test,
)
from hodgeflow.ingest import (
    EdgeRecord,
    ProviderRecord,
    assemble_networks,
    geocode,
    parse_crosswalk,
    parse_edges,
    parse_providers,
)
from hodgeflow.synth import PlantedFlow, dense_oracle, plant, random_support

__version__ = "0.1.0"
