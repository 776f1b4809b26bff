"""Smoothing and structural analysis of hidden reciprocal processes on a loop."""

from .bp import (
    MessageSet,
    bp_run,
    bp_sweep,
    compute_beliefs,
    init_messages,
    loop_transfer_matrices,
    steady_state_beliefs_eigen,
)
from .diagnostics import accuracy_decomposition, binary_correction, spectral_report, stability_report
from .exact import (
    JointTable,
    UndirectedGraphSkeleton,
    build_factor_graph,
    chordality_check,
    ci_test,
    exact_marginals_bruteforce,
    exact_marginals_transfer,
    joint_table,
    markov_blanket,
    minimal_imap,
    pmap_check_reciprocal,
    sample_joint,
)
from .hilbert import (
    contraction_ratio,
    hilbert_distance_orthant,
    hilbert_distance_psd,
    power_iteration_hilbert,
    primitivity_index,
    projective_diameter,
)
from .model import (
    BeliefSet,
    EmissionSpec,
    HiddenReciprocalModel,
    emissions_to_node_potentials,
    random_model,
    validate_model,
)

__version__ = "0.1.0"
