"""Qudit teleportation through partially entangled pure channels, driven by
minimum-error, confidence-filtered and sequentially filtered discrimination
of the sender-side symmetric states, with closed-form analytics and exact
branch-enumeration oracles for every reported quantity."""

__version__ = "0.1.0"

from .analytics import (
    ChannelReport,
    channel_report,
    f_clas,
    f_mc_conclusive,
    f_me,
    f_me_after_fail,
    f_me_after_fail_double_sum,
    overall_fidelity,
    stage_probabilities,
)
from .channels import (
    DEFAULT_TIE_TOL,
    MultiplicityProfile,
    SchmidtChannel,
    channel_state,
    make_channel,
    multiplicity_profile,
    symmetric_family,
)
from .discrimination import (
    McStage,
    MeMeasurement,
    StagePlan,
    build_stage_plan,
    confidence_at_stage,
    failure_coefficients,
    mc_stage,
    me_correct_probability,
    me_measurement,
)
from .engine import (
    AggregateStats,
    ProtocolRunner,
    StrategyConfig,
    TeleportRecord,
    exact_average_fidelity,
    exact_branch_probabilities,
    monte_carlo,
    run_protocol,
)
from .qudit import (
    DenseOperator,
    QuditState,
    apply_gxor,
    apply_local,
    apply_two_outcome_kraus,
    fidelity,
    fourier,
    haar_random_state,
    make_state,
    measure_computational,
    pauli_x_power,
    pauli_z_power,
)

__all__ = [
    "__version__",
    "AggregateStats",
    "ChannelReport",
    "DEFAULT_TIE_TOL",
    "DenseOperator",
    "McStage",
    "MeMeasurement",
    "MultiplicityProfile",
    "ProtocolRunner",
    "QuditState",
    "SchmidtChannel",
    "StagePlan",
    "StrategyConfig",
    "TeleportRecord",
    "apply_gxor",
    "apply_local",
    "apply_two_outcome_kraus",
    "build_stage_plan",
    "channel_report",
    "channel_state",
    "confidence_at_stage",
    "exact_average_fidelity",
    "exact_branch_probabilities",
    "f_clas",
    "f_mc_conclusive",
    "f_me",
    "f_me_after_fail",
    "f_me_after_fail_double_sum",
    "failure_coefficients",
    "fidelity",
    "fourier",
    "haar_random_state",
    "make_channel",
    "make_state",
    "mc_stage",
    "me_correct_probability",
    "me_measurement",
    "measure_computational",
    "monte_carlo",
    "multiplicity_profile",
    "overall_fidelity",
    "pauli_x_power",
    "pauli_z_power",
    "run_protocol",
    "stage_probabilities",
    "symmetric_family",
]
