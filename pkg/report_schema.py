# report_schema.py - Published schemas of the JSON run reports
"""
One pydantic model per subcommand report. `write_artifacts` validates every
body against its model and writes the model's dict, so a report on disk is
always an instance of the schema listed here. Non-finite floats travel as
the strings "inf", "-inf" and "nan" and parse back to floats.
"""

from typing import Any, Dict, List, Optional, Type, Union

from pydantic import BaseModel, Extra

Real = Union[float, str]


class _Strict(BaseModel):
    class Config:
        extra = Extra.forbid


# =====================================
# SHARED PIECES
# =====================================

class ModuliBody(_Strict):
    sigma: List[float]
    tau: List[List[float]]
    kappa: List[float]
    gamma: List[float]
    varrho: List[float]
    nu: List[float]
    tau_agg: List[float]
    beta: float
    alpha: float
    contraction_ok: bool
    source: str
    sources: Dict[str, str]
    safety_factor: float
    samples: int
    hint_specific: bool = False


class EquilibriumBody(_Strict):
    method: str
    iterations: int
    residual: float
    certificate: Optional[float]
    alpha: Optional[float]
    p: Real
    trace: List[float]
    node_counts: List[List[int]]
    type_direction: Optional[str]
    reversed_players: List[int] = []


class LipschitzCheckBody(_Strict):
    trials: int
    own_type_ratio: List[float]
    own_type_bound: List[float]
    rival_gap: List[float]
    violations: List[Dict[str, Any]]
    passed: bool


class KLBody(_Strict):
    value: float
    floored_cells: int
    floored_mass: float
    reliable: bool


class AdmissibilityBody(_Strict):
    C: List[Real]
    positive: bool
    verdict: bool
    witness: Optional[Dict[str, Any]]


class JointDistances(_Strict):
    tv: float
    kl_forward: KLBody
    kl_backward: KLBody
    w1: Optional[float]


class ConditionalProfileBody(_Strict):
    metric: str
    p: Real
    player: int
    aggregate: float
    max: float
    nodes: List[List[float]]
    values: List[float]
    kl_floored_mass: float


class SweepRow(_Strict):
    epsilon: float
    drift_inf: float
    drift_l2: float
    drift_over_eps: float
    bound_44: float
    bound_45: Optional[float]


# =====================================
# SUBCOMMAND RESULTS
# =====================================

class SolveResult(_Strict):
    moduli: ModuliBody
    equilibrium: EquilibriumBody


class MonotoneResult(_Strict):
    equilibrium: EquilibriumBody
    monotone_in_type: List[bool]
    override: bool


class ModuliResult(_Strict):
    moduli: ModuliBody
    lipschitz_check: Optional[LipschitzCheckBody] = None


class DistanceResult(_Strict):
    perturbation: Dict[str, Any]
    joint: JointDistances
    conditional: Dict[str, ConditionalProfileBody]
    admissibility: AdmissibilityBody


class StabilityResult(_Strict):
    perturbation: Dict[str, Any]
    drift_inf: float
    drift_l2: float
    bound_42: float
    bound_44: float
    bound_45: Optional[float]
    slack_42: Real
    slack_44: Real
    certified: bool
    admissibility: AdmissibilityBody
    moduli_eta: ModuliBody
    moduli_mu: ModuliBody
    eps_target: float
    checks: Dict[str, bool]
    passed: bool
    notes: List[str]
    example_bound: Optional[Dict[str, float]]
    kl: Dict[str, float]
    sweep: List[SweepRow]
    solves: List[EquilibriumBody]


class SweepResult(StabilityResult):
    pass


class VerifyExampleResult(_Strict):
    example: str
    parameters: Dict[str, float]
    moduli: ModuliBody
    equilibrium: EquilibriumBody
    closed_form_max_error: Optional[float] = None
    fixed_point_residual: Optional[float] = None
    iteration_bound: Optional[int] = None


# =====================================
# ENVELOPES
# =====================================

class ReportEnvelope(_Strict):
    """Fields shared by every report; `result` is narrowed per subcommand."""
    subcommand: str
    config: Dict[str, Any]
    config_hash: str
    game: Optional[Dict[str, Any]]
    system: Dict[str, Any]
    checks: Dict[str, bool]
    passed: bool
    result: Dict[str, Any]


class SolveReport(ReportEnvelope):
    result: SolveResult


class MonotoneReport(ReportEnvelope):
    result: MonotoneResult


class ModuliRunReport(ReportEnvelope):
    result: ModuliResult


class DistanceReport(ReportEnvelope):
    result: DistanceResult


class StabilityRunReport(ReportEnvelope):
    result: StabilityResult


class SweepReport(ReportEnvelope):
    result: SweepResult


class VerifyExampleReport(ReportEnvelope):
    result: VerifyExampleResult


REPORT_MODELS: Dict[str, Type[ReportEnvelope]] = {
    "solve": SolveReport,
    "monotone": MonotoneReport,
    "moduli": ModuliRunReport,
    "distance": DistanceReport,
    "stability": StabilityRunReport,
    "sweep": SweepReport,
    "verify-example": VerifyExampleReport,
}


def report_model(subcommand: str) -> Type[ReportEnvelope]:
    try:
        return REPORT_MODELS[subcommand]
    except KeyError:
        raise ValueError(f"No report schema for subcommand '{subcommand}'") from None
