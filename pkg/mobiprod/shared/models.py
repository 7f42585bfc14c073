from enum import Enum


class PolicyId(str, Enum):
    MP = "MP"
    MNF = "MNF"
    DNF = "DNF"
    JR = "JR"
    LAJ = "LAJ"
    GLR = "GLR"
    LAGLR = "LAGLR"


class BeliefMode(str, Enum):
    PO = "po"
    SS = "ss"
    CO = "co"


class SetId(str, Enum):
    A = "A"
    B = "B"


class SolveStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


# policies whose decisions do not depend on the blend coefficient
THETA_FREE_POLICIES = frozenset({PolicyId.MP, PolicyId.MNF})
