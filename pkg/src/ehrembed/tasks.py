"""Prediction task identities shared across modules."""

from enum import Enum

N_DX_CATEGORIES = 18

DAY_MINUTES = 24 * 60
LOS3_MINUTES = 3 * DAY_MINUTES
LOS7_MINUTES = 7 * DAY_MINUTES


class TaskKind(str, Enum):
    READMISSION = "readm"
    MORTALITY = "mort"
    LOS3 = "los3"
    LOS7 = "los7"
    DIAGNOSIS = "dx"


BINARY_TASKS = (TaskKind.READMISSION, TaskKind.MORTALITY, TaskKind.LOS3, TaskKind.LOS7)
ALL_TASKS = BINARY_TASKS + (TaskKind.DIAGNOSIS,)
