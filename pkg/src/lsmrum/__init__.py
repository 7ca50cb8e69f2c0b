"""LSM RUM-tree: an LSM R-tree secondary index validated through an update memo."""

from lsmrum.core import Location, ObjectRecord, OpKind, Rect, TimestampCounter, WorkloadOp
from lsmrum.engine import EngineConfig, EngineStats, LSMRumTree
from lsmrum.storage import Curve
from lsmrum.update_memo import MemoContractError, MemoInvariantError, UpdateMemo

__all__ = [
    "Curve",
    "EngineConfig",
    "EngineStats",
    "LSMRumTree",
    "Location",
    "MemoContractError",
    "MemoInvariantError",
    "ObjectRecord",
    "OpKind",
    "Rect",
    "TimestampCounter",
    "UpdateMemo",
    "WorkloadOp",
]
