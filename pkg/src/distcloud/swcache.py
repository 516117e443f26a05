"""Software repository cache cost model.

The first job started on an instance warms the node-local cache and pays the
cold stage-in time for its VM type; later jobs on the same instance pay the
warm figure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Set

DEFAULT_COLD_STAGEIN = 300
DEFAULT_WARM_STAGEIN = 0


@dataclass(frozen=True)
class StageinCost:
    cold: int = DEFAULT_COLD_STAGEIN
    warm: int = DEFAULT_WARM_STAGEIN


class SoftwareCache:
    def __init__(self, costs: Optional[Mapping[str, StageinCost]] = None,
                 default: StageinCost = StageinCost()):
        self.costs: Dict[str, StageinCost] = dict(costs or {})
        self.default = default
        self._warm: Set[str] = set()
        self.cold_charges: Dict[str, int] = {}

    def cost_for(self, vm_type: str) -> StageinCost:
        return self.costs.get(vm_type, self.default)

    def stagein_penalty(self, vm_id: str, vm_type: str) -> int:
        cost = self.cost_for(vm_type)
        if vm_id in self._warm:
            return cost.warm
        self._warm.add(vm_id)
        self.cold_charges[vm_id] = self.cold_charges.get(vm_id, 0) + 1
        return cost.cold

    def is_warm(self, vm_id: str) -> bool:
        return vm_id in self._warm
