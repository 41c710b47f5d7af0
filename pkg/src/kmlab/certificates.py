"""Pass/fail records for numerically checked inequalities.

Every check in kmlab reports its outcome as a :class:`Certificate`.  Slacks
are always oriented as ``right-hand side - left-hand side`` so that a
non-negative slack means the inequality holds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

PASS = "pass"
FAIL = "fail"
NOT_APPLICABLE = "not-applicable"


@dataclass(frozen=True)
class Certificate:
    name: str
    per_k_slack: tuple[float, ...]
    worst_slack: float | None
    tolerance: float
    verdict: str
    context: str
    k_of_worst: int | None = None
    unmet_hypothesis: str | None = None
    details: dict[str, Any] = field(default_factory=dict, compare=False)

    @classmethod
    def from_slacks(
        cls,
        name: str,
        slacks: Sequence[float],
        tolerance: float,
        context: str,
        indices: Sequence[int] | None = None,
        details: dict[str, Any] | None = None,
    ) -> "Certificate":
        """Build a pass/fail certificate from raw slacks.

        NaN slacks count as failures.  An empty slack list passes vacuously.
        """
        slacks = tuple(float(v) for v in slacks)
        if indices is None:
            indices = range(len(slacks))
        indices = list(indices)
        if not slacks:
            return cls(name, (), None, tolerance, PASS, context, None, None, dict(details or {}))
        keyed = [(-math.inf if math.isnan(v) else v) for v in slacks]
        pos = min(range(len(keyed)), key=keyed.__getitem__)
        worst = slacks[pos]
        ok = not math.isnan(worst) and worst >= -tolerance
        return cls(
            name,
            slacks,
            worst,
            tolerance,
            PASS if ok else FAIL,
            context,
            int(indices[pos]),
            None,
            dict(details or {}),
        )

    @classmethod
    def not_applicable(
        cls,
        name: str,
        hypothesis: str,
        tolerance: float,
        context: str,
        details: dict[str, Any] | None = None,
    ) -> "Certificate":
        return cls(name, (), None, tolerance, NOT_APPLICABLE, context, None, hypothesis, dict(details or {}))

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def to_json_dict(self) -> dict[str, Any]:
        out = {
            "name": self.name,
            "citation": self.context,
            "verdict": self.verdict,
            "worst_slack": self.worst_slack,
            "tolerance": self.tolerance,
            "k_of_worst": self.k_of_worst,
        }
        if self.unmet_hypothesis is not None:
            out["unmet_hypothesis"] = self.unmet_hypothesis
        return out
