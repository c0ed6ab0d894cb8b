from dataclasses import dataclass
from typing import Dict, Tuple


@dataclass(frozen=True)
class PropertyCheck:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.value <= self.tolerance

    def to_dict(self) -> Dict[str, object]:
        return {"name": self.name, "value": self.value, "tolerance": self.tolerance, "passed": self.passed}


@dataclass(frozen=True)
class VerificationReport:
    seed: int
    checks: Tuple[PropertyCheck, ...]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def failures(self) -> Tuple[str, ...]:
        return tuple(check.name for check in self.checks if not check.passed)

    def to_dict(self) -> Dict[str, object]:
        return {
            "seed": self.seed,
            "passed": self.passed,
            "checks": [check.to_dict() for check in self.checks],
        }
