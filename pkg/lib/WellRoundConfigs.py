from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

from .Counting import CountKind, ReferenceKind
from .Errors import ValidationError
from .SeedStream import DEFAULT_SEED
from .WrCertifier import DEFAULT_EPS_GRID, EstimateMode
from .utils import exclude_keys

DEFAULT_COUNT_GRID = (1.0, 2.0, 10.0)


class Command(Enum):
    REDUCE = "reduce"
    KAN = "kan"
    CERTIFY = "certify"
    BLC_CHECK = "blc-check"
    COUNT = "count"
    VERSION = "version"


class CertifyMode(Enum):
    SAMPLED = "sampled"
    EXACT = "exact"

    def estimate_mode(self) -> EstimateMode:
        return EstimateMode(self.value)


class OutputFormat(Enum):
    JSON = "json"
    CSV = "csv"


TABULAR_COMMANDS = (Command.CERTIFY, Command.BLC_CHECK, Command.COUNT)


def _check_positive_grid(name: str, values: List[float]) -> None:
    if not values:
        raise ValidationError(f"{name} must not be empty")
    if any(not v > 0 for v in values):
        raise ValidationError(f"{name} must be positive, got {values}")


def _check_file(name: str, path: Optional[str]) -> None:
    if not path:
        raise ValidationError(f"{name} must be set")
    if not Path(path).is_file():
        raise ValidationError(f"{name} not found: {path}")


@dataclass
class CertifyConfig:
    group: Optional[str] = None
    set_spec: Optional[str] = None
    family_path: Optional[str] = None
    eps_grid: List[float] = field(default_factory=lambda: list(DEFAULT_EPS_GRID))
    points: int = 200_000
    perts: int = 32
    mode: CertifyMode = CertifyMode.SAMPLED
    T_grid: Optional[List[float]] = None
    convergence: bool = False

    def validate(self):
        if self.family_path:
            if self.group or self.set_spec:
                raise ValidationError("Use either --family or --group/--set, not both")
            _check_file("Family file", self.family_path)
        elif not all([self.group, self.set_spec]):
            raise ValidationError("certify needs --group and --set, or --family")
        _check_positive_grid("Epsilon grid", self.eps_grid)
        if self.points < 1 or self.perts < 1:
            raise ValidationError(f"--points and --perts must be at least 1, got {self.points}, {self.perts}")
        if self.T_grid is not None:
            _check_positive_grid("T grid", self.T_grid)


@dataclass
class BlcCheckConfig:
    family_path: str
    eps_grid: List[float] = field(default_factory=lambda: [0.01, 0.05])
    points: int = 20_000
    n_base: int = 16

    def validate(self):
        _check_file("Family file", self.family_path)
        _check_positive_grid("Epsilon grid", self.eps_grid)
        if self.points < 1 or self.n_base < 1:
            raise ValidationError(f"--points and --base-points must be at least 1, got {self.points}, {self.n_base}")


@dataclass
class CountConfig:
    kind: CountKind = CountKind.INTEGER_POINTS
    T_grid: List[float] = field(default_factory=lambda: list(DEFAULT_COUNT_GRID))
    reference: ReferenceKind = ReferenceKind.ANALYTIC
    group: Optional[str] = None
    set_spec: Optional[str] = None
    samples: int = 200_000

    def validate(self):
        _check_positive_grid("T grid", self.T_grid)
        if self.samples < 1:
            raise ValidationError(f"--samples must be at least 1, got {self.samples}")
        if self.kind == CountKind.SL2Z_BALL and (self.group or self.set_spec):
            raise ValidationError("sl2z_ball counts take no --group or --set")
        if bool(self.group) != bool(self.set_spec):
            raise ValidationError("--group and --set go together")


@dataclass
class RunConfig:
    command: Command
    seed: int = DEFAULT_SEED
    threads: int = 1
    input_path: Optional[str] = None
    output_path: Optional[str] = None
    output_format: OutputFormat = OutputFormat.JSON
    certify: Optional[CertifyConfig] = None
    blc_check: Optional[BlcCheckConfig] = None
    count: Optional[CountConfig] = None

    def validate(self):
        if not isinstance(self.command, Command):
            raise ValidationError(f"Unknown command: {self.command!r}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValidationError(f"Seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.threads < 1:
            raise ValidationError(f"Thread count must be positive, got {self.threads}")
        if self.output_format == OutputFormat.CSV and self.command not in TABULAR_COMMANDS:
            raise ValidationError(f"{self.command.value} has no tabular output; use --format json")

        if self.command in (Command.REDUCE, Command.KAN):
            _check_file("Input matrix", self.input_path)
        sections = {Command.CERTIFY: self.certify, Command.BLC_CHECK: self.blc_check, Command.COUNT: self.count}
        if self.command in sections:
            section = sections[self.command]
            if section is None:
                raise ValidationError(f"{self.command.value} needs its own settings")
            section.validate()

    def to_document(self) -> Dict[str, Any]:
        """Config echo for reports, without the thread count."""
        return _plain(exclude_keys(asdict(self), ['threads']))


def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items() if v is not None}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value
