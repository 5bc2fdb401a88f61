import logging

from typing import Optional, Sequence

from .Counting import CountKind, ReferenceKind
from .Errors import ValidationError
from .SeedStream import DEFAULT_SEED
from .WellRoundConfigs import (
    BlcCheckConfig, CertifyConfig, CertifyMode, Command, CountConfig, OutputFormat, RunConfig
)
from .WrCertifier import DEFAULT_EPS_GRID

logger = logging.getLogger(__name__)


class RunConfigBuilder:
    def __init__(self):
        self._command = None
        self._seed = DEFAULT_SEED
        self._threads = 1
        self._input_path = None
        self._output_path = None
        self._output_format = OutputFormat.JSON
        self._certify = None
        self._blc_check = None
        self._count = None

    def with_command(self, command: Command) -> 'RunConfigBuilder':
        if command is None:
            raise ValidationError("Command must be set before building")
        self._command = Command(command)
        return self

    def with_seed(self, seed: Optional[int]) -> 'RunConfigBuilder':
        if seed is not None:
            self._seed = int(seed)
        return self

    def with_threads(self, threads: int) -> 'RunConfigBuilder':
        if threads is None or threads < 1:
            raise ValidationError(f"Thread count must be positive, got {threads}")
        self._threads = threads
        return self

    def with_input(self, path: str) -> 'RunConfigBuilder':
        if not path:
            raise ValidationError("Input path must be set")
        self._input_path = path
        return self

    def with_output(self, path: Optional[str], output_format: OutputFormat = OutputFormat.JSON) -> 'RunConfigBuilder':
        self._output_path = path
        self._output_format = OutputFormat(output_format)
        return self

    def with_certify(self, group: Optional[str] = None, set_spec: Optional[str] = None,
                     family_path: Optional[str] = None, eps_grid: Sequence[float] = DEFAULT_EPS_GRID,
                     points: int = 200_000, perts: int = 32, mode: CertifyMode = CertifyMode.SAMPLED,
                     T_grid: Optional[Sequence[float]] = None, convergence: bool = False) -> 'RunConfigBuilder':
        self._certify = CertifyConfig(
            group=group, set_spec=set_spec, family_path=family_path, eps_grid=list(eps_grid), points=points,
            perts=perts, mode=CertifyMode(mode), T_grid=list(T_grid) if T_grid is not None else None,
            convergence=convergence,
        )
        self._certify.validate()
        return self

    def with_blc_check(self, family_path: str, eps_grid: Sequence[float] = (0.01, 0.05), points: int = 20_000,
                       n_base: int = 16) -> 'RunConfigBuilder':
        self._blc_check = BlcCheckConfig(family_path=family_path, eps_grid=list(eps_grid), points=points, n_base=n_base)
        self._blc_check.validate()
        return self

    def with_count(self, kind: CountKind, T_grid: Sequence[float], reference: ReferenceKind = ReferenceKind.ANALYTIC,
                   group: Optional[str] = None, set_spec: Optional[str] = None,
                   samples: int = 200_000) -> 'RunConfigBuilder':
        self._count = CountConfig(kind=CountKind(kind), T_grid=list(T_grid), reference=ReferenceKind(reference),
                                  group=group, set_spec=set_spec, samples=samples)
        self._count.validate()
        return self

    def build(self) -> RunConfig:
        if self._command is None:
            raise ValidationError("Command must be set before building")

        config = RunConfig(
            command=self._command,
            seed=self._seed,
            threads=self._threads,
            input_path=self._input_path,
            output_path=self._output_path,
            output_format=self._output_format,
            certify=self._certify,
            blc_check=self._blc_check,
            count=self._count,
        )
        config.validate()
        logger.debug(f"Built {config.command.value} config with seed {config.seed:#x}")
        return config
