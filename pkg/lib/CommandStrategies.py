import json
import logging

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from . import __version__
from .ConstantCalculus import blc_check, family_certificate
from .Counting import CountKind, counting_report
from .Errors import ValidationError
from .FiberFamilies import load_family
from .GroupModels import builtin_group
from .LatticeReduction import canonicalize, in_fundamental_domain, reduce_basis
from .LinalgCore import kan_decompose, matrix_from_document, matrix_to_document, parse_matrix_text
from .SetOracles import ConvexOracle, oracle_from_spec
from .WellRoundConfigs import Command, RunConfig
from .WrCertifier import SamplingParams, certify

logger = logging.getLogger(__name__)


@dataclass
class CommandResult:
    document: Dict[str, Any]
    rows: List[Dict[str, Any]] = field(default_factory=list)
    priority_fields: Optional[List[str]] = None


def load_matrix(path: str) -> np.ndarray:
    """Matrix text format, or the {"rows", "cols", "entries"} document for .json files."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ValidationError(f"Cannot read matrix file {path}: {e}")
    if path.endswith('.json'):
        try:
            return matrix_from_document(json.loads(text))
        except json.JSONDecodeError as e:
            raise ValidationError(f"Matrix file {path} is not valid JSON: {e}")
    return parse_matrix_text(text)


class BaseCommandStrategy(ABC):
    def execute(self, config: RunConfig) -> CommandResult:
        logger.info(f"Starting {self.__class__.__name__}")
        result = self._perform(config)
        logger.info(f"Completed {self.__class__.__name__}")
        return result

    @abstractmethod
    def _perform(self, config: RunConfig) -> CommandResult:
        pass


class ReduceStrategy(BaseCommandStrategy):
    def _perform(self, config: RunConfig) -> CommandResult:
        M = load_matrix(config.input_path)
        logger.info(f"Reducing a {M.shape[0]}x{M.shape[1]} basis")
        rb = canonicalize(reduce_basis(M))
        domain = in_fundamental_domain(rb)
        document = rb.to_document()
        document.update({
            'member_of_F': domain.member,
            'generic': domain.generic,
            'active_inequalities': list(domain.active_inequalities),
            'violations': [v.inequality for v in domain.siegel.violations + domain.sign_violations],
        })
        return CommandResult(document=document)


class KanStrategy(BaseCommandStrategy):
    def _perform(self, config: RunConfig) -> CommandResult:
        M = load_matrix(config.input_path)
        kan = kan_decompose(M)
        residual = float(np.max(np.abs(kan.reconstruct() - M)))
        return CommandResult(document={
            'k': matrix_to_document(kan.k),
            'a': [float(v) for v in kan.a],
            'n': matrix_to_document(kan.n),
            'reconstruction_error': residual,
        })


class CertifyStrategy(BaseCommandStrategy):
    def _perform(self, config: RunConfig) -> CommandResult:
        settings = config.certify
        params = SamplingParams(
            n_points=settings.points,
            n_pert=settings.perts,
            seed=config.seed,
            mode=settings.mode.estimate_mode(),
            threads=config.threads,
        )
        certificate = None
        if settings.family_path:
            family = load_family(settings.family_path)
            target = family.fibered_oracle
            base = family.fibered_oracle()
            if family.C_E is not None:
                certificate = family_certificate(family)
        else:
            base = oracle_from_spec(settings.set_spec, builtin_group(settings.group))
            target = self._scaled_family(base)

        if settings.T_grid is None:
            report = certify(base, settings.eps_grid, params, convergence_study=settings.convergence)
        else:
            report = certify(target, settings.eps_grid, params, T_values=settings.T_grid,
                             convergence_study=settings.convergence)

        document = report.to_document()
        document['set'] = base.describe()
        if certificate is not None:
            document['certificate'] = certificate.to_document()
            document['dominated'] = bool(report.fitted_C is not None and report.fitted_C <= float(certificate.C))
        return CommandResult(
            document=document,
            rows=report.csv_rows(),
            priority_fields=['T', 'epsilon', 'ratio', 'stderr'],
        )

    @staticmethod
    def _scaled_family(base):
        if not isinstance(base, ConvexOracle):
            def unscalable(T):
                raise ValidationError(f"--T-grid needs a convex set, got {base.kind}")
            return unscalable
        return base.scaled


class BlcCheckStrategy(BaseCommandStrategy):
    def _perform(self, config: RunConfig) -> CommandResult:
        settings = config.blc_check
        family = load_family(settings.family_path)
        params = SamplingParams(n_points=settings.points, seed=config.seed, threads=config.threads)
        report = blc_check(family, settings.eps_grid, params=params, n_base=settings.n_base)
        document = report.to_document()
        if family.C_E is not None:
            document['certificate'] = family_certificate(family).to_document()
        return CommandResult(
            document=document,
            rows=[c.to_document() for c in report.conditions],
            priority_fields=['name', 'passed', 'worst'],
        )


class CountStrategy(BaseCommandStrategy):
    def _perform(self, config: RunConfig) -> CommandResult:
        settings = config.count
        body = None
        if settings.kind == CountKind.INTEGER_POINTS and settings.set_spec:
            body = oracle_from_spec(settings.set_spec, builtin_group(settings.group))
            if not isinstance(body, ConvexOracle):
                raise ValidationError(f"Integer points are counted in convex bodies, got {body.kind}")
        report = counting_report(
            settings.kind, settings.T_grid, settings.reference, body=body,
            n_samples=settings.samples, seed=config.seed, threads=config.threads,
        )
        document = report.to_document()
        if body is not None:
            document['set'] = body.describe()
        return CommandResult(
            document=document,
            rows=report.csv_rows(),
            priority_fields=['T', 'count', 'volume', 'ratio', 'doubling'],
        )


class VersionStrategy(BaseCommandStrategy):
    def _perform(self, config: RunConfig) -> CommandResult:
        return CommandResult(document={'name': 'wellround', 'version': __version__})


class CommandStrategyFactory:
    _strategies = {
        Command.REDUCE: ReduceStrategy,
        Command.KAN: KanStrategy,
        Command.CERTIFY: CertifyStrategy,
        Command.BLC_CHECK: BlcCheckStrategy,
        Command.COUNT: CountStrategy,
        Command.VERSION: VersionStrategy,
    }

    @classmethod
    def get_strategy(cls, command: Command) -> BaseCommandStrategy:
        strategy_class = cls._strategies.get(command)
        if strategy_class is None:
            raise ValidationError(f"Unsupported command: {command}")
        return strategy_class()

    @classmethod
    def register_strategy(cls, command: Command, strategy_class: type[BaseCommandStrategy]) -> None:
        cls._strategies[command] = strategy_class
