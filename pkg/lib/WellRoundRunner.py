import sys
import json
import logging

from pathlib import Path
from time import time
from typing import Any, Dict, IO, Optional

from . import __version__
from .CommandStrategies import CommandResult, CommandStrategyFactory
from .Errors import WellRoundError
from .WellRoundConfigs import OutputFormat, RunConfig
from .utils import calculate_checksum, to_json, write_dict_to_csv, write_json, write_rows

logger = logging.getLogger(__name__)


def diagnostic_document(error: WellRoundError) -> Dict[str, Any]:
    return {'error': type(error).__name__, 'message': str(error), 'exit_code': error.exit_code}


def write_diagnostic(error: WellRoundError, stream: Optional[IO[str]] = None) -> None:
    stream = stream or sys.stderr
    stream.write(json.dumps(diagnostic_document(error), sort_keys=True) + '\n')


def companion_path(path: Path, suffix: str) -> Path:
    """`path` with `suffix`, or `<stem>_rows<suffix>` when that would be `path` itself."""
    candidate = path.with_suffix(suffix)
    if candidate == path:
        candidate = path.with_name(f"{path.stem}_rows{suffix}")
    return candidate


class WellRoundRunner:
    def __init__(self, config: RunConfig, stdout: Optional[IO[str]] = None, stderr: Optional[IO[str]] = None):
        config.validate()
        self.config = config
        self.strategy = CommandStrategyFactory.get_strategy(config.command)
        self.stdout = stdout or sys.stdout
        self.stderr = stderr or sys.stderr

    def build_report(self, result: CommandResult) -> Dict[str, Any]:
        echo = self.config.to_document()
        return {
            'command': self.config.command.value,
            'version': __version__,
            'seed': self.config.seed,
            'config': echo,
            'config_checksum': calculate_checksum(echo),
            'result': result.document,
        }

    def write_outputs(self, report: Dict[str, Any], result: CommandResult) -> None:
        out = Path(self.config.output_path) if self.config.output_path else None
        if self.config.output_format == OutputFormat.CSV:
            if out is None:
                write_rows(result.rows, self.stdout, result.priority_fields)
                return
            write_dict_to_csv(result.rows, out, result.priority_fields)
            write_json(report, companion_path(out, '.json'))
            return

        if out is None:
            self.stdout.write(to_json(report))
        else:
            write_json(report, out)
            if result.rows:
                write_dict_to_csv(result.rows, companion_path(out, '.csv'), result.priority_fields)

    def run(self) -> int:
        """
        Execute the configured command and write its report.

        Returns the process exit code: 0 on success, or the exit code of the library error that stopped the run.
        """
        command = self.config.command.value
        start_time = time()
        try:
            logger.info(f"Starting {command} (seed {self.config.seed:#x}, {self.config.threads} threads)")

            result = self.strategy.execute(self.config)
            report = self.build_report(result)
            self.write_outputs(report, result)

            duration = time() - start_time
            logger.info(f"{command} completed successfully in {duration:.2f} seconds")
            return 0
        except WellRoundError as e:
            logger.error(f"{command} failed: {e}")
            write_diagnostic(e, self.stderr)
            return e.exit_code
        except Exception as e:
            logger.error(f"{command} failed unexpectedly: {e}")
            raise
