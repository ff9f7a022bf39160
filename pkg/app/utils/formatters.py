"""
Utility functions for formatting reports.
"""
import json
import sys
from pathlib import Path
from typing import Iterable, List, Optional, Union

import structlog
from pydantic import BaseModel

from app.models.report_models import ReportRecord
from app.utils.errors import ReportIOError

logger = structlog.get_logger()


def to_json_line(model: BaseModel) -> str:
    """
    Serialize a report model as one canonical JSON line.

    Args:
        model: any report model

    Returns:
        str: JSON with sorted keys and aliases applied
    """
    return json.dumps(model.model_dump(mode="json", by_alias=True), sort_keys=True, separators=(", ", ": "))


def format_report(models: Iterable[BaseModel]) -> str:
    lines = [to_json_line(m) for m in models]
    return "\n".join(lines) + ("\n" if lines else "")


def write_report(models: Iterable[BaseModel], output: Optional[Union[str, Path]] = None) -> Optional[Path]:
    """
    Write models as JSON lines to `output`, or to stdout when it is None.

    Returns:
        Optional[Path]: the file written, None for stdout
    """
    text = format_report(models)
    if output is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return None
    path = Path(output)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise ReportIOError(f"cannot write report to {path}: {e}") from e
    logger.info("Report written", path=str(path), bytes=len(text))
    return path


def format_residual(value: float) -> str:
    return f"{value:.3e}"


def format_summary(records: List[ReportRecord]) -> str:
    """One human-readable line per failed record plus a verdict line."""
    failed = [r for r in records if not r.passed]
    lines = [
        f"FAIL {r.suite}/{r.relation}"
        f"{'' if r.component is None else f' k={r.component}'}"
        f" residual={format_residual(r.max_residual)} tol={format_residual(r.tolerance)}"
        for r in failed
    ]
    verdict = "PASS" if not failed else "FAIL"
    lines.append(f"{verdict}: {len(records) - len(failed)}/{len(records)} checks within tolerance")
    return "\n".join(lines)
