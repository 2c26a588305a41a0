"""Utility module for event traces and logging.

This module provides the per-container event log that numbers every
resource and supervision event, the tab-separated trace format written by
``host run`` and read back by ``host verify``, the logical step clock, and
the logging setup shared by the command-line entry points.
"""

import itertools
import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, List, Optional

from ..errors import SchemaError
from ..models.resource import EventType, ResourceEvent, Verdict

TRACE_HEADER = '# jamus-trace v1'
EMPTY = '-'


def setup_logging(level='INFO'):
    """Configure the logging system for the platform."""
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.StreamHandler(),
        ]
    )


def create_directory(path: Path):
    """Create a directory if it doesn't exist.

    Args:
        path (Path): Directory to create

    Raises:
        OSError: If directory creation fails
    """
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        logging.error(f"Failed to create directory {path}: {e}")
        raise


class StepClock:
    """Global logical clock; every tick is a step number."""

    def __init__(self):
        self._counter = itertools.count(1)
        self._lock = threading.Lock()
        self.current = 0

    def tick(self) -> int:
        with self._lock:
            self.current = next(self._counter)
            return self.current


class EventLog:
    """Numbers and records the events of one container.

    Sequence numbers increase strictly in emission order. Every recorded
    event is also handed to ``sink`` so the host can keep a single trace
    ordered across containers.
    """

    def __init__(self, component_id: str, sink: Optional[Callable[[ResourceEvent], None]] = None,
                 keep: bool = True):
        self.component_id = component_id
        self._sink = sink
        self._keep = keep
        self._next = 1
        self.events: List[ResourceEvent] = []

    def emit(self, type: EventType, subject=None, handle_id=None, access=None, amount=None,
             verdict=None) -> ResourceEvent:
        event = ResourceEvent(
            sequence_number=self._next,
            component_id=self.component_id,
            type=type,
            subject=subject,
            handle_id=handle_id,
            access=getattr(access, 'value', access),
            amount=amount,
            verdict=verdict,
        )
        self._next += 1
        if self._keep:
            self.events.append(event)
        if self._sink is not None:
            self._sink(event)
        return event

    def of_type(self, *types: EventType) -> List[ResourceEvent]:
        return [event for event in self.events if event.type in types]


def format_event(event: ResourceEvent) -> str:
    """Render one event as a tab-separated trace line."""
    def text(value):
        return EMPTY if value is None else str(getattr(value, 'value', value))

    return '\t'.join([
        str(event.sequence_number),
        event.component_id,
        event.type.value,
        text(event.subject),
        text(event.access),
        text(event.amount),
        text(event.verdict),
    ])


def render_trace(events: Iterable[ResourceEvent]) -> str:
    lines = [TRACE_HEADER]
    lines.extend(format_event(event) for event in events)
    return '\n'.join(lines) + '\n'


def write_trace(events: Iterable[ResourceEvent], path: Path) -> Path:
    """Write a trace file, creating its directory when needed."""
    path = Path(path)
    create_directory(path.parent)
    path.write_text(render_trace(events), encoding='utf-8')
    logging.info(f"Trace written to {path}")
    return path


@dataclass(frozen=True)
class TraceLine:
    line_number: int
    sequence_number: int
    component_id: str
    type: EventType
    subject: Optional[str]
    access: Optional[str]
    amount: Optional[int]
    verdict: Optional[Verdict]


def parse_trace(text: str) -> List[TraceLine]:
    """Parse trace text back into lines.

    Raises:
        SchemaError: On a missing header or a malformed line
    """
    raw_lines = text.splitlines()
    if not raw_lines or raw_lines[0].strip() != TRACE_HEADER:
        raise SchemaError(f"trace must start with {TRACE_HEADER!r}", line=1)

    def optional(value):
        return None if value == EMPTY else value

    parsed = []
    for number, raw in enumerate(raw_lines[1:], start=2):
        if not raw.strip():
            continue
        columns = raw.split('\t')
        if len(columns) != 7:
            raise SchemaError(f"expected 7 tab-separated columns, got {len(columns)}", line=number)
        sequence, component, variant, subject, access, amount, verdict = columns
        try:
            parsed.append(TraceLine(
                line_number=number,
                sequence_number=int(sequence),
                component_id=component,
                type=EventType(variant),
                subject=optional(subject),
                access=optional(access),
                amount=None if amount == EMPTY else int(amount),
                verdict=None if verdict == EMPTY else Verdict(verdict),
            ))
        except ValueError as e:
            raise SchemaError(str(e), line=number) from e
    return parsed


def read_trace(path: Path) -> List[TraceLine]:
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise SchemaError(f"cannot read {path}: {e.strerror}") from e
    return parse_trace(text)
