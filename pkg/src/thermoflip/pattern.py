"""Timeline DSL for thermal patterns on the 2 x 4 element array.

Grammar::

    script    := line*
    line      := "at" FLOAT "s" selector sensation | comment | blank
    selector  := "elem" INT ("," INT)* | "all" | "row" INT | "col" INT
    sensation := "warm" | "cool" | "neutral"

``#`` starts a comment that runs to the end of the line. Events may appear
in any order; they are sorted stably by time.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .closedloop import ClosedLoop, ExecutionTrace, SimClock
from .controller import N_ELEMENTS, ControllerConfig, Phase, Sensation, face_for
from .device.backend import DeviceIOError, SimulatedBackend
from .thermal import PeltierParams

ROWS = 2
COLS = 4
ALL = frozenset(range(N_ELEMENTS))
_TIME_TOL = 1e-9


def row_elements(r: int) -> frozenset[int]:
    return frozenset(range(r * COLS, (r + 1) * COLS))


def col_elements(c: int) -> frozenset[int]:
    return frozenset(c + r * COLS for r in range(ROWS))


class PatternError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        self.line = line
        self.column = column
        self.message = message
        super().__init__(f"line {line}, column {column}: {message}")


@dataclass(frozen=True)
class PatternEvent:
    time: float
    elements: frozenset[int]
    sensation: Sensation
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class PatternScript:
    events: tuple[PatternEvent, ...] = ()
    duration: float = 0.0

    def __post_init__(self):
        for ev in self.events:
            if not ev.elements <= ALL or not ev.elements:
                raise ValueError(f"bad element set {sorted(ev.elements)}")
        if self.events and self.duration < max(ev.time for ev in self.events):
            raise ValueError("duration shorter than the last event")


# lexer

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<number>[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<word>[A-Za-z_]+)
  | (?P<comma>,)
""", re.VERBOSE)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    col: int


def _lex_line(text: str, lineno: int) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise PatternError(f"unexpected character {text[pos]!r}", lineno, pos + 1)
        kind = m.lastgroup
        if kind == "comment":
            break
        if kind != "ws":
            toks.append(_Tok(kind, m.group(), pos + 1))
        pos = m.end()
    return toks


class _LineParser:
    def __init__(self, toks: list[_Tok], lineno: int, line_len: int):
        self.toks = toks
        self.i = 0
        self.lineno = lineno
        self.end_col = line_len + 1

    def error(self, msg: str, tok: _Tok | None = None) -> PatternError:
        col = tok.col if tok else self.end_col
        return PatternError(msg, self.lineno, col)

    def peek(self) -> _Tok | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def next(self, what: str) -> _Tok:
        tok = self.peek()
        if tok is None:
            raise self.error(f"expected {what}, found end of line")
        self.i += 1
        return tok

    def keyword(self, *words: str) -> _Tok:
        tok = self.next(" or ".join(repr(w) for w in words))
        if tok.kind != "word" or tok.text not in words:
            raise self.error(f"expected {' or '.join(repr(w) for w in words)}, found {tok.text!r}", tok)
        return tok

    def integer(self) -> tuple[int, _Tok]:
        tok = self.next("integer")
        if tok.kind != "number" or not re.fullmatch(r"[+-]?\d+", tok.text):
            raise self.error(f"expected integer, found {tok.text!r}", tok)
        return int(tok.text), tok

    def event(self) -> PatternEvent:
        self.keyword("at")
        tok = self.next("time")
        if tok.kind != "number":
            raise self.error(f"expected time, found {tok.text!r}", tok)
        t = float(tok.text)
        if t < 0:
            raise self.error(f"negative time {tok.text}", tok)
        if t != t or t == float("inf"):
            raise self.error(f"invalid time {tok.text}", tok)
        self.keyword("s")
        elements = self.selector()
        sens = self.keyword("warm", "cool", "neutral")
        extra = self.peek()
        if extra is not None:
            raise self.error(f"unexpected {extra.text!r} after sensation", extra)
        return PatternEvent(t, elements, Sensation(sens.text), self.lineno)

    def selector(self) -> frozenset[int]:
        tok = self.keyword("elem", "all", "row", "col")
        if tok.text == "all":
            return ALL
        if tok.text == "elem":
            ids = [self._index(N_ELEMENTS, "element id")]
            while self.peek() is not None and self.peek().kind == "comma":
                self.i += 1
                ids.append(self._index(N_ELEMENTS, "element id"))
            return frozenset(ids)
        if tok.text == "row":
            return row_elements(self._index(ROWS, "row"))
        return col_elements(self._index(COLS, "column"))

    def _index(self, limit: int, what: str) -> int:
        value, tok = self.integer()
        if not 0 <= value < limit:
            raise self.error(f"{what} {value} out of range 0-{limit - 1}", tok)
        return value


def parse_pattern(text: str, duration: float | None = None) -> PatternScript:
    """Parse pattern text. ``duration`` defaults to the last event time."""
    events = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        toks = _lex_line(line, lineno)
        if toks:
            events.append(_LineParser(toks, lineno, len(line)).event())
    events.sort(key=lambda ev: ev.time)
    last = max((ev.time for ev in events), default=0.0)
    if duration is not None and duration < 0:
        raise ValueError("duration must be >= 0")
    return PatternScript(tuple(events), max(last, duration or 0.0))


def format_selector(elements: frozenset[int]) -> str:
    if elements == ALL:
        return "all"
    for r in range(ROWS):
        if elements == row_elements(r):
            return f"row {r}"
    for c in range(COLS):
        if elements == col_elements(c):
            return f"col {c}"
    return "elem " + ",".join(str(i) for i in sorted(elements))


def format_pattern(script: PatternScript) -> str:
    """Canonical text: one event per line in time order, LF endings."""
    return "".join(f"at {ev.time!r}s {format_selector(ev.elements)} {ev.sensation.value}\n"
                   for ev in script.events)


# compilation

@dataclass(frozen=True)
class ScheduledCommand:
    time: float
    sensation: Sensation
    event: int  # index into script.events


@dataclass(frozen=True)
class Annotation:
    event: int
    element: int
    kind: str  # "superseded" (rejected), "delayed", "cool_budget_expired"
    detail: str
    effective_time: float | None = None

    @property
    def rejected(self) -> bool:
        return self.kind == "superseded"


@dataclass
class CompiledSchedule:
    commands: dict[int, list[ScheduledCommand]]
    annotations: list[Annotation]
    duration: float

    @property
    def feasible(self) -> bool:
        return not self.annotations

    def commands_at(self) -> list[tuple[float, int, Sensation]]:
        out = [(c.time, elem, c.sensation) for elem, cmds in self.commands.items() for c in cmds]
        out.sort(key=lambda x: (x[0], x[1]))
        return out

    def to_dict(self) -> dict:
        return {
            "duration": self.duration,
            "commands": {str(e): [{"time": c.time, "sensation": c.sensation.value, "event": c.event}
                                  for c in cmds] for e, cmds in sorted(self.commands.items())},
            "annotations": [{"event": a.event, "element": a.element, "kind": a.kind,
                             "detail": a.detail, "effective_time": a.effective_time}
                            for a in self.annotations],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def compile_pattern(script: PatternScript, config: ControllerConfig | None = None,
                    params: PeltierParams | None = None) -> CompiledSchedule:
    """Turn a script into per-element command lists plus feasibility notes.

    Each (event, element) pair becomes exactly one command or one
    ``superseded`` rejection (same-time conflict on an element: the later
    line wins). A command asking for a face change less than
    ``rotation_latency`` after the last flip on that element is marked
    ``delayed``; it takes effect when that flip ends and does not itself
    count as a flip. With ``params`` the schedule is also run in closed loop
    on a simulated array, and COOL commands whose element runs out of cool
    budget before the next command are marked ``cool_budget_expired``.
    """
    config = config or ControllerConfig()
    per_elem: dict[int, list[tuple[float, int, Sensation]]] = {i: [] for i in range(N_ELEMENTS)}
    for idx, ev in enumerate(script.events):
        for elem in sorted(ev.elements):
            per_elem[elem].append((ev.time, idx, ev.sensation))

    commands: dict[int, list[ScheduledCommand]] = {}
    notes: list[Annotation] = []
    latency = config.rotation_latency
    for elem, items in per_elem.items():
        kept: list[tuple[float, int, Sensation]] = []
        for item in items:
            if kept and abs(kept[-1][0] - item[0]) <= _TIME_TOL:
                loser = kept.pop()
                notes.append(Annotation(loser[1], elem, "superseded",
                                        f"overridden by line {script.events[item[1]].line}"))
            kept.append(item)
        face = config.park_face
        last_flip: float | None = None
        cmds = []
        for t, idx, sens in kept:
            want = face_for(sens, config)
            if want is not face:
                if last_flip is not None and t - last_flip < latency - _TIME_TOL:
                    ready = last_flip + latency
                    notes.append(Annotation(idx, elem, "delayed",
                                            f"flip in progress until {ready:.6g} s", ready))
                else:
                    last_flip = t
                face = want
            cmds.append(ScheduledCommand(t, sens, idx))
        if cmds:
            commands[elem] = cmds

    schedule = CompiledSchedule(commands, notes, script.duration)
    if params is not None and commands:
        notes.extend(_cool_budget_notes(schedule, config, params))
    notes.sort(key=lambda a: (a.event, a.element, a.kind))
    return schedule


def _cool_budget_notes(schedule: CompiledSchedule, config: ControllerConfig,
                       params: PeltierParams) -> list[Annotation]:
    backend = SimulatedBackend(params, rotation_latency=config.rotation_latency,
                               skin_face=config.park_face)
    loop = ClosedLoop(backend, SimClock(backend), config)
    active: dict[int, ScheduledCommand] = {}
    flagged: set[tuple[int, int]] = set()
    out = []
    for tick_cmds, now in _ticks(schedule, config.tick_period):
        for elem, cmds in tick_cmds.items():
            active[elem] = cmds[-1]
        loop.step({e: [c.sensation for c in cmds] for e, cmds in tick_cmds.items()})
        for elem, cmd in active.items():
            st = loop.states[elem]
            key = (cmd.event, elem)
            if cmd.sensation is Sensation.COOL and st.phase is Phase.EXHAUSTED and key not in flagged:
                flagged.add(key)
                out.append(Annotation(cmd.event, elem, "cool_budget_expired",
                                      f"cold face back above ambient at {now:.6g} s", now))
    return out


def _ticks(schedule: CompiledSchedule, tick: float):
    """Yield ({element: [commands due]}, tick time) over the schedule duration."""
    queue = [(c.time, elem, c) for elem, cmds in schedule.commands.items() for c in cmds]
    queue.sort(key=lambda x: (x[0], x[1]))
    n_ticks = int(schedule.duration / tick + _TIME_TOL) + 1
    qi = 0
    for k in range(n_ticks):
        now = k * tick
        due: dict[int, list[ScheduledCommand]] = {}
        while qi < len(queue) and queue[qi][0] <= now + _TIME_TOL:
            _, elem, cmd = queue[qi]
            due.setdefault(elem, []).append(cmd)
            qi += 1
        yield due, now


class ScheduleRejected(ValueError):
    def __init__(self, schedule: CompiledSchedule):
        self.schedule = schedule
        super().__init__(f"{len(schedule.annotations)} feasibility annotation(s) not accepted")


class RunAborted(IOError):
    def __init__(self, trace: ExecutionTrace, cause: Exception):
        self.trace = trace
        self.cause = cause
        super().__init__(f"run aborted at t={trace.t[-1] if trace.t else 0.0:.3f} s: {cause}")


def run(script: PatternScript | CompiledSchedule, backend, clock,
        config: ControllerConfig | None = None, accept_annotations: bool = True,
        duration: float | None = None) -> ExecutionTrace:
    """Dispatch a pattern against a backend, one control tick at a time.

    Commands fire on the first tick at or after their scheduled time. The
    run covers ``duration`` (default: the schedule's) inclusive of both ends.
    An empty script produces an empty trace. Backend I/O failures raise
    RunAborted carrying the partial trace.
    """
    config = config or ControllerConfig()
    schedule = script if isinstance(script, CompiledSchedule) else compile_pattern(script, config)
    if schedule.annotations and not accept_annotations:
        raise ScheduleRejected(schedule)
    loop = ClosedLoop(backend, clock, config)
    if not schedule.commands:
        return loop.trace
    if duration is not None:
        schedule = CompiledSchedule(schedule.commands, schedule.annotations,
                                    max(duration, schedule.duration))
    try:
        for due, _ in _ticks(schedule, config.tick_period):
            loop.step({e: [c.sensation for c in cmds] for e, cmds in due.items()})
    except (DeviceIOError, OSError) as exc:
        raise RunAborted(loop.trace, exc) from exc
    return loop.trace
