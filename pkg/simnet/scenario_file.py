"""
Line-based scenario files.

One directive per line, ``#`` starts a comment. See SCENARIO_FORMAT.md.

    seed 3
    duration 120
    link wireless capacity=11M delay=10ms queue=50
    at 0 start f1 tfrc
    at 30 freeze f1
    at 30.05 disconnect
    at 33.5 reconnect capacity=384k delay=125ms
    at 33.5001 unfreeze f1
"""
import logging
import shlex
from typing import Any, Dict, List, Optional, Tuple

from freezetfrc.errors import ModelInputError, ScenarioConfigError, ScenarioParseError
from freezetfrc.models import (
    Disconnect,
    FlowKind,
    Freeze,
    HandoverSpec,
    LinkSpec,
    Reconnect,
    Reparameterize,
    Scenario,
    StartFlow,
    Unfreeze,
    Variant,
)

logger = logging.getLogger(__name__)

_RATE_SUFFIXES = {'k': 1e3, 'K': 1e3, 'M': 1e6, 'G': 1e9}
_BOOL_WORDS = {'yes': True, 'true': True, 'on': True, '1': True,
               'no': False, 'false': False, 'off': False, '0': False}


def parse_rate(text: str) -> float:
    """``384k``, ``11M``, ``9.5M`` or a plain number of bits/s."""
    text = text.strip()
    if text.endswith('bps'):
        text = text[:-3]
    multiplier = 1.0
    if text and text[-1] in _RATE_SUFFIXES:
        multiplier = _RATE_SUFFIXES[text[-1]]
        text = text[:-1]
    return float(text) * multiplier


def parse_duration(text: str) -> float:
    """Seconds, or milliseconds with an ``ms`` suffix."""
    text = text.strip()
    if text.endswith('ms'):
        return float(text[:-2]) / 1000.0
    if text.endswith('s'):
        text = text[:-1]
    return float(text)


def parse_bool(text: str) -> bool:
    try:
        return _BOOL_WORDS[text.lower()]
    except KeyError:
        raise ValueError(f"expected yes/no, got '{text}'")


def _key_values(tokens: List[str]) -> Tuple[Dict[str, str], List[str]]:
    pairs: Dict[str, str] = {}
    words: List[str] = []
    for token in tokens:
        if '=' in token:
            key, _, value = token.partition('=')
            pairs[key.strip()] = value.strip()
        else:
            words.append(token)
    return pairs, words


def _link(pairs: Dict[str, str], default: Optional[LinkSpec] = None) -> LinkSpec:
    if default is None and ('capacity' not in pairs or 'delay' not in pairs):
        raise ValueError("link needs capacity= and delay=")
    capacity = parse_rate(pairs['capacity']) if 'capacity' in pairs else default.capacity
    delay = parse_duration(pairs['delay']) if 'delay' in pairs else default.one_way_delay
    queue = int(pairs['queue']) if 'queue' in pairs else (default.queue_capacity if default else 50)
    return LinkSpec(capacity, delay, queue)


class ScenarioFileParser:
    """Turns scenario text into a validated ``Scenario``."""

    def __init__(self, path: Optional[str] = None, queue_capacity: int = 50):
        self.path = path
        self.queue_capacity = queue_capacity
        self.options: Dict[str, Any] = {}
        self.wireless: Optional[LinkSpec] = None
        self.wired: Optional[LinkSpec] = None
        self.events: List[Any] = []
        self.handover: Optional[HandoverSpec] = None
        self._current: Optional[LinkSpec] = None

    def parse(self, text: str) -> Scenario:
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            try:
                self._directive(shlex.split(line))
            except ScenarioParseError:
                raise
            except (ValueError, KeyError, IndexError, ModelInputError) as e:
                raise ScenarioParseError(line_no, str(e), self.path)

        if self.wireless is None:
            raise ScenarioParseError(0, "no 'link wireless' line", self.path)
        kwargs: Dict[str, Any] = dict(self.options)
        if self.wired is not None:
            kwargs['wired'] = self.wired
        scenario = Scenario(
            wireless=self.wireless,
            events=tuple(self.events),
            handover=self.handover,
            **kwargs
        )
        scenario.validate()
        logger.debug(f"Parsed scenario {self.path or '<text>'}: {len(self.events)} events")
        return scenario

    def _directive(self, tokens: List[str]) -> None:
        keyword, args = tokens[0].lower(), tokens[1:]
        if keyword == 'seed':
            self.options['seed'] = int(args[0])
        elif keyword == 'duration':
            self.options['duration'] = parse_duration(args[0])
        elif keyword == 'segment_size':
            self.options['segment_size'] = int(args[0])
        elif keyword == 'record_packets':
            self.options['record_packets'] = parse_bool(args[0])
        elif keyword == 'link':
            self._link_line(args)
        elif keyword == 'at':
            self._event_line(parse_duration(args[0]), args[1:])
        elif keyword == 'handover':
            self._handover_line(args)
        else:
            raise ValueError(f"unknown directive '{keyword}'")

    def _link_line(self, args: List[str]) -> None:
        pairs, words = _key_values(args)
        pairs.setdefault('queue', str(self.queue_capacity))
        spec = _link(pairs)
        if words == ['wireless']:
            self.wireless = self._current = spec
        elif words == ['wired']:
            self.wired = spec
        else:
            raise ValueError("expected 'link wireless ...' or 'link wired ...'")

    def _event_line(self, t: float, args: List[str]) -> None:
        if self.wireless is None:
            raise ValueError("events must follow the 'link wireless' line")
        action = args[0].lower()
        pairs, words = _key_values(args[1:])
        if action == 'start':
            kind = FlowKind(words[1].lower()) if len(words) > 1 else FlowKind.TFRC
            self.events.append(StartFlow(t, words[0], kind))
        elif action in ('freeze', 'unfreeze'):
            remote = 'remote' in words[1:]
            cls = Freeze if action == 'freeze' else Unfreeze
            self.events.append(cls(t, words[0], remote))
        elif action == 'disconnect':
            self.events.append(Disconnect(t))
        elif action == 'reconnect':
            self._current = _link(pairs, self._current)
            self.events.append(Reconnect(t, self._current))
        elif action == 'set':
            self._current = _link(pairs, self._current)
            self.events.append(Reparameterize(t, self._current))
        else:
            raise ValueError(f"unknown event '{action}'")

    def _handover_line(self, args: List[str]) -> None:
        pairs, _ = _key_values(args)
        if 'to' in pairs:
            # Imported here so the simulator package does not depend on scenarios.
            from scenarios.profiles import get_profile
            to_link = get_profile(pairs['to']).link_spec(self.queue_capacity)
        else:
            to_link = _link(pairs)
        if 't_ho' in pairs:
            t_ho = parse_duration(pairs['t_ho'])
        else:
            from freezetfrc.services.analytic_model import handover_delay
            t_ho = handover_delay(2.0 * to_link.one_way_delay)
        self.handover = HandoverSpec(
            flow=pairs['flow'],
            t_ho=t_ho,
            to_link=to_link,
            variant=Variant(pairs.get('variant', 'standard').lower()),
            jitter_rtts=float(pairs.get('jitter', 4.0)),
            remote=parse_bool(pairs.get('remote', 'no')),
            run_after=parse_duration(pairs.get('run_after', '100')),
        )


def parse_scenario(text: str, path: Optional[str] = None, queue_capacity: int = 50) -> Scenario:
    return ScenarioFileParser(path, queue_capacity).parse(text)


def load_scenario(path: str, queue_capacity: int = 50) -> Scenario:
    """Read and parse a scenario file."""
    with open(path, 'r', encoding='utf-8') as f:
        text = f.read()
    try:
        return parse_scenario(text, path, queue_capacity)
    except ScenarioConfigError as e:
        logger.error(f"Scenario {path} is inconsistent: {str(e)}")
        raise
