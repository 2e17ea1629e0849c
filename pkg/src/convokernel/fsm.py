"""State-centric finite-state-machine runtime.

Every topic module is a flow of string-identified states.  A state
handler runs once per visit, may emit a response fragment, and says
where to go next — either immediately (current turn, chaining fragments
into one response) or when the user speaks again (next turn).  A
tracker wraps all state a handler may read or write.
"""

from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping

from .dialog_manager import GlobalAttributes, ModuleState
from .errors import FlowError

CHAIN_CAP = 8

ENTRY_OPEN_QUESTION = "open_question_entry"
ENTRY_PROPOSAL = "proposal_entry"
ENTRY_OTHER = "other_entry"
ENTRY_NAMES = (ENTRY_OPEN_QUESTION, ENTRY_PROPOSAL, ENTRY_OTHER)


class _Absent:
    """Explicit marker for a key never written to a tracker scope."""

    _instance: "_Absent | None" = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "ABSENT"

    def __bool__(self) -> bool:
        return False


ABSENT = _Absent()


class Scope(str, enum.Enum):
    TURN = "TURN"
    CONVERSATION = "CONVERSATION"


class TransitionTiming(str, enum.Enum):
    CURRENT_TURN = "CURRENT_TURN"
    NEXT_TURN = "NEXT_TURN"


@dataclass(frozen=True)
class Transition:
    target: str
    timing: TransitionTiming = TransitionTiming.NEXT_TURN


# ---------------------------------------------------------------------------
# Tracker.
# ---------------------------------------------------------------------------

class Tracker:
    """Everything a state handler may touch.

    Writes go only through ``set``; the turn scope is wiped at the start
    of every turn, while the conversation scope round-trips through the
    persistence layer between turns.
    """

    def __init__(
        self,
        conversation_scope: dict | None = None,
        nlu=None,
        profile=None,
        attrs: GlobalAttributes | None = None,
        templates=None,
        bags=None,
        rng=None,
        lexicons=None,
    ):
        self.turn_scope: dict = {}
        self.conversation_scope: dict = conversation_scope if conversation_scope is not None else {}
        self.nlu = nlu
        self.profile = profile
        self.attrs = attrs if attrs is not None else GlobalAttributes()
        self.templates = templates
        self.bags = bags
        self.rng = rng
        self.lexicons = lexicons

    def begin_turn(self, nlu=None) -> None:
        self.turn_scope.clear()
        if nlu is not None:
            self.nlu = nlu

    def _scope(self, scope: Scope) -> dict:
        return self.turn_scope if scope is Scope.TURN else self.conversation_scope

    def get(self, scope: Scope, key: str):
        if not key:
            raise ValueError("tracker key must be a non-empty string")
        return self._scope(scope).get(key, ABSENT)

    def set(self, scope: Scope, key: str, value) -> None:
        if not key:
            raise ValueError("tracker key must be a non-empty string")
        self._scope(scope)[key] = value

    def delete(self, scope: Scope, key: str) -> None:
        self._scope(scope).pop(key, None)

    # Convenience views used by handlers -------------------------------
    @property
    def user_text(self) -> str:
        return self.nlu.utterance if self.nlu is not None else ""

    def render(self, template_key: str, slots: Mapping | None = None) -> str:
        """Render a template with this conversation's bags and RNG."""
        if self.templates is None:
            raise FlowError(f"no template store attached (wanted {template_key!r})")
        text = self.templates.render(
            template_key, slots=dict(slots or {}), bags=self.bags, rng=self.rng
        )
        rendered = self.get(Scope.TURN, "_rendered_keys")
        if rendered is ABSENT:
            rendered = []
            self.set(Scope.TURN, "_rendered_keys", rendered)
        rendered.append(template_key)
        return text


StateHandler = Callable[[Tracker], tuple[str | None, Transition | None]]


# ---------------------------------------------------------------------------
# Flow definition.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StateSpec:
    state_id: str
    handler: StateHandler
    publish: ModuleState = ModuleState.CONTINUE
    # Transitions declared in flow data; dynamic handlers may return
    # others, which static validation cannot see.
    declared_transitions: tuple[Transition, ...] = ()


@dataclass(frozen=True)
class FlowDefinition:
    module: str
    states: Mapping[str, StateSpec]
    entry_points: Mapping[str, str]

    def entry_state(self, entry_name: str) -> str:
        if entry_name in self.entry_points:
            return self.entry_points[entry_name]
        if ENTRY_OTHER in self.entry_points:
            return self.entry_points[ENTRY_OTHER]
        raise FlowError(
            f"flow {self.module!r} has no entry point {entry_name!r} and no"
            f" {ENTRY_OTHER!r} fallback",
            flow_id=self.module,
        )


def current_state_key(module: str) -> str:
    return f"_fsm.{module}.current"


# ---------------------------------------------------------------------------
# Validation.
# ---------------------------------------------------------------------------

class DefectKind(str, enum.Enum):
    DANGLING = "DANGLING"
    DUPLICATE = "DUPLICATE"
    UNREACHABLE = "UNREACHABLE"
    CURRENT_TURN_CYCLE = "CURRENT_TURN_CYCLE"
    NO_ENTRY = "NO_ENTRY"


@dataclass(frozen=True)
class Defect:
    kind: DefectKind
    detail: str

    def __str__(self) -> str:
        return f"{self.kind.value}({self.detail})"


def validate_flow(
    flow: FlowDefinition,
    duplicate_ids: Iterable[str] = (),
) -> list[Defect]:
    """Static checks over a flow; defects are returned, never raised.

    Duplicate state ids cannot be observed on a parsed mapping, so the
    loader passes ids it saw twice via ``duplicate_ids``.
    """
    defects: list[Defect] = [
        Defect(DefectKind.DUPLICATE, state_id) for state_id in duplicate_ids
    ]

    if not flow.entry_points:
        defects.append(Defect(DefectKind.NO_ENTRY, flow.module))

    # Dangling targets: entry points and declared transitions.
    for name, target in flow.entry_points.items():
        if target not in flow.states:
            defects.append(Defect(DefectKind.DANGLING, f"{name}->{target}"))
    edges: dict[str, list[Transition]] = {}
    for state_id, spec in flow.states.items():
        edges[state_id] = list(spec.declared_transitions)
        for transition in spec.declared_transitions:
            if transition.target not in flow.states:
                defects.append(
                    Defect(DefectKind.DANGLING, f"{state_id}->{transition.target}")
                )

    # Reachability from entry points over declared edges.
    reachable: set[str] = set()
    queue = deque(t for t in flow.entry_points.values() if t in flow.states)
    reachable.update(queue)
    while queue:
        state_id = queue.popleft()
        for transition in edges.get(state_id, ()):
            if transition.target in flow.states and transition.target not in reachable:
                reachable.add(transition.target)
                queue.append(transition.target)
    for state_id in flow.states:
        if state_id not in reachable:
            defects.append(Defect(DefectKind.UNREACHABLE, state_id))

    # Statically detectable same-turn cycles: cycle search over the
    # subgraph of declared CURRENT_TURN edges.
    current_edges = {
        state_id: [
            t.target for t in transitions
            if t.timing is TransitionTiming.CURRENT_TURN and t.target in flow.states
        ]
        for state_id, transitions in edges.items()
    }
    color: dict[str, int] = {}

    def has_cycle(node: str, stack: list[str]) -> list[str] | None:
        color[node] = 1
        stack.append(node)
        for nxt in current_edges.get(node, ()):
            if color.get(nxt, 0) == 1:
                return stack[stack.index(nxt):] + [nxt]
            if color.get(nxt, 0) == 0:
                found = has_cycle(nxt, stack)
                if found:
                    return found
        stack.pop()
        color[node] = 2
        return None

    for state_id in flow.states:
        if color.get(state_id, 0) == 0:
            cycle = has_cycle(state_id, [])
            if cycle:
                defects.append(
                    Defect(DefectKind.CURRENT_TURN_CYCLE, "->".join(cycle))
                )
                break

    return defects


# ---------------------------------------------------------------------------
# Turn execution.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunResult:
    text: str
    final_state: str
    path: tuple[str, ...]
    published: ModuleState


def run_turn(
    flow: FlowDefinition,
    tracker: Tracker,
    entry: str | None = None,
    chain_cap: int = CHAIN_CAP,
) -> RunResult:
    """Execute one user turn of a flow.

    Starts at ``entry`` (an entry-point name or explicit state id) when
    given, otherwise at the conversation's persisted current state,
    otherwise at the flow's default entry.  Chains states connected by
    CURRENT_TURN transitions, joining fragments with single spaces, and
    stops on a NEXT_TURN transition or on a handler returning no
    transition (self-loop).
    """
    key = current_state_key(flow.module)
    if entry is not None:
        if entry in flow.states:
            state_id = entry
        else:
            state_id = flow.entry_state(entry)
    else:
        persisted = tracker.get(Scope.CONVERSATION, key)
        if persisted is not ABSENT and persisted in flow.states:
            state_id = persisted
        else:
            state_id = flow.entry_state(ENTRY_OTHER)

    fragments: list[str] = []
    path: list[str] = []
    published = ModuleState.CONTINUE
    next_state = state_id

    for _hop in range(chain_cap):
        spec = flow.states.get(state_id)
        if spec is None:
            raise FlowError(
                f"transition into unknown state {state_id!r}",
                flow_id=flow.module,
                state_id=state_id,
            )
        path.append(state_id)
        fragment, transition = spec.handler(tracker)
        if fragment:
            fragments.append(fragment)
        published = spec.publish
        if transition is None:
            next_state = state_id  # self-loop: re-enter next turn
            break
        if transition.target not in flow.states:
            raise FlowError(
                f"transition to unknown state {transition.target!r}",
                flow_id=flow.module,
                state_id=state_id,
            )
        if transition.timing is TransitionTiming.NEXT_TURN:
            next_state = transition.target
            break
        state_id = transition.target
    else:
        raise FlowError(
            f"current-turn chain exceeded {chain_cap} states",
            flow_id=flow.module,
            state_id=state_id,
        )

    tracker.set(Scope.CONVERSATION, key, next_state)
    return RunResult(
        text=" ".join(fragments),
        final_state=next_state,
        path=tuple(path),
        published=published,
    )


# ---------------------------------------------------------------------------
# Declarative flow loading.
# ---------------------------------------------------------------------------

HandlerFactory = Callable[[Mapping[str, Any]], StateHandler]


class HandlerRegistry:
    """Named handler kinds that declarative flow files may reference."""

    def __init__(self):
        self._factories: dict[str, HandlerFactory] = {}

    def register(self, kind: str, factory: HandlerFactory) -> None:
        if kind in self._factories:
            raise FlowError(f"handler kind {kind!r} registered twice")
        self._factories[kind] = factory

    def build(self, kind: str, args: Mapping[str, Any]) -> StateHandler:
        if kind not in self._factories:
            raise FlowError(f"unknown handler kind {kind!r}")
        return self._factories[kind](args)

    def __contains__(self, kind: str) -> bool:
        return kind in self._factories


def _parse_transition(raw: Mapping[str, Any]) -> Transition:
    return Transition(
        target=raw["target"],
        timing=TransitionTiming(raw.get("timing", "NEXT_TURN")),
    )


def _scan_transitions(node) -> list[Transition]:
    """Find every {"target": ...} transition dict nested in handler args,
    so branch cases participate in static validation."""
    found: list[Transition] = []
    if isinstance(node, Mapping):
        if "target" in node and isinstance(node["target"], str):
            try:
                found.append(_parse_transition(node))
            except (KeyError, ValueError):
                pass
        for value in node.values():
            found.extend(_scan_transitions(value))
    elif isinstance(node, list):
        for item in node:
            found.extend(_scan_transitions(item))
    return found


def _collect_duplicates(pairs):
    seen: set[str] = set()
    duplicates: list[str] = []
    out: dict = {}
    for key, value in pairs:
        if key in seen:
            duplicates.append(key)
        seen.add(key)
        out[key] = value
    out["__duplicates__"] = duplicates
    return out


def parse_flow_document(text: str) -> tuple[dict, list[str]]:
    """Parse flow JSON, reporting duplicate state ids the parser would
    otherwise silently collapse."""
    doc = json.loads(text, object_pairs_hook=_collect_duplicates)

    def strip(node, collecting: bool):
        if isinstance(node, list):
            found = []
            for item in node:
                found.extend(strip(item, collecting=False))
            return found
        if not isinstance(node, dict):
            return []
        dups = node.pop("__duplicates__", [])
        found = list(dups) if collecting else []
        for key, value in node.items():
            found.extend(strip(value, collecting=(key == "states")))
        return found

    duplicates = strip(doc, collecting=False)
    return doc, duplicates


def load_flow(
    doc: Mapping[str, Any],
    registry: HandlerRegistry,
    duplicate_ids: Iterable[str] = (),
) -> tuple[FlowDefinition, list[Defect]]:
    """Build a FlowDefinition from a parsed flow document and validate it."""
    module = doc["module"]
    states: dict[str, StateSpec] = {}
    for state_id, raw in doc.get("states", {}).items():
        args = dict(raw.get("args", {}))
        declared: list[Transition] = []
        for t in raw.get("transitions", []):
            declared.append(_parse_transition(t))
        handler = registry.build(raw.get("handler", "say"), {**args, "_transitions": declared})
        # Transitions buried in branch cases are edges too.
        all_declared = declared + [
            t for t in _scan_transitions(args) if t not in declared
        ]
        states[state_id] = StateSpec(
            state_id=state_id,
            handler=handler,
            publish=ModuleState(raw.get("publish", "CONTINUE")),
            declared_transitions=tuple(all_declared),
        )
    flow = FlowDefinition(
        module=module,
        states=states,
        entry_points=dict(doc.get("entry_points", {})),
    )
    defects = validate_flow(flow, duplicate_ids=duplicate_ids)
    return flow, defects


def load_flow_text(
    text: str,
    registry: HandlerRegistry,
) -> tuple[FlowDefinition, list[Defect]]:
    doc, duplicates = parse_flow_document(text)
    return load_flow(doc, registry, duplicate_ids=duplicates)


# ---------------------------------------------------------------------------
# Core handler kinds (tracker-only; domain kinds live with the topics).
# ---------------------------------------------------------------------------

def resolve_slot_value(tracker: Tracker, value):
    """Resolve ``$``-prefixed references in handler args against the tracker."""
    if not isinstance(value, str) or not value.startswith("$"):
        return value
    ref = value[1:]
    if ref == "user_text":
        return tracker.user_text
    if ref == "propose_keywords":
        return tracker.attrs.propose_keywords
    if ref.startswith("conv."):
        got = tracker.get(Scope.CONVERSATION, ref[5:])
        return None if got is ABSENT else got
    if ref.startswith("turn."):
        got = tracker.get(Scope.TURN, ref[5:])
        return None if got is ABSENT else got
    if ref.startswith("profile."):
        return getattr(tracker.profile, ref[8:], None) if tracker.profile else None
    return value


def _first_transition(args: Mapping[str, Any]) -> Transition | None:
    declared = args.get("_transitions") or ()
    return declared[0] if declared else None


def _make_say(args: Mapping[str, Any]) -> StateHandler:
    template = args.get("template")
    literal = args.get("text")
    slots = dict(args.get("slots", {}))
    transition = _first_transition(args)

    def handler(tracker: Tracker):
        if template is not None:
            resolved = {
                name: resolve_slot_value(tracker, value) for name, value in slots.items()
            }
            fragment = tracker.render(template, resolved)
        else:
            fragment = literal
        return fragment, transition

    return handler


def _first_fine_grain(tracker: Tracker) -> str:
    if tracker.nlu is None:
        return "none"
    for grain in tracker.nlu.fine_grains:
        value = getattr(grain, "value", str(grain))
        if value != "none":
            return value
    return "none"


def _make_branch(args: Mapping[str, Any]) -> StateHandler:
    on = args.get("on", "fine_grain")
    slot = args.get("slot", "")
    cases: Mapping[str, Mapping] = args.get("cases", {})
    default = args.get("default")
    parsed_cases = {key: _parse_transition(raw) for key, raw in cases.items()}
    parsed_default = _parse_transition(default) if default else None

    def observe(tracker: Tracker) -> str:
        if on == "fine_grain":
            return _first_fine_grain(tracker)
        if on == "dialog_act":
            if tracker.nlu is not None:
                for act in tracker.nlu.dialog_acts:
                    value = getattr(act, "value", str(act)).lower()
                    if value in parsed_cases:
                        return value
            return "other"
        if on == "slot":
            got = tracker.get(Scope.CONVERSATION, slot)
            return "absent" if got is ABSENT else str(got)
        if on == "sentiment":
            if tracker.nlu is None or not tracker.nlu.annotations:
                return "neutral"
            score = tracker.nlu.annotations[0].sentiment
            if score > 0.2:
                return "positive"
            if score < -0.2:
                return "negative"
            return "neutral"
        if on == "has_keywords":
            return "yes" if tracker.attrs.propose_keywords else "no"
        raise FlowError(f"branch handler cannot observe {on!r}")

    def handler(tracker: Tracker):
        value = observe(tracker)
        transition = parsed_cases.get(value, parsed_default)
        return None, transition

    return handler


def _make_store_slot(args: Mapping[str, Any]) -> StateHandler:
    slot = args["slot"]
    source = args.get("from", "value")
    literal = args.get("value")
    transition = _first_transition(args)

    def handler(tracker: Tracker):
        if source == "key_phrases":
            phrases = tracker.nlu.key_phrases if tracker.nlu is not None else []
            value = phrases[0] if phrases else None
        elif source == "user_text":
            value = tracker.user_text
        elif source == "propose_keywords":
            value = tracker.attrs.propose_keywords
        else:
            value = resolve_slot_value(tracker, literal)
        if value is not None:
            tracker.set(Scope.CONVERSATION, slot, value)
        return None, transition

    return handler


def _make_noop(args: Mapping[str, Any]) -> StateHandler:
    transition = _first_transition(args)

    def handler(tracker: Tracker):
        return None, transition

    return handler


def register_core_handlers(registry: HandlerRegistry) -> HandlerRegistry:
    registry.register("say", _make_say)
    registry.register("branch", _make_branch)
    registry.register("store_slot", _make_store_slot)
    registry.register("noop", _make_noop)
    return registry
