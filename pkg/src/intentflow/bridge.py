"""Intent bridge: parse the <INTENT> span out of annotator text and keep
intent labels kinematically consistent with the rule-derived meta-action.

Every record leaving validate_record() satisfies the compatibility table;
records that had to be relabeled are flagged pseudo-labeled so downstream
training always drops them to the unconditional slot.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Optional

from .errors import InvalidIntentError, MissingMetaActionError
from .types import (
    INTENT_NAMES,
    LATERAL_ACTIONS,
    LONGITUDINAL_ACTIONS,
    ClipRecord,
    IntentClass,
    MetaAction,
    intent_name_to_index,
)
from .errors import UnknownIntentError

_SPAN_RE = re.compile(r"<INTENT>(.*?)</INTENT>", re.DOTALL)

DEFAULT_FALLBACK = IntentClass(1)  # lane_keeping: the weakest commitment


@dataclass(frozen=True)
class ParseOutcome:
    intent: IntentClass
    parsed_ok: bool
    raw_span: Optional[str] = None


def parse_intent(answer: str, fallback: IntentClass = DEFAULT_FALLBACK) -> ParseOutcome:
    """Extract the last <INTENT>name</INTENT> span and map it to a class.

    Missing span or unknown name falls back with parsed_ok=False; never fails.
    """
    spans = _SPAN_RE.findall(answer)
    if not spans:
        return ParseOutcome(intent=fallback, parsed_ok=False, raw_span=None)
    raw = spans[-1]
    try:
        intent = intent_name_to_index(raw)
    except UnknownIntentError:
        return ParseOutcome(intent=fallback, parsed_ok=False, raw_span=raw)
    return ParseOutcome(intent=intent, parsed_ok=True, raw_span=raw)


# --- intent <-> meta-action compatibility -------------------------------------
#
# Shipped as data so deployments can override it.  Keys are intent names;
# values are (allowed longitudinal, allowed lateral) frozensets.

_ALL_LON = frozenset(LONGITUDINAL_ACTIONS)
_ALL_LAT = frozenset(LATERAL_ACTIONS)
_NO_REVERSE = _ALL_LON - {"reverse"}
_STEADY_LON = frozenset({"maintain_speed", "accelerate", "decelerate"})
_STEADY_LAT = frozenset({"maintain", "nudge_left", "nudge_right"})

COMPATIBILITY_TABLE: dict[str, tuple[frozenset, frozenset]] = {
    "cruising": (_STEADY_LON, _STEADY_LAT),
    "lane_keeping": (_STEADY_LON, _STEADY_LAT),
    "following": (_STEADY_LON, _STEADY_LAT),
    "lane_change_left": (_ALL_LON, frozenset({"nudge_left", "steer_left"})),
    "lane_change_right": (_ALL_LON, frozenset({"nudge_right", "steer_right"})),
    "turning_left": (_ALL_LON, frozenset({"steer_left"})),
    "turning_right": (_ALL_LON, frozenset({"steer_right"})),
    "u_turn": (_ALL_LON, frozenset({"steer_left", "steer_right"})),
    "starting": (frozenset({"accelerate", "starting"}), _ALL_LAT),
    "stopping": (frozenset({"stopping", "stop"}), _ALL_LAT),
    "waiting": (frozenset({"stop"}), _ALL_LAT),
    "accelerating": (frozenset({"accelerate", "starting"}), _ALL_LAT),
    "decelerating": (frozenset({"decelerate", "stopping", "stop"}), _ALL_LAT),
    "braking": (frozenset({"decelerate", "stopping", "stop"}), _ALL_LAT),
    "yielding": (_NO_REVERSE, _ALL_LAT),
    "overtaking": (_NO_REVERSE, _ALL_LAT),
    "merging": (_NO_REVERSE, _ALL_LAT),
    "avoiding_obstacle": (_NO_REVERSE, _ALL_LAT),
    "parking": (frozenset({"stopping", "stop", "decelerate"}), _ALL_LAT),
    "reversing": (frozenset({"reverse"}), _ALL_LAT),
}

assert set(COMPATIBILITY_TABLE) == set(INTENT_NAMES)


def consistency_check(intent: IntentClass, meta: MetaAction,
                      table: Optional[dict] = None) -> bool:
    """True iff the meta-action lies in the intent's allowed set."""
    if not intent.is_driving_class:
        raise InvalidIntentError("consistency check needs a driving class, got the uncond slot")
    allowed_lon, allowed_lat = (table or COMPATIBILITY_TABLE)[intent.name]
    return meta.longitudinal in allowed_lon and meta.lateral in allowed_lat


def rule_fallback_intent(meta: MetaAction) -> IntentClass:
    """Deterministic meta-action -> intent map used when parsing or
    consistency fails; always consistent with the meta-action it came from."""
    lon_map = {
        "stop": "waiting",
        "stopping": "stopping",
        "starting": "starting",
        "accelerate": "accelerating",
        "decelerate": "decelerating",
        "reverse": "reversing",
    }
    if meta.longitudinal in lon_map:
        return intent_name_to_index(lon_map[meta.longitudinal])
    # longitudinal is maintain_speed
    lat_map = {
        "steer_left": "turning_left",
        "steer_right": "turning_right",
        "nudge_left": "lane_change_left",
        "nudge_right": "lane_change_right",
    }
    if meta.lateral in lat_map:
        return intent_name_to_index(lat_map[meta.lateral])
    return intent_name_to_index("lane_keeping")


def validate_record(record: ClipRecord,
                    fallback: IntentClass = DEFAULT_FALLBACK,
                    table: Optional[dict] = None) -> ClipRecord:
    """Parse the record's intent text and relabel if inconsistent.

    The output record always carries a consistent intent plus a provenance
    field {parsed_ok, relabeled}.  Relabeled records are marked
    pseudo-labeled: their supervision is kinematic, not reasoned.
    Idempotent, since it is a pure function of (intent_text, meta_action).
    """
    if record.meta_action is None:
        raise MissingMetaActionError(
            f"record {record.sequence_id}/{record.clip_index} has no meta_action")
    outcome = parse_intent(record.intent_text, fallback)
    if outcome.parsed_ok and consistency_check(outcome.intent, record.meta_action, table):
        return replace(record, intent=outcome.intent,
                       provenance={"parsed_ok": True, "relabeled": False})
    relabeled = rule_fallback_intent(record.meta_action)
    return replace(record, intent=relabeled, is_pseudo_labeled=True,
                   provenance={"parsed_ok": False, "relabeled": True})


# Spec name kept as an alias: validation is exactly "relabel if inconsistent".
relabel_if_inconsistent = validate_record
