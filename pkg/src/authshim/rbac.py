"""Group-to-role mapping and full role synchronization.

The mapping file looks like::

    role_mappings:
      roles: [admin, user, guest, it_support]      # optional role universe
      direct:
        - {group: "Okta: BI-Admins", role: admin}
      patterns:
        - {pattern: "AD: IT-Staff-.*", role: it_support}
      default_role: guest
      role_hierarchy:
        admin: [user, guest]
        user: [guest]

``"group" -> "role"`` lines directly under ``role_mappings`` are accepted as
well; a left-hand side containing regex metacharacters becomes a pattern.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Iterable

import yaml

from .connector import ConnectorError, ErrorKind

logger = logging.getLogger(__name__)

_ARROW = re.compile(r"""^\s*(["'])(?P<group>.*?)\1\s*->\s*(["'])(?P<role>.*?)\3\s*(?:\#.*)?$""")
_REGEX_META = set(".^$*+?{}[]\\|()")


class RoleMappingError(ValueError):
    pass


class ConfigSyntaxError(RoleMappingError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = "line %d, column %d: " % (line, column) if line is not None else ""
        super().__init__(where + message)


class InvalidPattern(RoleMappingError):
    def __init__(self, pattern: str, reason: str):
        self.pattern = pattern
        super().__init__("invalid pattern %r: %s" % (pattern, reason))


class HierarchyCycle(RoleMappingError):
    def __init__(self, path: list[str]):
        self.path = path
        super().__init__("role hierarchy cycle: " + " -> ".join(path))


class UnknownRoleReference(RoleMappingError):
    def __init__(self, role: str):
        self.role = role
        super().__init__("role %r is not declared in roles" % role)


@dataclass(frozen=True)
class RoleMappingConfig:
    direct_mappings: tuple[tuple[str, str], ...] = ()
    pattern_mappings: tuple[tuple[str, str], ...] = ()
    default_role: str | None = None
    role_hierarchy: dict[str, tuple[str, ...]] = field(default_factory=dict)
    roles: frozenset[str] | None = None
    _direct_index: dict = field(init=False, repr=False, compare=False)
    _compiled: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index: dict[str, list[str]] = {}
        for group, role in self.direct_mappings:
            index.setdefault(group, []).append(role)
        compiled = []
        for pattern, role in self.pattern_mappings:
            try:
                compiled.append((re.compile(pattern), role))
            except re.error as exc:
                raise InvalidPattern(pattern, str(exc)) from None
        object.__setattr__(self, "_direct_index", index)
        object.__setattr__(self, "_compiled", tuple(compiled))
        self._check_roles()
        _find_cycle(self.role_hierarchy)

    def _check_roles(self):
        if self.roles is None:
            return
        referenced = [role for _, role in self.direct_mappings]
        referenced += [role for _, role in self.pattern_mappings]
        if self.default_role is not None:
            referenced.append(self.default_role)
        for parent, children in self.role_hierarchy.items():
            referenced.append(parent)
            referenced.extend(children)
        for role in referenced:
            if role not in self.roles:
                raise UnknownRoleReference(role)

    @property
    def role_universe(self) -> frozenset[str]:
        if self.roles is not None:
            return self.roles
        found = {role for _, role in self.direct_mappings} | {role for _, role in self.pattern_mappings}
        if self.default_role:
            found.add(self.default_role)
        for parent, children in self.role_hierarchy.items():
            found.add(parent)
            found.update(children)
        return frozenset(found)


def _find_cycle(hierarchy: dict[str, Iterable[str]]) -> None:
    WHITE, GREY, BLACK = 0, 1, 2
    colour: dict[str, int] = {}

    def visit(role: str, path: list[str]):
        colour[role] = GREY
        path.append(role)
        for child in hierarchy.get(role, ()):
            state = colour.get(child, WHITE)
            if state == GREY:
                raise HierarchyCycle(path[path.index(child):] + [child])
            if state == WHITE:
                visit(child, path)
        path.pop()
        colour[role] = BLACK

    for role in hierarchy:
        if colour.get(role, WHITE) == WHITE:
            visit(role, [])


def _has_regex_meta(text: str) -> bool:
    return any(ch in _REGEX_META for ch in text)


def _pairs(value, key: str, section: str) -> list[tuple[str, str]]:
    if value is None:
        return []
    if isinstance(value, dict):
        items = list(value.items())
    elif isinstance(value, list):
        items = []
        for entry in value:
            if not isinstance(entry, dict) or set(entry) != {key, "role"}:
                raise ConfigSyntaxError("%s entries need exactly '%s' and 'role'" % (section, key))
            items.append((entry[key], entry["role"]))
    else:
        raise ConfigSyntaxError("%s must be a list or mapping" % section)
    for left, right in items:
        if not isinstance(left, str) or not isinstance(right, str) or not left or not right:
            raise ConfigSyntaxError("%s entries must map non-empty strings" % section)
    return items


def load_role_mapping(text: str) -> RoleMappingConfig:
    arrows: list[tuple[str, str]] = []
    kept = []
    for line in text.splitlines():
        match = _ARROW.match(line)
        if match:
            arrows.append((match.group("group"), match.group("role")))
            kept.append("")
        else:
            kept.append(line)
    try:
        data = yaml.safe_load("\n".join(kept))
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark else None
        column = mark.column + 1 if mark else None
        raise ConfigSyntaxError(exc.problem or str(exc), line, column) from None
    except yaml.YAMLError as exc:
        raise ConfigSyntaxError(str(exc)) from None

    if not isinstance(data, dict) or "role_mappings" not in data:
        raise ConfigSyntaxError("top-level key 'role_mappings' is required")
    body = data["role_mappings"] or {}
    if not isinstance(body, dict):
        raise ConfigSyntaxError("'role_mappings' must be a mapping")
    unknown = set(body) - {"roles", "direct", "patterns", "default_role", "role_hierarchy"}
    if unknown:
        raise ConfigSyntaxError("unknown keys under role_mappings: %s" % ", ".join(sorted(unknown)))

    direct = _pairs(body.get("direct"), "group", "direct")
    patterns = _pairs(body.get("patterns"), "pattern", "patterns")
    for group, role in arrows:
        (patterns if _has_regex_meta(group) else direct).append((group, role))

    default_role = body.get("default_role")
    if default_role is not None and (not isinstance(default_role, str) or not default_role):
        raise ConfigSyntaxError("default_role must be a non-empty string")

    raw_hierarchy = body.get("role_hierarchy") or {}
    if not isinstance(raw_hierarchy, dict):
        raise ConfigSyntaxError("role_hierarchy must be a mapping")
    hierarchy = {}
    for parent, children in raw_hierarchy.items():
        if isinstance(children, str):
            children = [children]
        if not isinstance(parent, str) or not isinstance(children, list) or not all(isinstance(c, str) for c in children):
            raise ConfigSyntaxError("role_hierarchy maps a role to a list of roles")
        hierarchy[parent] = tuple(children)

    roles = body.get("roles")
    if roles is not None:
        if not isinstance(roles, list) or not all(isinstance(r, str) for r in roles):
            raise ConfigSyntaxError("roles must be a list of strings")
        roles = frozenset(roles)

    return RoleMappingConfig(
        direct_mappings=tuple(direct),
        pattern_mappings=tuple(patterns),
        default_role=default_role,
        role_hierarchy=hierarchy,
        roles=roles,
    )


def map_groups_to_roles(groups: Iterable[str], config: RoleMappingConfig) -> set[str]:
    roles: set[str] = set()
    for group in groups:
        direct = config._direct_index.get(group)
        if direct:
            roles.update(direct)
            continue
        for pattern, role in config._compiled:
            if pattern.fullmatch(group):
                roles.add(role)
                break
    if not roles and config.default_role is not None:
        roles.add(config.default_role)
    return roles


def expand_hierarchy(roles: Iterable[str], config: RoleMappingConfig) -> set[str]:
    result = set(roles)
    pending = list(result)
    while pending:
        for child in config.role_hierarchy.get(pending.pop(), ()):
            if child not in result:
                result.add(child)
                pending.append(child)
    return result


def desired_roles(groups: Iterable[str], config: RoleMappingConfig) -> set[str]:
    return expand_hierarchy(map_groups_to_roles(groups, config), config)


@dataclass(frozen=True)
class SyncPlan:
    roles_to_add: frozenset[str]
    roles_to_remove: frozenset[str]

    @property
    def empty(self) -> bool:
        return not self.roles_to_add and not self.roles_to_remove


def plan_role_sync(desired: Iterable[str], current: Iterable[str]) -> SyncPlan:
    desired, current = set(desired), set(current)
    return SyncPlan(frozenset(desired - current), frozenset(current - desired))


@dataclass
class SyncReport:
    user_id: str
    plan: SyncPlan
    added: list[str] = field(default_factory=list)
    removed: list[str] = field(default_factory=list)
    failed: list[tuple[str, str, ConnectorError]] = field(default_factory=list)

    def summary(self) -> str:
        return "added=%s removed=%s failed=%d" % (
            ",".join(self.added) or "-",
            ",".join(self.removed) or "-",
            len(self.failed),
        )


class PartialSyncFailure(Exception):
    def __init__(self, report: SyncReport):
        self.report = report
        super().__init__("role sync incomplete for user %s: %d operation(s) failed" % (report.user_id, len(report.failed)))


# Errors that say nothing about one role in particular: stop and fail the login.
_ABORTING = {ErrorKind.UNAVAILABLE, ErrorKind.TIMEOUT, ErrorKind.RATE_LIMITED, ErrorKind.UNAUTHORIZED}


def sync_user_roles(user_id: str, groups: Iterable[str], connector, config: RoleMappingConfig) -> SyncReport:
    """Make the user's application roles exactly the roles their groups imply.

    Additions run before removals so an interrupted sync leaves a superset.
    """
    desired = desired_roles(groups, config)
    current = set(connector.list_user_roles(user_id))
    plan = plan_role_sync(desired, current)
    report = SyncReport(user_id=user_id, plan=plan)
    for role, operation in [(r, "add") for r in sorted(plan.roles_to_add)] + [
        (r, "remove") for r in sorted(plan.roles_to_remove)
    ]:
        try:
            if operation == "add":
                connector.add_role(user_id, role)
                report.added.append(role)
            else:
                connector.remove_role(user_id, role)
                report.removed.append(role)
        except ConnectorError as exc:
            if exc.kind in _ABORTING:
                raise
            report.failed.append((role, operation, exc))
    if report.failed:
        raise PartialSyncFailure(report)
    if not plan.empty:
        logger.info("roles synchronized user_id=%s %s", user_id, report.summary())
    return report
