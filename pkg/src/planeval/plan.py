"""Plan documents: parsing, validation, canonical form, and hop analysis.

A plan is an ordered DAG of tool-invocation steps. On the wire it is a JSON
object whose keys are decimal step indices and whose values carry a tool
call plus a depends_on list:

    {"1": {"query": "T2S([], 'Fetch call_ids of refund calls')", "depends_on": []},
     "2": {"query": "RAG((1), 'What are customers unhappy about?')", "depends_on": [1]}}

Real planner output is messier than strict JSON, so the parser also accepts
a lenient dialect: unquoted integer step keys, "step" instead of "query",
bare (unquoted) tool-call expressions, single- or double-quoted prompts,
and trailing commas. canonicalize() always emits the strict form above.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field

from .errors import InvalidPlan, ParseIssue, PlanParseError

TOOL_NAMES = ("T2S", "RAG", "LLM")


class ToolKind(enum.Enum):
    T2S = "T2S"
    RAG = "RAG"
    LLM = "LLM"


class PlaceholderKind(enum.Enum):
    STEP_OUTPUT = "step_output"
    ORIGINAL_QUERY = "original_query"
    TOOL_NAME = "tool_name"
    SUB_QUERY = "sub_query"


@dataclass(frozen=True)
class Placeholder:
    """A reference token embedded in a prompt: (k), (query), (tool k), (sub-query k)."""

    kind: PlaceholderKind
    index: int | None = None

    def __post_init__(self):
        index_bearing = self.kind is not PlaceholderKind.ORIGINAL_QUERY
        if index_bearing and (self.index is None or self.index < 1):
            raise ValueError(f"{self.kind.value} placeholder needs an index >= 1")
        if not index_bearing and self.index is not None:
            raise ValueError("(query) placeholder carries no index")

    def render(self) -> str:
        if self.kind is PlaceholderKind.ORIGINAL_QUERY:
            return "(query)"
        if self.kind is PlaceholderKind.STEP_OUTPUT:
            return f"({self.index})"
        if self.kind is PlaceholderKind.TOOL_NAME:
            return f"(tool {self.index})"
        return f"(sub-query {self.index})"


@dataclass(frozen=True)
class Step:
    """One tool invocation. arg_refs are the positional step references that
    T2S/RAG take outside the prompt; LLM steps wire dependencies only through
    placeholders embedded in the prompt text."""

    index: int
    tool: ToolKind
    arg_refs: tuple[int, ...]
    prompt: str
    depends_on: frozenset[int]

    def tool_call_text(self) -> str:
        prompt = _escape_prompt(self.prompt)
        if self.tool is ToolKind.LLM:
            return f"LLM('{prompt}')"
        args = "[]" if not self.arg_refs else ", ".join(f"({k})" for k in self.arg_refs)
        return f"{self.tool.value}({args}, '{prompt}')"


@dataclass(frozen=True)
class Plan:
    """Ordered steps, indexed 1..n. Construction is permissive; validate()
    is the enforcement point so that malformed graphs can be reported
    rather than silently rejected."""

    steps: tuple[Step, ...]

    def __len__(self) -> int:
        return len(self.steps)

    def step(self, index: int) -> Step:
        for s in self.steps:
            if s.index == index:
                return s
        raise KeyError(index)

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(s.index for s in self.steps)

    def consumers(self, index: int) -> tuple[int, ...]:
        return tuple(s.index for s in self.steps if index in s.depends_on)

    def sinks(self) -> tuple[int, ...]:
        """Steps no other step depends on (the answer-producing steps)."""
        return tuple(s.index for s in self.steps if not self.consumers(s.index))


@dataclass(frozen=True)
class Violation:
    where: int | None  # step index, or None for plan-level findings
    kind: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]
    warnings: tuple[Violation, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.violations


class HopCategory(enum.Enum):
    ZERO_HOP = "zero-hop"
    ONE_HOP = "one-hop"
    TWO_HOP = "two-hop"
    THREE_PLUS = "three-plus"


@dataclass(frozen=True)
class HopProfile:
    per_step_depth: dict[int, int]
    hops: int
    category: HopCategory


def _category_for(hops: int) -> HopCategory:
    if hops == 0:
        return HopCategory.ZERO_HOP
    if hops == 1:
        return HopCategory.ONE_HOP
    if hops == 2:
        return HopCategory.TWO_HOP
    return HopCategory.THREE_PLUS


# ---------------------------------------------------------------------------
# placeholder extraction

_PLACEHOLDER_RE = re.compile(
    r"\((?:(?P<step>[1-9][0-9]*)"
    r"|(?P<query>query)"
    r"|tool (?P<tool>[1-9][0-9]*)"
    r"|sub-query (?P<sub>[1-9][0-9]*))\)"
)


def extract_placeholders(prompt: str) -> list[Placeholder]:
    """All placeholder tokens in textual order, duplicates preserved.

    Parenthesized text that is not one of the four standard forms is left
    alone; "(1, 2)" is not a placeholder.
    """
    found: list[Placeholder] = []
    for m in _PLACEHOLDER_RE.finditer(prompt):
        if m.group("step"):
            found.append(Placeholder(PlaceholderKind.STEP_OUTPUT, int(m.group("step"))))
        elif m.group("query"):
            found.append(Placeholder(PlaceholderKind.ORIGINAL_QUERY))
        elif m.group("tool"):
            found.append(Placeholder(PlaceholderKind.TOOL_NAME, int(m.group("tool"))))
        else:
            found.append(Placeholder(PlaceholderKind.SUB_QUERY, int(m.group("sub"))))
    return found


# ---------------------------------------------------------------------------
# tool-call mini-grammar

_ESCAPABLE = {"'", '"', "\\"}


def _escape_prompt(prompt: str) -> str:
    out = []
    for ch in prompt:
        if ch in ("\\", "'"):
            out.append("\\")
        out.append(ch)
    return "".join(out)


class _Scanner:
    """Cursor over a text with quote-aware helpers, shared by the tool-call
    grammar and the lenient document dialect."""

    def __init__(self, text: str, where: str = "document"):
        self.text = text
        self.pos = 0
        self.where = where

    def fail(self, kind: str, message: str):
        raise PlanParseError.single(kind, self.where, message)

    def eof(self) -> bool:
        return self.pos >= len(self.text)

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def expect(self, token: str, kind: str = "NotParseable"):
        self.skip_ws()
        if not self.text.startswith(token, self.pos):
            self.fail(kind, f"expected {token!r} near offset {self.pos}")
        self.pos += len(token)

    def try_consume(self, token: str) -> bool:
        self.skip_ws()
        if self.text.startswith(token, self.pos):
            self.pos += len(token)
            return True
        return False

    def quoted_string(self, kind: str = "MalformedToolCall") -> str:
        """Single- or double-quoted string with backslash escapes."""
        self.skip_ws()
        quote = self.peek()
        if quote not in ("'", '"'):
            self.fail(kind, f"expected a quoted string near offset {self.pos}")
        self.pos += 1
        out: list[str] = []
        while True:
            if self.eof():
                self.fail(kind, "unterminated string")
            ch = self.text[self.pos]
            if ch == "\\":
                nxt = self.text[self.pos + 1] if self.pos + 1 < len(self.text) else ""
                if nxt in _ESCAPABLE:
                    out.append(nxt)
                    self.pos += 2
                    continue
                out.append(ch)
                self.pos += 1
                continue
            if ch == quote:
                self.pos += 1
                return "".join(out)
            out.append(ch)
            self.pos += 1

    def integer(self, kind: str = "NotParseable") -> int:
        self.skip_ws()
        m = re.match(r"-?[0-9]+", self.text[self.pos:])
        if not m:
            self.fail(kind, f"expected an integer near offset {self.pos}")
        self.pos += m.end()
        return int(m.group())


def parse_tool_call(text: str, where: str = "step") -> tuple[ToolKind, tuple[int, ...], str]:
    """Parse `T2S(<arglist>, '<prompt>')` / `RAG(...)` / `LLM('<prompt>')`.

    arglist is `[]` or one or more `(k)` separated by commas. LLM takes no
    arglist; its dependencies live in prompt placeholders.
    """
    sc = _Scanner(text, where)
    sc.skip_ws()
    m = re.match(r"[A-Za-z][A-Za-z0-9_]*", sc.text[sc.pos:])
    if not m:
        sc.fail("MalformedToolCall", "no tool name")
    name = m.group()
    sc.pos += m.end()
    if name not in TOOL_NAMES:
        sc.fail("UnknownTool", f"unknown tool {name!r}")
    tool = ToolKind(name)
    sc.expect("(", "MalformedToolCall")

    arg_refs: list[int] = []
    if tool is ToolKind.LLM:
        prompt = sc.quoted_string()
    else:
        sc.skip_ws()
        if sc.try_consume("["):
            sc.expect("]", "MalformedToolCall")
        elif sc.peek() == "(":
            while sc.try_consume("("):
                k = sc.integer("MalformedToolCall")
                if k < 1:
                    sc.fail("MalformedToolCall", f"argument reference ({k}) must be >= 1")
                sc.skip_ws()
                if sc.peek() == ",":
                    # "(1, 2)" inside one parenthesis is not a legal arglist
                    sc.fail(
                        "MalformedToolCall",
                        "comma-joined argument references; write (1), (2)",
                    )
                sc.expect(")", "MalformedToolCall")
                arg_refs.append(k)
                sc.skip_ws()
                if sc.peek() == ",":
                    save = sc.pos
                    sc.pos += 1
                    sc.skip_ws()
                    if sc.peek() == "(":
                        continue
                    sc.pos = save
                break
        else:
            sc.fail("MalformedToolCall", "expected [] or (k) argument list")
        sc.expect(",", "MalformedToolCall")
        prompt = sc.quoted_string()
    sc.expect(")", "MalformedToolCall")
    sc.skip_ws()
    if not sc.eof():
        sc.fail("MalformedToolCall", "trailing text after tool call")
    return tool, tuple(arg_refs), prompt


# ---------------------------------------------------------------------------
# document parsing


def _bare_tool_call(sc: _Scanner) -> str:
    """Capture an unquoted tool-call expression up to its balanced closing paren."""
    sc.skip_ws()
    start = sc.pos
    m = re.match(r"[A-Za-z][A-Za-z0-9_]*\s*\(", sc.text[sc.pos:])
    if not m:
        sc.fail("MalformedToolCall", f"expected a tool call near offset {sc.pos}")
    sc.pos += m.end()
    depth = 1
    while depth:
        if sc.eof():
            sc.fail("MalformedToolCall", "unbalanced parentheses in tool call")
        ch = sc.text[sc.pos]
        if ch in ("'", '"'):
            sc.quoted_string()
            continue
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        sc.pos += 1
    return sc.text[start:sc.pos]


def _field_name(sc: _Scanner) -> str:
    sc.skip_ws()
    if sc.peek() in ("'", '"'):
        return sc.quoted_string("NotParseable")
    m = re.match(r"[A-Za-z_][A-Za-z0-9_]*", sc.text[sc.pos:])
    if not m:
        sc.fail("NotParseable", f"expected a field name near offset {sc.pos}")
    sc.pos += m.end()
    return m.group()


def _parse_dialect(text: str) -> dict[int, tuple[str, list[int]]]:
    """Lenient reader for the plan dialect. Returns {key: (call_text, deps)}."""
    sc = _Scanner(text)
    sc.expect("{")
    raw: dict[int, tuple[str, list[int]]] = {}
    while True:
        sc.skip_ws()
        if sc.try_consume("}"):
            break
        if sc.peek() in ("'", '"'):
            key_text = sc.quoted_string("NotParseable")
        else:
            m = re.match(r"-?[0-9]+", sc.text[sc.pos:])
            if not m:
                sc.fail("BadStepKey", f"expected a step key near offset {sc.pos}")
            key_text = m.group()
            sc.pos += m.end()
        if not re.fullmatch(r"-?[0-9]+", key_text.strip()):
            sc.fail("BadStepKey", f"step key {key_text!r} is not an integer")
        key = int(key_text)
        if key in raw:
            sc.fail("BadStepKey", f"duplicate step key {key}")
        sc.expect(":")
        sc.expect("{")
        call_text: str | None = None
        deps: list[int] | None = None
        while True:
            sc.skip_ws()
            if sc.try_consume("}"):
                break
            name = _field_name(sc)
            sc.expect(":")
            if name in ("step", "query"):
                sc.skip_ws()
                if sc.peek() in ("'", '"'):
                    call_text = sc.quoted_string("NotParseable")
                else:
                    call_text = _bare_tool_call(sc)
            elif name == "depends_on":
                sc.expect("[")
                deps = []
                while True:
                    sc.skip_ws()
                    if sc.try_consume("]"):
                        break
                    deps.append(sc.integer())
                    sc.skip_ws()
                    sc.try_consume(",")
            else:
                # unknown extra field: swallow one value of any supported shape
                sc.skip_ws()
                if sc.peek() in ("'", '"'):
                    sc.quoted_string("NotParseable")
                elif sc.peek() == "[":
                    sc.expect("[")
                    while not sc.try_consume("]"):
                        sc.pos += 1
                        if sc.eof():
                            sc.fail("NotParseable", "unterminated array")
                else:
                    m = re.match(r"[^,}\n]+", sc.text[sc.pos:])
                    if m:
                        sc.pos += m.end()
            sc.skip_ws()
            sc.try_consume(",")
        if call_text is None or deps is None:
            missing = "step/query" if call_text is None else "depends_on"
            raise PlanParseError.single("MissingField", f"step {key}", f"missing {missing}")
        raw[key] = (call_text, deps)
        sc.skip_ws()
        sc.try_consume(",")
    sc.skip_ws()
    if not sc.eof():
        sc.fail("NotParseable", "trailing text after plan document")
    if not raw:
        sc.fail("NotParseable", "plan document has no steps")
    return raw


def _raw_from_json(obj) -> dict[int, tuple[str, list[int]]]:
    if not isinstance(obj, dict) or not obj:
        raise PlanParseError.single("NotParseable", "document", "not a non-empty JSON object")
    raw: dict[int, tuple[str, list[int]]] = {}
    for key_text, entry in obj.items():
        where = f"step {key_text}"
        if not re.fullmatch(r"-?[0-9]+", str(key_text).strip()):
            raise PlanParseError.single("BadStepKey", where, f"step key {key_text!r} is not an integer")
        key = int(key_text)
        if not isinstance(entry, dict):
            raise PlanParseError.single("NotParseable", where, "step entry is not an object")
        call_text = entry.get("query", entry.get("step"))
        deps = entry.get("depends_on")
        if call_text is None or deps is None:
            missing = "step/query" if call_text is None else "depends_on"
            raise PlanParseError.single("MissingField", where, f"missing {missing}")
        if not isinstance(call_text, str) or not isinstance(deps, list) or not all(
            isinstance(d, int) and not isinstance(d, bool) for d in deps
        ):
            raise PlanParseError.single("NotParseable", where, "malformed step entry")
        raw[key] = (call_text, list(deps))
    return raw


def parse_plan(text: str | bytes) -> Plan:
    """Parse a plan document in strict JSON or the lenient dialect.

    Raises PlanParseError carrying every step-level issue found. Step keys
    must be integers forming a contiguous 1..n range.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise PlanParseError.single("NotParseable", "document", f"not UTF-8: {exc}") from exc
    try:
        raw = _raw_from_json(json.loads(text))
    except PlanParseError:
        raise
    except (json.JSONDecodeError, TypeError):
        raw = _parse_dialect(text)

    issues: list[ParseIssue] = []
    expected = set(range(1, len(raw) + 1))
    if set(raw) != expected:
        missing = sorted(expected - set(raw))
        extra = sorted(set(raw) - expected)
        issues.append(
            ParseIssue(
                "BadStepKey",
                "document",
                f"step keys must be contiguous 1..{len(raw)} (missing {missing}, unexpected {extra})",
            )
        )
        raise PlanParseError(issues)

    steps: list[Step] = []
    for key in sorted(raw):
        call_text, deps = raw[key]
        try:
            tool, arg_refs, prompt = parse_tool_call(call_text, where=f"step {key}")
        except PlanParseError as exc:
            issues.extend(exc.issues)
            continue
        steps.append(
            Step(
                index=key,
                tool=tool,
                arg_refs=arg_refs,
                prompt=prompt,
                depends_on=frozenset(deps),
            )
        )
    if issues:
        raise PlanParseError(issues)
    return Plan(steps=tuple(steps))


# ---------------------------------------------------------------------------
# validation


def validate(plan: Plan) -> ValidationReport:
    """Full structural report. Violations invalidate the plan; a declared
    dependency that never shows up as a placeholder is only a warning (the
    format rubric scores it, the schema does not reject it)."""
    violations: list[Violation] = []
    warnings: list[Violation] = []

    if len(plan.steps) == 0:
        violations.append(Violation(None, "EmptyPlan", "a plan needs at least one step"))
        return ValidationReport(tuple(violations))

    if plan.indices != tuple(range(1, len(plan.steps) + 1)):
        violations.append(
            Violation(None, "NonContiguousIndices", f"step indices {plan.indices} are not 1..{len(plan.steps)}")
        )

    known = set(plan.indices)
    for s in plan.steps:
        for d in sorted(s.depends_on):
            if d == s.index:
                violations.append(Violation(s.index, "SelfReference", f"step {s.index} depends on itself"))
            elif d >= s.index:
                violations.append(
                    Violation(s.index, "ForwardReference", f"step {s.index} depends on later step {d}")
                )
            elif d not in known or d < 1:
                violations.append(
                    Violation(s.index, "UnknownDependency", f"step {s.index} depends on missing step {d}")
                )
        if s.tool is ToolKind.LLM and s.arg_refs:
            violations.append(
                Violation(s.index, "LlmArgRefs", "LLM steps take no positional argument references")
            )
        for k in s.arg_refs:
            if k not in s.depends_on:
                violations.append(
                    Violation(s.index, "ArgRefNotDeclared", f"argument reference ({k}) is not in depends_on")
                )
        referenced: set[int] = set(s.arg_refs)
        for ph in extract_placeholders(s.prompt):
            if ph.index is None:
                continue
            referenced.add(ph.index)
            if ph.index not in s.depends_on:
                violations.append(
                    Violation(
                        s.index,
                        "PlaceholderNotDeclared",
                        f"placeholder {ph.render()} references a step not in depends_on",
                    )
                )
        for d in sorted(s.depends_on - referenced):
            warnings.append(
                Violation(
                    s.index,
                    "MissingPlaceholder",
                    f"declared dependency {d} has no placeholder in the step",
                )
            )

    # topological pass over depends_on edges; redundant with the
    # forward-reference rule but re-verified as a safety net
    if not violations:
        indeg = {i: 0 for i in plan.indices}
        consumers: dict[int, list[int]] = {i: [] for i in plan.indices}
        for s in plan.steps:
            for d in s.depends_on:
                indeg[s.index] += 1
                consumers[d].append(s.index)
        queue = [i for i in plan.indices if indeg[i] == 0]
        seen = 0
        while queue:
            i = queue.pop()
            seen += 1
            for c in consumers[i]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    queue.append(c)
        if seen != len(plan.steps):
            violations.append(Violation(None, "CycleDetected", "dependency graph is not acyclic"))

    return ValidationReport(tuple(violations), tuple(warnings))


def _require_valid(plan: Plan) -> None:
    report = validate(plan)
    if not report.valid:
        raise InvalidPlan("; ".join(f"{v.kind}: {v.message}" for v in report.violations))


# ---------------------------------------------------------------------------
# hops


def hop_profile(plan: Plan) -> HopProfile:
    """Dependency depth per step; hops is the max depth over sink steps.

    depth(s) = 0 when depends_on is empty, else 1 + max depth of the
    dependencies. Ascending index order is a topological order once the
    plan validates.
    """
    _require_valid(plan)
    depth: dict[int, int] = {}
    for s in plan.steps:
        depth[s.index] = 0 if not s.depends_on else 1 + max(depth[d] for d in s.depends_on)
    hops = max(depth[i] for i in plan.sinks())
    return HopProfile(per_step_depth=depth, hops=hops, category=_category_for(hops))


# ---------------------------------------------------------------------------
# canonical form


def canonicalize(plan: Plan) -> str:
    """Deterministic strict-JSON rendering; parse_plan() round-trips it.

    Quoted integer keys ascending, "query" field, single-quoted prompts with
    embedded quotes escaped, depends_on sorted ascending.
    """
    _require_valid(plan)
    doc = {
        str(s.index): {
            "query": s.tool_call_text(),
            "depends_on": sorted(s.depends_on),
        }
        for s in sorted(plan.steps, key=lambda s: s.index)
    }
    return json.dumps(doc, ensure_ascii=False)


def plans_equal(a: Plan, b: Plan) -> bool:
    return canonicalize(a) == canonicalize(b)
