"""Plain-text scenario files and the amplitude expression grammar.

Amplitudes::

    expr     := term (('*' | '/') term)*
    term     := ['-'] (rational | 'sqrt(' rational ')' | 'i')
    rational := int ['/' int]

Scenario directives, one per line (a ``{ ... }`` block may span lines,
``#`` starts a comment)::

    register <name> <dim> <label>[,<label>...]
    state <name> on <reg> { <label>=<amp>; ... }
    init <reg>:<label>[,<reg>:<label>...]=<amp>[; ...]
    basis <name> on <reg>[,<reg>...] { <outcome>: [<amp>*]|<l1,l2>> + ... ; ... }
    step <time> agent <name> measure <basis> policy <unitary|collapse> [prep <outcome>-><reg>:<state>]...
    comm <time> <from> -> <to>

Repeating an outcome label inside a basis block adds another vector to a
degenerate outcome. Kets and ``state`` labels may repeat; their amplitudes
add. Several ``init`` lines multiply; registers no ``init`` mentions start in
their first label.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from importlib.resources import files

import numpy as np

from . import qcore
from .qcore import LayoutError, StateVector
from .registers import Register, SpaceLayout, basis_state, superpose
from .scenario import Comm, Preparation, Scenario, Step, time_key
from .semantics import BASIS_TOL, Measurement, memory_register


class AmplitudeSyntaxError(ValueError):
    def __init__(self, msg: str, line: int = 1, col: int = 1):
        super().__init__(f"line {line}, column {col}: {msg}")
        self.line, self.col = line, col


class ScenarioSyntaxError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        super().__init__(f"line {line}: {msg}" if line else msg)
        self.line = line


# -- amplitude expressions ---------------------------------------------------------


@dataclass(frozen=True)
class Rational:
    q: Fraction

    def value(self) -> complex:
        return complex(float(self.q))

    def text(self) -> str:
        return str(self.q.numerator) if self.q.denominator == 1 else f"{self.q.numerator}/{self.q.denominator}"


@dataclass(frozen=True)
class Sqrt:
    q: Fraction

    def value(self) -> complex:
        return complex(math.sqrt(self.q.numerator) / math.sqrt(self.q.denominator))

    def text(self) -> str:
        return f"sqrt({Rational(self.q).text()})"


@dataclass(frozen=True)
class Imag:
    def value(self) -> complex:
        return 1j

    def text(self) -> str:
        return "i"


@dataclass(frozen=True)
class Neg:
    arg: object

    def value(self) -> complex:
        return -self.arg.value()

    def text(self) -> str:
        return "-" + self.arg.text()


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object

    def value(self) -> complex:
        a, b = self.left.value(), self.right.value()
        return a * b if self.op == "*" else a / b

    def text(self) -> str:
        return f"{self.left.text()}{self.op}{self.right.text()}"


AmplitudeExpr = Rational | Sqrt | Imag | Neg | BinOp


class _AmpParser:
    def __init__(self, text: str, line: int, col: int):
        self.s, self.i, self.line, self.col0 = text, 0, line, col

    def err(self, msg, at=None):
        raise AmplitudeSyntaxError(msg, self.line, self.col0 + (self.i if at is None else at))

    def ws(self):
        while self.i < len(self.s) and self.s[self.i].isspace():
            self.i += 1

    def peek(self, tok: str) -> bool:
        self.ws()
        return self.s.startswith(tok, self.i)

    def expect(self, tok: str):
        if not self.peek(tok):
            self.err(f"expected {tok!r}")
        self.i += len(tok)

    def integer(self) -> int:
        self.ws()
        m = re.compile(r"\d+").match(self.s, self.i)
        if not m:
            self.err("expected an integer")
        self.i = m.end()
        return int(m.group())

    def rational(self) -> Fraction:
        num = self.integer()
        save = self.i
        if self.peek("/"):
            self.i += 1
            self.ws()
            if self.i < len(self.s) and self.s[self.i].isdigit():
                at = self.i
                den = self.integer()
                if den == 0:
                    self.err("division by zero", at)
                return Fraction(num, den)
            self.i = save
        return Fraction(num)

    def term(self):
        neg = False
        if self.peek("-"):
            self.i += 1
            neg = True
        if self.peek("sqrt"):
            self.i += 4
            self.expect("(")
            at = self.i
            sign = 1
            if self.peek("-"):
                self.i += 1
                sign = -1
            q = sign * self.rational()
            if q < 0:
                self.err("negative sqrt argument", at)
            self.expect(")")
            node = Sqrt(q)
        elif self.peek("i") and not self.s[self.i + 1 : self.i + 2].isalnum():
            self.i += 1
            node = Imag()
        else:
            self.ws()
            if self.i >= len(self.s) or not self.s[self.i].isdigit():
                self.err("expected a number, sqrt(...) or i")
            node = Rational(self.rational())
        return Neg(node) if neg else node

    def expr(self):
        node = self.term()
        while True:
            if self.peek("*"):
                self.i += 1
                node = BinOp("*", node, self.term())
            elif self.peek("/"):
                at = self.i
                self.i += 1
                rhs = self.term()
                if rhs.value() == 0:
                    self.err("division by zero", at)
                node = BinOp("/", node, rhs)
            else:
                return node

    def parse(self):
        node = self.expr()
        self.ws()
        if self.i != len(self.s):
            self.err(f"unexpected {self.s[self.i]!r}")
        return node


def parse_amplitude(text: str, line: int = 1, col: int = 1) -> AmplitudeExpr:
    return _AmpParser(text, line, col).parse()


def format_amplitude(x: complex) -> list[str]:
    """Exact amplitude text(s) whose sum is ``x``; one term per nonzero part."""
    out = []
    for part, suffix in ((x.real, ""), (x.imag, "i*")):
        if part == 0.0:
            continue
        sign = "-" if part < 0 else ""
        out.append(sign + suffix + _format_magnitude(abs(part)))
    return out


def _format_magnitude(a: float) -> str:
    sq = Fraction(a * a).limit_denominator(10000)
    # closed forms within a few ulps win over the exact binary fraction
    if sq > 0 and abs(math.sqrt(sq.numerator) / math.sqrt(sq.denominator) - a) <= 4 * math.ulp(a):
        n, d = math.isqrt(sq.numerator), math.isqrt(sq.denominator)
        if n * n == sq.numerator and d * d == sq.denominator:
            return Rational(Fraction(n, d)).text()
        return Sqrt(sq).text()
    return Rational(Fraction(a)).text()  # exact binary fraction


# -- scenario files ------------------------------------------------------------------


def _logical_lines(text: str):
    """Yield (line number, directive text) with comments stripped and braces joined."""
    buf, start, depth = [], None, 0
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if start is None:
            start = n
        buf.append(line)
        depth += line.count("{") - line.count("}")
        if depth < 0:
            raise ScenarioSyntaxError("unbalanced '}'", n)
        if depth == 0:
            yield start, " ".join(buf)
            buf, start = [], None
    if buf:
        raise ScenarioSyntaxError("unterminated '{' block", start)


_KET = re.compile(r"^(?:(?P<amp>.*?)\s*\*\s*)?(?P<neg>-\s*)?\|(?P<labels>[^|>]*)>$")


def _split_terms(body: str) -> list[str]:
    """Split on '+' outside kets."""
    terms, cur, inket = [], [], False
    for ch in body:
        if ch == "|":
            inket = True
        elif ch == ">":
            inket = False
        if ch == "+" and not inket:
            terms.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    terms.append("".join(cur).strip())
    return terms


def _block(rest: str, n: int) -> tuple[str, str]:
    if "{" not in rest or not rest.rstrip().endswith("}"):
        raise ScenarioSyntaxError("expected a '{ ... }' block", n)
    head, body = rest.split("{", 1)
    return head.strip(), body.rstrip()[:-1].strip()


def _amp(text: str, n: int) -> complex:
    try:
        return parse_amplitude(text.strip(), n).value()
    except AmplitudeSyntaxError:
        raise
    except ZeroDivisionError:
        raise AmplitudeSyntaxError("division by zero", n) from None


@dataclass
class _RawBasis:
    name: str
    registers: tuple[str, ...]
    outcomes: list[tuple[str, list[tuple[complex, tuple[str, ...]]]]]
    line: int


def parse_scenario(text: str, name: str = "") -> Scenario:
    registers: dict[str, Register] = {}
    states: dict[str, tuple[str, StateVector]] = {}
    inits: list[tuple[int, list[tuple[complex, dict[str, str]]]]] = []
    bases: dict[str, _RawBasis] = {}
    raw_steps = []
    comms = []
    for n, line in _logical_lines(text):
        word, _, rest = line.partition(" ")
        rest = rest.strip()
        if word == "register":
            parts = rest.split()
            if len(parts) != 3:
                raise ScenarioSyntaxError("register <name> <dim> <labels>", n)
            rname, dim, labels = parts
            labels = tuple(labels.split(","))
            if not dim.isdigit() or int(dim) != len(labels):
                raise ScenarioSyntaxError(f"register {rname}: dim {dim} but {len(labels)} labels", n)
            if rname in registers:
                raise ScenarioSyntaxError(f"register {rname!r} declared twice", n)
            try:
                registers[rname] = Register(rname, labels)
            except LayoutError as exc:
                raise ScenarioSyntaxError(str(exc), n) from None
        elif word == "state":
            head, body = _block(rest, n)
            m = re.fullmatch(r"(\S+)\s+on\s+(\S+)", head)
            if not m:
                raise ScenarioSyntaxError("state <name> on <reg> { ... }", n)
            sname, reg = m.groups()
            lay = _layout(registers, [reg], n)
            terms = []
            for item in filter(None, (t.strip() for t in body.split(";"))):
                lbl, eq, amp = item.partition("=")
                if not eq:
                    raise ScenarioSyntaxError(f"expected <label>=<amp>, got {item!r}", n)
                terms.append((_amp(amp, n), {reg: lbl.strip()}))
            states[sname] = (reg, _superpose(lay, terms, n))
        elif word == "init":
            terms = []
            for item in filter(None, (t.strip() for t in rest.split(";"))):
                lhs, eq, amp = item.partition("=")
                if not eq:
                    raise ScenarioSyntaxError(f"expected <reg>:<label>=<amp>, got {item!r}", n)
                assignment = {}
                for pair in lhs.split(","):
                    reg, colon, lbl = pair.strip().partition(":")
                    if not colon:
                        raise ScenarioSyntaxError(f"expected <reg>:<label>, got {pair!r}", n)
                    assignment[reg] = lbl
                terms.append((_amp(amp, n), assignment))
            if not terms:
                raise ScenarioSyntaxError("empty init", n)
            inits.append((n, terms))
        elif word == "basis":
            head, body = _block(rest, n)
            m = re.fullmatch(r"(\S+)\s+on\s+(\S+)", head)
            if not m:
                raise ScenarioSyntaxError("basis <name> on <regs> { ... }", n)
            bname, regs = m.groups()
            outcomes: list = []
            for item in filter(None, (t.strip() for t in body.split(";"))):
                lbl, colon, vec = item.partition(":")
                if not colon:
                    raise ScenarioSyntaxError(f"expected <outcome>: <kets>, got {item!r}", n)
                kets = []
                for term in _split_terms(vec):
                    km = _KET.match(term)
                    if not km:
                        raise ScenarioSyntaxError(f"bad ket term {term!r}", n)
                    amp = _amp(km["amp"], n) if km["amp"] else 1.0
                    if km["neg"]:
                        amp = -amp
                    kets.append((amp, tuple(x.strip() for x in km["labels"].split(","))))
                outcomes.append((lbl.strip(), kets))
            bases[bname] = _RawBasis(bname, tuple(regs.split(",")), outcomes, n)
        elif word == "step":
            m = re.fullmatch(
                r"(\S+)\s+agent\s+(\S+)\s+measure\s+(\S+)\s+policy\s+(\S+)((?:\s+prep\s+\S+)*)",
                rest,
            )
            if not m:
                raise ScenarioSyntaxError(
                    "step <time> agent <name> measure <basis> policy <policy> [prep ...]", n
                )
            preps = re.findall(r"prep\s+(\S+)", m.group(5))
            raw_steps.append((n, m.group(1), m.group(2), m.group(3), m.group(4), preps))
        elif word == "comm":
            m = re.fullmatch(r"(\S+)\s+(\S+)\s*->\s*(\S+)", rest)
            if not m:
                raise ScenarioSyntaxError("comm <time> <from> -> <to>", n)
            comms.append((n, Comm(*m.groups())))
        else:
            raise ScenarioSyntaxError(f"unknown directive {word!r}", n)
    if not inits:
        raise ScenarioSyntaxError("no init directive")

    base = SpaceLayout(tuple(registers.values()))
    initial = _initial_state(base, inits)
    lay = base
    steps = []
    prev = None
    for n, time, agent, bname, policy, preps in raw_steps:
        try:
            key = time_key(time)
        except ValueError as exc:
            raise ScenarioSyntaxError(str(exc), n) from None
        if prev is not None and key <= prev:
            raise ScenarioSyntaxError(f"step time {time} does not follow the previous step", n)
        prev = key
        if bname not in bases:
            raise ScenarioSyntaxError(f"undefined basis {bname!r}", n)
        meas = _resolve_basis(bases[bname], agent, lay)
        lay = lay.concat(SpaceLayout((memory_register(meas),)))
        prep = {}
        for p in preps:
            lbl, arrow, rhs = p.partition("->")
            reg, colon, sname = rhs.partition(":")
            if not (lbl and arrow and reg and colon and sname):
                raise ScenarioSyntaxError(f"bad prep {p!r}; expected <outcome>-><reg>:<state>", n)
            if sname not in states:
                raise ScenarioSyntaxError(f"undefined state {sname!r}", n)
            sreg, vec = states[sname]
            if sreg != reg:
                raise ScenarioSyntaxError(f"state {sname!r} lives on {sreg}, not {reg}", n)
            prep[lbl] = Preparation(reg, vec, sname)
        try:
            steps.append(Step(time, meas, policy, prep))
        except (ValueError, LayoutError) as exc:
            raise ScenarioSyntaxError(str(exc), n) from None
    # bases no step uses still have to resolve and be orthonormal
    used = {r[3] for r in raw_steps}
    for bname, raw in bases.items():
        if bname not in used:
            _resolve_basis(raw, "_", lay)
    try:
        return Scenario(base, initial, tuple(steps), tuple(c for _, c in comms), name)
    except (ValueError, LayoutError) as exc:
        raise ScenarioSyntaxError(str(exc)) from None


def _layout(registers, names, n) -> SpaceLayout:
    for r in names:
        if r not in registers:
            raise ScenarioSyntaxError(f"undefined register {r!r}", n)
    return SpaceLayout(tuple(registers[r] for r in names))


def _superpose(lay, terms, n) -> StateVector:
    try:
        return superpose(lay, terms)
    except (ValueError, LayoutError) as exc:
        raise ScenarioSyntaxError(str(exc), n) from None


def _initial_state(base: SpaceLayout, inits) -> StateVector:
    factors = []
    covered: set[str] = set()
    for n, terms in inits:
        regs = list(dict.fromkeys(r for _, a in terms for r in a))
        if covered & set(regs):
            raise ScenarioSyntaxError(f"registers {sorted(covered & set(regs))} initialized twice", n)
        covered |= set(regs)
        lay = _layout({r.name: r for r in base.registers}, regs, n)
        for _, a in terms:
            if set(a) != set(regs):
                raise ScenarioSyntaxError("every init term must name the same registers", n)
        factors.append(_superpose(lay, terms, n))
    for r in base.registers:
        if r.name not in covered:
            factors.append(basis_state(SpaceLayout((r,)), {r.name: r.labels[0]}))
    state = factors[0]
    for f in factors[1:]:
        state = qcore.tensor(state, f)
    perm = [state.layout.position(name) for name in base.names]
    return StateVector(base, state.tensor().transpose(perm).reshape(-1))


def _resolve_basis(raw: _RawBasis, agent: str, lay: SpaceLayout) -> Measurement:
    n = raw.line
    for r in raw.registers:
        if r not in lay:
            raise ScenarioSyntaxError(f"basis {raw.name}: undefined register {r!r}", n)
    targets = lay.sub(raw.registers)
    grouped: dict[str, list[StateVector]] = {}
    for lbl, kets in raw.outcomes:
        amps = np.zeros(targets.size, dtype=complex)
        for amp, labels in kets:
            if len(labels) != len(raw.registers):
                raise ScenarioSyntaxError(
                    f"basis {raw.name}: ket |{','.join(labels)}> needs {len(raw.registers)} labels", n
                )
            try:
                amps[targets.index_of(dict(zip(raw.registers, labels)))] += amp
            except LayoutError as exc:
                raise ScenarioSyntaxError(f"basis {raw.name}: {exc}", n) from None
        grouped.setdefault(lbl, []).append(StateVector(targets, amps))
    vecs = [v for vs in grouped.values() for v in vs]
    try:
        qcore.check_orthonormal(vecs, BASIS_TOL)
        return Measurement(agent, targets, tuple((l, tuple(vs)) for l, vs in grouped.items()))
    except (ValueError, LayoutError) as exc:
        raise ScenarioSyntaxError(f"basis {raw.name}: {exc}", n) from None


# -- serialization ---------------------------------------------------------------------


def _ket_terms(vec: StateVector) -> str:
    terms = []
    for k in np.flatnonzero(vec.amps):
        labels = ",".join(vec.layout.assignment_of(int(k)).values())
        for amp in format_amplitude(complex(vec.amps[k])):
            terms.append(f"|{labels}>" if amp == "1" else f"{amp}*|{labels}>")
    return " + ".join(terms)


def serialize(sc: Scenario) -> str:
    out = ["# wfsim scenario"]
    for r in sc.layout.registers:
        out.append(f"register {r.name} {r.dim} {','.join(r.labels)}")
    seen_states: dict[str, str] = {}
    for step in sc.steps:
        for lbl, prep in step.prep.items():
            sname = prep.name or f"{step.agent}_{lbl}"
            body = "; ".join(
                f"{prep.state.layout.registers[0].labels[k]}={amp}"
                for k in np.flatnonzero(prep.state.amps)
                for amp in format_amplitude(complex(prep.state.amps[k]))
            )
            text = f"state {sname} on {prep.register} {{ {body} }}"
            if seen_states.setdefault(sname, text) != text:
                raise ValueError(f"two preparations share the name {sname!r}")
    out.extend(dict.fromkeys(seen_states.values()))
    init_terms = []
    for k in np.flatnonzero(sc.initial.amps):
        a = sc.initial.layout.assignment_of(int(k))
        lhs = ",".join(f"{r}:{l}" for r, l in a.items())
        init_terms += [f"{lhs}={amp}" for amp in format_amplitude(complex(sc.initial.amps[k]))]
    out.append("init " + "; ".join(init_terms))
    for step in sc.steps:
        m = step.measurement
        items = [f"{lbl}: {_ket_terms(v)}" for lbl, vs in m.outcomes for v in vs]
        out.append(f"basis {step.agent}_basis on {','.join(m.target_names)} {{")
        out.extend(f"  {it} ;" if i < len(items) - 1 else f"  {it}" for i, it in enumerate(items))
        out.append("}")
    for step in sc.steps:
        preps = "".join(
            f" prep {lbl}->{p.register}:{p.name or f'{step.agent}_{lbl}'}"
            for lbl, p in step.prep.items()
        )
        out.append(
            f"step {step.time} agent {step.agent} measure {step.agent}_basis "
            f"policy {step.policy}{preps}"
        )
    for c in sc.comms:
        out.append(f"comm {c.time} {c.sender} -> {c.receiver}")
    return "\n".join(out) + "\n"


def equivalent(a: Scenario, b: Scenario, tol: float = 1e-12) -> bool:
    """Structural equality: layouts, states, steps and bases up to ``tol``."""
    if a.layout != b.layout or len(a.steps) != len(b.steps) or a.comms != b.comms:
        return False
    if np.abs(a.initial.amps - b.initial.amps).max() > tol:
        return False
    for x, y in zip(a.steps, b.steps):
        mx, my = x.measurement, y.measurement
        if (x.time, x.agent, x.policy) != (y.time, y.agent, y.policy):
            return False
        if mx.targets != my.targets or mx.labels != my.labels:
            return False
        for lbl in mx.labels:
            d = mx.local_projector(lbl).matrix - my.local_projector(lbl).matrix
            if np.abs(d).max() > tol:
                return False
        if set(x.prep) != set(y.prep):
            return False
        for lbl in x.prep:
            px, py = x.prep[lbl], y.prep[lbl]
            if px.register != py.register or np.abs(px.state.amps - py.state.amps).max() > tol:
                return False
    return True


def load_builtin(name: str) -> str:
    return files("wfsim.data").joinpath(f"{name}.scn").read_text()
