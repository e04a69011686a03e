"""Text tables and flat ``key=value`` record streams.

Every report is a list of sections; each section is a list of records with
a fixed key order. The kv form prints floats with 17 significant digits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction


@dataclass
class Section:
    title: str
    records: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def add(self, **kv) -> None:
        self.records.append(kv)


def _kv_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, complex):
        return f"{format(v.real, '.17g')}{format(v.imag, '+.17g')}j"
    s = str(v)
    if any(c.isspace() for c in s) or s == "" or '"' in s or "=" in s:
        return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'
    return s


def render_kv(sections: list[Section]) -> str:
    out = []
    for sec in sections:
        out.append(f"# {sec.title}")
        out.extend(f"# {n}" for n in sec.notes)
        for rec in sec.records:
            out.append(" ".join(f"{k}={_kv_value(v)}" for k, v in rec.items()))
    return "\n".join(out) + "\n"


def nice(x: float, tol: float = 1e-10) -> str:
    """Short decimal, with a small-denominator fraction when one fits."""
    if isinstance(x, bool):
        return "yes" if x else "no"
    if isinstance(x, complex):
        if abs(x.imag) <= tol:
            return nice(x.real, tol)
        return f"{x.real:.12g}{x.imag:+.12g}j"
    if not isinstance(x, float):
        return str(x)
    fr = Fraction(x).limit_denominator(1000)
    txt = f"{x:.12g}"
    if abs(float(fr) - x) <= tol and fr.denominator > 1:
        txt += f" (={fr})"
    elif abs(x) <= tol:
        txt = "0"
    return txt


def render_text(sections: list[Section]) -> str:
    out = []
    for sec in sections:
        out.append(f"== {sec.title} ==")
        out.extend(f"   {n}" for n in sec.notes)
        if not sec.records:
            if not sec.notes:
                out.append("   (none)")
            out.append("")
            continue
        keys = list(dict.fromkeys(k for r in sec.records for k in r if k != "record"))
        rows = [[nice(r.get(k, "")) for k in keys] for r in sec.records]
        widths = [max(len(k), *(len(row[i]) for row in rows)) for i, k in enumerate(keys)]
        out.append("   " + "  ".join(k.ljust(w) for k, w in zip(keys, widths)).rstrip())
        for row in rows:
            out.append("   " + "  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        out.append("")
    return "\n".join(out)
