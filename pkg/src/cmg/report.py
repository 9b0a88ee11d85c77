"""Diffable text reports: ``key = value`` lines plus named whitespace tables.

Example::

    report = score
    auroc = 0.93125

    [table scores]
    index label score
    0 0 1.2093
    [end]
"""

from dataclasses import dataclass, field

from .errors import ParseError
from .keyvalue import format_value


@dataclass
class Report:
    scalars: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)

    def add_table(self, name, columns, rows):
        self.tables[name] = (list(columns), [list(r) for r in rows])

    def dumps(self):
        lines = [f"{k} = {format_value(v)}" for k, v in self.scalars.items()]
        for name, (columns, rows) in self.tables.items():
            lines += ["", f"[table {name}]", " ".join(columns)]
            lines += [" ".join(format_value(v) for v in row) for row in rows]
            lines.append("[end]")
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text):
        """Parse a report; every value comes back as a string."""
        rep = cls()
        lines = text.splitlines()
        i = 0
        while i < len(lines):
            line = lines[i].strip()
            i += 1
            if not line:
                continue
            if line.startswith("[table ") and line.endswith("]"):
                name = line[len("[table "):-1]
                if i >= len(lines):
                    raise ParseError(f"table {name!r} has no header", line=i)
                columns = lines[i].split()
                i += 1
                rows = []
                while True:
                    if i >= len(lines):
                        raise ParseError(f"table {name!r} is not terminated", line=i)
                    row = lines[i].strip()
                    i += 1
                    if row == "[end]":
                        break
                    cells = row.split()
                    if len(cells) != len(columns):
                        raise ParseError(f"table {name!r}: expected {len(columns)} cells", line=i)
                    rows.append(cells)
                rep.tables[name] = (columns, rows)
                continue
            if "=" not in line:
                raise ParseError(f"expected 'key = value', got {line!r}", line=i)
            key, value = (p.strip() for p in line.split("=", 1))
            if key in rep.scalars:
                raise ParseError(f"duplicate key {key!r}", line=i)
            rep.scalars[key] = value
        return rep

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())
