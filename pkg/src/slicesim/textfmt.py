"""Line-oriented structured text format used by every document the framework
reads or writes (catalogs, blueprints, topologies, scenarios, reports).

Grammar::

    # full-line comment
    <kind> <arg> <arg>...        # opens a block
      key: value                 # field line (first token ends with ':')
      <word> <tok> <tok>...      # item line, kept in order
      <kind> <arg>...            # nested block when <kind> is registered
        ...
      end
    end

Indentation is not significant; blocks are closed by ``end``.  Fields may
appear once per block.  Tokens of the form ``k=v`` on item lines are parsed
by `split_kv` on the consumer side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import SchemaError


@dataclass
class Block:
    kind: str
    args: tuple[str, ...]
    fields: dict[str, str] = field(default_factory=dict)
    items: list[tuple[str, tuple[str, ...]]] = field(default_factory=list)
    children: list["Block"] = field(default_factory=list)

    @property
    def ident(self) -> str:
        if not self.args:
            raise SchemaError(f"block '{self.kind}' missing identifier")
        return self.args[0]

    def get(self, key: str, default: str | None = None) -> str | None:
        return self.fields.get(key, default)

    def require(self, key: str) -> str:
        if key not in self.fields:
            raise SchemaError(f"block '{self.kind} {' '.join(self.args)}' missing field '{key}'")
        return self.fields[key]

    def items_of(self, word: str) -> list[tuple[str, ...]]:
        return [rest for w, rest in self.items if w == word]

    def children_of(self, kind: str) -> list["Block"]:
        return [c for c in self.children if c.kind == kind]


def parse_blocks(text: str, block_kinds: set[str], source: str = "<text>") -> list[Block]:
    """Parse a document into top-level blocks.

    `block_kinds` names the words that open a (possibly nested) block; any
    other non-field line inside a block is an item line.
    """
    top: list[Block] = []
    stack: list[Block] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        where = f"{source}:{lineno}"
        if tokens[0] == "end":
            if not stack:
                raise SchemaError(f"{where}: 'end' outside any block")
            block = stack.pop()
            if stack:
                stack[-1].children.append(block)
            else:
                top.append(block)
            continue
        if tokens[0] in block_kinds:
            stack.append(Block(kind=tokens[0], args=tuple(tokens[1:])))
            continue
        if not stack:
            raise SchemaError(f"{where}: content outside a block: {line!r}")
        if tokens[0].endswith(":"):
            key = tokens[0][:-1]
            if key in stack[-1].fields:
                raise SchemaError(f"{where}: duplicate field '{key}'")
            stack[-1].fields[key] = line.split(":", 1)[1].strip()
        else:
            stack[-1].items.append((tokens[0], tuple(tokens[1:])))
    if stack:
        raise SchemaError(f"{source}: unterminated block '{stack[-1].kind}'")
    return top


def split_kv(tokens: tuple[str, ...]) -> tuple[list[str], dict[str, str]]:
    """Split item-line tokens into positional tokens and k=v options."""
    positional: list[str] = []
    options: dict[str, str] = {}
    for tok in tokens:
        if "=" in tok:
            k, v = tok.split("=", 1)
            options[k] = v
        else:
            positional.append(tok)
    return positional, options
