"""Build a semantic graph from a directory of Python sources.

Entities come from the stdlib ``ast`` module. Relations are resolved by name
only: no type inference, no data flow. Anything that cannot be resolved to a
single in-repo entity becomes a :class:`Diagnostic` instead of an edge.
"""

from __future__ import annotations

import ast
import builtins
import fnmatch
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .graph import NodeKind, RelationKind, Rsg, RsgEdge, RsgNode, inherits_reachable, validate

log = logging.getLogger(__name__)

_BUILTIN_NAMES = frozenset(dir(builtins))


class ParseFailure(Exception):
    def __init__(self, file_path: str, line: int, col: int, message: str):
        super().__init__(f"{file_path}:{line}:{col}: {message}")
        self.file_path = file_path
        self.line = line
        self.col = col
        self.message = message


class BuildError(Exception):
    def __init__(self, message: str, diagnostics: list["Diagnostic"]):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class Diagnostic:
    kind: str  # syntax-error | external | unresolved | ambiguous | cycle
    file_path: str
    line: int
    name: str
    message: str = ""

    def to_dict(self) -> dict:
        return {"kind": self.kind, "file_path": self.file_path, "line": self.line,
                "name": self.name, "message": self.message}


@dataclass
class SourceUnit:
    file_path: str
    raw_text: str
    line_count: int = -1

    def __post_init__(self):
        self.file_path = self.file_path.replace("\\", "/")
        if self.line_count < 0:
            self.line_count = len(self.raw_text.splitlines())


@dataclass
class Entity:
    kind: NodeKind
    name: str
    local_name: str  # dotted path inside the module, e.g. "C.m" or "outer.inner"
    span: tuple[int, int]
    source_text: str
    signature: str = ""
    parents: list[str] = field(default_factory=list)  # declared bases, classes only
    owner: Optional[str] = None  # local_name of the owning class, methods only
    enclosing: Optional[str] = None  # local_name of the nearest enclosing def/class
    top_level: bool = False
    node_id: int = -1
    parent_ids: list[int] = field(default_factory=list)  # resolved bases, declaration order
    ast_node: Optional[ast.AST] = field(default=None, repr=False, compare=False)


@dataclass
class ParsedEntities:
    file_path: str
    functions: list[Entity]
    methods: list[Entity]
    classes: list[Entity]
    residue_script_text: str
    residue_lines: list[int]
    tree: Optional[ast.Module] = field(default=None, repr=False)

    def entities(self) -> list[Entity]:
        """All entities in source order (outer before inner on the same line)."""
        ents = self.functions + self.methods + self.classes
        return sorted(ents, key=lambda e: (e.span[0], e.local_name.count("."), e.local_name))


@dataclass
class BuildOptions:
    include: tuple[str, ...] = ("*.py",)
    exclude: tuple[str, ...] = (".*", "*/.*", "__pycache__/*", "*/__pycache__/*")


def _span_of(node) -> tuple[int, int]:
    start = node.lineno
    for dec in getattr(node, "decorator_list", []):
        start = min(start, dec.lineno)
    return start, node.end_lineno


def parse_source_unit(unit: SourceUnit) -> ParsedEntities:
    """Extract functions, methods and classes; the remainder is the script residue."""
    try:
        tree = ast.parse(unit.raw_text, filename=unit.file_path)
    except SyntaxError as exc:
        raise ParseFailure(unit.file_path, exc.lineno or 0, exc.offset or 0, exc.msg) from None
    lines = unit.raw_text.splitlines()
    functions, methods, classes = [], [], []

    def text_of(span):
        return "\n".join(lines[span[0] - 1: span[1]])

    def visit(body, prefix: str, in_class: Optional[str], enclosing: Optional[str]):
        for stmt in body:
            if isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef)):
                local = f"{prefix}{stmt.name}"
                span = _span_of(stmt)
                ent = Entity(
                    kind=NodeKind.METHOD if in_class is not None else NodeKind.FUNCTION,
                    name=stmt.name,
                    local_name=local,
                    span=span,
                    source_text=text_of(span),
                    signature=f"{stmt.name}({ast.unparse(stmt.args)})",
                    owner=in_class,
                    enclosing=enclosing,
                    top_level=enclosing is None,
                    ast_node=stmt,
                )
                (methods if in_class is not None else functions).append(ent)
                visit(stmt.body, local + ".", None, local)
            elif isinstance(stmt, ast.ClassDef):
                local = f"{prefix}{stmt.name}"
                span = _span_of(stmt)
                classes.append(Entity(
                    kind=NodeKind.CLASS,
                    name=stmt.name,
                    local_name=local,
                    span=span,
                    source_text=text_of(span),
                    parents=[ast.unparse(b) for b in stmt.bases],
                    enclosing=enclosing,
                    top_level=enclosing is None,
                    ast_node=stmt,
                ))
                visit(stmt.body, local + ".", local, local)
            else:
                # conditional / guarded definitions stay in the current scope
                for attr in ("body", "orelse", "finalbody", "handlers"):
                    sub = getattr(stmt, attr, None)
                    if isinstance(sub, list) and sub and isinstance(sub[0], ast.AST):
                        visit(sub, prefix, in_class, enclosing)
                if isinstance(stmt, ast.Match):
                    for case in stmt.cases:
                        visit(case.body, prefix, in_class, enclosing)

    visit(tree.body, "", None, None)

    removed = set()
    for ent in functions + classes:
        if ent.top_level:
            removed.update(range(ent.span[0], ent.span[1] + 1))
    residue_lines = [i for i in range(1, len(lines) + 1) if i not in removed]
    residue = "\n".join(lines[i - 1] for i in residue_lines)
    return ParsedEntities(unit.file_path, functions, methods, classes, residue, residue_lines, tree)


def module_name_for(file_path: str) -> str:
    parts = file_path[:-3].split("/") if file_path.endswith(".py") else file_path.split("/")
    if parts[-1] == "__init__" and len(parts) > 1:
        parts = parts[:-1]
    return ".".join(parts)


# -- resolution context ------------------------------------------------------


@dataclass(frozen=True)
class ModuleRef:
    module: str


@dataclass(frozen=True)
class NodeRef:
    node_id: int


@dataclass
class FileContext:
    file_path: str
    module: str
    is_package: bool
    script_id: int
    parsed: ParsedEntities
    entity_ids: dict[str, int] = field(default_factory=dict)  # local_name -> node id
    top_defs: dict[str, list[int]] = field(default_factory=dict)  # module-level names
    global_bindings: dict[str, object] = field(default_factory=dict)
    local_bindings: dict[str, dict[str, object]] = field(default_factory=dict)  # def local_name -> bindings
    nested_defs: dict[str, dict[str, list[int]]] = field(default_factory=dict)  # def local_name -> defs inside it

    @property
    def package(self) -> str:
        if self.is_package:
            return self.module
        return self.module.rpartition(".")[0]


@dataclass
class RepoContext:
    files: dict[str, FileContext] = field(default_factory=dict)
    modules: dict[str, FileContext] = field(default_factory=dict)
    node_owner: dict[int, FileContext] = field(default_factory=dict)
    node_entity: dict[int, Entity] = field(default_factory=dict)
    class_methods: dict[int, dict[str, list[int]]] = field(default_factory=dict)
    diagnostics: list[Diagnostic] = field(default_factory=list)

    @property
    def top_packages(self) -> set[str]:
        return {m.split(".")[0] for m in self.modules}

    def diag(self, kind, file_path, line, name, message=""):
        self.diagnostics.append(Diagnostic(kind, file_path, line, name, message))


def _absolute_module(ctx: FileContext, module: Optional[str], level: int) -> Optional[str]:
    if level == 0:
        return module
    base = ctx.package.split(".") if ctx.package else []
    if level - 1 > len(base):
        return None
    base = base[: len(base) - (level - 1)]
    if module:
        base = base + module.split(".")
    return ".".join(base) if base else None


class _Resolver:
    def __init__(self, graph: Rsg, repo: RepoContext):
        self.graph = graph
        self.repo = repo

    def module_attr(self, module: str, name: str, _seen=None):
        """Resolve ``module.name`` to a ModuleRef, a NodeRef, "ambiguous" or None."""
        sub = f"{module}.{name}"
        if sub in self.repo.modules:
            return ModuleRef(sub)
        ctx = self.repo.modules.get(module)
        if ctx is None:
            return None
        defs = ctx.top_defs.get(name, [])
        if len(defs) == 1:
            return NodeRef(defs[0])
        if len(defs) > 1:
            return "ambiguous"
        seen = _seen or set()
        if (module, name) in seen:
            return None
        seen.add((module, name))
        binding = ctx.global_bindings.get(name)
        if isinstance(binding, tuple) and binding[0] == "from":
            # re-export: follow the importing module's own binding
            _, src_module, src_name = binding
            return self.module_attr(src_module, src_name, seen)
        if isinstance(binding, ModuleRef):
            return binding
        return None

    def lookup_name(self, ctx: FileContext, scope: Optional[str], name: str):
        """Name lookup for code inside def/class ``scope`` (None = module level)."""
        cur = scope
        while cur is not None:
            ent = self.repo.node_entity[ctx.entity_ids[cur]]
            if ent.kind is not NodeKind.CLASS:
                defs = ctx.nested_defs.get(cur, {}).get(name, [])
                if len(defs) == 1:
                    return NodeRef(defs[0])
                if len(defs) > 1:
                    return "ambiguous"
                b = ctx.local_bindings.get(cur, {}).get(name)
                if b is not None:
                    return self._binding_target(b)
            cur = ent.enclosing
        defs = ctx.top_defs.get(name, [])
        if len(defs) == 1:
            return NodeRef(defs[0])
        if len(defs) > 1:
            return "ambiguous"
        b = ctx.global_bindings.get(name)
        if b is not None:
            return self._binding_target(b)
        return None

    def _binding_target(self, binding):
        if isinstance(binding, tuple) and binding[0] == "from":
            return self.module_attr(binding[1], binding[2]) or "unresolved-import"
        return binding

    def class_member(self, class_id: int, name: str, include_self=True):
        """Left-to-right depth-first lookup through Inherits ancestors."""
        order, stack, seen = [], [class_id], set()
        while stack:
            cur = stack.pop()
            if cur in seen:
                continue
            seen.add(cur)
            order.append(cur)
            stack.extend(reversed(self.repo.node_entity[cur].parent_ids))
        if not include_self:
            order = order[1:]
        for cid in order:
            found = self.repo.class_methods.get(cid, {}).get(name, [])
            if len(found) == 1:
                return NodeRef(found[0])
            if len(found) > 1:
                return "ambiguous"
        return None

    def resolve_expr(self, ctx: FileContext, scope: Optional[str], expr: ast.AST):
        """Resolve a dotted-name expression to a target; non-dotted expressions give None."""
        parts = []
        cur = expr
        while isinstance(cur, ast.Attribute):
            parts.append(cur.attr)
            cur = cur.value
        if not isinstance(cur, ast.Name):
            return None
        parts.append(cur.id)
        parts.reverse()
        target = self.lookup_name(ctx, scope, parts[0])
        for attr in parts[1:]:
            if isinstance(target, ModuleRef):
                target = self.module_attr(target.module, attr)
            elif isinstance(target, NodeRef) and self.graph.nodes[target.node_id].kind is NodeKind.CLASS:
                target = self.class_member(target.node_id, attr)
            else:
                return None
        return target


def _collect_imports(stmts: Iterable[ast.AST]):
    """Import statements directly in a body, descending into non-def compound statements."""
    for stmt in stmts:
        if isinstance(stmt, (ast.Import, ast.ImportFrom)):
            yield stmt
        elif isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
            continue
        else:
            for attr in ("body", "orelse", "finalbody", "handlers"):
                sub = getattr(stmt, attr, None)
                if isinstance(sub, list) and sub and isinstance(sub[0], ast.AST):
                    yield from _collect_imports(sub)
            if isinstance(stmt, ast.Match):
                for case in stmt.cases:
                    yield from _collect_imports(case.body)


def _bindings_for(ctx: FileContext, stmts, repo: RepoContext) -> dict[str, object]:
    out: dict[str, object] = {}
    for stmt in _collect_imports(stmts):
        if isinstance(stmt, ast.Import):
            for alias in stmt.names:
                if alias.asname:
                    out[alias.asname] = ModuleRef(alias.name)
                else:
                    top = alias.name.split(".")[0]
                    out[top] = ModuleRef(top)
        else:
            module = _absolute_module(ctx, stmt.module, stmt.level)
            if module is None:
                continue
            for alias in stmt.names:
                if alias.name == "*":
                    continue
                out[alias.asname or alias.name] = ("from", module, alias.name)
    return out


def resolve_imports(ctx: FileContext, graph: Rsg, repo: RepoContext) -> list[RsgEdge]:
    """Imports edges from the file's Script node to every in-repo entity it imports."""
    resolver = _Resolver(graph, repo)
    edges: list[RsgEdge] = []
    top_packages = repo.top_packages
    path = ctx.file_path

    def add(dst: int):
        edge = RsgEdge(ctx.script_id, dst, RelationKind.IMPORTS)
        if edge not in edges and dst != ctx.script_id:
            edges.append(edge)

    for stmt in ast.walk(ctx.parsed.tree):
        if isinstance(stmt, ast.Import):
            for alias in stmt.names:
                if alias.name in repo.modules:
                    add(repo.modules[alias.name].script_id)
                elif alias.name.split(".")[0] in top_packages:
                    repo.diag("unresolved", path, stmt.lineno, alias.name, "module not found in repository")
                else:
                    repo.diag("external", path, stmt.lineno, alias.name)
        elif isinstance(stmt, ast.ImportFrom):
            module = _absolute_module(ctx, stmt.module, stmt.level)
            label = "." * stmt.level + (stmt.module or "")
            if module is None:
                repo.diag("unresolved", path, stmt.lineno, label, "relative import beyond repository root")
                continue
            if module not in repo.modules and not any(f"{module}.{a.name}" in repo.modules for a in stmt.names):
                if stmt.level == 0 and module.split(".")[0] not in top_packages:
                    repo.diag("external", path, stmt.lineno, module)
                else:
                    repo.diag("unresolved", path, stmt.lineno, module, "module not found in repository")
                continue
            for alias in stmt.names:
                if alias.name == "*":
                    if module in repo.modules:
                        add(repo.modules[module].script_id)
                    continue
                target = resolver.module_attr(module, alias.name)
                if isinstance(target, ModuleRef):
                    add(repo.modules[target.module].script_id)
                elif isinstance(target, NodeRef):
                    add(target.node_id)
                elif target == "ambiguous":
                    repo.diag("ambiguous", path, stmt.lineno, f"{module}.{alias.name}", "name defined more than once")
                else:
                    repo.diag("unresolved", path, stmt.lineno, f"{module}.{alias.name}")
    return edges


def build_hierarchy(graph: Rsg, repo: RepoContext) -> list[RsgEdge]:
    """Inherits edges for declared bases that resolve to in-repo classes."""
    resolver = _Resolver(graph, repo)
    added = []
    for node in graph.nodes:
        if node.kind is not NodeKind.CLASS:
            continue
        ent = repo.node_entity[node.id]
        ctx = repo.node_owner[node.id]
        parent_ids = []
        for base in ent.ast_node.bases:
            label = ast.unparse(base)
            target = resolver.resolve_expr(ctx, ent.enclosing, base)
            if isinstance(target, NodeRef) and graph.nodes[target.node_id].kind is NodeKind.CLASS:
                pid = target.node_id
                if pid == node.id or inherits_reachable(graph, pid, node.id):
                    repo.diag("cycle", ctx.file_path, ent.span[0], label,
                              f"Inherits {node.qualified_name} -> {graph.nodes[pid].qualified_name} would close a cycle")
                    continue
                edge = RsgEdge(node.id, pid, RelationKind.INHERITS)
                if graph.add_edge(edge):
                    added.append(edge)
                parent_ids.append(pid)
            elif target == "ambiguous":
                repo.diag("ambiguous", ctx.file_path, ent.span[0], label)
            elif target is None and isinstance(base, ast.Name) and base.id in _BUILTIN_NAMES:
                repo.diag("external", ctx.file_path, ent.span[0], label)
            elif isinstance(target, ModuleRef) or target is None or target == "unresolved-import":
                kind = "external" if _is_external(base, ctx, resolver, repo) else "unresolved"
                repo.diag(kind, ctx.file_path, ent.span[0], label)
        ent.parent_ids = parent_ids
    return added


def _is_external(expr, ctx, resolver, repo) -> bool:
    root = expr
    while isinstance(root, ast.Attribute):
        root = root.value
    if not isinstance(root, ast.Name):
        return False
    binding = resolver.lookup_name(ctx, None, root.id)
    if isinstance(binding, ModuleRef):
        return binding.module.split(".")[0] not in repo.top_packages
    raw = ctx.global_bindings.get(root.id)
    if isinstance(raw, tuple):
        return raw[1].split(".")[0] not in repo.top_packages
    return False


def _calls_in(def_node: ast.AST):
    """Call expressions in a def body, not descending into nested defs/classes."""
    stack = list(ast.iter_child_nodes(def_node))
    skip = set()
    if isinstance(def_node, (ast.FunctionDef, ast.AsyncFunctionDef)):
        # decorators and defaults run in the enclosing scope
        skip = {id(d) for d in def_node.decorator_list}
        skip |= {id(d) for d in def_node.args.defaults + def_node.args.kw_defaults if d is not None}
    calls = []
    while stack:
        node = stack.pop()
        if id(node) in skip:
            continue
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef, ast.Lambda)):
            continue
        if isinstance(node, ast.Call):
            calls.append(node)
        stack.extend(ast.iter_child_nodes(node))
    calls.sort(key=lambda c: (c.lineno, c.col_offset))
    return calls


def build_call_graph(graph: Rsg, repo: RepoContext) -> list[RsgEdge]:
    """Invokes edges via same-file names, imported names and ``self``/``super`` lookups."""
    resolver = _Resolver(graph, repo)
    added = []
    for node in graph.nodes:
        if node.kind not in (NodeKind.FUNCTION, NodeKind.METHOD):
            continue
        ent = repo.node_entity[node.id]
        ctx = repo.node_owner[node.id]
        owner_id = ctx.entity_ids[ent.owner] if ent.owner else None
        for call in _calls_in(ent.ast_node):
            func = call.func
            label = ast.unparse(func)
            target = None
            if isinstance(func, ast.Attribute) and isinstance(func.value, ast.Name) \
                    and func.value.id in ("self", "cls") and owner_id is not None:
                target = resolver.class_member(owner_id, func.attr)
                if target is None:
                    repo.diag("unresolved", ctx.file_path, call.lineno, label, "no such method on class or ancestors")
                    continue
            elif isinstance(func, ast.Attribute) and isinstance(func.value, ast.Call) \
                    and isinstance(func.value.func, ast.Name) and func.value.func.id == "super" \
                    and owner_id is not None:
                target = resolver.class_member(owner_id, func.attr, include_self=False)
                if target is None:
                    continue
            else:
                target = resolver.resolve_expr(ctx, ent.local_name, func)
                if target is None:
                    if isinstance(func, ast.Name) and func.id not in _BUILTIN_NAMES:
                        repo.diag("unresolved", ctx.file_path, call.lineno, label)
                    continue
            if target == "ambiguous":
                repo.diag("ambiguous", ctx.file_path, call.lineno, label, "callee defined more than once in scope")
                continue
            if not isinstance(target, NodeRef):
                continue
            callee = graph.nodes[target.node_id]
            if callee.kind is NodeKind.CLASS:
                init = resolver.class_member(callee.id, "__init__")
                if not isinstance(init, NodeRef):
                    continue
                callee = graph.nodes[init.node_id]
            if callee.kind not in (NodeKind.FUNCTION, NodeKind.METHOD):
                continue
            edge = RsgEdge(node.id, callee.id, RelationKind.INVOKES)
            if graph.add_edge(edge):
                added.append(edge)
    return added


# -- top-level build ----------------------------------------------------------


def _selected(path: str, options: BuildOptions) -> bool:
    return any(fnmatch.fnmatch(path, pat) for pat in options.include) and not any(
        fnmatch.fnmatch(path, pat) for pat in options.exclude
    )


def collect_sources(repo_root, options: Optional[BuildOptions] = None) -> dict[str, str]:
    options = options or BuildOptions()
    root = Path(repo_root)
    if not root.is_dir():
        raise BuildError(f"{repo_root} is not a directory", [])
    out = {}
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for fname in sorted(filenames):
            rel = Path(dirpath, fname).relative_to(root).as_posix()
            if _selected(rel, options):
                out[rel] = Path(dirpath, fname).read_text(encoding="utf-8", errors="replace")
    return out


def build_rsg(repo_root, options: Optional[BuildOptions] = None) -> Rsg:
    """Parse every selected file under ``repo_root`` and assemble the graph."""
    return build_rsg_from_sources(collect_sources(repo_root, options))


def build_rsg_from_sources(sources: dict[str, str]) -> Rsg:
    repo = RepoContext()
    units = [SourceUnit(path, text) for path, text in sorted(sources.items())]
    parsed: list[ParsedEntities] = []
    for unit in units:
        try:
            parsed.append(parse_source_unit(unit))
        except ParseFailure as exc:
            log.warning("skipping %s", exc)
            repo.diag("syntax-error", exc.file_path, exc.line, "", exc.message)
    if not parsed:
        raise BuildError("no parseable source files", list(repo.diagnostics))

    graph = Rsg(meta={"language": "python", "files": len(parsed)})
    used_qnames: set[str] = set()

    def unique(qname: str, line: int) -> str:
        if qname in used_qnames:
            qname = f"{qname}#{line}"
        used_qnames.add(qname)
        return qname

    for pe in parsed:
        module = module_name_for(pe.file_path)
        line_count = len(sources[pe.file_path].splitlines())
        script_id = graph.add_node(RsgNode(
            kind=NodeKind.SCRIPT,
            name=module.rpartition(".")[2],
            qualified_name=unique(module, 1),
            file_path=pe.file_path,
            span=(1, max(line_count, 1)),
            source_text=pe.residue_script_text,
        ))
        ctx = FileContext(pe.file_path, module, pe.file_path.endswith("__init__.py"), script_id, pe)
        repo.files[pe.file_path] = ctx
        repo.modules[module] = ctx
        for ent in pe.entities():
            nid = graph.add_node(RsgNode(
                kind=ent.kind,
                name=ent.name,
                qualified_name=unique(f"{module}.{ent.local_name}", ent.span[0]),
                file_path=pe.file_path,
                span=ent.span,
                source_text=ent.source_text,
                signature=ent.signature,
            ))
            ent.node_id = nid
            ctx.entity_ids.setdefault(ent.local_name, nid)
            repo.node_owner[nid] = ctx
            repo.node_entity[nid] = ent
            if ent.enclosing is None:
                ctx.top_defs.setdefault(ent.name, []).append(nid)
            elif ent.kind is not NodeKind.METHOD:
                ctx.nested_defs.setdefault(ent.enclosing, {}).setdefault(ent.name, []).append(nid)

    for ctx in repo.files.values():
        pe = ctx.parsed
        for ent in pe.entities():
            nid = ent.node_id
            graph.add_edge(RsgEdge(ctx.script_id, nid, RelationKind.ENCLOSES))
            if ent.kind is NodeKind.METHOD:
                owner_id = ctx.entity_ids[ent.owner]
                graph.add_edge(RsgEdge(owner_id, nid, RelationKind.OWNS))
                repo.class_methods.setdefault(owner_id, {}).setdefault(ent.name, []).append(nid)
        ctx.global_bindings = _bindings_for(ctx, pe.tree.body, repo)
        for ent in pe.entities():
            if ent.kind is not NodeKind.CLASS:
                ctx.local_bindings[ent.local_name] = _bindings_for(ctx, ent.ast_node.body, repo)

    for ctx in repo.files.values():
        for edge in resolve_imports(ctx, graph, repo):
            graph.add_edge(edge)
    # ancestors must be known before self./super() calls can be resolved
    build_hierarchy(graph, repo)
    build_call_graph(graph, repo)

    problems = validate(graph)
    if problems:
        raise BuildError("graph failed validation: " + "; ".join(v.message for v in problems[:5]),
                         list(repo.diagnostics))
    graph.diagnostics = repo.diagnostics
    return graph.freeze()


def write_diagnostics(diagnostics: list[Diagnostic], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in diagnostics:
            fh.write(json.dumps(d.to_dict(), sort_keys=True) + "\n")
