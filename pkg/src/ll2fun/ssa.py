"""Control-flow analysis over parsed functions.

Produces everything the translator needs: the CFG, per-block parameter
lists (phi results first, then live-in registers in first-use order, then
the machine state), natural-loop structure, and a definition-before-use
ordering of the emission units.

Loops are found through dominators (a back edge is an edge whose target
dominates its source).  Irreducible flow, multi-exit loops, and loops the
five-function translation scheme cannot express are rejected with a
diagnostic rather than silently mistranslated.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import AnalysisError
from .ll_parser import BasicBlock, Br, LlvmFunction, Operand, Reg, Ret, register_kinds


@dataclass(frozen=True)
class ControlFlowGraph:
    entry: str
    nodes: tuple[str, ...]                 # block labels in function order
    edges: dict[str, tuple[str, ...]]      # label -> successor labels
    preds: dict[str, tuple[str, ...]]      # label -> predecessor labels


@dataclass(frozen=True)
class BlockSignature:
    label: str
    phi_params: tuple[str, ...]   # registers defined by this block's phis, in phi order
    flow_params: tuple[str, ...]  # live-in registers, first-use order
    kinds: dict[str, str]         # kind of every parameter register

    @property
    def params(self) -> tuple[str, ...]:
        """Full value-parameter list (the machine state is appended last by
        the translator)."""
        return self.phi_params + self.flow_params


@dataclass(frozen=True)
class LoopInfo:
    index: int                    # detection order, innermost first
    header: str
    latch: str
    body: tuple[str, ...]         # block labels, function order
    carried: tuple[str, ...]      # the header's phi registers
    exit: str
    exit_cond: str                # register tested by the latch branch
    exit_when_true: bool          # True: branch-true leaves the loop
    preheader: str                # unique predecessor outside the body
    guarded: bool                 # preheader conditionally skips the loop


# Emission units, in the order the translator must write them out.

@dataclass(frozen=True)
class BlockUnit:
    label: str


@dataclass(frozen=True)
class CliqueUnit:
    loop: LoopInfo


@dataclass(frozen=True)
class DriverUnit:
    pass


Unit = BlockUnit | CliqueUnit | DriverUnit


@dataclass(frozen=True)
class FunctionAnalysis:
    function: LlvmFunction
    cfg: ControlFlowGraph
    signatures: dict[str, BlockSignature]
    loops: tuple[LoopInfo, ...]
    units: tuple[Unit, ...]
    innermost: dict[str, LoopInfo | None]  # block label -> innermost containing loop


# ---------------------------------------------------------------------------
# CFG
# ---------------------------------------------------------------------------

def _successors(block: BasicBlock) -> tuple[str, ...]:
    term = block.terminator
    return () if isinstance(term, Ret) else term.targets


def build_cfg(fn: LlvmFunction) -> ControlFlowGraph:
    labels = [b.label for b in fn.blocks]
    label_set = set(labels)
    edges: dict[str, tuple[str, ...]] = {}
    preds: dict[str, list[str]] = {l: [] for l in labels}
    for block in fn.blocks:
        succs = _successors(block)
        for s in succs:
            if s not in label_set:
                raise AnalysisError(f"@{fn.name}: block {block.label} branches to undefined label {s}")
        edges[block.label] = succs
        for s in succs:
            if block.label not in preds[s]:
                preds[s].append(block.label)
    entry = labels[0]
    reachable = {entry}
    work = [entry]
    while work:
        for s in edges[work.pop()]:
            if s not in reachable:
                reachable.add(s)
                work.append(s)
    dead = [l for l in labels if l not in reachable]
    if dead:
        raise AnalysisError(f"@{fn.name}: unreachable block(s): {', '.join(dead)}")
    return ControlFlowGraph(entry, tuple(labels),
                            edges, {l: tuple(ps) for l, ps in preds.items()})


def dominators(cfg: ControlFlowGraph) -> dict[str, set[str]]:
    """Iterative dominator sets; fine for the block counts we see."""
    dom: dict[str, set[str]] = {cfg.entry: {cfg.entry}}
    everything = set(cfg.nodes)
    for n in cfg.nodes:
        if n != cfg.entry:
            dom[n] = set(everything)
    changed = True
    while changed:
        changed = False
        for n in cfg.nodes:
            if n == cfg.entry:
                continue
            new = {n} | set.intersection(*(dom[p] for p in cfg.preds[n]))
            if new != dom[n]:
                dom[n] = new
                changed = True
    return dom


# ---------------------------------------------------------------------------
# Liveness and block signatures
# ---------------------------------------------------------------------------

def _operand_regs(operands: tuple[Operand, ...]) -> list[str]:
    return [op.name for op in operands if isinstance(op, Reg)]


def _block_use_def(block: BasicBlock) -> tuple[set[str], set[str]]:
    """(use-before-def, defs) over the block's non-phi code; phi arguments
    count as uses at the end of the predecessor, not here."""
    used: set[str] = set()
    defs: set[str] = {phi.result for phi in block.phis}
    for inst in block.body:
        for r in _operand_regs(inst.operands):
            if r not in defs:
                used.add(r)
        if inst.result is not None:
            defs.add(inst.result)
    term = block.terminator
    if isinstance(term, Ret):
        for r in _operand_regs((term.value,)):
            if r not in defs:
                used.add(r)
    elif term.cond is not None:
        for r in _operand_regs((term.cond,)):
            if r not in defs:
                used.add(r)
    return used, defs


def _phi_uses_on_edge(succ: BasicBlock, pred_label: str) -> set[str]:
    out: set[str] = set()
    for phi in succ.phis:
        for value, label in phi.incomings:
            if label == pred_label and isinstance(value, Reg):
                out.add(value.name)
    return out


def compute_liveness(cfg: ControlFlowGraph, fn: LlvmFunction) -> dict[str, set[str]]:
    """live-in set per block: registers read in or below the block but
    defined above it."""
    blocks = {b.label: b for b in fn.blocks}
    use: dict[str, set[str]] = {}
    defs: dict[str, set[str]] = {}
    phi_results: dict[str, set[str]] = {}
    for label, b in blocks.items():
        use[label], defs[label] = _block_use_def(b)
        phi_results[label] = {phi.result for phi in b.phis}
    live_in: dict[str, set[str]] = {l: set() for l in cfg.nodes}
    changed = True
    while changed:
        changed = False
        for label in reversed(cfg.nodes):
            live_out: set[str] = set()
            for s in cfg.edges[label]:
                live_out |= live_in[s] - phi_results[s]
                live_out |= _phi_uses_on_edge(blocks[s], label)
            new_in = use[label] | (live_out - defs[label])
            if new_in != live_in[label]:
                live_in[label] = new_in
                changed = True
    return live_in


def _first_use_order(fn: LlvmFunction, start: str, wanted: set[str]) -> list[str]:
    """Order `wanted` by first textual operand occurrence scanning from the
    given block onward (wrapping), so emitted parameter lists are stable."""
    labels = [b.label for b in fn.blocks]
    i = labels.index(start)
    rotation = fn.blocks[i:] + fn.blocks[:i]
    order: list[str] = []
    placed = set()

    def visit(operands: tuple[Operand, ...]):
        for r in _operand_regs(operands):
            if r in wanted and r not in placed:
                placed.add(r)
                order.append(r)

    for block in rotation:
        for phi in block.phis:
            visit(tuple(v for v, _ in phi.incomings))
        for inst in block.body:
            visit(inst.operands)
        term = block.terminator
        if isinstance(term, Ret):
            visit((term.value,))
        elif term.cond is not None:
            visit((term.cond,))
    missing = wanted - placed
    if missing:  # live-in but never read as an operand cannot happen
        raise AnalysisError(f"registers {sorted(missing)} live into {start} but never used")
    return order


def compute_block_params(cfg: ControlFlowGraph, fn: LlvmFunction) -> dict[str, BlockSignature]:
    kinds = register_kinds(fn)
    live_in = compute_liveness(cfg, fn)
    param_names = {name for name, _ in fn.params}
    undefined = set()
    for regs in live_in.values():
        undefined |= {r for r in regs if r not in kinds}
    entry_leaks = live_in[cfg.entry] - param_names
    if undefined or entry_leaks:
        bad = sorted(undefined | entry_leaks)
        raise AnalysisError(
            f"@{fn.name}: register(s) used with no definition on some path: "
            + ", ".join("%" + r for r in bad))
    signatures: dict[str, BlockSignature] = {}
    for block in fn.blocks:
        flow = _first_use_order(fn, block.label, set(live_in[block.label]))
        phi_params = tuple(phi.result for phi in block.phis)
        sig_kinds = {r: kinds[r] for r in phi_params + tuple(flow)}
        signatures[block.label] = BlockSignature(block.label, phi_params, tuple(flow), sig_kinds)
    return signatures


# ---------------------------------------------------------------------------
# Loops
# ---------------------------------------------------------------------------

def detect_loops(cfg: ControlFlowGraph, fn: LlvmFunction) -> tuple[LoopInfo, ...]:
    dom = dominators(cfg)
    back_edges = [(u, v) for u in cfg.nodes for v in cfg.edges[u] if v in dom[u]]

    headers = [v for _, v in back_edges]
    for h in headers:
        if headers.count(h) > 1:
            raise AnalysisError(f"@{fn.name}: block {h} heads more than one back edge")

    # Removing the back edges must leave the graph acyclic, otherwise the
    # flow is irreducible.
    removed = set(back_edges)
    color: dict[str, int] = {}

    def dfs(n: str):
        color[n] = 1
        for s in cfg.edges[n]:
            if (n, s) in removed:
                continue
            if color.get(s) == 1:
                raise AnalysisError(
                    f"@{fn.name}: irreducible control flow (cycle through {s} "
                    "not headed by a dominator)")
            if s not in color:
                dfs(s)
        color[n] = 2

    dfs(cfg.entry)

    blocks = {b.label: b for b in fn.blocks}
    raw: list[dict] = []
    for latch, header in back_edges:
        body = {header}
        work = [latch]
        while work:
            n = work.pop()
            if n in body:
                continue
            body.add(n)
            work.extend(p for p in cfg.preds[n] if p not in body)
        raw.append({"header": header, "latch": latch, "body": body})

    raw.sort(key=lambda L: (len(L["body"]), cfg.nodes.index(L["header"])))
    for a in raw:
        for b in raw:
            if a is b:
                continue
            inter = a["body"] & b["body"]
            if inter and not (a["body"] <= b["body"] or b["body"] <= a["body"]):
                raise AnalysisError(f"@{fn.name}: loops overlap without nesting")

    loops: list[LoopInfo] = []
    for index, L in enumerate(raw):
        header, latch, body = L["header"], L["latch"], L["body"]
        exits = [(u, s) for u in sorted(body, key=cfg.nodes.index)
                 for s in cfg.edges[u] if s not in body]
        if not exits:
            raise AnalysisError(f"@{fn.name}: loop at {header} has no exit")
        if len(exits) > 1 or exits[0][0] != latch:
            raise AnalysisError(
                f"@{fn.name}: loop at {header} must have a single exit from its "
                f"latch; found exits {exits}")
        exit_label = exits[0][1]
        term = blocks[latch].terminator
        if not isinstance(term, Br) or term.cond is None:
            raise AnalysisError(
                f"@{fn.name}: loop at {header}: latch {latch} must end in a "
                "conditional branch between header and exit")
        if set(term.targets) != {header, exit_label}:
            raise AnalysisError(
                f"@{fn.name}: loop at {header}: latch branch must target the "
                "header and the exit")
        if not isinstance(term.cond, Reg):
            raise AnalysisError(f"@{fn.name}: loop at {header}: constant latch condition")
        outside_edges = [p for p in cfg.preds[header] if p not in body]
        if len(outside_edges) != 1:
            raise AnalysisError(
                f"@{fn.name}: loop at {header} needs exactly one entry edge from "
                f"outside; found {outside_edges}")
        preheader = outside_edges[0]
        pre_term = blocks[preheader].terminator
        if not isinstance(pre_term, Br):
            raise AnalysisError(f"@{fn.name}: loop preheader {preheader} must branch")
        if pre_term.cond is None:
            guarded = False
        else:
            if set(pre_term.targets) != {header, exit_label}:
                raise AnalysisError(
                    f"@{fn.name}: guard {preheader} must branch between the loop "
                    f"header {header} and its exit {exit_label}")
            guarded = True
        loops.append(LoopInfo(
            index=index,
            header=header,
            latch=latch,
            body=tuple(sorted(body, key=cfg.nodes.index)),
            carried=tuple(phi.result for phi in blocks[header].phis),
            exit=exit_label,
            exit_cond=term.cond.name,
            exit_when_true=(term.targets[0] == exit_label),
            preheader=preheader,
            guarded=guarded,
        ))

    headers_set = {L.header for L in loops}
    latches_set = {L.latch for L in loops}
    for L in loops:
        if L.preheader in headers_set or L.preheader in latches_set:
            raise AnalysisError(
                f"@{fn.name}: loop at {L.header} enters directly from loop "
                f"header/latch {L.preheader}; a dedicated preheader block is required")
    return tuple(loops)


def innermost_loops(fn: LlvmFunction, loops: tuple[LoopInfo, ...]) -> dict[str, LoopInfo | None]:
    """Innermost loop containing each block (loops are sorted smallest
    first, so the first hit wins)."""
    out: dict[str, LoopInfo | None] = {}
    for block in fn.blocks:
        out[block.label] = next((L for L in loops if block.label in L.body), None)
    return out


# ---------------------------------------------------------------------------
# Emission order
# ---------------------------------------------------------------------------

def order_definitions(cfg: ControlFlowGraph, fn: LlvmFunction,
                      loops: tuple[LoopInfo, ...]) -> tuple[Unit, ...]:
    """Callee-before-caller order over the emission units, loop cliques kept
    contiguous.  Depth-first post-order from the driver."""
    by_header = {L.header: L for L in loops}
    by_preheader = {L.preheader: L for L in loops}
    innermost = innermost_loops(fn, loops)

    def unit_for(label: str) -> Unit:
        if label in by_preheader:
            return CliqueUnit(by_preheader[label])
        if label in by_header:
            # only the latch and the preheader reach a header; both are
            # internal to the clique
            raise AnalysisError(f"@{fn.name}: unexpected branch into loop header {label}")
        return BlockUnit(label)

    def block_deps(label: str) -> list[Unit]:
        """Units the translated block calls: its successors, except the
        edges a loop frame absorbs (latch->header and latch->exit)."""
        here = innermost[label]
        deps: list[Unit] = []
        for s in cfg.edges[label]:
            if here is not None and label == here.latch and s in (here.header, here.exit):
                continue
            deps.append(unit_for(s))
        return deps

    def unit_deps(unit: Unit) -> list[Unit]:
        if isinstance(unit, DriverUnit):
            return [unit_for(cfg.entry)]
        if isinstance(unit, CliqueUnit):
            L = unit.loop
            # continue calls the exit's unit; step (the header's code) calls
            # whatever the header branches to inside the body
            return [unit_for(L.exit)] + block_deps(L.header)
        return block_deps(unit.label)

    ordered: list[Unit] = []
    state: dict[Unit, int] = {}

    def visit(unit: Unit):
        mark = state.get(unit)
        if mark == 2:
            return
        if mark == 1:
            raise AnalysisError(f"@{fn.name}: emission units form a cycle at {unit}")
        state[unit] = 1
        for dep in unit_deps(unit):
            visit(dep)
        state[unit] = 2
        ordered.append(unit)

    visit(DriverUnit())
    return tuple(ordered)


def analyze_function(fn: LlvmFunction) -> FunctionAnalysis:
    cfg = build_cfg(fn)
    signatures = compute_block_params(cfg, fn)
    loops = detect_loops(cfg, fn)
    units = order_definitions(cfg, fn, loops)
    return FunctionAnalysis(fn, cfg, signatures, loops, units, innermost_loops(fn, loops))


# ---------------------------------------------------------------------------
# Debug report
# ---------------------------------------------------------------------------

def analysis_report(analysis: FunctionAnalysis) -> str:
    """Line-oriented dump of the CFG, signatures, and loops for --dump-analysis."""
    fn = analysis.function
    lines = [f"function {fn.name}"]
    for label in analysis.cfg.nodes:
        succs = ", ".join(analysis.cfg.edges[label]) or "-"
        lines.append(f"  block {label} -> {succs}")
        sig = analysis.signatures[label]
        lines.append(f"    phi-params:  {' '.join(sig.phi_params) or '-'}")
        lines.append(f"    flow-params: {' '.join(sig.flow_params) or '-'}")
    for L in analysis.loops:
        pol = "true" if L.exit_when_true else "false"
        lines.append(f"  loop {L.index}: header {L.header} latch {L.latch} "
                     f"exit {L.exit} when %{L.exit_cond} is {pol} "
                     f"preheader {L.preheader}{' (guarded)' if L.guarded else ''}")
    return "\n".join(lines)
