"""CFG construction, block signatures, loop detection, and emission order."""

import pytest

from ll2fun import AnalysisError, build_cfg, compute_block_params, detect_loops, parse_text
from ll2fun.ssa import BlockUnit, CliqueUnit, DriverUnit, analyze_function, dominators


def _fn(module, name=None):
    return module.functions[0] if name is None else module.function(name)


# ---------------------------------------------------------------------------
# CFG
# ---------------------------------------------------------------------------

def test_cfg_of_occurrences(occurrences_module):
    cfg = build_cfg(_fn(occurrences_module))
    assert cfg.entry == "0"
    assert set(cfg.nodes) == {"0", ".lr.ph", "._crit_edge"}
    assert set(cfg.edges["0"]) == {".lr.ph", "._crit_edge"}
    assert set(cfg.edges[".lr.ph"]) == {".lr.ph", "._crit_edge"}
    assert cfg.edges["._crit_edge"] == ()


def test_cfg_single_block():
    m = parse_text("define i64 @f(i64 %x) {\n  ret i64 %x\n}\n")
    cfg = build_cfg(_fn(m))
    assert cfg.nodes == ("0",)
    assert cfg.edges["0"] == ()


def test_cfg_branch_to_missing_label():
    m = parse_text("define i64 @f(i64 %x) {\n  br label %nowhere\n}\n")
    with pytest.raises(AnalysisError, match="undefined label"):
        build_cfg(_fn(m))


def test_cfg_unreachable_block_rejected():
    src = """define i64 @f(i64 %x) {
  ret i64 %x

dead:
  ret i64 0
}
"""
    with pytest.raises(AnalysisError, match="unreachable"):
        build_cfg(_fn(parse_text(src)))


def test_dominators_of_occurrences(occurrences_module):
    cfg = build_cfg(_fn(occurrences_module))
    dom = dominators(cfg)
    assert dom[".lr.ph"] == {"0", ".lr.ph"}
    assert dom["._crit_edge"] == {"0", "._crit_edge"}


# ---------------------------------------------------------------------------
# Block signatures
# ---------------------------------------------------------------------------

def test_block_params_of_occurrences(occurrences_module):
    fn = _fn(occurrences_module)
    sigs = compute_block_params(build_cfg(fn), fn)
    crit = sigs["._crit_edge"]
    assert crit.phi_params == ("num_occur.0.lcssa",)
    assert crit.flow_params == ()
    loop = sigs[".lr.ph"]
    assert loop.phi_params == ("num_occur", "j")
    assert loop.flow_params == ("array", "n", "val")
    entry = sigs["0"]
    assert entry.phi_params == ()
    assert set(entry.flow_params) == {"array", "n", "val"}


def test_signature_kinds(occurrences_module):
    fn = _fn(occurrences_module)
    sigs = compute_block_params(build_cfg(fn), fn)
    loop = sigs[".lr.ph"]
    assert loop.kinds == {"num_occur": "i64", "j": "i64", "array": "addr",
                          "n": "i32", "val": "i64"}


def test_undefined_register_rejected():
    src = """define i64 @f(i64 %x) {
  %a = add i64 %x, %ghost
  ret i64 %a
}
"""
    m = parse_text(src)
    fn = _fn(m)
    with pytest.raises(AnalysisError, match="no definition"):
        compute_block_params(build_cfg(fn), fn)


def test_dominance_violation_rejected():
    # %late is defined on only one path into %join
    src = """define i64 @f(i64 %x, i1 %c) {
  br i1 %c, label %a, label %join

a:
  %late = add i64 %x, 1
  br label %join

join:
  %r = add i64 %late, 1
  ret i64 %r
}
"""
    fn = _fn(parse_text(src))
    with pytest.raises(AnalysisError, match="no definition"):
        compute_block_params(build_cfg(fn), fn)


def test_signatures_are_deterministic(occurrences_module):
    fn = _fn(occurrences_module)
    a = compute_block_params(build_cfg(fn), fn)
    b = compute_block_params(build_cfg(fn), fn)
    assert a == b


# ---------------------------------------------------------------------------
# Loops
# ---------------------------------------------------------------------------

def test_occurrences_loop_info(occurrences_module):
    fn = _fn(occurrences_module)
    loops = detect_loops(build_cfg(fn), fn)
    assert len(loops) == 1
    L = loops[0]
    assert (L.header, L.latch, L.exit) == (".lr.ph", ".lr.ph", "._crit_edge")
    assert L.body == (".lr.ph",)
    assert L.carried == ("num_occur", "j")
    assert L.exit_cond == "exitcond"
    assert L.exit_when_true
    assert L.preheader == "0"
    assert L.guarded


def test_loop_free_function_has_no_loops():
    m = parse_text("define i64 @f(i64 %x) {\n  ret i64 %x\n}\n")
    fn = _fn(m)
    assert detect_loops(build_cfg(fn), fn) == ()


def test_nested_loops_innermost_first(nestsum_module):
    fn = _fn(nestsum_module)
    loops = detect_loops(build_cfg(fn), fn)
    assert len(loops) == 2
    inner, outer = loops
    assert inner.index == 0 and inner.header == "inner.header"
    assert inner.body == ("inner.header",)
    assert outer.index == 1 and outer.header == "outer.header"
    assert set(outer.body) == {"outer.header", "inner.ph", "inner.header", "inner.exit"}
    assert outer.latch == "inner.exit"


def test_back_edge_removal_leaves_acyclic(nestsum_module):
    fn = _fn(nestsum_module)
    cfg = build_cfg(fn)
    loops = detect_loops(cfg, fn)
    removed = {(L.latch, L.header) for L in loops}
    seen, order = set(), []

    def dfs(n, path):
        assert n not in path, "cycle survived back-edge removal"
        if n in seen:
            return
        seen.add(n)
        for s in cfg.edges[n]:
            if (n, s) not in removed:
                dfs(s, path | {n})
        order.append(n)

    dfs(cfg.entry, frozenset())
    assert set(order) == set(cfg.nodes)


def test_irreducible_flow_rejected():
    src = """define i64 @f(i1 %c) {
  br i1 %c, label %a, label %b

a:
  br label %b

b:
  br i1 %c, label %a, label %out

out:
  ret i64 0
}
"""
    fn = _fn(parse_text(src))
    with pytest.raises(AnalysisError, match="irreducible"):
        detect_loops(build_cfg(fn), fn)


def test_multi_exit_loop_rejected():
    src = """define i64 @f(i32 %n, i1 %c) {
  br label %loop

loop:
  %j = phi i32 [ %j.next, %latch ], [ 0, %0 ]
  br i1 %c, label %out, label %latch

latch:
  %j.next = add i32 %j, 1
  %e = icmp eq i32 %j.next, %n
  br i1 %e, label %out, label %loop

out:
  %r = phi i32 [ %j, %loop ], [ %j.next, %latch ]
  %z = zext i32 %r to i64
  ret i64 %z
}
"""
    fn = _fn(parse_text(src))
    with pytest.raises(AnalysisError, match="single exit"):
        detect_loops(build_cfg(fn), fn)


def test_infinite_loop_rejected():
    src = """define i64 @f(i32 %n) {
  br label %loop

loop:
  br label %loop
}
"""
    fn = _fn(parse_text(src))
    with pytest.raises(AnalysisError, match="no exit"):
        detect_loops(build_cfg(fn), fn)


def test_guard_into_wrong_block_rejected():
    src = """define i64 @f(i32 %n, i1 %c) {
  br i1 %c, label %elsewhere, label %loop

elsewhere:
  ret i64 7

loop:
  %j = phi i32 [ %j.next, %loop ], [ 0, %0 ]
  %j.next = add i32 %j, 1
  %e = icmp eq i32 %j.next, %n
  br i1 %e, label %out, label %loop

out:
  ret i64 0
}
"""
    fn = _fn(parse_text(src))
    with pytest.raises(AnalysisError, match="guard"):
        detect_loops(build_cfg(fn), fn)


# ---------------------------------------------------------------------------
# Emission order
# ---------------------------------------------------------------------------

def test_order_of_occurrences_units(occurrences_module):
    analysis = analyze_function(_fn(occurrences_module))
    units = analysis.units
    assert isinstance(units[0], BlockUnit) and units[0].label == "._crit_edge"
    assert isinstance(units[1], CliqueUnit)
    assert isinstance(units[2], DriverUnit)


def test_order_single_block():
    m = parse_text("define i64 @f(i64 %x) {\n  ret i64 %x\n}\n")
    units = analyze_function(_fn(m)).units
    assert [type(u).__name__ for u in units] == ["BlockUnit", "DriverUnit"]


def test_order_two_sequential_blocks_callee_first():
    src = """define i64 @f(i64 %x) {
  br label %tail

tail:
  ret i64 %x
}
"""
    units = analyze_function(_fn(parse_text(src))).units
    assert isinstance(units[0], BlockUnit) and units[0].label == "tail"
    assert isinstance(units[1], BlockUnit) and units[1].label == "0"
    assert isinstance(units[2], DriverUnit)


def test_order_nested_cliques_contiguous(nestsum_module):
    units = analyze_function(_fn(nestsum_module)).units
    kinds = [type(u).__name__ for u in units]
    assert kinds == ["BlockUnit", "BlockUnit", "CliqueUnit", "CliqueUnit", "DriverUnit"]
    assert units[0].label == "outer.exit"
    assert units[1].label == "inner.exit"
    assert units[2].loop.index == 0  # inner clique first
    assert units[3].loop.index == 1
