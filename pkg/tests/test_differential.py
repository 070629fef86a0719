"""Differential suite: randomly generated programs run through the whole
translate/emit/load/execute pipeline and through the reference AST
interpreter, compared bit-exact on retval and the final machine state.

Failures print the generating seed and the offending source."""

import pathlib
import random
import sys

import pytest

sys.path.insert(0, str(pathlib.Path(__file__).parent))

from llgen import gen_diamond, gen_loop, gen_program, gen_state_args  # noqa: E402

from ll2fun import (  # noqa: E402
    MachineState, emit_sexpr, eval_def, interp_function, load_program,
    parse_text, translate_module,
)

SEED = 0xDA1E


def _run_both(src: str, args, mem, *, seed, via_text: bool):
    module = parse_text(src)
    program = translate_module(module)
    if via_text:
        program = load_program(emit_sexpr(program))
    st = MachineState(retval=0, stack=0xFFFF0000, frame=0xFFFF0000, mem=mem)
    _, translated = eval_def(program, "gen", args, st)
    reference = interp_function(module, "gen", args, st)
    assert translated == reference, (
        f"divergence (seed {seed}, args {args}):\n"
        f"  translated retval {translated.retval}, reference {reference.retval}\n"
        f"  memory equal: {translated.mem == reference.mem}\n{src}")
    return translated


def test_differential_random_programs():
    rng = random.Random(SEED)
    for trial in range(1000):
        src = gen_program(rng)
        args, mem = gen_state_args(rng)
        _run_both(src, args, mem, seed=f"{SEED}/{trial}", via_text=(trial % 4 == 0))


def test_differential_loops_focused():
    rng = random.Random(SEED + 1)
    for trial in range(200):
        src = gen_loop(rng)
        args, mem = gen_state_args(rng)
        _run_both(src, args, mem, seed=f"{SEED + 1}/{trial}", via_text=True)


def test_differential_phi_joins_focused():
    rng = random.Random(SEED + 2)
    for trial in range(200):
        src = gen_diamond(rng)
        args, mem = gen_state_args(rng)
        _run_both(src, args, mem, seed=f"{SEED + 2}/{trial}", via_text=False)


def test_differential_nested_fixture(nestsum_module, nestsum_program):
    rng = random.Random(SEED + 3)
    for _ in range(50):
        n, m = rng.randrange(0, 12), rng.randrange(0, 12)
        st = MachineState(retval=0, stack=0xFFFF0000, frame=0xFFFF0000, mem={})
        _, translated = eval_def(nestsum_program, "nestsum", (n, m), st)
        reference = interp_function(nestsum_module, "nestsum", (n, m), st)
        assert translated == reference


def test_differential_occurrences_fixture(occurrences_module, occurrences_program,
                                          array_state):
    rng = random.Random(SEED + 4)
    for _ in range(100):
        val = rng.choice((399, 0, 234, rng.getrandbits(64)))
        n = rng.randrange(0, 64)
        _, translated = eval_def(occurrences_program, "occurrences",
                                 (val, n, 0x8000), array_state)
        reference = interp_function(occurrences_module, "occurrences",
                                    (val, n, 0x8000), array_state)
        assert translated == reference


POINTER_LOOP = """define i64 @sumptr(i32 %n, i64* %array) {
  %g = icmp eq i32 %n, 0
  br i1 %g, label %done, label %loop

loop:
  %p = phi i64* [ %p.next, %loop ], [ %array, %0 ]
  %acc = phi i64 [ %acc.next, %loop ], [ 0, %0 ]
  %j = phi i32 [ %j.next, %loop ], [ 0, %0 ]
  %v = load i64* %p
  %acc.next = add i64 %acc, %v
  %p.next = getelementptr i64* %p, i64 1
  %j.next = add i32 %j, 1
  %e = icmp eq i32 %j.next, %n
  br i1 %e, label %done, label %loop

done:
  %out = phi i64 [ 0, %0 ], [ %acc.next, %loop ]
  ret i64 %out
}
"""


def test_differential_pointer_carried_loop():
    from ll2fun.state import wr_n
    module = parse_text(POINTER_LOOP)
    program = load_program(emit_sexpr(translate_module(module)))
    step = program.by_name["sumptr_step_0"]
    assert dict(step.params)["p"] == "addr"  # the pointer rides the frame
    mem: dict[int, int] = {}
    for k, v in enumerate([10, 20, 30, 40]):
        mem = wr_n(8, 0x8000 + 8 * k, v, mem)
    st = MachineState(retval=0, stack=0xFFFF0000, frame=0xFFFF0000, mem=mem)
    for n in (0, 1, 4):
        _, translated = eval_def(program, "sumptr", (n, 0x8000), st)
        reference = interp_function(module, "sumptr", (n, 0x8000), st)
        assert translated == reference
        assert translated.retval == sum((10, 20, 30, 40)[:n])


def test_differential_alloca_scratch():
    src = """define i64 @scratch(i64 %x) {
  %buf = alloca i64, i32 2
  %p1 = getelementptr i64* %buf, i64 1
  store i64 %x, i64* %p1
  %v = load i64* %p1
  %w = add i64 %v, 5
  ret i64 %w
}
"""
    module = parse_text(src)
    program = load_program(emit_sexpr(translate_module(module)))
    st = MachineState(retval=0, stack=0x1000, frame=0x1000, mem={})
    _, translated = eval_def(program, "scratch", (37,), st)
    reference = interp_function(module, "scratch", (37,), st)
    assert translated == reference
    assert translated.retval == 42
    assert translated.stack == 0x1000  # allocation reclaimed by the bracket


def test_reference_interpreter_budget():
    from ll2fun.errors import BudgetExhausted
    src = """define i64 @gen(i64 %val, i32 %n, i64* %array) {
  br label %loop

loop:
  %j = phi i64 [ %j.next, %loop ], [ 0, %0 ]
  %j.next = add i64 %j, 1
  %t = trunc i64 %j.next to i32
  %e = icmp eq i32 %t, 0
  br i1 %e, label %out, label %loop

out:
  ret i64 %j.next
}
"""
    module = parse_text(src)
    with pytest.raises(BudgetExhausted):
        interp_function(module, "gen", (0, 0, 0x8000),
                        MachineState(stack=0xFFFF0000, frame=0xFFFF0000), budget=500)
