"""Concrete execution of functional-IR programs.

Definitions compile once into plain Python functions over naturals and
MachineState values; the general-recursive while defs compile into real
loops over their value frame, so a million iterations cost no host stack.
Dynamic signature checking, step budgets, and call tracing are optional
layers wrapped around the compiled functions; checking is on by default
and should be switched off for benchmarking.

The primitive semantics live in this module (see apply_prim) and are
shared with the reference LLVM interpreter used by the differential tests.
"""

from __future__ import annotations

import io
import weakref
from dataclasses import dataclass

from .errors import BudgetExhausted, EvalFault, SignatureViolation
from .fun_ir import (
    Call, Const, FunDef, FunProgram, If, LetStar, Metlist, Mvlist, Prim, Var,
    _while_shape,
)
from . import state as st_mod
from .state import MachineState

# ---------------------------------------------------------------------------
# Primitive semantics
# ---------------------------------------------------------------------------

def bits(x: int, h: int, l: int) -> int:
    """floor(x / 2^l) mod 2^(h-l+1): the bit slice [h..l], total on integers."""
    if h < l or l < 0:
        raise EvalFault(f"bits: bad indices h={h}, l={l}")
    return (x >> l) & ((1 << (h - l + 1)) - 1)


def to_signed(x: int, w: int) -> int:
    """Two's-complement reading of a w-bit natural."""
    return x - ((x >> (w - 1)) << w)


def shl(w: int, a: int, b: int) -> int:
    return (a << b) & ((1 << w) - 1) if b < w else 0


def lshr(w: int, a: int, b: int) -> int:
    return a >> b if b < w else 0


def ashr(w: int, a: int, b: int) -> int:
    if b >= w:
        return 0
    return (to_signed(a, w) >> b) & ((1 << w) - 1)


def sext(from_w: int, to_w: int, x: int) -> int:
    return to_signed(x, from_w) & ((1 << to_w) - 1)


def _cmp_bit(flag: bool) -> int:
    return 1 if flag else 0


def apply_prim(op: str, args: tuple, widths: tuple[int, ...] = ()):
    """Evaluate one primitive: `widths` carries the static constants (bit
    indices, operand widths, byte counts), `args` the dynamic values."""
    if op == "bits":
        return bits(args[0], widths[0], widths[1])
    if op == "+":
        return args[0] + args[1]
    if op == "-":
        return args[0] - args[1]
    if op == "*":
        return args[0] * args[1]
    if op == "logand":
        return args[0] & args[1]
    if op == "logior":
        return args[0] | args[1]
    if op == "logxor":
        return args[0] ^ args[1]
    if op == "shl":
        return shl(widths[0], args[0], args[1])
    if op == "lshr":
        return lshr(widths[0], args[0], args[1])
    if op == "ashr":
        return ashr(widths[0], args[0], args[1])
    if op == "=":
        return _cmp_bit(args[0] == args[1])
    if op == "/=":
        return _cmp_bit(args[0] != args[1])
    if op == "<":
        return _cmp_bit(args[0] < args[1])
    if op == "<=":
        return _cmp_bit(args[0] <= args[1])
    if op == ">":
        return _cmp_bit(args[0] > args[1])
    if op == ">=":
        return _cmp_bit(args[0] >= args[1])
    if op in ("slt", "sle", "sgt", "sge"):
        w = widths[0]
        a, b = to_signed(args[0], w), to_signed(args[1], w)
        return _cmp_bit({"slt": a < b, "sle": a <= b, "sgt": a > b, "sge": a >= b}[op])
    if op == "sext":
        return sext(widths[0], widths[1], args[0])
    if op == "update-retval":
        return st_mod.update_retval(args[0], args[1])
    if op == "retval":
        return args[0].retval
    if op == "init-stack-frame":
        return st_mod.init_stack_frame(args[0])
    if op == "begin-stack-frame":
        return st_mod.begin_stack_frame(args[0])
    if op == "end-stack-frame":
        return st_mod.end_stack_frame(args[0])
    if op == "alloca":
        return st_mod.alloca(widths[0], args[0])
    if op == "stack":
        return args[0].stack
    if op == "loadbytes":
        return st_mod.loadbytes(widths[0], args[0], args[1])
    if op == "wfrombytes":
        return st_mod.wfrombytes(widths[0], args[0])
    if op == "wtobytes":
        return st_mod.wtobytes(widths[0], args[0])
    if op == "storebytes":
        return st_mod.storebytes(widths[0], args[0], args[1], args[2])
    raise EvalFault(f"unknown primitive {op}")


KIND_CHECKS = {
    "i1": lambda v: isinstance(v, int) and 0 <= v < 2,
    "i8": lambda v: isinstance(v, int) and 0 <= v < (1 << 8),
    "i16": lambda v: isinstance(v, int) and 0 <= v < (1 << 16),
    "i32": lambda v: isinstance(v, int) and 0 <= v < (1 << 32),
    "i64": lambda v: isinstance(v, int) and 0 <= v < (1 << 64),
    "addr": lambda v: isinstance(v, int) and 0 <= v < (1 << 32),
    "nat": lambda v: isinstance(v, int) and 0 <= v,
    "state": lambda v: isinstance(v, MachineState),
}


# ---------------------------------------------------------------------------
# Code generation
# ---------------------------------------------------------------------------

def _sanitize(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch == "_" else "_" for ch in name)


class _Codegen:
    def __init__(self, program: FunProgram):
        self.program = program
        self.fn_names = {d.name: f"d{i}_{_sanitize(d.name)}" for i, d in enumerate(program.defs)}
        self.arity = {d.name: len(d.result_kinds) for d in program.defs}
        self.while_names: list[str] = []
        self.lines: list[str] = []

    # -- locals ------------------------------------------------------------

    def _fresh_locals(self, d: FunDef) -> dict[str, str]:
        mapping: dict[str, str] = {}
        for n, _ in d.params:
            self._bind_local(mapping, n)
        return mapping

    @staticmethod
    def _bind_local(mapping: dict[str, str], name: str) -> str:
        if name in mapping:
            return mapping[name]
        base = "v_" + _sanitize(name)
        local = base
        k = 2
        while local in mapping.values():
            local = f"{base}_{k}"
            k += 1
        mapping[name] = local
        return local

    # -- expressions ---------------------------------------------------------

    def expr(self, e, env: dict[str, str]) -> str:
        if isinstance(e, Var):
            return env[e.name]
        if isinstance(e, Const):
            return str(e.value)
        if isinstance(e, If):
            return (f"({self.expr(e.then, env)} if {self.cond(e.cond, env)} "
                    f"else {self.expr(e.els, env)})")
        if isinstance(e, Call):
            args = ", ".join(self.expr(a, env) for a in e.args)
            return f"{self.fn_names[e.name]}({args})"
        if isinstance(e, Prim):
            return self.prim(e, env)
        raise AssertionError(f"expression context: {e}")

    def cond(self, e, env: dict[str, str]) -> str:
        """Condition position: a {0,1} value tested against zero."""
        if isinstance(e, Prim) and e.op in ("=", "/=", "<", "<=", ">", ">="):
            pyop = {"=": "==", "/=": "!=", "<": "<", "<=": "<=", ">": ">", ">=": ">="}[e.op]
            return f"{self.expr(e.args[0], env)} {pyop} {self.expr(e.args[1], env)}"
        return f"{self.expr(e, env)} != 0"

    def prim(self, e: Prim, env: dict[str, str]) -> str:
        op = e.op
        a = e.args

        def ex(i: int) -> str:
            return self.expr(a[i], env)

        if op == "bits":
            h, l = a[1].value, a[2].value
            mask = (1 << (h - l + 1)) - 1
            if l == 0:
                return f"({ex(0)} & {mask})"
            return f"(({ex(0)} >> {l}) & {mask})"
        if op in ("+", "-", "*"):
            return f"({ex(0)} {op} {ex(1)})"
        if op in ("logand", "logior", "logxor"):
            pyop = {"logand": "&", "logior": "|", "logxor": "^"}[op]
            return f"({ex(0)} {pyop} {ex(1)})"
        if op in ("=", "/=", "<", "<=", ">", ">="):
            return f"(1 if {self.cond(e, env)} else 0)"
        if op in ("shl", "lshr", "ashr", "slt", "sle", "sgt", "sge", "sext"):
            w = ", ".join(str(x.value) for x in a[: 2 if op == "sext" else 1])
            rest = ", ".join(self.expr(x, env) for x in a[(2 if op == "sext" else 1):])
            return f"_{op}({w}, {rest})"
        if op == "retval":
            return f"{ex(0)}.retval"
        if op == "stack":
            return f"{ex(0)}.stack"
        if op == "init-stack-frame":
            return ex(0)
        if op == "begin-stack-frame":
            return f"_begin({ex(0)})"
        if op == "end-stack-frame":
            return f"_end({ex(0)})"
        if op == "update-retval":
            return f"_update_retval({ex(0)}, {ex(1)})"
        if op == "alloca":
            return f"_alloca({a[0].value}, {ex(1)})"
        if op == "wfrombytes":
            inner = a[1]
            if isinstance(inner, Prim) and inner.op == "loadbytes" \
                    and inner.args[0] == a[0]:
                n = a[0].value
                addr = self.expr(inner.args[1], env)
                stv = self.expr(inner.args[2], env)
                return f"_rd_n({n}, {addr}, {stv}.mem)"
            return f"_wfrombytes({a[0].value}, {self.expr(inner, env)})"
        if op == "loadbytes":
            return f"_loadbytes({a[0].value}, {ex(1)}, {ex(2)})"
        if op == "storebytes":
            inner = a[2]
            if isinstance(inner, Prim) and inner.op == "wtobytes" \
                    and inner.args[0] == a[0]:
                n = a[0].value
                value = self.expr(inner.args[1], env)
                return f"_store_word({n}, {ex(1)}, {value}, {ex(3)})"
            return f"_storebytes({a[0].value}, {ex(1)}, {self.expr(inner, env)}, {ex(3)})"
        if op == "wtobytes":
            return f"_wtobytes({a[0].value}, {ex(1)})"
        raise AssertionError(f"unhandled primitive {op}")

    # -- statements ------------------------------------------------------------

    def tail(self, e, env: dict[str, str], indent: str, arity: int):
        out = self.lines
        if isinstance(e, LetStar):
            for name, bound in e.bindings:
                rhs = self.expr(bound, env)
                local = self._bind_local(env, name)
                out.append(f"{indent}{local} = {rhs}")
            self.tail(e.body, env, indent, arity)
        elif isinstance(e, If):
            out.append(f"{indent}if {self.cond(e.cond, env)}:")
            inner = dict(env)
            self.tail(e.then, inner, indent + "    ", arity)
            out.append(f"{indent}else:")
            inner = dict(env)
            self.tail(e.els, inner, indent + "    ", arity)
        elif isinstance(e, Metlist):
            rhs = self.expr(e.call, env)
            locals_ = [self._bind_local(env, n) for n in e.names]
            if len(locals_) == 1:
                out.append(f"{indent}{locals_[0]} = {rhs}")
            else:
                out.append(f"{indent}{', '.join(locals_)} = {rhs}")
            self.tail(e.body, env, indent, arity)
        elif isinstance(e, Mvlist):
            items = [self.expr(x, env) for x in e.items]
            if len(items) == 1:
                out.append(f"{indent}return {items[0]}")
            else:
                out.append(f"{indent}return ({', '.join(items)})")
        else:
            out.append(f"{indent}return {self.expr(e, env)}")

    def gen_def(self, d: FunDef):
        env = self._fresh_locals(d)
        params = ", ".join(env[n] for n, _ in d.params)
        self.lines.append(f"def {self.fn_names[d.name]}({params}):")
        shape = _while_shape(d)
        if shape is not None:
            step_name, frame = shape
            self.while_names.append(d.name)
            locals_ = [env[n] for n in frame]
            done = locals_[0]
            args = ", ".join(locals_)
            values = ", ".join(locals_[1:])
            self.lines.append(f"    while {done} != 1:")
            self.lines.append("        _it[0] += 1")
            self.lines.append(f"        {args} = {self.fn_names[step_name]}({args})")
            self.lines.append(f"    return ({values})")
        else:
            self.tail(d.body, env, "    ", len(d.result_kinds))
        self.lines.append("")

    def generate(self) -> str:
        for d in self.program.defs:
            self.gen_def(d)
        return "\n".join(self.lines)


_HELPERS = {
    "_shl": shl, "_lshr": lshr, "_ashr": ashr, "_sext": sext,
    "_slt": lambda w, a, b: _cmp_bit(to_signed(a, w) < to_signed(b, w)),
    "_sle": lambda w, a, b: _cmp_bit(to_signed(a, w) <= to_signed(b, w)),
    "_sgt": lambda w, a, b: _cmp_bit(to_signed(a, w) > to_signed(b, w)),
    "_sge": lambda w, a, b: _cmp_bit(to_signed(a, w) >= to_signed(b, w)),
    "_rd_n": st_mod.rd_n, "_store_word": st_mod.store_word,
    "_loadbytes": st_mod.loadbytes, "_storebytes": st_mod.storebytes,
    "_wfrombytes": st_mod.wfrombytes, "_wtobytes": st_mod.wtobytes,
    "_begin": st_mod.begin_stack_frame, "_end": st_mod.end_stack_frame,
    "_update_retval": st_mod.update_retval, "_alloca": st_mod.alloca,
}


# ---------------------------------------------------------------------------
# Evaluator
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    values: tuple          # results without the trailing state
    state: MachineState
    iterations: int        # loop iterations executed, summed over all whiles
    per_while: dict[str, int]


@dataclass
class BudgetOutcome:
    completed: bool
    result: RunResult | None
    iterations: int
    per_while: dict[str, int]

    def report(self) -> str:
        if self.completed:
            return f"completed within budget ({self.iterations} loop iterations)"
        lines = ["budget exhausted; non-termination suspected",
                 f"  total loop iterations: {self.iterations}"]
        for name, count in sorted(self.per_while.items()):
            lines.append(f"  {name}: {count}")
        return "\n".join(lines)


def _state_text(v) -> str:
    if isinstance(v, MachineState):
        return (f"(st retval={v.retval} stack={v.stack:#x} frame={v.frame:#x} "
                f"mem/{len(v.mem)})")
    return str(v)


class ProgramEvaluator:
    """Compiled form of one program plus its execution layers.

    Programs and states are immutable and freely shareable; an evaluator
    instance, however, owns mutable iteration counters, so one instance
    serves one execution at a time.  Parallel runs want separate
    instances (or separate programs, which the module-level cache keys on).
    """

    def __init__(self, program: FunProgram):
        self.program = program
        self._gen = _Codegen(program)
        self.source = self._gen.generate()
        self._code = compile(self.source, f"<ll2fun:{id(program):#x}>", "exec")
        self._variants: dict[tuple[bool, bool, bool], dict] = {}
        self.trace_out: io.TextIOBase | None = None

    # -- namespaces ----------------------------------------------------------

    def _namespace(self, checking: bool, budgeted: bool, trace: bool) -> dict:
        key = (checking, budgeted, trace)
        ns = self._variants.get(key)
        if ns is not None:
            return ns
        ns = dict(_HELPERS)
        ns["_it"] = [0]
        ns["_budget"] = [None]
        ns["_per_while"] = {}
        exec(self._code, ns)  # noqa: S102
        if checking:
            self._wrap_checking(ns, self._gen)
        if budgeted:
            self._wrap_budget(ns, self._gen)
        if trace:
            self._wrap_trace(ns, self._gen)
        self._variants[key] = ns
        return ns

    def _wrap_checking(self, ns: dict, gen: _Codegen):
        for d in self.program.defs:
            inner = ns[gen.fn_names[d.name]]
            ns[gen.fn_names[d.name]] = self._checking_wrapper(d, inner)

    @staticmethod
    def _checking_wrapper(d: FunDef, inner):
        param_kinds = tuple(k for _, k in d.params)
        result_kinds = d.result_kinds
        single = len(result_kinds) == 1

        def wrapper(*args):
            for i, (v, k) in enumerate(zip(args, param_kinds)):
                if not KIND_CHECKS[k](v):
                    raise SignatureViolation(
                        f"{d.name}: argument {i + 1} fails {k} "
                        f"(got {_state_text(v)})", context=f"def {d.name}")
            out = inner(*args)
            results = (out,) if single else out
            for i, (v, k) in enumerate(zip(results, result_kinds)):
                if not KIND_CHECKS[k](v):
                    raise SignatureViolation(
                        f"{d.name}: result {i + 1} fails {k} "
                        f"(got {_state_text(v)})", context=f"def {d.name}")
            return out

        return wrapper

    def _wrap_budget(self, ns: dict, gen: _Codegen):
        cliques = {c.while_def: c.step_def for c in self.program.cliques}
        it = ns["_it"]
        budget_cell = ns["_budget"]
        per_while = ns["_per_while"]
        for while_name, step_name in cliques.items():
            inner = ns[gen.fn_names[step_name]]

            def wrapper(*args, _inner=inner, _wname=while_name):
                per_while[_wname] = per_while.get(_wname, 0) + 1
                limit = budget_cell[0]
                if limit is not None and it[0] > limit:
                    raise BudgetExhausted(
                        f"step budget of {limit} exhausted in {_wname}",
                        counts=dict(per_while))
                return _inner(*args)

            ns[gen.fn_names[step_name]] = wrapper

    def _wrap_trace(self, ns: dict, gen: _Codegen):
        for d in self.program.defs:
            inner = ns[gen.fn_names[d.name]]

            def wrapper(*args, _inner=inner, _name=d.name):
                out = self.trace_out
                print(f"-> {_name} " + " ".join(_state_text(a) for a in args), file=out)
                res = _inner(*args)
                shown = res if isinstance(res, tuple) else (res,)
                print(f"<- {_name} " + " ".join(_state_text(v) for v in shown), file=out)
                return res

            ns[gen.fn_names[d.name]] = wrapper

    # -- running ----------------------------------------------------------------

    def run(self, name: str, args: tuple, st: MachineState, *, checking: bool = True,
            budget: int | None = None, trace: bool = False) -> RunResult:
        d = self.program.by_name.get(name)
        if d is None:
            raise EvalFault(f"no definition named {name}")
        if len(args) + 1 != len(d.params):
            raise EvalFault(
                f"{name} takes {len(d.params) - 1} value arguments, got {len(args)}")
        if budget is not None and budget <= 0:
            raise EvalFault("budget must be positive")
        ns = self._namespace(checking, budget is not None, trace)
        ns["_it"][0] = 0
        ns["_budget"][0] = budget
        ns["_per_while"].clear()
        fn = ns[self._gen.fn_names[name]]
        try:
            out = fn(*args, st)
        except RecursionError:
            raise EvalFault(f"host recursion limit reached inside {name}",
                            context=f"def {name}") from None
        except EvalFault as e:
            if e.context is None:
                raise type(e)(str(e),
                              context=f"entry {name}, step {ns['_it'][0]}") from e
            raise
        results = out if isinstance(out, tuple) else (out,)
        final = results[-1]
        if not isinstance(final, MachineState):
            raise EvalFault(f"{name} did not return a machine state last")
        return RunResult(results[:-1], final, ns["_it"][0], dict(ns["_per_while"]))


_EVALUATORS: "weakref.WeakKeyDictionary[FunProgram, ProgramEvaluator]" = \
    weakref.WeakKeyDictionary()


def evaluator_for(program: FunProgram) -> ProgramEvaluator:
    ev = _EVALUATORS.get(program)
    if ev is None:
        ev = ProgramEvaluator(program)
        _EVALUATORS[program] = ev
    return ev


def eval_def(program: FunProgram, name: str, args: tuple, st: MachineState, *,
             checking: bool = True, budget: int | None = None,
             trace: bool = False) -> tuple[tuple, MachineState]:
    """Run one definition; returns (value results, final state)."""
    res = evaluator_for(program).run(name, tuple(args), st, checking=checking,
                                     budget=budget, trace=trace)
    return res.values, res.state


def run_with_budget(program: FunProgram, name: str, args: tuple, st: MachineState,
                    budget: int | None, *, checking: bool = True) -> BudgetOutcome:
    """Like eval_def but budget exhaustion becomes a report, not an error."""
    ev = evaluator_for(program)
    try:
        res = ev.run(name, tuple(args), st, checking=checking, budget=budget)
    except BudgetExhausted as e:
        total = sum(e.counts.values())
        return BudgetOutcome(False, None, total, dict(e.counts))
    return BudgetOutcome(True, res, res.iterations, res.per_while)
