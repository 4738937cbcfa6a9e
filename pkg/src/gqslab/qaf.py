"""Quorum access functions: reusable primitives that fetch the states of a
read quorum (quorum_get) and apply an update at a write quorum (quorum_set)
over an opaque, replicated application state.

Two variants:

* ClassicalQaf: plain request/response against read and write quorums.
  Correct only when every correct process can exchange messages with the
  quorums, i.e. under classical (no channel failure) quorum systems.

* GeneralizedQaf: works when a write quorum is only unidirectionally
  reachable from a read quorum. Each process keeps a monotone logical
  clock, bumps it on every update application and on a periodic state
  broadcast, and invocations compute a clock cutoff from a write quorum so
  they can tell when pushed states are fresh enough:

    quorum_get: collect CLOCK_RESP from a write quorum, take the maximum as
      the cutoff, then wait for cached GET_RESP states with clock >= cutoff
      from every member of some read quorum.
    quorum_set: broadcast the update, collect SET_RESP clocks from a write
      quorum, take the maximum, then wait until some read quorum has
      reported clocks >= that value before completing.

  Completion of quorum_set therefore guarantees that a later quorum_get's
  cutoff is at least as large as the set's, which forces at least one
  returned state (from the read/write quorum intersection) to contain the
  update.

GET_RESP carries no invocation id: states are cached per sender keeping the
largest clock seen, and quorum predicates are evaluated against the cache.
One get and one set may be outstanding per process at a time.
"""

from __future__ import annotations

from collections import deque

from .simnet import Automaton, ProtocolError


# -- replicated state machines -------------------------------------------------

class RegisterMachine:
    """(value, version) pair with conditional overwrite: an update carries a
    candidate (value, version) and applies only if its version is larger."""

    def initial(self):
        return {"val": 0, "ver": [0, 0]}

    def apply(self, state, update):
        if update.get("kind") != "ifnewer":
            raise ProtocolError(f"unknown update {update!r}")
        if tuple(update["ver"]) > tuple(state["ver"]):
            return {"val": update["val"], "ver": list(update["ver"])}
        return state


class SlottedRegisterMachine:
    """Vector of independent registers, one per process; updates name the
    slot they target. Backs the snapshot object's segment registers."""

    def __init__(self, n):
        self.n = n

    def initial(self):
        return [{"val": 0, "ver": [0, 0]} for _ in range(self.n)]

    def apply(self, state, update):
        if update.get("kind") != "ifnewer":
            raise ProtocolError(f"unknown update {update!r}")
        slot = update["slot"]
        cell = state[slot]
        if tuple(update["ver"]) > tuple(cell["ver"]):
            new = list(state)
            new[slot] = {"val": update["val"], "ver": list(update["ver"])}
            return new
        return state


class TagLogMachine:
    """Grow-only set of update tags; applications commute, which makes the
    access functions' validity property directly checkable."""

    def initial(self):
        return []

    def apply(self, state, update):
        if update.get("kind") != "tag":
            raise ProtocolError(f"unknown update {update!r}")
        if update["id"] in state:
            return state
        return sorted(state + [update["id"]])


def _first_quorum(family, have):
    """First quorum (family order) all of whose members satisfy `have`."""
    for q in family:
        if all(have(p) for p in sorted(q)):
            return q
    return None


class GeneralizedQaf:
    uses_ticks = True

    def __init__(self, pid, machine, reads, writes):
        self.pid = pid
        self.machine = machine
        self.reads = tuple(frozenset(q) for q in reads)
        self.writes = tuple(frozenset(q) for q in writes)
        self.state = machine.initial()
        self.seq = 0
        self.clock = 0
        self.latest = {}   # sender -> (clock, state), clock-monotone cache
        self._get = None
        self._set = None

    # -- invocations ---------------------------------------------------------

    def quorum_get(self, ctx, done):
        if self._get is not None:
            raise ProtocolError("quorum_get already outstanding")
        self.seq += 1
        self._get = {"k": self.seq, "phase": "cutoff", "clocks": {},
                     "cutoff": None, "done": done}
        ctx.broadcast({"kind": "CLOCK_REQ", "k": self.seq})

    def quorum_set(self, ctx, update, done):
        if self._set is not None:
            raise ProtocolError("quorum_set already outstanding")
        self.seq += 1
        self._set = {"k": self.seq, "phase": "acks", "clocks": {},
                     "cutoff": None, "done": done}
        ctx.broadcast({"kind": "SET_REQ", "k": self.seq, "u": update})

    # -- handlers ------------------------------------------------------------

    def handle(self, ctx, msg, origin):
        kind = msg.get("kind")
        if kind == "CLOCK_REQ":
            ctx.send_to(origin, {"kind": "CLOCK_RESP", "k": msg["k"], "c": self.clock})
        elif kind == "CLOCK_RESP":
            inv = self._get
            if inv and inv["phase"] == "cutoff" and msg["k"] == inv["k"]:
                inv["clocks"][origin] = msg["c"]
                self._advance_get(ctx)
        elif kind == "SET_REQ":
            self.state = self.machine.apply(self.state, msg["u"])
            self.clock += 1
            ctx.send_to(origin, {"kind": "SET_RESP", "k": msg["k"], "c": self.clock})
        elif kind == "SET_RESP":
            inv = self._set
            if inv and inv["phase"] == "acks" and msg["k"] == inv["k"]:
                inv["clocks"][origin] = msg["c"]
                self._advance_set(ctx)
        elif kind == "GET_RESP":
            cur = self.latest.get(origin)
            if cur is None or msg["c"] > cur[0]:
                self.latest[origin] = (msg["c"], msg["s"])
            self._advance_get(ctx)
            self._advance_set(ctx)
        else:
            raise ProtocolError(f"unknown message kind {kind!r}")

    def tick(self, ctx):
        self.clock += 1
        ctx.broadcast({"kind": "GET_RESP", "c": self.clock, "s": self.state})

    # -- quorum predicate evaluation ------------------------------------------

    def _fresh(self, cutoff):
        return lambda p: p in self.latest and self.latest[p][0] >= cutoff

    def _advance_get(self, ctx):
        inv = self._get
        if inv is None:
            return
        if inv["phase"] == "cutoff":
            w = _first_quorum(self.writes, lambda p: p in inv["clocks"])
            if w is None:
                return
            inv["cutoff"] = max(inv["clocks"][p] for p in w)
            inv["phase"] = "collect"
        if inv["phase"] == "collect":
            r = _first_quorum(self.reads, self._fresh(inv["cutoff"]))
            if r is None:
                return
            states = {p: self.latest[p][1] for p in sorted(r)}
            self._get = None
            inv["done"](ctx, states)

    def _advance_set(self, ctx):
        inv = self._set
        if inv is None:
            return
        if inv["phase"] == "acks":
            w = _first_quorum(self.writes, lambda p: p in inv["clocks"])
            if w is None:
                return
            inv["cutoff"] = max(inv["clocks"][p] for p in w)
            inv["phase"] = "settle"
        if inv["phase"] == "settle":
            r = _first_quorum(self.reads, self._fresh(inv["cutoff"]))
            if r is None:
                return
            self._set = None
            inv["done"](ctx)


class ClassicalQaf:
    """Request/response access functions: quorum_get asks a read quorum for
    state copies, quorum_set pushes the update to a write quorum. No clocks,
    no periodic broadcast."""

    uses_ticks = False

    def __init__(self, pid, machine, reads, writes):
        self.pid = pid
        self.machine = machine
        self.reads = tuple(frozenset(q) for q in reads)
        self.writes = tuple(frozenset(q) for q in writes)
        self.state = machine.initial()
        self.seq = 0
        self._get = None
        self._set = None

    def quorum_get(self, ctx, done):
        if self._get is not None:
            raise ProtocolError("quorum_get already outstanding")
        self.seq += 1
        self._get = {"k": self.seq, "resps": {}, "done": done}
        ctx.broadcast({"kind": "GET_REQ", "k": self.seq})

    def quorum_set(self, ctx, update, done):
        if self._set is not None:
            raise ProtocolError("quorum_set already outstanding")
        self.seq += 1
        self._set = {"k": self.seq, "resps": set(), "done": done}
        ctx.broadcast({"kind": "SET_REQ", "k": self.seq, "u": update})

    def handle(self, ctx, msg, origin):
        kind = msg.get("kind")
        if kind == "GET_REQ":
            ctx.send_to(origin, {"kind": "GET_RESP", "k": msg["k"], "s": self.state})
        elif kind == "GET_RESP":
            inv = self._get
            if inv and msg["k"] == inv["k"]:
                inv["resps"][origin] = msg["s"]
                r = _first_quorum(self.reads, lambda p: p in inv["resps"])
                if r is not None:
                    states = {p: inv["resps"][p] for p in sorted(r)}
                    self._get = None
                    inv["done"](ctx, states)
        elif kind == "SET_REQ":
            self.state = self.machine.apply(self.state, msg["u"])
            ctx.send_to(origin, {"kind": "SET_RESP", "k": msg["k"]})
        elif kind == "SET_RESP":
            inv = self._set
            if inv and msg["k"] == inv["k"]:
                inv["resps"].add(origin)
                w = _first_quorum(self.writes, lambda p: p in inv["resps"])
                if w is not None:
                    self._set = None
                    inv["done"](ctx)
        else:
            raise ProtocolError(f"unknown message kind {kind!r}")

    def tick(self, ctx):
        pass


class QafClient(Automaton):
    """Automaton base for protocols layered on access functions. Workload
    operations run one at a time per process: an operation arriving while
    another is in flight queues, and its recorded invocation time is the
    moment it actually starts."""

    def __init__(self, qaf):
        self.qaf = qaf
        self.uses_ticks = qaf.uses_ticks
        self._queue = deque()
        self._busy = False

    def on_message(self, ctx, msg, origin):
        self.qaf.handle(ctx, msg, origin)

    def on_tick(self, ctx):
        self.qaf.tick(ctx)

    def on_invoke(self, ctx, op_id, op):
        self._queue.append((op_id, op))
        self._pump(ctx)

    def _pump(self, ctx):
        if self._busy or not self._queue:
            return
        self._busy = True
        op_id, op = self._queue.popleft()
        ctx.op_begun(op_id)
        self.run_op(ctx, op_id, op)

    def finish(self, ctx, op_id, value=None, version=None):
        ctx.respond(op_id, value, version)
        self._busy = False
        self._pump(ctx)

    def run_op(self, ctx, op_id, op):
        raise ProtocolError(f"unexpected operation {op!r}")


class QafRawProtocol(QafClient):
    """Drives bare quorum_get/quorum_set over a grow-only tag set, for
    exercising the access functions' validity, ordering and liveness
    properties directly."""

    def __init__(self, qaf):
        super().__init__(qaf)
        self._tag_count = 0

    def run_op(self, ctx, op_id, op):
        if op["op"] == "set":
            self._tag_count += 1
            tag = op.get("tag") or f"{ctx.pid}.{self._tag_count}"
            upd = {"kind": "tag", "id": tag}
            self.qaf.quorum_set(
                ctx, upd, lambda ctx: self.finish(ctx, op_id, value={"tag": tag}))
        elif op["op"] == "get":
            self.qaf.quorum_get(
                ctx, lambda ctx, states: self.finish(
                    ctx, op_id,
                    value={"states": [[p, states[p]] for p in sorted(states)]}))
        else:
            raise ProtocolError(f"unexpected operation {op!r}")
