"""Partially synchronous consensus over a generalized quorum system, with
round-robin leaders synchronized by growing timeouts.

Views rotate through the processes: leader(v) is p_((v-1) mod n)+1, and a
process stays in view v for v*C on its local clock (stretched by drift
before GST). Without any communication this guarantees that all correct
processes eventually share every view for an arbitrarily long window.

Per view: every process sends 1B(view, aview, val), its latest accepted
value and the view it was accepted in, to the view's leader. A leader in
phase ENTER that holds 1Bs from a full read quorum proposes the value
accepted in the highest view, or its own value if nobody accepted anything
(skipping its turn when it has none), via 2A. A process accepting a 2A for
its current view broadcasts 2B. Matching 2Bs from a full write quorum
decide the value. Messages for lower views are discarded as out of date;
messages for higher views are buffered and replayed on view entry.
Decided processes keep participating so that later views re-propose the
decided value to laggards.
"""

from __future__ import annotations

from .simnet import Automaton, ProtocolError

ENTER, PROPOSE, ACCEPT, DECIDE = "ENTER", "PROPOSE", "ACCEPT", "DECIDE"


def leader(view: int, n: int) -> int:
    if view < 1:
        raise ValueError("views are numbered from 1")
    return ((view - 1) % n) + 1


class ConsensusProtocol(Automaton):
    uses_ticks = False

    def __init__(self, pid, n, reads, writes, view_constant):
        self.pid = pid
        self.n = n
        self.reads = tuple(frozenset(q) for q in reads)
        self.writes = tuple(frozenset(q) for q in writes)
        self.view_constant = view_constant
        self.view = 0
        self.aview = 0
        self.val = None
        self.my_val = None
        self.phase = ENTER
        self.one_b = {}    # view -> {sender: (aview, val)}
        self.two_a = {}    # view -> proposed value
        self.two_b = {}    # view -> {sender: value}
        self.op_id = None

    # -- view synchronizer ------------------------------------------------------

    def on_start(self, ctx):
        self._advance_view(ctx)

    def on_timer(self, ctx, name):
        if name == "view_timer":
            self._advance_view(ctx)

    def _advance_view(self, ctx):
        self.view += 1
        ctx.start_timer("view_timer", self.view * self.view_constant)
        ctx.send_to(leader(self.view, self.n),
                    {"kind": "1B", "view": self.view,
                     "aview": self.aview, "val": self.val})
        self.phase = ENTER
        ctx.note("new-view", {"view": self.view})
        for stash in (self.one_b, self.two_a, self.two_b):
            for v in [v for v in stash if v < self.view]:
                del stash[v]
        self._eval_one_b(ctx)
        self._eval_two_a(ctx)
        self._eval_two_b(ctx)

    # -- workload ------------------------------------------------------------------

    def on_invoke(self, ctx, op_id, op):
        if op["op"] != "propose":
            raise ProtocolError(f"unexpected operation {op!r}")
        if self.my_val is not None or self.op_id is not None:
            raise ProtocolError(f"second propose at process {self.pid}")
        ctx.op_begun(op_id)
        self.my_val = op["value"]
        self.op_id = op_id
        if self.phase == DECIDE:
            self._respond(ctx)

    def _respond(self, ctx):
        if self.op_id is not None:
            ctx.respond(self.op_id, value=self.val)
            self.op_id = None

    # -- message handling ------------------------------------------------------------

    def on_message(self, ctx, msg, origin):
        kind = msg.get("kind")
        if kind not in ("1B", "2A", "2B"):
            raise ProtocolError(f"unknown message kind {kind!r}")
        view = msg["view"]
        if not isinstance(view, int) or view < 1:
            raise ProtocolError(f"malformed view {view!r}")
        if view < self.view:
            return  # out of date
        if kind == "1B":
            self.one_b.setdefault(view, {})[origin] = (msg["aview"], msg["val"])
            if view == self.view:
                self._eval_one_b(ctx)
        elif kind == "2A":
            self.two_a[view] = msg["x"]
            if view == self.view:
                self._eval_two_a(ctx)
        else:
            self.two_b.setdefault(view, {})[origin] = msg["x"]
            if view == self.view:
                self._eval_two_b(ctx)

    def _eval_one_b(self, ctx):
        if self.phase != ENTER or leader(self.view, self.n) != self.pid:
            return
        entries = self.one_b.get(self.view, {})
        quorum = None
        for r in self.reads:
            if all(p in entries for p in sorted(r)):
                quorum = r
                break
        if quorum is None:
            return
        accepted = [(entries[p][0], p, entries[p][1])
                    for p in sorted(quorum) if entries[p][1] is not None]
        if not accepted:
            if self.my_val is None:
                self.phase = PROPOSE  # skip this turn
                return
            choice = self.my_val
        else:
            choice = max(accepted)[2]  # value accepted in the highest view
        ctx.broadcast({"kind": "2A", "view": self.view, "x": choice})
        self.phase = PROPOSE

    def _eval_two_a(self, ctx):
        if self.phase not in (ENTER, PROPOSE):
            return
        if self.view not in self.two_a:
            return
        x = self.two_a[self.view]
        self.val = x
        self.aview = self.view
        ctx.broadcast({"kind": "2B", "view": self.view, "x": x})
        self.phase = ACCEPT

    def _eval_two_b(self, ctx):
        if self.phase == DECIDE:
            return
        entries = self.two_b.get(self.view, {})
        by_value = {}
        for sender, x in entries.items():
            by_value.setdefault(x, set()).add(sender)
        for x in sorted(by_value):
            for w in self.writes:
                if w <= by_value[x]:
                    self.val = x
                    self.aview = self.view
                    self.phase = DECIDE
                    ctx.note("decide", {"view": self.view, "value": x})
                    self._respond(ctx)
                    return
