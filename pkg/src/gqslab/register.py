"""Multi-writer multi-reader atomic register over the quorum access
functions.

Values carry versions (counter, pid), ordered lexicographically, with
(0, 0) reserved for the initial value 0. Both operations run a get phase
followed by a set phase:

    write(x): fetch a read quorum's states, pick a version one counter above
      the largest seen (pid breaks ties between concurrent writers), then
      install (x, version) at a write quorum via a conditional overwrite.
    read(): fetch a read quorum's states, adopt the largest-versioned one,
      write it back so later operations cannot observe an older value, then
      return its value.

Each operation's chosen version is recorded on its trace response so the
offline checker can rebuild write/read dependencies without search.
"""

from __future__ import annotations

from .qaf import QafClient
from .simnet import ProtocolError


def version_of(state) -> tuple:
    return tuple(state["ver"])


def max_state(states: dict) -> dict:
    """Largest-versioned state; iteration over sorted pids keeps ties
    deterministic (equal versions carry equal values anyway)."""
    best = None
    for pid in sorted(states):
        s = states[pid]
        if best is None or version_of(s) > version_of(best):
            best = s
    return best


class RegisterProtocol(QafClient):
    def __init__(self, pid, qaf):
        super().__init__(qaf)
        self.pid = pid

    def run_op(self, ctx, op_id, op):
        if op["op"] == "write":
            self.qaf.quorum_get(
                ctx, lambda ctx, states: self._write_back(ctx, op_id, op["value"], states))
        elif op["op"] == "read":
            self.qaf.quorum_get(
                ctx, lambda ctx, states: self._read_back(ctx, op_id, states))
        else:
            raise ProtocolError(f"unexpected operation {op!r}")

    def _write_back(self, ctx, op_id, value, states):
        top = max(version_of(s)[0] for s in states.values())
        ver = [top + 1, self.pid]
        upd = {"kind": "ifnewer", "val": value, "ver": ver}
        self.qaf.quorum_set(
            ctx, upd, lambda ctx: self.finish(ctx, op_id, value="ack", version=ver))

    def _read_back(self, ctx, op_id, states):
        best = max_state(states)
        ver = list(version_of(best))
        upd = {"kind": "ifnewer", "val": best["val"], "ver": ver}
        self.qaf.quorum_set(
            ctx, upd,
            lambda ctx: self.finish(ctx, op_id, value=best["val"], version=ver))
