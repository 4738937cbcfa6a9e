"""Single-writer atomic snapshot built from the registers, plus single-shot
lattice agreement built on the snapshot.

Each process owns one segment, stored in its slot of a slotted register
vector replicated through the quorum access functions; a segment read or
write is a full register operation (get phase, set phase) on that slot, so
segment accesses are atomic.

A scan repeatedly collects all segments. Two consecutive identical collects
(per-slot writer sequence numbers) give a direct scan. A writer observed to
advance its sequence number twice since the first collect performed an
entire update inside the scan's interval, so its record's embedded scan is
returned instead (borrowed scan); n+1 collects therefore always suffice.
An update first scans, then writes a record carrying the new value, the
writer's bumped sequence number, and that scan.

Lattice agreement: propose(x) updates the caller's segment with x and
returns the join of every non-empty segment of a following scan. Scan
atomicity totally orders the snapshots, so outputs are pairwise comparable
without extra coordination. Lattice values are finite sets, carried as
sorted lists; join is union.
"""

from __future__ import annotations

from .qaf import QafClient
from .simnet import ProtocolError


def join_values(values) -> list:
    out = set()
    for v in values:
        out |= set(v)
    return sorted(out)


def lattice_leq(x, y) -> bool:
    return set(x) <= set(y)


class SnapshotProtocol(QafClient):
    def __init__(self, pid, n, qaf):
        super().__init__(qaf)
        self.pid = pid
        self.n = n
        self.write_seq = 0
        self.proposed = False

    # -- workload ------------------------------------------------------------

    def run_op(self, ctx, op_id, op):
        if op["op"] == "update":
            self._update(ctx, op["value"],
                         lambda ctx: self.finish(ctx, op_id, value="ack"))
        elif op["op"] == "scan":
            self._scan(ctx, lambda ctx, vals, seqs: self.finish(
                ctx, op_id, value={"values": vals, "seqs": seqs}))
        elif op["op"] == "propose":
            if self.proposed:
                raise ProtocolError(f"second propose at process {self.pid}")
            self.proposed = True
            x = sorted(op["value"])

            def after_update(ctx):
                def after_scan(ctx, vals, seqs):
                    y = join_values(v for v in vals if v is not None)
                    self.finish(ctx, op_id, value=y)
                self._scan(ctx, after_scan)

            self._update(ctx, x, after_update)
        else:
            raise ProtocolError(f"unexpected operation {op!r}")

    # -- segment registers (slot = pid - 1) ------------------------------------

    def _reg_read(self, ctx, slot, done):
        def write_back(ctx, states):
            best = None
            for pid in sorted(states):
                cell = states[pid][slot]
                if best is None or tuple(cell["ver"]) > tuple(best["ver"]):
                    best = cell
            upd = {"kind": "ifnewer", "slot": slot,
                   "val": best["val"], "ver": list(best["ver"])}
            self.qaf.quorum_set(ctx, upd, lambda ctx: done(ctx, best["val"]))
        self.qaf.quorum_get(ctx, write_back)

    def _reg_write(self, ctx, slot, value, done):
        def install(ctx, states):
            top = max(states[pid][slot]["ver"][0] for pid in states)
            upd = {"kind": "ifnewer", "slot": slot,
                   "val": value, "ver": [top + 1, self.pid]}
            self.qaf.quorum_set(ctx, upd, done)
        self.qaf.quorum_get(ctx, install)

    # -- snapshot construction -------------------------------------------------

    def _collect(self, ctx, done):
        recs = []

        def step(ctx):
            if len(recs) == self.n:
                done(ctx, recs)
                return
            self._reg_read(ctx, len(recs), got)

        def got(ctx, val):
            recs.append(val)
            step(ctx)

        step(ctx)

    def _scan(self, ctx, done):
        state = {"first": None, "prev": None}

        def examine(ctx, recs):
            seqs = [r["seq"] if isinstance(r, dict) else 0 for r in recs]
            vals = [r["v"] if isinstance(r, dict) else None for r in recs]
            if state["first"] is None:
                state["first"] = seqs
            elif seqs == state["prev"]:
                done(ctx, vals, seqs)   # clean double collect
                return
            else:
                for j in range(self.n):
                    if seqs[j] >= state["first"][j] + 2:
                        emb = recs[j]["scan"]
                        done(ctx, [e[0] for e in emb], [e[1] for e in emb])
                        return
            state["prev"] = seqs
            self._collect(ctx, examine)

        self._collect(ctx, examine)

    def _update(self, ctx, value, done):
        def write_record(ctx, vals, seqs):
            self.write_seq += 1
            rec = {"v": value, "seq": self.write_seq,
                   "scan": [[vals[j], seqs[j]] for j in range(self.n)]}
            self._reg_write(ctx, self.pid - 1, rec, done)
        self._scan(ctx, write_record)
