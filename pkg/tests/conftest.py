import pytest

from gqslab.model import FailProneSystem, FailurePattern, NetworkGraph
from gqslab.qaf import (
    ClassicalQaf,
    GeneralizedQaf,
    QafRawProtocol,
    RegisterMachine,
    SlottedRegisterMachine,
    TagLogMachine,
)
from gqslab.register import RegisterProtocol
from gqslab.simnet import SimConfig, WorkItem, run

# The four-process rotating system used throughout: under pattern f_i one
# process may crash and all channels among the three correct processes may
# disconnect except a 2-cycle plus one incoming edge. Processes a,b,c,d are
# ids 1..4.
A, B, C, D = 1, 2, 3, 4

ROTOR4_PATTERNS = [
    FailurePattern.make({D}, {(A, C), (B, C), (C, B)}),
    FailurePattern.make({A}, {(B, D), (C, D), (D, C)}),
    FailurePattern.make({B}, {(C, A), (D, A), (A, D)}),
    FailurePattern.make({C}, {(D, B), (A, B), (B, A)}),
]

ROTOR4_READS = [{A, C}, {B, D}]
ROTOR4_WRITES = [{A, B}, {B, C}, {C, D}, {D, A}]
ROTOR4_U = [{A, B}, {B, C}, {C, D}, {D, A}]


@pytest.fixture
def g4():
    return NetworkGraph.complete(4)


@pytest.fixture
def rotor4():
    return FailProneSystem.make(ROTOR4_PATTERNS)


@pytest.fixture
def rotor4_broken():
    # Additionally dropping (a,b) under the first pattern leaves only
    # singleton components there, and no choice intersects the rest.
    f1 = ROTOR4_PATTERNS[0]
    f1x = FailurePattern.make(f1.crash_set, set(f1.drop_set) | {(A, B)})
    return FailProneSystem.make([f1x] + ROTOR4_PATTERNS[1:])


# -- simulation helpers --------------------------------------------------------

def full_schedule(pattern, at=0.0):
    """Schedule every failure the pattern allows, all at the given time."""
    return (dict.fromkeys(sorted(pattern.crash_set), at),
            dict.fromkeys(sorted(pattern.drop_set), at))


def qaf_factory(variant, machine_maker, reads=ROTOR4_READS, writes=ROTOR4_WRITES):
    cls = {"generalized": GeneralizedQaf, "classical": ClassicalQaf}[variant]
    reads = [frozenset(q) for q in reads]
    writes = [frozenset(q) for q in writes]
    return lambda pid: cls(pid, machine_maker(), reads, writes)


def register_run(workload, pattern=ROTOR4_PATTERNS[0], seed=1, variant="generalized",
                 n=4, reads=ROTOR4_READS, writes=ROTOR4_WRITES, tset=None, **kw):
    crash, drop = full_schedule(pattern)
    cfg = SimConfig(graph=NetworkGraph.complete(n), pattern=pattern, seed=seed,
                    crash_times=crash, disconnect_times=drop,
                    termination_set=frozenset(tset) if tset else None, **kw)
    qaf = qaf_factory(variant, RegisterMachine, reads, writes)
    return run(cfg, lambda pid: RegisterProtocol(pid, qaf(pid)),
               [WorkItem(*w) for w in workload])


def qafraw_run(workload, pattern=ROTOR4_PATTERNS[0], seed=1, variant="generalized",
               n=4, reads=ROTOR4_READS, writes=ROTOR4_WRITES, tset=None, **kw):
    crash, drop = full_schedule(pattern)
    cfg = SimConfig(graph=NetworkGraph.complete(n), pattern=pattern, seed=seed,
                    crash_times=crash, disconnect_times=drop,
                    termination_set=frozenset(tset) if tset else None, **kw)
    qaf = qaf_factory(variant, TagLogMachine, reads, writes)
    return run(cfg, lambda pid: QafRawProtocol(qaf(pid)),
               [WorkItem(*w) for w in workload])


def snapshot_run(workload, pattern=ROTOR4_PATTERNS[0], seed=1, n=4,
                 reads=ROTOR4_READS, writes=ROTOR4_WRITES, tset=None, **kw):
    from gqslab.snapshot import SnapshotProtocol

    crash, drop = full_schedule(pattern)
    cfg = SimConfig(graph=NetworkGraph.complete(n), pattern=pattern, seed=seed,
                    crash_times=crash, disconnect_times=drop,
                    termination_set=frozenset(tset) if tset else None, **kw)
    qaf = qaf_factory("generalized", lambda: SlottedRegisterMachine(n), reads, writes)
    return run(cfg, lambda pid: SnapshotProtocol(pid, n, qaf(pid)),
               [WorkItem(*w) for w in workload])


def consensus_run(workload, pattern=ROTOR4_PATTERNS[0], seed=1, n=4,
                  reads=ROTOR4_READS, writes=ROTOR4_WRITES, tset=None,
                  mode="psync", gst=0.0, delta=1.0, view_constant=10.0, **kw):
    from gqslab.consensus import ConsensusProtocol

    crash, drop = full_schedule(pattern)
    cfg = SimConfig(graph=NetworkGraph.complete(n), pattern=pattern, seed=seed,
                    mode=mode, gst=gst, delta=delta, view_constant=view_constant,
                    crash_times=crash, disconnect_times=drop,
                    termination_set=frozenset(tset) if tset else None, **kw)
    reads = [frozenset(q) for q in reads]
    writes = [frozenset(q) for q in writes]
    return run(cfg, lambda pid: ConsensusProtocol(pid, n, reads, writes,
                                                  cfg.view_constant),
               [WorkItem(*w) for w in workload])


class FakeCtx:
    """Stand-in context for unit-testing handlers outside the event loop."""

    def __init__(self, pid=1, now=0.0):
        self.pid = pid
        self.now = now
        self.sent = []
        self.timers = []
        self.notes = []
        self.begun = []
        self.responses = []

    def broadcast(self, msg):
        self.sent.append(msg)

    def send_to(self, to, msg):
        msg = dict(msg)
        msg["to"] = to
        self.sent.append(msg)

    def start_timer(self, name, duration):
        self.timers.append((name, duration))

    def note(self, kind, payload):
        self.notes.append((kind, payload))

    def op_begun(self, op_id):
        self.begun.append(op_id)

    def respond(self, op_id, value=None, version=None):
        self.responses.append((op_id, value, version))
