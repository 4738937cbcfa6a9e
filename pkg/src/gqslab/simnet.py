"""Seeded, deterministic discrete-event network simulator.

Provides asynchronous and partially synchronous (GST/delta) message
delivery over a directed channel graph, crash and channel-disconnect
injection, named restartable timers, and flood-forwarding: every broadcast
travels as an envelope that each process, on first receipt, hands to its
automaton and re-sends to all outgoing neighbors it has not visited yet.
Flooding realizes transitive connectivity, so a targeted reply reaches its
addressee whenever a directed path of correct channels exists.

Determinism: a single seeded RNG drives all delay/drift draws, the event
queue breaks time ties by (kind rank, subject, insertion order), and all
iteration is over sorted or insertion-ordered containers. Identical config,
workload and seed yield a bit-identical trace.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from heapq import heappop, heappush
from random import Random
from typing import Callable, Iterable, Optional

from .model import FailurePattern, ModelError, NetworkGraph

ASYNC = "async"
PSYNC = "psync"

# Tie-break ranks for same-time events. Crashes win so a process takes no
# step at or after its crash time; invocations run before the deliveries
# they race with; ticks run last.
_RANK = {"crash": 0, "disconnect": 1, "start": 2, "invoke": 3,
         "deliver": 4, "timer": 5, "tick": 6}


class SimError(ValueError):
    """Configuration or workload violates the simulator's preconditions."""


class ProtocolError(RuntimeError):
    """An automaton received a message it cannot interpret."""


@dataclass(frozen=True)
class SimConfig:
    graph: NetworkGraph
    pattern: FailurePattern
    seed: int
    mode: str = ASYNC
    gst: float = 0.0
    delta: float = 1.0
    crash_times: dict = field(default_factory=dict)        # pid -> time
    disconnect_times: dict = field(default_factory=dict)   # channel -> time
    tick_interval: float = 1.0
    view_constant: float = 10.0
    max_events: int = 200_000
    pin_delays: bool = False       # psync: post-GST delay exactly delta
    drift_max: float = 3.0         # psync: pre-GST timer stretch factor bound
    async_delay_mean: float = 1.0
    pre_gst_delay_mean: Optional[float] = None  # default 5 * delta
    adversarial: bool = False      # occasional 10x delays to force reordering
    termination_set: Optional[frozenset] = None  # wind down once these respond

    def __post_init__(self):
        if self.mode not in (ASYNC, PSYNC):
            raise SimError(f"unknown mode {self.mode!r}")
        if self.delta <= 0:
            raise SimError("delta must be positive")
        if self.tick_interval <= 0:
            raise SimError("tick_interval must be positive")
        for pid in self.crash_times:
            if pid not in self.pattern.crash_set:
                raise SimError(f"scheduled crash of {pid} not allowed by pattern")
        for ch in self.disconnect_times:
            if ch not in self.pattern.drop_set:
                raise SimError(f"scheduled disconnect of {ch} not allowed by pattern")


@dataclass(frozen=True)
class WorkItem:
    time: float
    pid: int
    op: dict   # {"op": "write", "value": 5}, {"op": "read"}, ...


@dataclass
class OpRecord:
    op_id: int
    pid: int
    kind: str
    args: dict
    invoke_time: Optional[float] = None
    response_time: Optional[float] = None
    value: object = None
    version: object = None
    # positions of the invoke/respond events in the trace; real-time
    # precedence is judged on these, so simultaneous timestamps stay ordered
    invoke_seq: Optional[int] = None
    response_seq: Optional[int] = None

    @property
    def pending(self) -> bool:
        return self.response_time is None


@dataclass
class Trace:
    seed: int
    events: list = field(default_factory=list)   # (time, kind, subject, payload, op_id, version)
    ops: list = field(default_factory=list)      # OpRecord, workload order
    quiescent: bool = False
    budget_exhausted: bool = False
    events_processed: int = 0

    def history(self) -> list:
        return list(self.ops)

    def to_jsonl(self) -> str:
        lines = [json.dumps({"time": 0.0, "kind": "meta", "subject": None,
                             "payload": {"seed": self.seed}, "op_id": None,
                             "version": None})]
        for (t, kind, subject, payload, op_id, version) in self.events:
            lines.append(json.dumps({
                "time": t, "kind": kind,
                "subject": list(subject) if isinstance(subject, tuple) else subject,
                "payload": payload, "op_id": op_id, "version": version,
            }))
        lines.append(json.dumps({
            "time": 0.0, "kind": "end", "subject": None,
            "payload": {"quiescent": self.quiescent,
                        "budget_exhausted": self.budget_exhausted,
                        "events_processed": self.events_processed},
            "op_id": None, "version": None,
        }))
        return "\n".join(lines) + "\n"


class TraceFormatError(ValueError):
    pass


class TruncatedTrace(ValueError):
    pass


def trace_from_jsonl(text: str) -> Trace:
    """Rebuild a Trace (including the operation history) from its JSON-lines
    form. Raises TruncatedTrace when the closing record is missing."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise TraceFormatError("empty trace")
    try:
        records = [json.loads(ln) for ln in lines]
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"bad trace line: {exc}") from exc
    if records[0].get("kind") != "meta":
        raise TraceFormatError("trace does not start with a meta record")
    if records[-1].get("kind") != "end":
        raise TruncatedTrace("trace has no end record")
    trace = Trace(seed=records[0]["payload"].get("seed", 0))
    endp = records[-1]["payload"]
    trace.quiescent = bool(endp.get("quiescent"))
    trace.budget_exhausted = bool(endp.get("budget_exhausted"))
    trace.events_processed = int(endp.get("events_processed", 0))
    ops = {}
    for rec in records[1:-1]:
        subject = rec["subject"]
        if isinstance(subject, list):
            subject = tuple(subject)
        ev = (rec["time"], rec["kind"], subject, rec["payload"],
              rec["op_id"], rec["version"])
        trace.events.append(ev)
        if rec["kind"] == "invoke":
            ops[rec["op_id"]] = OpRecord(
                op_id=rec["op_id"], pid=subject,
                kind=rec["payload"]["op"],
                args={k: v for k, v in rec["payload"].items() if k != "op"},
                invoke_time=rec["time"])
        elif rec["kind"] == "respond":
            op = ops.get(rec["op_id"])
            if op is None:
                raise TraceFormatError(f"response without invoke, op {rec['op_id']}")
            op.response_time = rec["time"]
            op.value = rec["payload"].get("value")
            op.version = rec["version"]
    trace.ops = [ops[k] for k in sorted(ops)]
    return trace


class Automaton:
    """Per-process protocol automaton; all handlers run instantaneously at
    the event's simulated time."""

    uses_ticks = False

    def on_start(self, ctx):
        pass

    def on_message(self, ctx, msg: dict, origin: int):
        raise ProtocolError(f"unexpected message {msg!r}")

    def on_timer(self, ctx, name: str):
        pass

    def on_tick(self, ctx):
        pass

    def on_invoke(self, ctx, op_id: int, op: dict):
        raise ProtocolError(f"unexpected operation {op!r}")


class Context:
    """Handle a process uses to interact with the network and the trace."""

    __slots__ = ("pid", "_rt")

    def __init__(self, pid, rt):
        self.pid = pid
        self._rt = rt

    @property
    def now(self) -> float:
        return self._rt.now

    def broadcast(self, msg: dict):
        """Flood msg to every process (self included). Point-to-point sends
        are broadcasts carrying a 'to' field; non-addressees forward but do
        not act on them."""
        self._rt.originate(self.pid, msg)

    def send_to(self, to: int, msg: dict):
        msg = dict(msg)
        msg["to"] = to
        self._rt.originate(self.pid, msg)

    def start_timer(self, name: str, duration: float):
        self._rt.start_timer(self.pid, name, duration)

    def note(self, kind: str, payload: dict):
        self._rt.log(kind, self.pid, payload)

    def op_begun(self, op_id: int):
        self._rt.op_begun(self.pid, op_id)

    def respond(self, op_id: int, value=None, version=None):
        self._rt.respond(self.pid, op_id, value, version)


class _Proc:
    __slots__ = ("pid", "automaton", "ctx", "crashed", "seen", "timer_tokens")

    def __init__(self, pid, automaton, ctx):
        self.pid = pid
        self.automaton = automaton
        self.ctx = ctx
        self.crashed = False
        self.seen = set()
        self.timer_tokens = {}


class Runtime:
    def __init__(self, config: SimConfig, automaton_factory: Callable[[int], Automaton],
                 workload: Iterable[WorkItem]):
        self.config = config
        self.rng = Random(config.seed)
        self.now = 0.0
        self.heap = []
        self._seq = 0
        self.trace = Trace(seed=config.seed)
        self.procs = {}
        self.out = {v: config.graph.out_neighbors(v) for v in sorted(config.graph.vertices)}
        self.env_seq = {v: 0 for v in sorted(config.graph.vertices)}
        self.winding_down = False
        self.ops = []

        for pid in sorted(config.graph.vertices):
            auto = automaton_factory(pid)
            self.procs[pid] = _Proc(pid, auto, Context(pid, self))

        for pid, t in sorted(config.crash_times.items()):
            self._push(t, "crash", pid, None)
        for ch, t in sorted(config.disconnect_times.items()):
            self._push(t, "disconnect", ch, None)
        for pid in sorted(config.graph.vertices):
            self._push(0.0, "start", pid, None)
            if self.procs[pid].automaton.uses_ticks:
                self._push(0.0, "tick", pid, None)

        for item in workload:
            crash_at = config.crash_times.get(item.pid)
            if crash_at is not None and item.time >= crash_at:
                raise SimError(
                    f"workload op at {item.pid} at time {item.time} targets a "
                    f"process crashed at {crash_at}")
            op_id = len(self.ops)
            rec = OpRecord(op_id=op_id, pid=item.pid, kind=item.op["op"],
                           args={k: v for k, v in item.op.items() if k != "op"})
            self.ops.append(rec)
            self._push(item.time, "invoke", item.pid, (op_id, dict(item.op)))
        self.trace.ops = self.ops

        tset = config.termination_set
        self._watched = [
            rec for rec in self.ops
            if tset is None or rec.pid in tset
        ]

    # -- queue ----------------------------------------------------------------

    def _push(self, time, kind, subject, payload):
        key_subject = subject if isinstance(subject, tuple) else (subject,)
        self._seq += 1
        heappush(self.heap, (time, _RANK[kind], key_subject, self._seq,
                             kind, subject, payload))

    def log(self, kind, subject, payload, op_id=None, version=None):
        self.trace.events.append((self.now, kind, subject, payload, op_id, version))

    # -- failure state ----------------------------------------------------------

    def _channel_dead(self, ch) -> bool:
        t = self.config.disconnect_times.get(ch)
        return t is not None and self.now >= t

    # -- sending ----------------------------------------------------------------

    def originate(self, origin: int, msg: dict):
        self.env_seq[origin] += 1
        env = {"origin": origin, "seq": self.env_seq[origin],
               "msg": msg, "hops": [origin]}
        # Self-delivery is local and reliable; the origin's own deliver step
        # performs the first fan-out.
        self._push(self.now, "deliver", origin, (origin, env))

    def _forward(self, pid: int, env: dict):
        hops = set(env["hops"])
        new_hops = sorted(hops | {pid})
        for nxt in self.out[pid]:
            if nxt in hops:
                continue
            fwd = {"origin": env["origin"], "seq": env["seq"],
                   "msg": env["msg"], "hops": new_hops}
            self._transmit(pid, nxt, fwd)

    def _transmit(self, frm: int, to: int, env: dict):
        ch = (frm, to)
        dropped = None
        if self._channel_dead(ch):
            dropped = "channel"
        elif self.procs[to].crashed:
            dropped = "target-crashed"
        self.log("send", ch, {"origin": env["origin"], "seq": env["seq"],
                              "kind": env["msg"].get("kind"),
                              "dropped": dropped})
        if dropped:
            return
        self._push(self.now + self._delay(), "deliver", to, (frm, env))

    def _delay(self) -> float:
        cfg = self.config
        if cfg.mode == PSYNC:
            if self.now >= cfg.gst:
                if cfg.pin_delays:
                    return cfg.delta
                return self.rng.uniform(0.0, cfg.delta)
            mean = cfg.pre_gst_delay_mean or 5.0 * cfg.delta
            d = self.rng.expovariate(1.0 / mean)
            if cfg.adversarial and self.rng.random() < 0.2:
                d *= 10.0
            return d
        d = self.rng.expovariate(1.0 / cfg.async_delay_mean)
        if cfg.adversarial and self.rng.random() < 0.2:
            d *= 10.0
        return d

    # -- timers -------------------------------------------------------------------

    def start_timer(self, pid: int, name: str, duration: float):
        if self.winding_down:
            return
        cfg = self.config
        drift = 1.0
        if cfg.mode == PSYNC and self.now < cfg.gst:
            drift = self.rng.uniform(1.0, cfg.drift_max)
        proc = self.procs[pid]
        token = proc.timer_tokens.get(name, 0) + 1
        proc.timer_tokens[name] = token
        self.log("timer-set", pid, {"name": name, "duration": duration,
                                    "drift": drift})
        self._push(self.now + duration * drift, "timer", pid, (name, token))

    # -- operations ------------------------------------------------------------------

    def op_begun(self, pid: int, op_id: int):
        rec = self.ops[op_id]
        rec.invoke_time = self.now
        payload = {"op": rec.kind}
        payload.update(rec.args)
        self.log("invoke", pid, payload, op_id=op_id)

    def respond(self, pid: int, op_id: int, value, version):
        rec = self.ops[op_id]
        if rec.response_time is not None:
            raise ProtocolError(f"double response for op {op_id}")
        rec.response_time = self.now
        rec.value = value
        rec.version = version
        self.log("respond", pid, {"value": value}, op_id=op_id, version=version)
        if not self.winding_down and self._watched and \
                all(r.response_time is not None for r in self._watched):
            self.winding_down = True

    # -- main loop -----------------------------------------------------------------

    def run(self) -> Trace:
        cfg = self.config
        while self.heap:
            if self.trace.events_processed >= cfg.max_events:
                self.trace.budget_exhausted = True
                break
            (t, _rank, _subj, _seq, kind, subject, payload) = heappop(self.heap)
            self.now = t
            self.trace.events_processed += 1
            if kind == "crash":
                self.procs[subject].crashed = True
                self.log("crash", subject, None)
            elif kind == "disconnect":
                self.log("disconnect", subject, None)
            elif kind == "start":
                proc = self.procs[subject]
                if not proc.crashed:
                    proc.automaton.on_start(proc.ctx)
            elif kind == "invoke":
                proc = self.procs[subject]
                op_id, op = payload
                if not proc.crashed:
                    proc.automaton.on_invoke(proc.ctx, op_id, op)
            elif kind == "deliver":
                self._deliver(subject, payload)
            elif kind == "timer":
                proc = self.procs[subject]
                name, token = payload
                if proc.crashed or proc.timer_tokens.get(name) != token:
                    continue  # crashed subject or restarted timer
                self.log("timer", subject, {"name": name})
                proc.automaton.on_timer(proc.ctx, name)
            elif kind == "tick":
                proc = self.procs[subject]
                if proc.crashed or self.winding_down:
                    continue
                self.log("tick", subject, None)
                proc.automaton.on_tick(proc.ctx)
                self._push(self.now + cfg.tick_interval, "tick", subject, None)
        else:
            self.trace.quiescent = True
        return self.trace

    def _deliver(self, pid: int, payload):
        frm, env = payload
        proc = self.procs[pid]
        if proc.crashed:
            return
        env_id = (env["origin"], env["seq"])
        if env_id in proc.seen:
            return  # duplicate envelope, discarded
        proc.seen.add(env_id)
        self.log("deliver", pid, {"origin": env["origin"], "seq": env["seq"],
                                  "from": frm, "msg": env["msg"]})
        self._forward(pid, env)
        msg = env["msg"]
        if "to" in msg and msg["to"] != pid:
            return
        proc.automaton.on_message(proc.ctx, msg, env["origin"])


def run(config: SimConfig, automaton_factory: Callable[[int], Automaton],
        workload: Iterable[WorkItem]) -> Trace:
    """Execute one simulation to quiescence or event-budget exhaustion and
    return its replayable trace.

    The run stops scheduling periodic ticks and new timers once every
    workload operation at the configured termination set has responded
    (default: every workload operation); remaining queued events then drain
    so that every surviving send gets its delivery. Empty workloads never
    wind down and run until the event budget is spent.
    """
    return Runtime(config, automaton_factory, list(workload)).run()
