"""gNB scheduling: fixed control-plane pattern plus dynamic data grants.

Structure of one scheduling resource period (T_SRP, 8 mini-slots):
mini-slots 0-3 form the control region (PUCCH/PDCCH columns), mini-slots
4-6 carry PUSCH and mini-slot 7 carries PDSCH.

The control pattern repeats with a fixed period of one *communication
cycle* (2 ms by default).  At 30 kHz spacing a cycle is exactly one T_SRP;
at 60/120 kHz it spans 2/4 consecutive T_SRPs and the active control
region is the first one of the cycle.  Each cycle serves up to
floor(n_rb / 2) terminals: every served terminal owns two PUCCH/PDCCH
resource pairs (two RB columns of the control region).  Terminals are
partitioned into capacity-sized groups served in consecutive cycles, so a
population of N needs ceil(N / capacity) cycles per full rotation; this is
what produces the stepwise latency growth when N crosses a multiple of the
capacity.

Data-plane rules:
  * an uplink PDU is split into 1-RB data messages placed first-fit into
    the PUSCH mini-slots of a single T_SRP (budget 3 * n_rb per T_SRP);
    if it does not fit it carries over to the next T_SRP,
  * uplink HARQ retransmissions keep their grant: they re-enter at the
    next T_SRP with budget, ahead of new data, without a new PUCCH,
  * downlink PDUs are announced in the terminal's serving cycle and ride
    the cycle-closing PDSCH mini-slot (budget n_rb per cycle); deferred or
    failed downlink blocks wait for the terminal's next serving cycle,
    because a PDSCH needs an announcing PDCCH and those exist only in the
    terminal's control pattern slots.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .phy import (
    ConfigurationError,
    MINISLOTS_PER_SRP,
    RadioConfig,
    n_rb as grid_n_rb,
    srp_duration_ms,
)

DEFAULT_CYCLE_MS = 2.0
CONTROL_MINISLOTS = 4
PUSCH_MINISLOTS = 3
PDSCH_MINISLOTS = 1

POLICIES = ("fifo", "rr")


@dataclass(frozen=True)
class CycleLayout:
    """Static timing geometry of one communication cycle."""

    n_rb: int
    minislot_ms: float
    srp_ms: float
    srp_per_cycle: int
    cycle_ms: float
    control_minislots: int = CONTROL_MINISLOTS
    pusch_minislots: int = PUSCH_MINISLOTS
    pdsch_minislots: int = PDSCH_MINISLOTS

    @property
    def control_end_offset_ms(self) -> float:
        return self.control_minislots * self.minislot_ms

    def pusch_region_start(self, srp: int) -> float:
        """Offset of the first PUSCH mini-slot of a T_SRP from cycle start."""
        return srp * self.srp_ms + self.control_minislots * self.minislot_ms

    def pusch_minislot_end(self, srp: int, slot: int) -> float:
        return self.pusch_region_start(srp) + (slot + 1) * self.minislot_ms


def cycle_layout(
    config: RadioConfig,
    cycle_ms: float = DEFAULT_CYCLE_MS,
    pusch_minislots: int = PUSCH_MINISLOTS,
    pdsch_minislots: int = PDSCH_MINISLOTS,
) -> CycleLayout:
    if pusch_minislots + pdsch_minislots != MINISLOTS_PER_SRP - CONTROL_MINISLOTS:
        raise ConfigurationError(
            "data plane must fill the 4 non-control mini-slots of a T_SRP"
        )
    srp_ms = srp_duration_ms(config.numerology)
    srp_per_cycle = max(1, int(round(cycle_ms / srp_ms)))
    return CycleLayout(
        n_rb=grid_n_rb(config),
        minislot_ms=config.numerology.minislot_duration_ms(),
        srp_ms=srp_ms,
        srp_per_cycle=srp_per_cycle,
        cycle_ms=srp_per_cycle * srp_ms,
        pusch_minislots=pusch_minislots,
        pdsch_minislots=pdsch_minislots,
    )


def control_capacity(n_rb: int) -> int:
    """Terminals servable per cycle: each needs two PUCCH/PDCCH pairs."""
    if n_rb < 1:
        raise ConfigurationError("need at least one resource block")
    capacity = n_rb // 2
    if capacity < 1:
        raise ConfigurationError("control region too small to serve any terminal")
    return capacity


def rotation_cycles(n_ues: int, capacity: int) -> int:
    """Cycles needed before the serving pattern repeats."""
    return max(1, -(-n_ues // capacity))


def assign_control(cycle_index: int, ue_ids, capacity: int) -> tuple[int, ...]:
    """Control-served terminals in the given cycle.

    The ordered population is partitioned into capacity-sized groups;
    group g is served in cycles where cycle_index % rotation == g.  No
    terminal is skipped over any full rotation.
    """
    ordered = sorted(ue_ids)
    if not ordered:
        return ()
    rotation = rotation_cycles(len(ordered), capacity)
    group = cycle_index % rotation
    return tuple(ordered[group * capacity : (group + 1) * capacity])


@dataclass
class TransportBlock:
    """One PDU in flight: the token ties scheduler events to the caller."""

    ue_id: int
    n_messages: int
    eligible_ms: float
    token: object = None
    attempts: int = 0
    grant_ms: float | None = None  # first PUCCH/PDCCH (or announcement) time
    ready_ms: float | None = None  # earliest next transmission opportunity


def harq_step(tb: TransportBlock, outcomes, delivery_ms: float, retx_ready_ms: float):
    """Resolve one transmission attempt.

    Returns ("ack", delivery_ms) when every data message of the block was
    received, else ("nack", retx_ready_ms); the attempt counter increments
    either way and nacked blocks are requeued ahead of new data.
    """
    tb.attempts += 1
    if all(outcomes):
        return "ack", delivery_ms
    tb.ready_ms = retx_ready_ms
    return "nack", retx_ready_ms


@dataclass
class Delivery:
    kind: str  # "ul" | "dl"
    token: object
    ue_id: int
    delivery_ms: float
    attempts: int
    control_ms: float  # PUCCH/grant (ul) or first announcement (dl)


@dataclass
class GrantLog:
    """Per-cycle record of every resource-block grant, for invariant audits."""

    rows: list = field(default_factory=list)  # (cycle, minislot, ue, kind, rb0, nrb)

    def add(self, cycle: int, minislot: int, ue: int, kind: str, rb0: int, nrb: int):
        self.rows.append((cycle, minislot, ue, kind, rb0, nrb))

    def audit(self, n_rb: int) -> None:
        """Raise if a mini-slot is oversubscribed, an RB double-granted, or a
        terminal both transmits and receives within one mini-slot."""
        used: dict[tuple[int, int], set[int]] = {}
        direction: dict[tuple[int, int, int], set[str]] = {}
        tx_kinds = {"PUSCH", "PUCCH"}
        for cycle, minislot, ue, kind, rb0, nrb in self.rows:
            key = (cycle, minislot)
            rbs = used.setdefault(key, set())
            span = set(range(rb0, rb0 + nrb))
            if rbs & span:
                raise AssertionError(f"RB double-granted in cycle {cycle} ms {minislot}")
            rbs |= span
            if max(span) >= n_rb:
                raise AssertionError(f"grant beyond grid in cycle {cycle} ms {minislot}")
            dirs = direction.setdefault((cycle, minislot, ue), set())
            dirs.add("tx" if kind in tx_kinds else "rx")
            if len(dirs) > 1:
                raise AssertionError(
                    f"half-duplex violation: UE {ue} cycle {cycle} ms {minislot}"
                )


def grant_log_csv(log: GrantLog, layout: CycleLayout, header_lines=()) -> str:
    """Flat dump of every grant, keyed by global T_SRP index."""
    lines = [f"# {line}" for line in header_lines]
    lines.append("srp_index,minislot,ue_id,kind,rb_start,rb_len")
    for cycle, minislot, ue, kind, rb0, nrb in log.rows:
        srp_index = cycle * layout.srp_per_cycle + minislot // MINISLOTS_PER_SRP
        lines.append(
            f"{srp_index},{minislot % MINISLOTS_PER_SRP},{ue},{kind},{rb0},{nrb}"
        )
    return "\n".join(lines) + "\n"


class GnbScheduler:
    """Mutable per-replication scheduling state.

    Owned by a single replication; strictly single-threaded.  Channel
    objects only need a sample() -> bool method, called once per data
    message, which lets tests drive the scheduler with scripted outcomes.
    """

    def __init__(
        self,
        layout: CycleLayout,
        ue_ids,
        ul_channels: dict,
        dl_channels: dict,
        ul_rbs_per_pdu: int,
        dl_rbs_per_pdu: int,
        policy: str = "fifo",
        grant_log: GrantLog | None = None,
    ):
        if policy not in POLICIES:
            raise ConfigurationError(f"unknown policy {policy!r}; choose from {POLICIES}")
        for rbs, label in ((ul_rbs_per_pdu, "uplink"), (dl_rbs_per_pdu, "downlink")):
            if rbs > layout.n_rb:
                raise ConfigurationError(
                    f"{label} PDU needs {rbs} RBs but the grid has {layout.n_rb}; "
                    "segmentation across mini-slots is not supported"
                )
        self.layout = layout
        self.ue_ids = sorted(ue_ids)
        self.capacity = control_capacity(layout.n_rb)
        self.rotation = rotation_cycles(len(self.ue_ids), self.capacity)
        self.ul_channels = ul_channels
        self.dl_channels = dl_channels
        self.ul_rbs = ul_rbs_per_pdu
        self.dl_rbs = dl_rbs_per_pdu
        self.policy = policy
        self.grant_log = grant_log

        self._ul_waiting: dict[int, deque] = {u: deque() for u in self.ue_ids}
        self._dl_waiting: dict[int, deque] = {u: deque() for u in self.ue_ids}
        self._ul_granted: list[TransportBlock] = []  # control done, awaiting RBs
        self._ul_retx: list[TransportBlock] = []
        self._dl_pending: dict[int, list] = {u: [] for u in self.ue_ids}

    # -- job submission ---------------------------------------------------

    def submit_uplink(self, ue_id: int, eligible_ms: float, token=None) -> None:
        self._ul_waiting[ue_id].append(
            TransportBlock(ue_id, self.ul_rbs, eligible_ms, token)
        )

    def submit_downlink(self, ue_id: int, eligible_ms: float, token=None) -> None:
        tb = TransportBlock(ue_id, self.dl_rbs, eligible_ms, token)
        tb.ready_ms = eligible_ms
        self._dl_waiting[ue_id].append(tb)

    def served_ues(self, cycle_index: int) -> tuple[int, ...]:
        return assign_control(cycle_index, self.ue_ids, self.capacity)

    @property
    def backlog(self) -> int:
        return (
            sum(len(q) for q in self._ul_waiting.values())
            + sum(len(q) for q in self._dl_waiting.values())
            + len(self._ul_granted)
            + len(self._ul_retx)
            + sum(len(v) for v in self._dl_pending.values())
        )

    # -- cycle execution --------------------------------------------------

    def _order_new(self, jobs: list, cycle_index: int) -> None:
        if self.policy == "rr":
            n = len(self.ue_ids)
            rot = cycle_index % n if n else 0
            jobs.sort(key=lambda j: ((j.ue_id - rot) % n, j.eligible_ms, j.ue_id))
        else:
            jobs.sort(key=lambda j: (j.eligible_ms, j.ue_id))

    def run_cycle(self, cycle_index: int) -> list[Delivery]:
        lay = self.layout
        cycle_start = cycle_index * lay.cycle_ms
        control_end = cycle_start + lay.control_end_offset_ms
        served = self.served_ues(cycle_index)
        deliveries: list[Delivery] = []

        # Control phase: grant eligible uplink requests and announce pending
        # downlink blocks of the served group.  Control events carry the
        # timestamp of the control-region end.
        fresh_ul: list[TransportBlock] = []
        dl_candidates: list[TransportBlock] = []
        for slot, ue in enumerate(served):
            active = False
            queue = self._ul_waiting[ue]
            while queue and queue[0].eligible_ms <= cycle_start:
                tb = queue.popleft()
                tb.grant_ms = control_end
                fresh_ul.append(tb)
                active = True
            pending = self._dl_pending[ue]
            if pending:
                ready = [tb for tb in pending if tb.ready_ms <= cycle_start]
                if ready:
                    self._dl_pending[ue] = [
                        tb for tb in pending if tb.ready_ms > cycle_start
                    ]
                    dl_candidates.extend(ready)
                    active = True
            waiting = self._dl_waiting[ue]
            while waiting and waiting[0].eligible_ms <= cycle_start:
                tb = waiting.popleft()
                tb.grant_ms = control_end
                dl_candidates.append(tb)
                active = True
            if self.grant_log is not None and active:
                # a served terminal owns RB columns 2*slot and 2*slot+1
                self.grant_log.add(cycle_index, 0, ue, "PUCCH", 2 * slot, 1)
                self.grant_log.add(cycle_index, 1, ue, "PDCCH", 2 * slot, 1)
                self.grant_log.add(cycle_index, 2, ue, "PUCCH", 2 * slot + 1, 1)
                self.grant_log.add(cycle_index, 3, ue, "PDCCH", 2 * slot + 1, 1)

        self._order_new(fresh_ul, cycle_index)
        self._ul_granted.extend(fresh_ul)

        for srp in range(lay.srp_per_cycle):
            if self._ul_retx or self._ul_granted:
                deliveries.extend(self._run_pusch(cycle_index, cycle_start, srp))
            if srp == lay.srp_per_cycle - 1 and dl_candidates:
                deliveries.extend(
                    self._run_pdsch(cycle_index, cycle_start, dl_candidates)
                )
        return deliveries

    def _run_pusch(self, cycle_index: int, cycle_start: float, srp: int):
        lay = self.layout
        srp_start = cycle_start + srp * lay.srp_ms
        region_open = cycle_start + lay.pusch_region_start(srp)
        free = [lay.n_rb] * lay.pusch_minislots
        deliveries: list[Delivery] = []

        retx_now = [tb for tb in self._ul_retx if tb.ready_ms <= srp_start]
        retx_now.sort(key=lambda j: (j.ready_ms, j.ue_id))
        retx_later = [tb for tb in self._ul_retx if tb.ready_ms > srp_start]
        fresh = [tb for tb in self._ul_granted if tb.grant_ms <= region_open]
        held = [tb for tb in self._ul_granted if tb.grant_ms > region_open]

        keep_retx: list[TransportBlock] = []
        keep_fresh: list[TransportBlock] = []
        for tb, is_retx in [(t, True) for t in retx_now] + [(t, False) for t in fresh]:
            if sum(free) < tb.n_messages:
                (keep_retx if is_retx else keep_fresh).append(tb)
                continue
            placements = self._place_messages(tb.n_messages, free)
            outcomes: list[bool] = []
            channel = self.ul_channels[tb.ue_id]
            last_slot = 0
            for slot, rb0, count in placements:
                last_slot = slot
                for _ in range(count):
                    outcomes.append(channel.sample())
                if self.grant_log is not None:
                    minislot = srp * MINISLOTS_PER_SRP + lay.control_minislots + slot
                    self.grant_log.add(
                        cycle_index, minislot, tb.ue_id, "PUSCH", rb0, count
                    )
            end_ms = cycle_start + lay.pusch_minislot_end(srp, last_slot)
            verdict, when = harq_step(tb, outcomes, end_ms, srp_start + lay.srp_ms)
            if verdict == "ack":
                deliveries.append(
                    Delivery("ul", tb.token, tb.ue_id, when, tb.attempts, tb.grant_ms)
                )
            else:
                keep_retx.append(tb)

        self._ul_retx = retx_later + keep_retx
        self._ul_granted = keep_fresh + held
        return deliveries

    def _place_messages(self, n_messages: int, free: list[int]):
        """First-fit 1-RB messages into the T_SRP's PUSCH mini-slots.

        Returns (slot, first_rb, count) triples and decrements `free`.
        """
        placements = []
        remaining = n_messages
        for slot in range(len(free)):
            if remaining == 0:
                break
            take = min(free[slot], remaining)
            if take:
                rb0 = self.layout.n_rb - free[slot]
                placements.append((slot, rb0, take))
                free[slot] -= take
                remaining -= take
        return placements

    def _run_pdsch(self, cycle_index: int, cycle_start: float, candidates: list):
        lay = self.layout
        free = [lay.n_rb] * lay.pdsch_minislots
        cycle_end = cycle_start + lay.cycle_ms
        first_minislot = lay.srp_per_cycle * MINISLOTS_PER_SRP - lay.pdsch_minislots
        deliveries: list[Delivery] = []

        retx_first = sorted(
            (tb for tb in candidates if tb.attempts > 0),
            key=lambda j: (j.ready_ms, j.ue_id),
        )
        fresh = [tb for tb in candidates if tb.attempts == 0]
        self._order_new(fresh, cycle_index)

        for tb in retx_first + fresh:
            if sum(free) < tb.n_messages:
                # no room in this cycle's PDSCH region: wait for the
                # terminal's next serving cycle (a fresh PDCCH is needed)
                tb.ready_ms = cycle_end
                self._dl_pending[tb.ue_id].append(tb)
                continue
            placements = self._place_messages(tb.n_messages, free)
            channel = self.dl_channels[tb.ue_id]
            outcomes: list[bool] = []
            last_slot = 0
            for slot, rb0, count in placements:
                last_slot = slot
                for _ in range(count):
                    outcomes.append(channel.sample())
                if self.grant_log is not None:
                    self.grant_log.add(
                        cycle_index, first_minislot + slot, tb.ue_id, "PDSCH",
                        rb0, count,
                    )
            end_ms = cycle_end - (lay.pdsch_minislots - 1 - last_slot) * lay.minislot_ms
            verdict, when = harq_step(tb, outcomes, end_ms, cycle_end)
            if verdict == "ack":
                deliveries.append(
                    Delivery("dl", tb.token, tb.ue_id, when, tb.attempts, tb.grant_ms)
                )
            else:
                self._dl_pending[tb.ue_id].append(tb)
        return deliveries
