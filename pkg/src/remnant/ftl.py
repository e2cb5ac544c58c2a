"""Deterministic page-mapped flash-translation-layer simulator.

The point of the model is remanence: an overwrite or trim never touches
the old physical page, it only remaps.  Stale payloads survive until
garbage collection erases their block, and a block that reaches its
erase-endurance limit is retired with every payload frozen in place.
Garbage collection is the only operation that destroys a stale payload.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from enum import Enum

ERASED_BYTE = 0xFF


class FtlError(Exception):
    """Base error for the simulator."""


class DeviceFull(FtlError):
    """No free page exists even after garbage collection."""


class ReadOnlyDevice(FtlError):
    """The reserve pool is exhausted; writes are refused."""


class FlashRangeError(FtlError):
    """Logical page number or payload size out of range."""


class PageState(Enum):
    FREE = "free"
    VALID = "valid"
    STALE = "stale"


@dataclass(frozen=True)
class FlashGeometry:
    """Device shape.  The default endurance limit follows commodity
    NAND (10,000 program/erase cycles); desk_geometry() scales it down
    so experiments exercise retirement quickly."""

    block_count: int = 8
    pages_per_block: int = 32
    page_size: int = 2048
    reserve_blocks: int = 1
    endurance_limit: int = 10_000

    def __post_init__(self):
        if min(self.block_count, self.pages_per_block, self.page_size,
               self.endurance_limit) <= 0:
            raise FlashRangeError("geometry fields must be positive")
        if not 0 <= self.reserve_blocks < self.block_count:
            raise FlashRangeError("reserve must be smaller than the device")
        if self.block_count - self.reserve_blocks < 2:
            raise FlashRangeError("need at least two active blocks")

    @property
    def total_pages(self) -> int:
        return self.block_count * self.pages_per_block

    @property
    def active_blocks(self) -> int:
        return self.block_count - self.reserve_blocks

    @property
    def logical_pages(self) -> int:
        # One active block is over-provisioned headroom so garbage
        # collection always has somewhere to relocate valid pages.
        return (self.active_blocks - 1) * self.pages_per_block

    @property
    def erased_page(self) -> bytes:
        return bytes([ERASED_BYTE]) * self.page_size


def desk_geometry() -> FlashGeometry:
    """The small deterministic geometry used throughout the tests:
    8 blocks x 32 pages x 2048 B, one reserve block, endurance 10."""
    return FlashGeometry(block_count=8, pages_per_block=32, page_size=2048,
                         reserve_blocks=1, endurance_limit=10)


@dataclass
class PhysicalPage:
    state: PageState
    payload: bytes
    lpn: int | None = None
    timestamp: int = 0


@dataclass
class BlockState:
    erase_count: int = 0
    retired: bool = False
    replacement: int | None = None


@dataclass
class PageDump:
    """One physical page as the forensic interface exposes it."""

    block: int
    page: int
    tag: str          # free | valid | stale | retired
    payload: bytes
    lpn: int | None
    timestamp: int

    def digest(self) -> str:
        return hashlib.sha256(self.payload).hexdigest()


class FtlState:
    """The whole device: geometry, page array, mapping table, wear."""

    def __init__(self, geometry: FlashGeometry | None = None, seed: int = 0,
                 gc_enabled: bool = True, gc_threshold: float = 0.125):
        self.geometry = geometry or FlashGeometry()
        self.seed = seed
        self.gc_enabled = gc_enabled
        self.gc_threshold = gc_threshold
        g = self.geometry
        erased = g.erased_page
        self.pages = [PhysicalPage(PageState.FREE, erased)
                      for _ in range(g.total_pages)]
        self.blocks = [BlockState() for _ in range(g.block_count)]
        self.mapping: dict[int, int] = {}
        # The highest-numbered blocks are held back for bad-block
        # replacement and take no writes until a retirement pulls one in.
        self.allocatable = list(range(g.active_blocks))
        self.reserve_pool = list(range(g.active_blocks, g.block_count))
        self.op_counter = 1
        self.read_only = False
        self.gc_runs = 0
        self.retired_count = 0

    # -- bookkeeping -------------------------------------------------

    def _ppn(self, block: int, page: int) -> int:
        return block * self.geometry.pages_per_block + page

    def block_pages(self, block: int):
        start = block * self.geometry.pages_per_block
        return range(start, start + self.geometry.pages_per_block)

    def _counts_in_block(self, block: int, state: PageState) -> int:
        return sum(1 for p in self.block_pages(block)
                   if self.pages[p].state is state)

    def free_pages_active(self) -> int:
        return sum(self._counts_in_block(b, PageState.FREE)
                   for b in self.allocatable)

    def active_capacity(self) -> int:
        return len(self.allocatable) * self.geometry.pages_per_block

    def page_state_counts(self) -> dict[str, int]:
        counts = {"free": 0, "valid": 0, "stale": 0}
        for p in self.pages:
            counts[p.state.value] += 1
        return counts

    def check_conservation(self) -> bool:
        counts = self.page_state_counts()
        return sum(counts.values()) == self.geometry.total_pages

    def _allocate(self, exclude: int | None = None) -> int | None:
        """Greedy wear-leveling: the free page in the lowest-erase-count
        allocatable block; ties break to the lowest block index."""
        best = None
        for b in self.allocatable:
            if b == exclude or self.blocks[b].retired:
                continue
            for p in self.block_pages(b):
                if self.pages[p].state is PageState.FREE:
                    key = (self.blocks[b].erase_count, b)
                    if best is None or key < best[0]:
                        best = (key, p)
                    break
        return None if best is None else best[1]

    # -- host-facing operations ---------------------------------------

    def write(self, lpn: int, data: bytes) -> int:
        """Out-of-place write; the previous physical page goes stale
        with its payload untouched.  Returns the physical page used."""
        if self.read_only:
            raise ReadOnlyDevice("device is read-only: reserve exhausted")
        if not 0 <= lpn < self.geometry.logical_pages:
            raise FlashRangeError("logical page %d out of range" % lpn)
        if len(data) != self.geometry.page_size:
            raise FlashRangeError("payload must be exactly one page")
        if (self.gc_enabled and
                self.free_pages_active() * 1.0
                < self.gc_threshold * self.active_capacity()):
            self.garbage_collect()
        ppn = self._allocate()
        if ppn is None and self.gc_enabled:
            self.garbage_collect()
            ppn = self._allocate()
        if ppn is None:
            raise DeviceFull("device full")
        page = self.pages[ppn]
        page.state = PageState.VALID
        page.payload = bytes(data)
        page.lpn = lpn
        page.timestamp = self.op_counter
        self.op_counter += 1
        old = self.mapping.get(lpn)
        if old is not None:
            self.pages[old].state = PageState.STALE
        self.mapping[lpn] = ppn
        return ppn

    def read(self, lpn: int) -> bytes:
        """Mapped pages return their payload; unmapped logical pages
        read as the erased pattern — the host never sees remnants."""
        if not 0 <= lpn < self.geometry.logical_pages:
            raise FlashRangeError("logical page %d out of range" % lpn)
        ppn = self.mapping.get(lpn)
        if ppn is None:
            return self.geometry.erased_page
        return bytes(self.pages[ppn].payload)

    def trim(self, lpn: int) -> None:
        """Drop the mapping; the physical payload stays put as stale."""
        if not 0 <= lpn < self.geometry.logical_pages:
            raise FlashRangeError("logical page %d out of range" % lpn)
        ppn = self.mapping.pop(lpn, None)
        if ppn is not None:
            self.pages[ppn].state = PageState.STALE

    # -- maintenance ---------------------------------------------------

    def garbage_collect(self) -> bool:
        """Reclaim the block with the most stale pages (ties: lowest
        index).  Valid pages are relocated first, leaving stale copies
        behind until the erase itself.  A block whose next erase would
        reach the endurance limit is retired instead of erased."""
        victim = None
        victim_stale = 0
        for b in self.allocatable:
            if self.blocks[b].retired:
                continue
            stale = self._counts_in_block(b, PageState.STALE)
            if stale > victim_stale:
                victim, victim_stale = b, stale
        if victim is None:
            return False
        if self.blocks[victim].erase_count + 1 >= self.geometry.endurance_limit:
            return self.retire_block(victim)
        for p in self.block_pages(victim):
            src = self.pages[p]
            if src.state is not PageState.VALID:
                continue
            target = self._allocate(exclude=victim)
            if target is None:
                raise DeviceFull("no room to relocate during collection")
            dst = self.pages[target]
            dst.state = PageState.VALID
            dst.payload = src.payload
            dst.lpn = src.lpn
            dst.timestamp = self.op_counter
            self.op_counter += 1
            self.mapping[src.lpn] = target
            src.state = PageState.STALE
        erased = self.geometry.erased_page
        for p in self.block_pages(victim):
            page = self.pages[p]
            page.state = PageState.FREE
            page.payload = erased
            page.lpn = None
            page.timestamp = 0
        self.blocks[victim].erase_count += 1
        self.gc_runs += 1
        return True

    def retire_block(self, block: int) -> bool:
        """Freeze a worn-out block and swap in a reserve block.

        Valid pages are copied page-for-page into the replacement; the
        retired block is never erased again, so everything it holds —
        valid-at-retirement and stale alike — stays readable through
        forensic_dump forever.  With no reserve left the device drops
        to read-only instead.
        """
        blk = self.blocks[block]
        if blk.retired:
            raise FtlError("block %d already retired" % block)
        if blk.erase_count < self.geometry.endurance_limit - 1:
            raise FtlError("block %d is not at the endurance limit" % block)
        if not self.reserve_pool:
            self.read_only = True
            return False
        repl = self.reserve_pool.pop(0)
        ppb = self.geometry.pages_per_block
        for offset in range(ppb):
            src = self.pages[self._ppn(block, offset)]
            if src.state is not PageState.VALID:
                continue
            dst = self.pages[self._ppn(repl, offset)]
            dst.state = PageState.VALID
            dst.payload = src.payload
            dst.lpn = src.lpn
            dst.timestamp = self.op_counter
            self.op_counter += 1
            self.mapping[src.lpn] = self._ppn(repl, offset)
        blk.retired = True
        blk.replacement = repl
        # The forgone final erase is what wore the block out; account it.
        blk.erase_count = max(blk.erase_count, self.geometry.endurance_limit)
        self.allocatable = sorted(set(self.allocatable) - {block} | {repl})
        self.retired_count += 1
        return True

    # -- forensic interface --------------------------------------------

    def forensic_dump(self) -> list[PageDump]:
        """Every physical page, payload verbatim.  Pages in retired
        blocks are tagged 'retired' whatever their frozen state was."""
        out = []
        ppb = self.geometry.pages_per_block
        for b in range(self.geometry.block_count):
            retired = self.blocks[b].retired
            for p in range(ppb):
                page = self.pages[self._ppn(b, p)]
                out.append(PageDump(
                    block=b, page=p,
                    tag="retired" if retired else page.state.value,
                    payload=page.payload,
                    lpn=page.lpn,
                    timestamp=page.timestamp,
                ))
        return out

    def state_hash(self) -> str:
        """Stable digest of the complete device state."""
        h = hashlib.sha256()
        g = self.geometry
        h.update(struct.pack("<5q", g.block_count, g.pages_per_block,
                             g.page_size, g.reserve_blocks, g.endurance_limit))
        for page in self.pages:
            h.update(struct.pack(
                "<bqq", list(PageState).index(page.state),
                -1 if page.lpn is None else page.lpn, page.timestamp))
            h.update(page.payload)
        for blk in self.blocks:
            h.update(struct.pack(
                "<qbq", blk.erase_count, blk.retired,
                -1 if blk.replacement is None else blk.replacement))
        for lpn in sorted(self.mapping):
            h.update(struct.pack("<qq", lpn, self.mapping[lpn]))
        h.update(struct.pack("<q", len(self.reserve_pool)))
        for b in self.reserve_pool:
            h.update(struct.pack("<q", b))
        h.update(struct.pack("<bq", self.read_only, self.op_counter))
        return h.hexdigest()


# -- remanence auditing ------------------------------------------------


@dataclass
class PayloadAudit:
    digest: str
    lpns: list[int]
    live: int
    stale: int
    retired: int

    @property
    def copies(self) -> int:
        return self.live + self.stale + self.retired

    def as_dict(self) -> dict:
        return {"digest": self.digest, "lpns": self.lpns, "live": self.live,
                "stale": self.stale, "retired": self.retired,
                "copies": self.copies}


@dataclass
class RemanenceReport:
    payloads: list[PayloadAudit]
    live_copies: int
    stale_copies: int
    retired_copies: int
    recoverable_bytes: int

    def as_dict(self) -> dict:
        return {
            "payloads": [p.as_dict() for p in self.payloads],
            "live_copies": self.live_copies,
            "stale_copies": self.stale_copies,
            "retired_copies": self.retired_copies,
            "recoverable_bytes": self.recoverable_bytes,
        }


def remanence_audit(dump: list[PageDump], history) -> RemanenceReport:
    """Count the physical copies of every historical payload.

    ``history`` is the experiment's write log: (lpn, payload) pairs or
    bare payloads.  Recoverable bytes counts stale and retired copies —
    data the host can no longer address but a chip-level dump still
    yields."""
    order: list[bytes] = []
    lpns_by_payload: dict[bytes, set] = {}
    for item in history:
        if isinstance(item, (bytes, bytearray)):
            lpn, payload = None, bytes(item)
        else:
            lpn, payload = item[0], bytes(item[1])
        if payload not in lpns_by_payload:
            lpns_by_payload[payload] = set()
            order.append(payload)
        if lpn is not None:
            lpns_by_payload[payload].add(lpn)

    rows = []
    live_total = stale_total = retired_total = 0
    recoverable = 0
    for payload in order:
        live = stale = retired = 0
        for d in dump:
            if d.payload != payload:
                continue
            if d.tag == "valid":
                live += 1
            elif d.tag == "stale":
                stale += 1
            elif d.tag == "retired":
                retired += 1
        rows.append(PayloadAudit(
            digest=hashlib.sha256(payload).hexdigest(),
            lpns=sorted(lpns_by_payload[payload]),
            live=live, stale=stale, retired=retired,
        ))
        live_total += live
        stale_total += stale
        retired_total += retired
        recoverable += (stale + retired) * len(payload)
    return RemanenceReport(
        payloads=rows,
        live_copies=live_total,
        stale_copies=stale_total,
        retired_copies=retired_total,
        recoverable_bytes=recoverable,
    )


# -- canned experiments -------------------------------------------------


@dataclass
class CycleStats:
    iteration: int
    recoverable_bytes: int
    copy_count: int
    byte_identical_fraction: float

    def as_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "recoverable_bytes": self.recoverable_bytes,
            "copy_count": self.copy_count,
            "byte_identical_fraction": self.byte_identical_fraction,
        }


@dataclass
class CycleExperimentResult:
    iterations: list[CycleStats]
    final_audit: RemanenceReport
    ended_early: bool = False


def run_cycle_experiment(state: FtlState, payloads: list[bytes],
                         iterations: int,
                         force_gc: bool = False) -> CycleExperimentResult:
    """Delete files, recover them onto the same device, delete again.

    Each iteration copies every payload still present anywhere in the
    dump back as a fresh write (the recovery), snapshots statistics,
    then trims everything again.  Every recover leaves one more stale
    copy behind, which is exactly the multiplication the remanence
    audit is built to show.  Runs end early if the device fills.
    """
    if len(payloads) > state.geometry.logical_pages:
        raise FlashRangeError("payload set does not fit the device")
    history = [(i, bytes(p)) for i, p in enumerate(payloads)]
    for lpn, payload in history:
        state.write(lpn, payload)
    for lpn, _ in history:
        state.trim(lpn)

    stats: list[CycleStats] = []
    ended_early = False
    for it in range(1, iterations + 1):
        if force_gc:
            state.garbage_collect()
        present = {d.payload for d in state.forensic_dump()
                   if d.tag in ("valid", "stale", "retired")}
        recovered = [lpn for lpn, p in history if p in present]
        try:
            for lpn in recovered:
                state.write(lpn, history[lpn][1])
        except (DeviceFull, ReadOnlyDevice):
            ended_early = True
        audit = remanence_audit(state.forensic_dump(), history)
        stats.append(CycleStats(
            iteration=it,
            recoverable_bytes=audit.recoverable_bytes,
            copy_count=(audit.live_copies + audit.stale_copies
                        + audit.retired_copies),
            byte_identical_fraction=len(recovered) / len(history),
        ))
        for lpn, _ in history:
            state.trim(lpn)
        if ended_early:
            break
    return CycleExperimentResult(
        iterations=stats,
        final_audit=remanence_audit(state.forensic_dump(), history),
        ended_early=ended_early,
    )


def _pattern_payload(n: int, page_size: int) -> bytes:
    return (struct.pack("<Q", n) * ((page_size + 7) // 8))[:page_size]


def run_retirement_experiment(state: FtlState, max_operations: int = 100_000):
    """Churn writes until a block retires (or the device gives up).

    Returns the number of writes issued.  Deterministic: payloads are
    derived from the operation counter."""
    ops = 0
    lpn = 0
    logical = state.geometry.logical_pages
    while state.retired_count == 0 and ops < max_operations:
        try:
            state.write(lpn, _pattern_payload(ops, state.geometry.page_size))
        except (DeviceFull, ReadOnlyDevice):
            break
        ops += 1
        lpn = (lpn + 1) % max(1, logical // 4)  # hammer a quarter of the space
    return ops


def random_operation(state: FtlState, rng) -> str:
    """One random host operation; full/read-only errors are swallowed
    so long random sequences can run to completion."""
    logical = state.geometry.logical_pages
    roll = rng.random()
    try:
        if roll < 0.60:
            state.write(rng.randrange(logical),
                        rng.randbytes(state.geometry.page_size))
            return "write"
        if roll < 0.85:
            state.trim(rng.randrange(logical))
            return "trim"
        if roll < 0.95:
            state.read(rng.randrange(logical))
            return "read"
        state.garbage_collect()
        return "gc"
    except (DeviceFull, ReadOnlyDevice):
        return "skipped"


def apply_random_operations(state: FtlState, count: int, rng) -> dict[str, int]:
    tally: dict[str, int] = {}
    for _ in range(count):
        op = random_operation(state, rng)
        tally[op] = tally.get(op, 0) + 1
    return tally
