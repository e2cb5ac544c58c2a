"""FAT12/16/32 directory scanning and deleted-entry recovery.

Deletion on FAT only swaps the first name byte for 0xE5 and zeroes the
file's FAT chain; the rest of the directory entry (size, first cluster,
timestamps) survives.  Recovery therefore reads the entry as-is and
rebuilds the chain by contiguity, skipping clusters that live files
have since claimed.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field

from .report import RecoveredFile, cluster_runs
from .volume import (
    FsKind,
    VolumeDescriptor,
    VolumeError,
    VolumeImage,
    cluster_offset,
    read_clusters,
)

DIR_ENTRY_SIZE = 32
DELETED_MARK = 0xE5
END_MARK = 0x00
KANJI_LEAD = 0x05          # stored stand-in for a real leading 0xE5
DELETED_SUBSTITUTE = "_"   # what we print for the lost first character

ATTR_READ_ONLY = 0x01
ATTR_HIDDEN = 0x02
ATTR_SYSTEM = 0x04
ATTR_VOLUME_ID = 0x08
ATTR_DIRECTORY = 0x10
ATTR_ARCHIVE = 0x20
ATTR_LFN = 0x0F            # long-file-name fragment marker

LFN_LAST_FLAG = 0x40
LFN_SEQ_MASK = 0x1F

DOT_NAME = b".          "
DOTDOT_NAME = b"..         "

# End-of-chain and bad-cluster markers per FAT width.
_EOC_MIN = {FsKind.FAT12: 0xFF8, FsKind.FAT16: 0xFFF8, FsKind.FAT32: 0x0FFFFFF8}
_BAD = {FsKind.FAT12: 0xFF7, FsKind.FAT16: 0xFFF7, FsKind.FAT32: 0x0FFFFFF7}
FAT32_ENTRY_MASK = 0x0FFFFFFF


class FatError(Exception):
    """Base error for FAT handling."""


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def fat_datetime_to_iso(date: int, time: int) -> str | None:
    """Decode the packed FAT date/time words; None for the zero stamp."""
    if date == 0:
        return None
    year = 1980 + (date >> 9)
    month = (date >> 5) & 0x0F
    day = date & 0x1F
    hour = time >> 11
    minute = (time >> 5) & 0x3F
    second = (time & 0x1F) * 2
    if not (1 <= month <= 12 and 1 <= day <= 31 and hour < 24
            and minute < 60 and second < 61):
        return None
    return "%04d-%02d-%02dT%02d:%02d:%02dZ" % (
        year, month, day, hour, minute, second)


@dataclass
class FatDirEntry:
    """One 32-byte directory entry, plus where it came from."""

    raw_name: bytes
    attr: int
    nt_reserved: int
    created_time: int
    created_date: int
    modified_time: int
    modified_date: int
    first_cluster: int
    size: int
    entry_offset: int          # absolute byte offset of the entry
    dir_path: str = ""
    lfn_name: str | None = None
    orphaned: bool = False     # met through carving, not the live tree

    @property
    def deleted(self) -> bool:
        return self.raw_name[0] == DELETED_MARK

    @property
    def is_directory(self) -> bool:
        return bool(self.attr & ATTR_DIRECTORY) and not self.is_label

    @property
    def is_label(self) -> bool:
        return bool(self.attr & ATTR_VOLUME_ID) and self.attr != ATTR_LFN

    @property
    def is_dot(self) -> bool:
        return self.raw_name in (DOT_NAME, DOTDOT_NAME)

    @property
    def short_name(self) -> str:
        """8.3 name; a deleted entry's lost first byte renders as '_'."""
        raw = bytearray(self.raw_name)
        if raw[0] == KANJI_LEAD:
            raw[0] = 0xE5
        first = DELETED_SUBSTITUTE if self.deleted else chr(raw[0])
        base = (first + raw[1:8].decode("latin-1")).rstrip(" ")
        ext = raw[8:11].decode("latin-1").rstrip(" ")
        return base + "." + ext if ext else base

    @property
    def display_name(self) -> str:
        return self.lfn_name or self.short_name

    def created_iso(self) -> str | None:
        return fat_datetime_to_iso(self.created_date, self.created_time)

    def modified_iso(self) -> str | None:
        return fat_datetime_to_iso(self.modified_date, self.modified_time)


def _lfn_fragment_text(raw: bytes) -> str:
    chars = raw[1:11] + raw[14:26] + raw[28:32]
    text = chars.decode("utf-16-le", errors="replace")
    cut = text.find("\x00")
    if cut != -1:
        text = text[:cut]
    return text.rstrip("￿")


def parse_dir_slots(slots, dir_path: str, kind: FsKind, orphaned: bool = False):
    """Parse a sequence of (absolute_offset, 32-byte slot) pairs.

    Returns (entries, saw_end_marker).  Long-name fragments are folded
    into the following short entry.  Fragments in front of a deleted
    entry lose their sequence byte to the 0xE5 marker, so they are
    reassembled in reverse physical order on a best-effort basis.
    """
    entries: list[FatDirEntry] = []
    live_fragments: dict[int, str] = {}
    deleted_fragments: list[str] = []
    saw_end = False
    for offset, raw in slots:
        first = raw[0]
        if first == END_MARK:
            saw_end = True
            break
        attr = raw[11]
        if attr == ATTR_LFN:
            if first == DELETED_MARK:
                deleted_fragments.append(_lfn_fragment_text(raw))
            else:
                seq = first & LFN_SEQ_MASK
                live_fragments[seq] = _lfn_fragment_text(raw)
            continue
        time_c, date_c = struct.unpack_from("<HH", raw, 0x0E)
        hi, = struct.unpack_from("<H", raw, 0x14)
        time_m, date_m = struct.unpack_from("<HH", raw, 0x16)
        lo, = struct.unpack_from("<H", raw, 0x1A)
        size, = struct.unpack_from("<I", raw, 0x1C)
        cluster = (hi << 16 | lo) if kind is FsKind.FAT32 else lo
        lfn = None
        if first == DELETED_MARK and deleted_fragments:
            lfn = "".join(reversed(deleted_fragments))
        elif first != DELETED_MARK and live_fragments:
            lfn = "".join(live_fragments[k]
                          for k in sorted(live_fragments))
        live_fragments = {}
        deleted_fragments = []
        entries.append(FatDirEntry(
            raw_name=bytes(raw[0:11]),
            attr=attr,
            nt_reserved=raw[12],
            created_time=time_c,
            created_date=date_c,
            modified_time=time_m,
            modified_date=date_m,
            first_cluster=cluster,
            size=size,
            entry_offset=offset,
            dir_path=dir_path,
            lfn_name=lfn,
            orphaned=orphaned,
        ))
    return entries, saw_end


@dataclass
class FatTable:
    """The decoded allocation table: one integer per cluster slot."""

    kind: FsKind
    entries: list[int]

    def in_heap(self, cluster: int) -> bool:
        return 2 <= cluster < len(self.entries)

    def is_free(self, cluster: int) -> bool:
        return self.entries[cluster] == 0

    def is_bad(self, cluster: int) -> bool:
        return self.entries[cluster] == _BAD[self.kind]

    def is_eoc(self, value: int) -> bool:
        return value >= _EOC_MIN[self.kind]

    def chain_from(self, first: int, limit: int | None = None):
        """Follow a live chain.  Returns (clusters, ended_with_eoc)."""
        chain: list[int] = []
        seen: set[int] = set()
        c = first
        cap = limit if limit is not None else len(self.entries)
        while self.in_heap(c) and c not in seen and len(chain) < cap:
            seen.add(c)
            chain.append(c)
            value = self.entries[c]
            if self.is_eoc(value):
                return chain, True
            if value == 0 or value == _BAD[self.kind]:
                return chain, False
            c = value
        return chain, False


def load_fat(img: VolumeImage, desc: VolumeDescriptor) -> FatTable:
    """Decode the first FAT copy into a plain list of ints."""
    if desc.kind is FsKind.NTFS:
        raise FatError("not a FAT volume descriptor")
    bps = desc.bytes_per_sector
    raw = img.read_at(desc.reserved_sectors * bps, desc.sectors_per_fat * bps)
    n = desc.cluster_count + 2
    if desc.kind is FsKind.FAT12:
        values = []
        for i in range(n):
            o = i * 3 // 2
            pair = raw[o] | (raw[o + 1] << 8)
            values.append((pair >> 4) if i & 1 else (pair & 0xFFF))
    elif desc.kind is FsKind.FAT16:
        values = list(struct.unpack_from("<%dH" % n, raw, 0))
    else:
        values = [v & FAT32_ENTRY_MASK
                  for v in struct.unpack_from("<%dI" % n, raw, 0)]
    return FatTable(desc.kind, values)


@dataclass
class FatSurvey:
    entries: list[FatDirEntry]
    fat: FatTable
    live_clusters: set[int]
    label: str | None = None
    warnings: list[str] = field(default_factory=list)


def _read_or_none(img, offset, length):
    """Bounds-tolerant read for walking damaged volumes."""
    try:
        return img.read_at(offset, length)
    except VolumeError:
        return None


def _dir_slots_from_blocks(img, blocks):
    """Expand (offset, length) byte regions into 32-byte slots.
    Unreadable regions (truncated image) are skipped, not fatal."""
    for base, length in blocks:
        raw = _read_or_none(img, base, length)
        if raw is None:
            continue
        for pos in range(0, len(raw) - DIR_ENTRY_SIZE + 1, DIR_ENTRY_SIZE):
            yield base + pos, raw[pos:pos + DIR_ENTRY_SIZE]


def _root_blocks(img, desc, fat, live_clusters):
    bps = desc.bytes_per_sector
    if desc.kind is FsKind.FAT32:
        chain, _ = fat.chain_from(desc.root_cluster)
        live_clusters.update(chain)
        return [(cluster_offset(desc, c), desc.cluster_size) for c in chain]
    return [(desc.root_dir_sector * bps, desc.root_entries * DIR_ENTRY_SIZE)]


def _plausible_entry(raw: bytes, max_cluster: int) -> bool:
    first = raw[0]
    attr = raw[11]
    if attr == ATTR_LFN:
        # Long-name fragments legitimately start with a low sequence
        # byte (possibly with the last-fragment bit), or 0xE5 once
        # deleted.
        return first == DELETED_MARK or 1 <= (first & 0x3F) <= 20
    if first == END_MARK:
        return False
    if first != DELETED_MARK and first < 0x20:
        if first != KANJI_LEAD:
            return False
    if attr & 0xC0:
        return False
    for b in raw[1:11]:
        if b < 0x20 and b != 0x00:
            return False
    return True


def _qualifies_as_orphan_dir(buf: bytes, max_cluster: int) -> bool:
    """First cluster of a directory: '.' then '..', both directories."""
    if len(buf) < 2 * DIR_ENTRY_SIZE:
        return False
    if buf[0:11] != DOT_NAME or buf[32:43] != DOTDOT_NAME:
        return False
    if not (buf[11] & ATTR_DIRECTORY) or not (buf[43] & ATTR_DIRECTORY):
        return False
    valid = sum(1 for pos in (0, 32)
                if _plausible_entry(buf[pos:pos + DIR_ENTRY_SIZE], max_cluster))
    return valid >= 2


def _block_all_plausible(buf: bytes, max_cluster: int) -> bool:
    """Continuation test: every slot up to the end marker looks sane."""
    seen_any = False
    for pos in range(0, len(buf) - DIR_ENTRY_SIZE + 1, DIR_ENTRY_SIZE):
        raw = buf[pos:pos + DIR_ENTRY_SIZE]
        if raw[0] == END_MARK:
            return seen_any
        if not _plausible_entry(raw, max_cluster):
            return False
        seen_any = True
    return seen_any


def _collect_orphan_dir(img, desc, fat, start, excluded, consumed):
    """Gather a carved directory starting at ``start``.

    The chain is gone, so continuation is by contiguity: keep taking the
    next cluster while the previous one ended without an end-of-directory
    marker and the candidate still parses as nothing but entries.
    """
    cs = desc.cluster_size
    slots = []
    clusters = []
    c = start
    while fat.in_heap(c) and c not in excluded and c not in consumed:
        buf = _read_or_none(img, cluster_offset(desc, c), cs)
        if buf is None:
            break
        if c != start and not _block_all_plausible(buf, desc.max_cluster):
            break
        base = cluster_offset(desc, c)
        end_here = False
        for pos in range(0, cs - DIR_ENTRY_SIZE + 1, DIR_ENTRY_SIZE):
            slots.append((base + pos, buf[pos:pos + DIR_ENTRY_SIZE]))
            if buf[pos] == END_MARK:
                end_here = True
                break
        clusters.append(c)
        if end_here:
            break
        c += 1
    return slots, clusters


def survey(img: VolumeImage, desc: VolumeDescriptor,
           deep: bool = False) -> FatSurvey:
    """Walk the live tree; with ``deep`` also carve orphaned directories.

    The live walk records every cluster reachable from live chains so
    the carve pass only ever looks at abandoned space.
    """
    live_clusters: set[int] = set()
    entries: list[FatDirEntry] = []
    warnings: list[str] = []
    try:
        fat = load_fat(img, desc)
    except VolumeError as exc:
        # Truncated/damaged image: chains are gone, but the directory
        # walk and the orphan carve can still run against what's left.
        fat = FatTable(desc.kind, [0] * (desc.cluster_count + 2))
        warnings.append("allocation table unreadable (%s); carve-only "
                        "results" % exc)
    label = None
    seen_offsets: set[int] = set()
    consumed: set[int] = set()

    queue: list[tuple[str, list]] = [("", _root_blocks(img, desc, fat,
                                                       live_clusters))]
    visited_dirs: set[int] = set()
    while queue:
        path, blocks = queue.pop(0)
        slots = list(_dir_slots_from_blocks(img, blocks))
        parsed, _ = parse_dir_slots(slots, path, desc.kind)
        for entry in parsed:
            if entry.entry_offset in seen_offsets:
                continue
            seen_offsets.add(entry.entry_offset)
            if entry.is_dot:
                continue
            if entry.is_label:
                if not entry.deleted and label is None:
                    label = entry.short_name
                continue
            entries.append(entry)
            if entry.deleted:
                continue
            chain, ok = fat.chain_from(entry.first_cluster)
            if entry.is_directory:
                if entry.first_cluster in visited_dirs:
                    continue
                visited_dirs.add(entry.first_cluster)
                live_clusters.update(chain)
                if not ok:
                    warnings.append("directory %s has a broken chain"
                                    % entry.display_name)
                sub = path + "/" + entry.display_name if path else entry.display_name
                queue.append((sub, [(cluster_offset(desc, c), desc.cluster_size)
                                    for c in chain]))
            elif entry.size > 0 and fat.in_heap(entry.first_cluster):
                live_clusters.update(chain)
                if not ok:
                    warnings.append("file %s has a broken chain"
                                    % entry.display_name)

    # Recurse into deleted directories: chain zeroed, so contiguity only.
    pending = [e for e in entries
               if e.deleted and e.is_directory and fat.in_heap(e.first_cluster)]
    carved_paths = 0
    while pending:
        entry = pending.pop(0)
        if entry.first_cluster in consumed or entry.first_cluster in live_clusters:
            continue
        head = _read_or_none(img, cluster_offset(desc, entry.first_cluster),
                             desc.cluster_size)
        if head is None or not _qualifies_as_orphan_dir(head, desc.max_cluster):
            continue
        slots, clusters = _collect_orphan_dir(
            img, desc, fat, entry.first_cluster, live_clusters, consumed)
        consumed.update(clusters)
        parent = entry.dir_path + "/" + entry.display_name \
            if entry.dir_path else entry.display_name
        # Children of a deleted directory are unreachable whatever their
        # own first byte says, so they carry the orphaned flag too.
        parsed, _ = parse_dir_slots(slots, parent, desc.kind, orphaned=True)
        for sub in parsed:
            if sub.is_dot or sub.entry_offset in seen_offsets:
                continue
            seen_offsets.add(sub.entry_offset)
            if sub.is_label:
                continue
            entries.append(sub)
            if sub.is_directory and fat.in_heap(sub.first_cluster):
                pending.append(sub)

    if deep:
        cs = desc.cluster_size
        batch = max(1, (4 << 20) // cs)
        max_cluster = desc.max_cluster
        c = 2
        while c <= max_cluster:
            count = min(batch, max_cluster - c + 1)
            chunk = _read_or_none(img, cluster_offset(desc, c), count * cs)
            if chunk is None:        # truncated image: past the edge
                break
            for i in range(count):
                cluster = c + i
                if cluster in live_clusters or cluster in consumed:
                    continue
                head = chunk[i * cs:(i + 1) * cs]
                if not _qualifies_as_orphan_dir(head, max_cluster):
                    continue
                slots, clusters = _collect_orphan_dir(
                    img, desc, fat, cluster, live_clusters, consumed)
                consumed.update(clusters)
                carved_paths += 1
                path = "orphan-%d" % cluster
                parsed, _ = parse_dir_slots(slots, path, desc.kind,
                                            orphaned=True)
                for sub in parsed:
                    if sub.is_dot or sub.is_label:
                        continue
                    if sub.entry_offset in seen_offsets:
                        continue
                    seen_offsets.add(sub.entry_offset)
                    entries.append(sub)
            c += count

    return FatSurvey(entries=entries, fat=fat, live_clusters=live_clusters,
                     label=label, warnings=warnings)


@dataclass
class DeletedFatEntry:
    name: str
    lfn_name: str | None
    dir_path: str
    attr: int
    is_directory: bool
    first_cluster: int
    size: int
    created: str | None
    modified: str | None
    chain: list[int]
    confidence: str
    entry_offset: int
    orphaned: bool = False
    flags: list[str] = field(default_factory=list)

    @property
    def display_name(self) -> str:
        return self.lfn_name or self.name

    @property
    def entry_id(self) -> str:
        return "entry@0x%x" % self.entry_offset


def reconstruct_chain(first_cluster: int, size: int, fat: FatTable,
                      desc: VolumeDescriptor,
                      live_clusters: set[int] | None = None):
    """Hypothesize the cluster chain of a deleted file.

    Deletion normally zeroes the chain, so all that survives is the
    first cluster and the byte size.  Walk forward from the first
    cluster, skipping clusters that are currently allocated (a live
    file owns them now); any skip is an admission of guesswork and
    lowers the confidence to ``contiguous-heuristic``.  When the first
    cluster itself belongs to a live file the start of the content is
    gone: report ``fragmented-unknown`` and return the raw contiguous
    run for best-effort carving.
    Returns (chain, confidence, flags).
    """
    if size == 0:
        return [], "exact", []
    needed = _ceil_div(size, desc.cluster_size)
    if not fat.in_heap(first_cluster):
        return [], "fragmented-unknown", ["bad-first-cluster"]
    top = desc.max_cluster
    if not fat.is_free(first_cluster):
        if live_clusters is not None and first_cluster not in live_clusters:
            # The allocation is dangling, not owned by a live file: the
            # original chain is still written in the table.  Follow it.
            chain, ended = fat.chain_from(first_cluster, limit=needed)
            flags = [] if (ended or len(chain) == needed) else ["truncated"]
            return chain, "exact", flags
        chain = list(range(first_cluster, min(first_cluster + needed, top + 1)))
        flags = ["overwritten-risk"]
        if len(chain) < needed:
            flags.append("truncated")
        return chain, "fragmented-unknown", flags
    chain: list[int] = []
    skipped = False
    c = first_cluster
    while len(chain) < needed and c <= top:
        if fat.is_free(c):
            chain.append(c)
        else:
            skipped = True
        c += 1
    flags = []
    if len(chain) < needed:
        flags.append("truncated")
    confidence = "contiguous-heuristic" if skipped else "exact"
    return chain, confidence, flags


def find_deleted(surv: FatSurvey, desc: VolumeDescriptor) -> list[DeletedFatEntry]:
    """Deleted candidates: 0xE5-marked entries everywhere, plus intact
    entries that are only reachable through carved (orphaned) directories
    — unreachable means logically deleted even when unmarked."""
    out: list[DeletedFatEntry] = []
    for entry in surv.entries:
        if entry.is_label or entry.is_dot:
            continue
        if not entry.deleted and not entry.orphaned:
            continue
        flags: list[str] = []
        if entry.is_directory:
            chain, confidence = [], "heuristic"
        else:
            chain, confidence, flags = reconstruct_chain(
                entry.first_cluster, entry.size, surv.fat, desc,
                surv.live_clusters)
        if entry.orphaned and not entry.deleted:
            flags = flags + ["orphaned"]
        out.append(DeletedFatEntry(
            name=entry.short_name,
            lfn_name=entry.lfn_name,
            dir_path=entry.dir_path,
            attr=entry.attr,
            is_directory=entry.is_directory,
            first_cluster=entry.first_cluster,
            size=entry.size,
            created=entry.created_iso(),
            modified=entry.modified_iso(),
            chain=chain,
            confidence=confidence,
            entry_offset=entry.entry_offset,
            orphaned=entry.orphaned,
            flags=flags,
        ))
    out.sort(key=lambda e: e.entry_offset)
    return out


def recover_file(img: VolumeImage, desc: VolumeDescriptor,
                 entry: DeletedFatEntry, sink=None,
                 allow_same_media: bool = False) -> RecoveredFile:
    """Read the hypothesized chain and truncate to the recorded size,
    so the final cluster's slack never reaches the output."""
    if entry.is_directory:
        raise FatError("%s is a directory" % entry.display_name)
    _check_sink(img, sink, allow_same_media)
    data = read_clusters(img, desc, entry.chain)
    flags = list(entry.flags)
    if len(data) < entry.size and "truncated" not in flags:
        flags.append("truncated")
    data = data[:entry.size]
    digest = hashlib.sha256(data).hexdigest()
    out_path = _write_sink(sink, data)
    return RecoveredFile(
        name=entry.display_name,
        path=entry.dir_path,
        size=len(data),
        sha256=digest,
        file_class="unknown",
        confidence=entry.confidence,
        source={
            "filesystem": desc.kind.value,
            "entry": entry.entry_id,
            "clusters": cluster_runs(entry.chain),
        },
        flags=flags,
        output_path=out_path,
        data=None if out_path else data,
    )


def _check_sink(img: VolumeImage, sink, allow_same_media: bool) -> None:
    if sink is None or not isinstance(sink, (str, bytes, os.PathLike)):
        return
    if img.path is None or allow_same_media:
        return
    if os.path.realpath(os.fspath(sink)) == os.path.realpath(img.path):
        raise FatError("sink lives on the volume under analysis")


def _write_sink(sink, data: bytes) -> str | None:
    if sink is None:
        return None
    if isinstance(sink, (str, bytes, os.PathLike)):
        path = os.fspath(sink)
        with open(path, "wb") as fh:
            fh.write(data)
        return path
    sink.write(data)
    return getattr(sink, "name", None)
