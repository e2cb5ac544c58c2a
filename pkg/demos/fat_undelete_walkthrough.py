#!/usr/bin/env python3
"""Walk through one FAT undelete, from directory slot to recovered bytes.

Forges a small FAT16 volume, deletes a single file the way an OS does
(mark the slot, zero the chain, leave the payload), then shows each
forensic step: the surviving slot, the chain hypothesis, and the
byte-for-byte comparison against the original.
"""

import hashlib
import tempfile
from pathlib import Path

from remnant import forge
from remnant.fat import find_deleted, load_fat, survey
from remnant.volume import detect_filesystem, open_image

MiB = 1024 * 1024
VICTIM = "DATA/REPORT.PDF"


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        img_path = Path(tmp) / "demo.img"
        truth_path = str(img_path) + ".truth.json"
        spec = forge.standard_corpus("fat16", total_size=8 * MiB)
        forge.build_image(spec, img_path, truth_path=truth_path)
        truth = forge.GroundTruth.load(truth_path)

        original = truth.files[VICTIM]
        print("forged %s: %d files, victim %s (%d bytes, sha256 %s...)"
              % (img_path.name, len(truth.files), VICTIM,
                 original.size, original.sha256[:12]))

        forge.apply_mutation(img_path, "delete", truth=truth, target=VICTIM)
        print("deleted %s: slot marker set, FAT chain zeroed, payload "
              "clusters untouched" % VICTIM)

        with open_image(img_path) as img:
            desc = detect_filesystem(img)
            print("\ndetected %s, cluster size %d, %d clusters"
                  % (desc.kind.value, desc.cluster_size, desc.cluster_count))

            surv = survey(img, desc)
            entry = next(e for e in find_deleted(surv, desc)
                         if e.size == original.size)
            print("deleted slot found in %s:" % (entry.dir_path or "/"))
            print("  stored name   %-14s (first byte lost to the marker)"
                  % entry.name)
            print("  display name  %s" % entry.display_name)
            print("  size          %d bytes" % entry.size)
            print("  first cluster %d" % entry.first_cluster)

            fat = load_fat(img, desc)
            print("\nchain hypothesis (forward walk over free clusters):")
            print("  clusters      %s%s"
                  % (entry.chain[:8],
                     " ..." if len(entry.chain) > 8 else ""))
            print("  confidence    %s  flags %s"
                  % (entry.confidence, entry.flags or "[]"))
            free = sum(1 for c in entry.chain if fat.is_free(c))
            print("  %d/%d clusters still marked free in the FAT"
                  % (free, len(entry.chain)))

            from remnant.fat import recover_file
            rec = recover_file(img, desc, entry)
            got = hashlib.sha256(rec.data).hexdigest()
            print("\nrecovered %d bytes, sha256 %s..." % (len(rec.data), got[:12]))
            print("byte-identical to the original: %s"
                  % ("YES" if got == original.sha256 else "NO"))


if __name__ == "__main__":
    main()
