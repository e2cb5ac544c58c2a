#!/usr/bin/env python3
"""Which deletion modality actually destroys data?

Forges one volume, applies each modality to its own copy, and audits
every copy against the ground-truth sidecar.  Only the full overwrite
earns a SANITIZED verdict; the convenient methods leave everything.
"""

import shutil
import tempfile
from pathlib import Path

from remnant import forge

MiB = 1024 * 1024
MODALITIES = ("delete-all", "quick-format", "full-overwrite")


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        master = Path(tmp) / "master.img"
        truth_path = str(master) + ".truth.json"
        spec = forge.standard_corpus("fat16", total_size=16 * MiB)
        forge.build_image(spec, master, truth_path=truth_path)
        truth = forge.GroundTruth.load(truth_path)
        total = sum(f.size for f in truth.files.values())
        print("master volume: %d files, %d bytes of content"
              % (len(truth.files), total))

        print("\n%-15s %-12s %12s  %s" % ("modality", "verdict",
                                          "recoverable", "files R/P/S"))
        for action in MODALITIES:
            img = Path(tmp) / ("%s.img" % action)
            shutil.copy(master, img)
            forge.apply_mutation(img, action, truth=truth)
            audit = forge.audit_image(img, truth)
            print("%-15s %-12s %10d B  %d/%d/%d"
                  % (action, audit["verdict"], audit["recoverable_bytes"],
                     audit["recoverable_files"], audit["partial_files"],
                     audit["sanitized_files"]))

        print("\nper-file detail for the overwritten copy:")
        img = Path(tmp) / "full-overwrite.img"
        audit = forge.audit_image(img, truth)
        for row in audit["files"][:5]:
            print("  %-34s %-10s %d/%d bytes intact"
                  % (row["path"], row["verdict"],
                     row["recoverable_bytes"], row["size_bytes"]))
        print("  ... every cluster compared against the regenerated "
              "original, read-only.")


if __name__ == "__main__":
    main()
