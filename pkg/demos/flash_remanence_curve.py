#!/usr/bin/env python3
"""How recovering files onto flash multiplies the remnants.

Runs the delete/recover cycle experiment twice on the same geometry —
once with garbage collection off, once forcing a collection pass each
iteration — and plots the recoverable-copy curve as ASCII bars.

The perverse result: every "recovery" performed on the device itself
writes a fresh physical copy while the stale one stays readable at
chip level, so each rescue attempt makes the remanence worse.
"""

from remnant.ftl import FtlState, desk_geometry, run_cycle_experiment

PAGE = 2048
ITERATIONS = 8


def run(gc_forced: bool):
    state = FtlState(geometry=desk_geometry(), gc_enabled=False)
    payloads = [bytes([0x30 + i]) * PAGE for i in range(4)]
    return run_cycle_experiment(state, payloads, ITERATIONS,
                                force_gc=gc_forced)


def bars(result, title: str) -> None:
    print("\n%s" % title)
    print("  iter  copies  recoverable   curve")
    peak = max(it.copy_count for it in result.iterations) or 1
    for it in result.iterations:
        bar = "#" * round(40 * it.copy_count / peak)
        print("  %4d  %6d  %7d B    %s"
              % (it.iteration, it.copy_count, it.recoverable_bytes, bar))
    if result.ended_early:
        print("  (device filled up — the experiment stopped early)")


def main() -> None:
    g = desk_geometry()
    print("geometry: %d blocks x %d pages x %d B, %d logical pages"
          % (g.block_count, g.pages_per_block, g.page_size,
             g.logical_pages))

    bars(run(gc_forced=False),
         "collection disabled: every cycle strands one more copy per file")
    bars(run(gc_forced=True),
         "collection forced each cycle: the first erase wipes every stale "
         "copy,\n  and with nothing left to read back the cycle recovers "
         "nothing at all")

    print("\nwith collection off the curve is a staircase — remanence only "
          "grows.\nrecover onto different media, never onto the device under "
          "analysis.")


if __name__ == "__main__":
    main()
