"""Writes scenarios/scale_50.toml: 49 mesh nodes on concentric rings around the hardware AP."""
import math
import pathlib

RINGS = [(1, 6), (2, 12), (3, 18), (4, 13)]
SPACING_M = 35.0


def positions():
    out = [(0, 0.0, 0.0)]
    nid = 1
    for ring, count in RINGS:
        r = ring * SPACING_M
        for k in range(count):
            a = 2 * math.pi * k / count + ring * 0.3
            out.append((nid, round(r * math.cos(a), 2), round(r * math.sin(a), 2)))
            nid += 1
    return out


def main():
    pos = positions()
    lines = [
        "# 50-node mesh on concentric rings; ids grow outward from the hardware AP.",
        "# Generated by scripts/gen_scale_50.py.",
        'name = "scale_50"',
        'mode = "dual"',
        "",
        "[hardware_ap]",
        "id = 0",
        'band = "5.8"',
        "channel = 36",
        "",
    ]
    for nid, _, _ in pos[1:]:
        lines += ["[[nodes]]", f"id = {nid}", ""]
    lines += ["[attenuation.log_distance]", "pl0_db = 40.0", "exponent = 3.0", "d0_m = 1.0", ""]
    for nid, x, y in pos:
        lines += ["[[attenuation.position]]", f"id = {nid}", f"x = {x}", f"y = {y}", ""]
    lines += ["[[services]]", 'name = "printer"', "providers = [5, 20]", ""]
    flows = []
    for i in range(14):
        flows.append((49 - 3 * i, '"internet"'))
    flows += [(44, "12"), (30, "2"), (25, "40"), (8, "33")]
    flows += [(48, '"service:printer"'), (36, '"service:printer"')]
    for fid, (src, dst) in enumerate(flows, start=1):
        lines += [
            "[[traffic.flows]]",
            f"id = {fid}",
            f"src = {src}",
            f"dst = {dst}",
            "offered_bps = 2e6",
            "start_s = 15",
            "",
        ]
    lines += ["[sim]", "duration_s = 60", "seed = 7", "check_invariants = true", ""]
    out = pathlib.Path(__file__).resolve().parent.parent / "scenarios" / "scale_50.toml"
    out.write_text("\n".join(lines))


if __name__ == "__main__":
    main()
