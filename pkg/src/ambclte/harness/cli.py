"""Command line: ``ambclte {generate,decode,sweep,linkbudget}``.

Exit status: 0 on success, 2 when the run completed but nothing could be
synchronized (no packet detected anywhere), 1 on errors.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys

from .capture import (
    decode_capture,
    generate_capture,
    match_truth,
    read_truth_csv,
    write_iq,
    write_packets_csv,
    write_truth_csv,
)
from .config import CONFIG_ENV, ConfigError, load_config
from .linkbudget import Corridor, LinkBudget, corridor_budget, link_budget
from .sweep import run_sweep

log = logging.getLogger("ambclte")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO_SYNC = 2


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", help=f"experiment config file (default: ${CONFIG_ENV})")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config value (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ambclte", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write an IQ capture of an LTE + backscatter scene")
    _add_config_args(g)
    g.add_argument("output", help="capture file (raw little-endian complex float32)")
    g.add_argument("-n", "--packets", type=int, default=1)
    g.add_argument("--payload", action="append", help="8 hex digits; repeat once per packet")
    g.add_argument("--snr-db", type=float, help="SNR point (default: first of the config grid)")
    g.add_argument("--seed", type=int)
    g.add_argument("--offset", type=int, default=0, help="drop this many leading samples")
    g.add_argument("--truth", help="write packet_start,payload_hex CSV here")

    d = sub.add_parser("decode", help="decode a capture into a packets CSV")
    _add_config_args(d)
    d.add_argument("capture")
    d.add_argument("-o", "--output", help="packets CSV (default: stdout)")
    d.add_argument("--capture-id", help="defaults to the capture file name")
    d.add_argument("--truth", help="truth CSV from 'generate' to fill the ber column")
    d.add_argument("--max-packets", type=int)

    s = sub.add_parser("sweep", help="BER-vs-SNR sweep")
    _add_config_args(s)
    s.add_argument("-o", "--output", help="results CSV (default: [sweep] output, else stdout)")
    s.add_argument("--records", help="also write one row per simulated packet here")

    lb = sub.add_parser("linkbudget", help="free-space direct and backscatter received power")
    lb.add_argument("--tx-power-dbm", type=float, default=15.0)
    lb.add_argument("--tx-gain-dbi", type=float, default=0.0)
    lb.add_argument("--bd-gain-dbi", type=float, default=0.0)
    lb.add_argument("--rx-gain-dbi", type=float, default=0.0)
    lb.add_argument("--freq", type=float, default=486e6, help="carrier in Hz (sets the wavelength)")
    lb.add_argument("--d-tx-bd", type=float, default=1.0)
    lb.add_argument("--d-bd-rx", type=float, default=1.0)
    lb.add_argument("--d-tx-rx", type=float, default=1.0)
    lb.add_argument("--modulation-loss-db", type=float, default=0.0)
    lb.add_argument("--corridor", action="store_true", help="tabulate the 17-point corridor geometry instead")
    return parser


def _cmd_generate(args) -> int:
    cfg = load_config(args.config, args.overrides)
    payloads = args.payload
    if payloads is not None and len(payloads) != args.packets:
        raise ConfigError(f"{len(payloads)} payloads given for {args.packets} packets")
    iq, truth = generate_capture(cfg, args.packets, payloads, args.snr_db, args.seed, args.offset)
    write_iq(args.output, iq)
    if args.truth:
        write_truth_csv(args.truth, truth)
    for t in truth:
        log.info("packet %s at sample %d", t.payload_hex, t.packet_start)
    print(f"wrote {len(iq)} samples ({iq.duration:.3f} s) with {len(truth)} packet(s) to {args.output}")
    return EXIT_OK


def _cmd_decode(args) -> int:
    cfg = load_config(args.config, args.overrides)
    results = decode_capture(args.capture, cfg, args.max_packets)
    bers = None
    if args.truth:
        bers = match_truth(results, read_truth_csv(args.truth), cfg=cfg)
    cid = args.capture_id or args.capture.rsplit("/", 1)[-1]
    if args.output:
        write_packets_csv(args.output, cid, results, bers)
    else:
        write_packets_csv(sys.stdout, cid, results, bers)
    return EXIT_OK if results else EXIT_NO_SYNC


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.overrides)
    result = run_sweep(cfg, progress=lambda k, n: log.info("packet %d/%d", k, n))
    out = args.output or cfg.output
    text = result.to_csv(out)
    if out is None:
        sys.stdout.write(text)
    if args.records:
        result.records_csv(args.records)
    return EXIT_OK if any(p.detected for p in result.points) else EXIT_NO_SYNC


def _cmd_linkbudget(args) -> int:
    base = LinkBudget.at_frequency(
        args.freq,
        tx_power_dbm=args.tx_power_dbm,
        tx_gain_dbi=args.tx_gain_dbi,
        bd_gain_dbi=args.bd_gain_dbi,
        rx_gain_dbi=args.rx_gain_dbi,
        d_tx_bd=args.d_tx_bd,
        d_bd_rx=args.d_bd_rx,
        d_tx_rx=args.d_tx_rx,
        modulation_loss_db=args.modulation_loss_db,
    )
    w = csv.writer(sys.stdout, lineterminator="\n")
    if args.corridor:
        rows = corridor_budget(base, Corridor())
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in r.values()])
    else:
        direct, back = link_budget(base)
        w.writerow(["direct_rx_power_dbm", "backscatter_rx_power_dbm"])
        w.writerow([f"{direct:.4f}", f"{back:.4f}"])
    return EXIT_OK


COMMANDS = {
    "generate": _cmd_generate,
    "decode": _cmd_decode,
    "sweep": _cmd_sweep,
    "linkbudget": _cmd_linkbudget,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
