#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Click-stream interchange files.

    # cqed-clicks v1, tau_period_ns=4000, tau_pump_ns=2000, pulses_per_cycle=2000, cycles=4997, seed=1
    0,1,1234
    0,2,1530
    ...

Rows are `cycle_id,detector,timestamp_ns` sorted by (cycle_id, timestamp_ns).
The ground-truth sidecar holds `cycle_id,pulse_index,atom_id,emitted` and
the manifest is plain `key = value` text.
"""

import csv
import logging

import numpy as np

from errors import ClickFileError
from reports import atomic_write
from source_sim import ClickRecord, ClickStream, PulseSchedule

logger = logging.getLogger(__name__)

FORMAT_TAG = "cqed-clicks"
FORMAT_VERSION = "v1"
HEADER_KEYS = ("tau_period_ns", "tau_pump_ns", "pulses_per_cycle", "cycles", "seed")
TRUTH_HEADER = ("cycle_id", "pulse_index", "atom_id", "emitted")


def format_header(schedule: PulseSchedule, n_cycles: int, seed) -> str:
    return (f"# {FORMAT_TAG} {FORMAT_VERSION}, tau_period_ns={schedule.tau_period_ns}, "
            f"tau_pump_ns={schedule.tau_pump_ns}, pulses_per_cycle={schedule.pulses_per_cycle}, "
            f"cycles={n_cycles}, seed={seed}")


def parse_header(line: str) -> dict:
    """Header fields as ints (seed may be '-' for measured data)."""
    line = line.strip()
    if not line.startswith("#"):
        raise ClickFileError("missing '# cqed-clicks' header", line_number=1)
    parts = [p.strip() for p in line.lstrip("#").split(",")]
    tag = parts[0].split()
    if len(tag) != 2 or tag[0] != FORMAT_TAG:
        raise ClickFileError(f"not a {FORMAT_TAG} file", line_number=1)
    if tag[1] != FORMAT_VERSION:
        raise ClickFileError(f"unsupported version '{tag[1]}' (expected {FORMAT_VERSION})", line_number=1)

    fields = {}
    for part in parts[1:]:
        key, sep, value = part.partition("=")
        if not sep:
            raise ClickFileError(f"bad header field '{part}'", line_number=1)
        fields[key.strip()] = value.strip()
    missing = [k for k in HEADER_KEYS if k not in fields]
    if missing:
        raise ClickFileError(f"header lacks {', '.join(missing)}", line_number=1)

    header = {}
    for key in HEADER_KEYS:
        if key == "seed" and fields[key] == "-":
            header[key] = None
            continue
        try:
            header[key] = int(fields[key])
        except ValueError:
            raise ClickFileError(f"header field {key}='{fields[key]}' is not an integer", line_number=1)
    if not 0 < header["tau_pump_ns"] < header["tau_period_ns"]:
        raise ClickFileError("need 0 < tau_pump_ns < tau_period_ns", line_number=1)
    if header["pulses_per_cycle"] < 1 or header["cycles"] < 1:
        raise ClickFileError("pulses_per_cycle and cycles must be >= 1", line_number=1)
    return header


def write_clicks(path: str, clicks: ClickStream, seed=None):
    with atomic_write(path) as f:
        f.write(format_header(clicks.schedule, clicks.n_cycles, "-" if seed is None else seed) + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerows(clicks.records())
    logger.info(f"Wrote {len(clicks)} clicks to {path}")


def read_clicks(path: str):
    """Parse and validate a click file. Returns (ClickStream, header dict)."""
    try:
        f = open(path, "r", encoding="utf-8", newline="")
    except OSError as e:
        raise ClickFileError(f"cannot open {path}: {e}")

    with f:
        header = parse_header(f.readline())
        schedule = PulseSchedule(tau_pump_ns=header["tau_pump_ns"],
                                 tau_recycle_ns=header["tau_period_ns"] - header["tau_pump_ns"],
                                 pulses_per_cycle=header["pulses_per_cycle"])
        n_cycles = header["cycles"]
        window = schedule.cycle_window_ns

        rows = []
        previous = (-1, -1)
        for line_number, row in enumerate(csv.reader(f), start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise ClickFileError(f"expected 3 columns, got {len(row)}", line_number)
            try:
                cycle_id, detector, timestamp = (int(v) for v in row)
            except ValueError:
                raise ClickFileError(f"non-integer field in {row}", line_number)
            if detector not in (1, 2):
                raise ClickFileError(f"detector must be 1 or 2, got {detector}", line_number)
            if not 0 <= cycle_id < n_cycles:
                raise ClickFileError(f"cycle_id {cycle_id} outside [0, {n_cycles})", line_number)
            if not 0 <= timestamp < window:
                raise ClickFileError(f"timestamp {timestamp} ns outside the cycle window", line_number)
            if (cycle_id, timestamp) < previous:
                raise ClickFileError("rows not sorted by (cycle_id, timestamp_ns)", line_number)
            previous = (cycle_id, timestamp)
            rows.append(ClickRecord(cycle_id, detector, timestamp))

    clicks = ClickStream.from_records(rows, n_cycles, schedule)
    logger.info(f"Read {len(clicks)} clicks over {n_cycles} cycles from {path}")
    return clicks, header


def write_truth(path: str, truth: list):
    with atomic_write(path) as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TRUTH_HEADER)
        for cycle in truth:
            order = np.lexsort((cycle.atom_id, cycle.pulse_index))
            for k, a, e in zip(cycle.pulse_index[order].tolist(), cycle.atom_id[order].tolist(),
                               cycle.emitted[order].tolist()):
                writer.writerow((cycle.cycle_id, k, a, e))


def write_manifest(path: str, entries: dict):
    with atomic_write(path) as f:
        for key, value in entries.items():
            f.write(f"{key} = {value}\n")
