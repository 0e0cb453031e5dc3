"""CSV interchange formats.

Quotes CSV (one row per asset/date/tenor), mandatory header::

    asset_id,date,tenor_years,atm,rr25,bf25,rr10,bf10,forward,dom_rate,for_rate

Surfaces CSV (one row per grid point, full grid per asset/date), mandatory
header::

    asset_id,date,maturity_years,delta,vol

Dates are ISO-8601, decimals use ``.``. Floats are written with ``repr`` so
every file round-trips through its reader without loss. The observations
reader accepts the surfaces format with any subset of rows per surface.
"""

import csv
import datetime as _dt
from collections import OrderedDict

import numpy as np

from volcraft.errors import DataFormatError
from volcraft.surfaces import GridSpec, MarketQuoteRow, Observation, VolSurface

QUOTES_HEADER = [
    "asset_id", "date", "tenor_years", "atm", "rr25", "bf25", "rr10", "bf10",
    "forward", "dom_rate", "for_rate",
]
SURFACES_HEADER = ["asset_id", "date", "maturity_years", "delta", "vol"]


def _parse_float(text, line, column):
    try:
        return float(text)
    except ValueError:
        raise DataFormatError(f"line {line}: bad {column} value {text!r}", line=line) from None


def _parse_date(text, line):
    try:
        return _dt.date.fromisoformat(text)
    except ValueError:
        raise DataFormatError(f"line {line}: bad date {text!r}", line=line) from None


def _check_header(row, expected, path):
    if row is None:
        raise DataFormatError(f"{path}: empty file, expected header {','.join(expected)}", line=1)
    got = [c.strip() for c in row]
    if got != expected:
        raise DataFormatError(
            f"{path}: bad header {','.join(got)!r}, expected {','.join(expected)}", line=1
        )


def read_quotes_csv(path):
    """-> list of (asset_id, date, MarketQuoteRow), file order preserved."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        _check_header(next(reader, None), QUOTES_HEADER, path)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(QUOTES_HEADER):
                raise DataFormatError(
                    f"line {line}: expected {len(QUOTES_HEADER)} columns, got {len(row)}",
                    line=line,
                )
            asset = row[0].strip()
            date = _parse_date(row[1].strip(), line)
            vals = [_parse_float(row[i].strip(), line, QUOTES_HEADER[i]) for i in range(2, 11)]
            quote = MarketQuoteRow(
                tenor=vals[0], atm=vals[1], rr25=vals[2], bf25=vals[3], rr10=vals[4],
                bf10=vals[5], forward=vals[6], domestic_rate=vals[7], foreign_rate=vals[8],
            )
            out.append((asset, date, quote))
    return out


def _read_surface_rows(path):
    groups = OrderedDict()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        _check_header(next(reader, None), SURFACES_HEADER, path)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(SURFACES_HEADER):
                raise DataFormatError(
                    f"line {line}: expected {len(SURFACES_HEADER)} columns, got {len(row)}",
                    line=line,
                )
            asset = row[0].strip()
            date = _parse_date(row[1].strip(), line)
            maturity = _parse_float(row[2].strip(), line, "maturity_years")
            delta = _parse_float(row[3].strip(), line, "delta")
            vol = _parse_float(row[4].strip(), line, "vol")
            key = (asset, date)
            rows = groups.setdefault(key, {})
            if (maturity, delta) in rows:
                raise DataFormatError(
                    f"line {line}: duplicate point ({maturity}, {delta}) for {asset} {date}",
                    line=line,
                )
            rows[(maturity, delta)] = vol
    return groups


def read_surfaces_csv(path):
    """-> list of VolSurface on the grid inferred from the file.

    The grid is the cross product of every maturity and delta seen; each
    asset/date must cover it exactly.
    """
    groups = _read_surface_rows(path)
    if not groups:
        raise DataFormatError(f"{path}: no surface rows", line=2)
    maturities = sorted({m for rows in groups.values() for (m, _) in rows})
    deltas = sorted({d for rows in groups.values() for (_, d) in rows})
    grid = GridSpec(np.array(maturities), np.array(deltas))
    surfaces = []
    for (asset, date), rows in groups.items():
        vols = np.empty((len(maturities), len(deltas)))
        for i, m in enumerate(maturities):
            for j, d in enumerate(deltas):
                if (m, d) not in rows:
                    raise DataFormatError(
                        f"{asset} {date}: missing grid point ({m}, {d}); "
                        "use the observations reader for partial surfaces"
                    )
                vols[i, j] = rows[(m, d)]
        surfaces.append(VolSurface(asset, date, vols, grid))
    return surfaces


def read_observations_csv(path):
    """-> list of (asset_id, date, [Observation, ...]); partial surfaces OK."""
    groups = _read_surface_rows(path)
    out = []
    for (asset, date), rows in groups.items():
        obs = [Observation(m, d, v) for (m, d), v in rows.items()]
        out.append((asset, date, obs))
    return out


def write_surfaces_csv(path, surfaces):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SURFACES_HEADER)
        for surf in surfaces:
            date = surf.observation_date.isoformat()
            for i, m in enumerate(surf.grid.maturities):
                for j, d in enumerate(surf.grid.deltas):
                    writer.writerow(
                        [surf.asset_id, date, repr(float(m)), repr(float(d)),
                         repr(float(surf.vols[i, j]))]
                    )
