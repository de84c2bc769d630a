#!/usr/bin/env python3
"""Build data/sp_composite_annual.csv from Robert Shiller's monthly market data.

Downloads ie_data.xls and writes one row per calendar year:

    year,I,D,C

I is the average monthly close of the S&P Composite index, D the average of
the monthly (annualised) dividend per share, and C the January CPI.

Requires pandas and xlrd:

    pip install pandas xlrd
    python3 scripts/fetch_market_data.py            # 1871-2020
    python3 scripts/fetch_market_data.py --last 2023 --source ie_data.xls
"""

import argparse
import io
import sys
import urllib.request
from pathlib import Path

import pandas as pd

URL = "http://www.econ.yale.edu/~shiller/data/ie_data.xls"
OUT = Path(__file__).resolve().parent.parent / "data" / "sp_composite_annual.csv"


def load(source):
    if source is None:
        with urllib.request.urlopen(URL, timeout=60) as resp:
            source = io.BytesIO(resp.read())
    raw = pd.read_excel(source, sheet_name="Data", header=7, engine="xlrd")
    raw = raw.rename(columns=lambda c: str(c).strip())
    monthly = raw[["Date", "P", "D", "CPI"]].dropna(subset=["Date", "P", "CPI"])
    # Shiller dates are YYYY.MM with October written as YYYY.1
    date = monthly["Date"].astype(float)
    monthly = monthly.assign(
        year=date.astype(int),
        month=((date - date.astype(int)) * 100).round().astype(int),
    )
    return monthly


def annual(monthly, first, last):
    rows = []
    for year, g in monthly.groupby("year"):
        if year < first or year > last:
            continue
        if len(g) != 12 or g["D"].isna().any():
            sys.exit(f"year {year} is incomplete in the source data")
        jan = g.loc[g["month"] == 1, "CPI"]
        rows.append((year, float(g["P"].mean()), float(g["D"].mean()), float(jan.iloc[0])))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--first", type=int, default=1871)
    ap.add_argument("--last", type=int, default=2020)
    ap.add_argument("--source", help="local copy of ie_data.xls instead of downloading")
    ap.add_argument("--out", type=Path, default=OUT)
    args = ap.parse_args()

    rows = annual(load(args.source), args.first, args.last)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w") as f:
        f.write(f"# S&P Composite annual series {args.first}-{args.last}, from {URL}\n")
        f.write("year,I,D,C\n")
        for year, i, d, c in rows:
            f.write(f"{year},{i!r},{d!r},{c!r}\n")
    print(f"wrote {len(rows)} years to {args.out}")


if __name__ == "__main__":
    main()
