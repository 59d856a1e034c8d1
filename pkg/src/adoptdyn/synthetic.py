"""Synthetic survey exports laid out like the default schema, for fixtures and demos."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .pipeline import Schema


def _labels(mapping: dict) -> list:
    """Raw labels ordered by class."""
    return [k for k, _ in sorted(mapping.items(), key=lambda kv: kv[1])]


def synthetic_rows(n: int, seed: int = 0, country: str = "Germany", schema: Schema | None = None,
                   missing_rate: float = 0.02) -> list:
    """``n`` respondent rows keyed by raw column name.

    Older and low-mileage respondents are more sceptical; ownership and
    willingness to buy rise with mileage, so the calibrated inputs have
    structure across communities.
    """
    schema = schema or Schema.default()
    rng = np.random.default_rng(seed)
    cols = schema.columns
    ages = _labels(schema.bands["age_band"])
    kms = _labels(schema.bands["annual_km_band"])
    sd = schema.sociodemographic
    rows = []
    for _ in range(n):
        age = int(rng.choice(5, p=[0.12, 0.2, 0.22, 0.25, 0.21]))
        km = int(rng.choice(5, p=[0.15, 0.25, 0.32, 0.18, 0.10]))
        lean = 0.55 + 0.06 * km - 0.06 * age + rng.normal(0, 0.15)
        row = {
            cols["country"]: country,
            cols["age_band"]: ages[age],
            cols["annual_km_band"]: kms[km],
            cols["ev_in_household"]: "Yes" if rng.random() < np.clip(0.08 + 0.05 * km, 0, 1) else "No",
            cols["drove_ev_before"]: "Yes" if rng.random() < 0.3 + 0.05 * km else "No",
            cols["wants_ev_future"]: "Yes" if rng.random() < np.clip(lean + 0.1, 0, 1) else "No",
            cols["reward_statement"]: str(int(np.clip(np.round(1 + 4 * lean + rng.normal(0, 0.8)), 1, 5))),
        }
        for name in ("education", "political_orientation"):
            if name in cols and name in sd:
                row[cols[name]] = str(rng.choice(_labels(sd[name])))
        for item in schema.opinion_items:
            if rng.random() < 0.05 and item.non_informative:
                v = item.non_informative[0]
            else:
                favour = lean if item.direction == "direct" else 1.0 - lean
                v = np.clip(np.round(item.min + (item.max - item.min) * favour + rng.normal(0, 0.9)),
                            item.min, item.max)
            row[item.column] = f"{v:g}"
        if rng.random() < missing_rate:
            row[cols[str(rng.choice(["age_band", "annual_km_band"]))]] = ""
        rows.append(row)
    return rows


def write_synthetic_csv(path, n: int = 1500, seed: int = 0, countries=("Germany", "Norway"),
                        schema: Schema | None = None) -> Path:
    schema = schema or Schema.default()
    rows = []
    for i, country in enumerate(countries):
        rows += synthetic_rows(n, seed=seed * 1000 + i, country=country, schema=schema)
    header = list(rows[0].keys())
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=header, delimiter=schema.delimiter, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return path
