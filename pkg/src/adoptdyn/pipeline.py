"""Survey ingestion and calibration of community-model inputs.

Column names of the raw survey are never hard-coded: a schema mapping (YAML)
binds semantic fields to raw columns, maps band labels to classes, and
declares the opinion items with their direction, scale bounds and
non-informative codes. ``data/default_schema.yaml`` is a best-effort default.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .dynamics import CommunityIndex, CommunityModel, SystemState, community_grid
from .errors import ConfigError, EmptySelection, SchemaMismatch, UnknownCode

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
N_MOBILITY = 5
N_AGE = 5
N_COMMUNITIES = N_MOBILITY * N_AGE

AGE_BANDS = ("18-24", "25-34", "35-44", "45-54", "55-70")
KM_BANDS = ("<5000", "5000-9999", "10000-19999", "20000-29999", ">=30000")
MOBILITY_ORDINAL = (1.0, 2.0, 3.0, 4.0, 5.0)
MOBILITY_KM_MIDPOINTS = (2500.0, 7500.0, 15000.0, 25000.0, 35000.0)
KM_SCALE = 5000.0

REQUIRED_FIELDS = ("age_band", "annual_km_band", "ev_in_household", "drove_ev_before", "wants_ev_future",
                   "reward_statement")


# ---------------------------------------------------------------------------
# schema


@dataclass
class OpinionItem:
    column: str
    direction: str = "direct"
    min: float = 1.0
    max: float = 5.0
    non_informative: tuple = ()

    def __post_init__(self):
        if self.direction not in ("direct", "reverse"):
            raise ConfigError(f"item {self.column!r}: direction must be 'direct' or 'reverse'")
        if not self.min < self.max:
            raise ConfigError(f"item {self.column!r}: scale bounds need min < max")
        self.non_informative = tuple(float(v) for v in self.non_informative)

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.min + self.max)


@dataclass
class Schema:
    columns: dict
    bands: dict
    yes_values: dict
    opinion_items: list
    sociodemographic: dict = field(default_factory=dict)
    missing_values: tuple = ("", "NA", "N/A", "nan")
    delimiter: str = ","

    @classmethod
    def from_dict(cls, raw: dict) -> "Schema":
        try:
            items = [OpinionItem(**it) for it in raw.get("opinion_items", [])]
            schema = cls(
                columns=dict(raw["columns"]),
                bands={k: {str(a): int(b) for a, b in v.items()} for k, v in raw.get("bands", {}).items()},
                yes_values={k: [str(v) for v in vs] for k, vs in raw.get("yes_values", {}).items()},
                opinion_items=items,
                sociodemographic={k: {str(a): float(b) for a, b in v.items()}
                                  for k, v in raw.get("sociodemographic", {}).items()},
                missing_values=tuple(str(v) for v in raw.get("missing_values", cls.missing_values)),
                delimiter=str(raw.get("delimiter", ",")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed schema mapping: {exc}") from exc
        missing = [f for f in REQUIRED_FIELDS if f not in schema.columns]
        if missing:
            raise SchemaMismatch(missing, f"schema does not bind required fields: {', '.join(missing)}")
        for fld in ("age_band", "annual_km_band"):
            classes = set(schema.bands.get(fld, {}).values())
            if not classes or not classes <= set(range(1, 6)):
                raise ConfigError(f"bands.{fld} must map raw labels to classes 1..5")
        return schema

    @classmethod
    def load(cls, path) -> "Schema":
        path = Path(path)
        if not path.exists():
            raise SchemaMismatch([str(path)], f"schema mapping file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh))

    @classmethod
    def default(cls) -> "Schema":
        text = resources.files("adoptdyn").joinpath("data/default_schema.yaml").read_text(encoding="utf-8")
        return cls.from_dict(yaml.safe_load(text))

    def raw_columns(self) -> dict:
        """Every raw column the pipeline reads, keyed by semantic name."""
        cols = dict(self.columns)
        for item in self.opinion_items:
            cols[f"item:{item.column}"] = item.column
        for name in self.sociodemographic:
            cols.setdefault(name, self.columns.get(name, name))
        return cols


# ---------------------------------------------------------------------------
# table


def _as_float(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return None


def _matches(value, accepted) -> bool:
    if value is None:
        return False
    if value in accepted:
        return True
    fv = _as_float(value)
    return fv is not None and any(_as_float(a) == fv for a in accepted)


@dataclass
class SurveyTable:
    records: list
    schema: Schema
    country: Optional[str] = None
    n_raw: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def raw(self, fld: str) -> list:
        col = self.schema.columns.get(fld, fld)
        return [r.get(col) for r in self.records]

    def band(self, fld: str) -> list:
        mapping = self.schema.bands[fld]
        return [mapping.get(v) if v is not None else None for v in self.raw(fld)]

    def flag(self, fld: str) -> list:
        accepted = self.schema.yes_values.get(fld, ["Yes"])
        return [None if v is None else _matches(v, accepted) for v in self.raw(fld)]

    def community_ids(self) -> list:
        """Flat community id per respondent, ``None`` when a band is unresolvable."""
        out = []
        for m, p in zip(self.band("annual_km_band"), self.band("age_band")):
            out.append(None if m is None or p is None else CommunityIndex(m, p).flat_id)
        return out


def ingest(csv_path, schema: Schema, country_filter: Optional[str] = None) -> SurveyTable:
    """Read the survey CSV, keep rows of ``country_filter`` and mark missing codes as ``None``."""
    path = Path(csv_path)
    if not path.exists():
        raise EmptySelection(f"survey file not found: {path}")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh, delimiter=schema.delimiter)
        header = reader.fieldnames or []
        needed = dict(schema.raw_columns())
        if country_filter is None:
            needed.pop("country", None)
        missing = sorted({col for col in needed.values() if col not in header})
        if missing:
            raise SchemaMismatch(missing)
        miss = set(schema.missing_values)
        rows = []
        n_raw = 0
        country_col = schema.columns.get("country")
        want = None if country_filter is None else country_filter.strip().casefold()
        for line, row in enumerate(reader, start=2):
            n_raw += 1
            rec = {k: (None if v is None or v.strip() in miss else v.strip()) for k, v in row.items()}
            if want is not None and (rec.get(country_col) or "").casefold() != want:
                continue
            rec["_line"] = line
            rows.append(rec)
    if not rows:
        raise EmptySelection(f"no respondents selected (country={country_filter!r}) in {path}")
    return SurveyTable(rows, schema, country_filter, n_raw)


# ---------------------------------------------------------------------------
# calibration pieces


def joint_distribution(table: SurveyTable) -> tuple[np.ndarray, dict]:
    """Fraction of usable respondents in each (mobility, age) cell, flattened by flat_id."""
    ids = table.community_ids()
    usable = [i for i in ids if i is not None]
    if not usable:
        raise EmptySelection("no respondent has both age and mileage bands resolvable")
    counts = np.bincount(usable, minlength=N_COMMUNITIES).astype(float)
    report = {"usable": len(usable), "dropped_missing_band": len(ids) - len(usable),
              "empty_communities": np.flatnonzero(counts == 0).tolist()}
    return counts / counts.sum(), report


def _community_groups(table):
    groups = [[] for _ in range(N_COMMUNITIES)]
    for r, cid in enumerate(table.community_ids()):
        if cid is not None:
            groups[cid].append(r)
    return groups


def _item_values(table, item: OpinionItem) -> np.ndarray:
    vals = np.full(len(table), np.nan)
    ni = set(item.non_informative)
    for r, raw in enumerate(table.raw(item.column)):
        if raw is None:
            continue
        v = _as_float(raw)
        if v is not None and v in ni:
            v = item.midpoint
        elif v is None or not item.min <= v <= item.max:
            line = table.records[r].get("_line", "?")
            raise UnknownCode(f"item {item.column!r}: value {raw!r} on line {line} is outside "
                              f"[{item.min:g}, {item.max:g}] and not a declared non-informative code")
        if item.direction == "reverse":
            v = item.min + item.max - v
        vals[r] = v
    return vals


def opinion_profiles(table: SurveyTable, items=None) -> tuple[np.ndarray, np.ndarray]:
    """Community opinion profiles in [0, 1]^k and initial opinions x0.

    Items are recoded (non-informative -> midpoint, reverse items flipped),
    averaged per community and min-max normalised across communities. Empty
    communities get the neutral 0.5 profile and x0 = 0.5.
    """
    items = table.schema.opinion_items if items is None else items
    groups = _community_groups(table)
    filled = np.array([len(g) > 0 for g in groups])
    profiles = np.full((N_COMMUNITIES, len(items)), 0.5)
    for k, item in enumerate(items):
        vals = _item_values(table, item)
        means = np.full(N_COMMUNITIES, np.nan)
        for j, g in enumerate(groups):
            sub = vals[g]
            if g and np.isfinite(sub).any():
                means[j] = np.nanmean(sub)
        ok = np.isfinite(means)
        if not ok.any():
            continue
        lo, hi = means[ok].min(), means[ok].max()
        if hi > lo:
            profiles[ok, k] = (means[ok] - lo) / (hi - lo)
    profiles[~filled] = 0.5

    agree = table.flag("reward_statement")
    x0 = np.full(N_COMMUNITIES, 0.5)
    for j, g in enumerate(groups):
        answers = [agree[r] for r in g if agree[r] is not None]
        if answers:
            x0[j] = float(np.mean(answers))
    return profiles, x0


def estimate_delta(table: SurveyTable) -> np.ndarray:
    """Share of each community that drove an EV before but does not want one."""
    drove, wants = table.flag("drove_ev_before"), table.flag("wants_ev_future")
    delta = np.zeros(N_COMMUNITIES)
    for j, g in enumerate(_community_groups(table)):
        if not g:
            continue
        refusers = sum(1 for r in g if drove[r] and wants[r] is False)
        delta[j] = refusers / len(g)
    return delta


def initial_adopters(table: SurveyTable, mode: str = "per_community") -> np.ndarray:
    owns = table.flag("ev_in_household")
    groups = _community_groups(table)
    a0 = np.zeros(N_COMMUNITIES)
    for j, g in enumerate(groups):
        answers = [owns[r] for r in g if owns[r] is not None]
        if answers:
            a0[j] = float(np.mean(answers))
    if mode == "uniform":
        answers = [owns[r] for g in groups for r in g if owns[r] is not None]
        a0[:] = float(np.mean(answers)) if answers else 0.0
    elif mode != "per_community":
        raise ConfigError(f"unknown initial adoption mode {mode!r}")
    return a0


def initial_state(table: SurveyTable, f, x0=None, mode: str = "per_community") -> SystemState:
    """Adopters from household EV ownership, nobody dissatisfied, opinions ``x0``."""
    a0 = initial_adopters(table, mode)
    if x0 is None:
        _, x0 = opinion_profiles(table)
    return SystemState.from_adx(a0, np.zeros_like(a0), np.asarray(x0, dtype=float))


@dataclass
class WeightSpec:
    lam_low: float = 0.3
    lam_high: float = 0.6
    xi_low: float = 0.1
    xi_high: float = 0.35
    total_cap: float = 0.99

    def __post_init__(self):
        if not (0 <= self.lam_low <= self.lam_high and 0 <= self.xi_low <= self.xi_high):
            raise ConfigError("weight ranges must satisfy 0 <= low <= high")
        if self.lam_high + self.xi_low > self.total_cap + 1e-12:
            raise ConfigError("weight ranges leave no room for lambda + xi <= total_cap")


def sample_opinion_weights(seed: int, spec: Optional[WeightSpec] = None, n: int = N_COMMUNITIES):
    """Draw social-influence weights ``lam`` and feedback weights ``xi`` with ``lam + xi <= total_cap``."""
    spec = spec or WeightSpec()
    rng = np.random.default_rng(seed)
    lam = rng.uniform(spec.lam_low, spec.lam_high, n)
    upper = np.minimum(spec.xi_high, spec.total_cap - lam)
    xi = spec.xi_low + rng.random(n) * (upper - spec.xi_low)
    return lam, xi


def sociodemographic_matrix(table: SurveyTable) -> np.ndarray:
    """Ordinal codes of the socio-demographic columns, min-max scaled per column;
    rows with any unresolvable answer are dropped."""
    sd = table.schema.sociodemographic
    if not sd:
        raise ConfigError("schema declares no sociodemographic columns for clustering")
    cols = []
    for name, mapping in sd.items():
        cols.append([mapping.get(v) if v is not None else None for v in table.raw(name)])
    rows = [r for r in zip(*cols) if all(v is not None for v in r)]
    if not rows:
        raise EmptySelection("no respondent has every sociodemographic column resolvable")
    X = np.array(rows, dtype=float)
    span = X.max(axis=0) - X.min(axis=0)
    return np.where(span > 0, (X - X.min(axis=0)) / np.where(span > 0, span, 1.0), 0.0)


# ---------------------------------------------------------------------------
# calibrated inputs


@dataclass
class CalibratedInputs:
    country: Optional[str]
    f: np.ndarray
    profiles: np.ndarray
    x0: np.ndarray
    a0: np.ndarray
    delta: np.ndarray
    n_respondents: int
    n_selected: int
    report: dict = field(default_factory=dict)
    item_names: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.f.size

    def initial_state(self) -> SystemState:
        return SystemState.from_adx(self.a0, np.zeros_like(self.a0), self.x0)

    def to_dict(self) -> dict:
        grid = community_grid(N_MOBILITY, N_AGE)
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "calibrated_inputs",
            "country": self.country,
            "n": self.n,
            "n_respondents": self.n_respondents,
            "n_selected": self.n_selected,
            "communities": [{"flat_id": c.flat_id, "mobility_class": c.mobility_class, "age_class": c.age_class,
                             "mobility_band": KM_BANDS[c.mobility_class - 1], "age_band": AGE_BANDS[c.age_class - 1]}
                            for c in grid[: self.n]],
            "f": self.f.tolist(),
            "x0": self.x0.tolist(),
            "a0": self.a0.tolist(),
            "delta": self.delta.tolist(),
            "item_names": list(self.item_names),
            "profiles": self.profiles.tolist(),
            "report": self.report,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibratedInputs":
        if d.get("schema_version") != SCHEMA_VERSION or d.get("kind") != "calibrated_inputs":
            raise ConfigError("not a calibrated-inputs document of a supported schema version")
        arr = lambda k: np.asarray(d[k], dtype=float)  # noqa: E731
        return cls(d.get("country"), arr("f"), arr("profiles"), arr("x0"), arr("a0"), arr("delta"),
                   int(d["n_respondents"]), int(d["n_selected"]), d.get("report", {}), d.get("item_names", []))

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CalibratedInputs":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"calibrated inputs not found: {path}")
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def calibrate(table: SurveyTable, initial_mode: str = "per_community") -> CalibratedInputs:
    f, report = joint_distribution(table)
    profiles, x0 = opinion_profiles(table)
    a0 = initial_adopters(table, initial_mode)
    delta = estimate_delta(table)
    report = dict(report)
    report["aggregate_a0"] = float(f @ a0)
    report["mean_x0"] = float(f @ x0)
    for j in report["empty_communities"]:
        logger.warning("community %d has no respondents: f=0, delta=0, a0=0, neutral profile", j)
    return CalibratedInputs(table.country, f, profiles, x0, a0, delta, report["usable"], len(table), report,
                            [it.column for it in table.schema.opinion_items])


def mobility_values(kind: str = "ordinal") -> np.ndarray:
    """Numeric mobility index per community (flat_id order)."""
    if kind == "ordinal":
        per_class = np.asarray(MOBILITY_ORDINAL)
    elif kind == "km":
        per_class = np.asarray(MOBILITY_KM_MIDPOINTS) / KM_SCALE
    else:
        raise ConfigError(f"unknown mobility scale {kind!r} (expected 'ordinal' or 'km')")
    return np.repeat(per_class, N_AGE)


def build_model(inputs: CalibratedInputs, W, lam, xi, beta: float = 0.01, gamma: float = 0.02,
                mobility: str = "ordinal", weighted_influence: bool = False,
                strict_step_bound: bool = True) -> CommunityModel:
    m = mobility_values(mobility)[: inputs.n]
    return CommunityModel(f=inputs.f, m=m, beta=beta, gamma=gamma, delta=inputs.delta, lam=lam, xi=xi, W=W,
                          weighted_influence=weighted_influence, enforce_step_bound=strict_step_bound)
