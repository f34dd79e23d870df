"""Rolling-group longitudinal datasets: canonical CSV format, validation, summaries.

The canonical on-disk layout is one CSV row per client-session observation:

    client_id,session_id,group_id,session_order,module_index,time_weeks,y,x_1,...,x_K

UTF-8, header required, ``.`` decimal separator. A missing outcome is an empty
``y`` field; ``module_index`` may be empty (or the column absent) when sessions
are not organized into modules. Covariate columns are any columns whose header
starts with ``x_``; covariates must be constant within client and are centered
to mean zero across clients at load time (original means are kept in
``Dataset.covariate_means``).
"""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, replace
from functools import cached_property

from .errors import DataParseError, DataValidationError

REQUIRED_COLUMNS = (
    "client_id",
    "session_id",
    "group_id",
    "session_order",
    "time_weeks",
    "y",
)


@dataclass(frozen=True)
class Observation:
    """One client's visit to one session, with an optional measured outcome."""

    client_id: str
    session_id: str
    time_weeks: float
    outcome: float | None
    covariates: tuple[float, ...] = ()


@dataclass(frozen=True)
class SessionInfo:
    session_id: str
    group_id: str
    order_index: int
    module_index: int | None = None


@dataclass(frozen=True)
class ClientInfo:
    client_id: str
    pattern: int | None = None  # R_i: 1 = short-stay pattern, 0 = long-stay


@dataclass(frozen=True)
class Dataset:
    """Immutable container for a validated rolling-group dataset.

    ``sessions`` is ordered by (group_id, order_index); that order defines the
    canonical session index used everywhere downstream. Covariates are stored
    centered; ``covariate_means`` records the original per-column means.
    """

    observations: tuple[Observation, ...]
    sessions: tuple[SessionInfo, ...]
    clients: tuple[ClientInfo, ...]
    covariate_names: tuple[str, ...] = ()
    covariate_means: tuple[float, ...] = ()

    @property
    def n(self) -> int:
        return len(self.clients)

    @property
    def S(self) -> int:
        return len(self.sessions)

    @property
    def K(self) -> int:
        return len(self.covariate_names)

    @cached_property
    def session_index(self) -> dict[str, int]:
        return {s.session_id: i for i, s in enumerate(self.sessions)}

    @cached_property
    def client_index(self) -> dict[str, int]:
        return {c.client_id: i for i, c in enumerate(self.clients)}

    @cached_property
    def group_ids(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for s in self.sessions:
            seen.setdefault(s.group_id, None)
        return tuple(seen)

    def sessions_attended(self) -> dict[str, int]:
        """Number of sessions attended (rows present) per client_id."""
        counts = Counter(o.client_id for o in self.observations)
        return {c.client_id: counts.get(c.client_id, 0) for c in self.clients}

    def patterns_known(self) -> bool:
        return all(c.pattern is not None for c in self.clients)


@dataclass(frozen=True)
class AttendanceSummary:
    """Histogram of sessions attended per client plus per-session head counts."""

    sessions_per_client: dict[int, int]
    per_session_counts: dict[str, int]

    @property
    def total_observations(self) -> int:
        return sum(k * v for k, v in self.sessions_per_client.items())

    def fraction_attending_at_least(self, threshold: int) -> float:
        n = sum(self.sessions_per_client.values())
        hit = sum(v for k, v in self.sessions_per_client.items() if k >= threshold)
        return hit / n if n else 0.0


# ---------------------------------------------------------------------------
# Construction and validation
# ---------------------------------------------------------------------------


def _validate(
    observations: list[Observation],
    sessions: list[SessionInfo],
    clients: list[ClientInfo],
    covariate_names: tuple[str, ...],
) -> None:
    session_ids = {s.session_id for s in sessions}
    client_ids = {c.client_id for c in clients}
    if len(session_ids) != len(sessions):
        raise DataValidationError("duplicate session_id in session table")
    if len(client_ids) != len(clients):
        raise DataValidationError("duplicate client_id in client table")

    seen_pairs: set[tuple[str, str]] = set()
    K = len(covariate_names)
    per_client_cov: dict[str, tuple[float, ...]] = {}
    for o in observations:
        key = (o.client_id, o.session_id)
        if key in seen_pairs:
            raise DataValidationError(
                f"duplicate observation for client {o.client_id!r} at session {o.session_id!r}"
            )
        seen_pairs.add(key)
        if o.session_id not in session_ids:
            raise DataValidationError(
                f"observation references unknown session {o.session_id!r}"
            )
        if o.client_id not in client_ids:
            raise DataValidationError(
                f"observation references unknown client {o.client_id!r}"
            )
        if not (o.time_weeks >= 0.0):
            raise DataValidationError(
                f"negative or non-finite time_weeks for client {o.client_id!r} "
                f"at session {o.session_id!r}"
            )
        if len(o.covariates) != K:
            raise DataValidationError(
                f"covariate vector of length {len(o.covariates)} (expected {K}) "
                f"for client {o.client_id!r}"
            )
        prev = per_client_cov.setdefault(o.client_id, o.covariates)
        if prev != o.covariates:
            raise DataValidationError(
                f"covariates vary within client {o.client_id!r}; they must be constant"
            )

    # order_index consecutive from 1 within each group
    by_group: dict[str, list[int]] = {}
    for s in sessions:
        by_group.setdefault(s.group_id, []).append(s.order_index)
    for gid, orders in by_group.items():
        orders = sorted(orders)
        if orders != list(range(1, len(orders) + 1)):
            raise DataValidationError(
                f"group {gid!r}: session_order values must be consecutive from 1, "
                f"got {orders}"
            )

    patterns = [c.pattern for c in clients]
    if any(p is not None for p in patterns) and any(p is None for p in patterns):
        raise DataValidationError(
            "pattern indicators must be present for all clients or none"
        )
    for p in patterns:
        if p is not None and p not in (0, 1):
            raise DataValidationError(f"pattern indicator must be 0 or 1, got {p}")


def make_dataset(
    observations: list[Observation],
    sessions: list[SessionInfo],
    clients: list[ClientInfo] | None = None,
    covariate_names: tuple[str, ...] = (),
    center: bool = True,
) -> Dataset:
    """Assemble and validate a Dataset from in-memory parts.

    Sessions are re-sorted into the canonical (group_id, order_index) order.
    When ``center`` is true, covariate columns are shifted to mean zero across
    clients and the original means recorded.
    """
    if clients is None:
        seen: dict[str, None] = {}
        for o in observations:
            seen.setdefault(o.client_id, None)
        clients = [ClientInfo(cid) for cid in seen]
    _validate(observations, sessions, clients, covariate_names)

    sessions = sorted(sessions, key=lambda s: (s.group_id, s.order_index))
    K = len(covariate_names)
    means = tuple(0.0 for _ in range(K))
    if center and K:
        per_client: dict[str, tuple[float, ...]] = {}
        for o in observations:
            per_client.setdefault(o.client_id, o.covariates)
        ncov = len(per_client)
        if ncov:
            means = tuple(
                sum(v[k] for v in per_client.values()) / ncov for k in range(K)
            )
            observations = [
                replace(o, covariates=tuple(v - m for v, m in zip(o.covariates, means)))
                for o in observations
            ]
    return Dataset(
        observations=tuple(observations),
        sessions=tuple(sessions),
        clients=tuple(clients),
        covariate_names=covariate_names,
        covariate_means=means,
    )


# ---------------------------------------------------------------------------
# Canonical CSV I/O
# ---------------------------------------------------------------------------


def _parse_float(text: str, what: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataParseError(f"line {line}: cannot parse {what} from {text!r}") from None
    if value != value or value in (float("inf"), float("-inf")):
        raise DataParseError(f"line {line}: non-finite {what} {text!r}")
    return value


def _parse_int(text: str, what: str, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise DataParseError(f"line {line}: cannot parse {what} from {text!r}") from None


def load_dataset(path, schema: dict[str, str] | None = None) -> Dataset:
    """Load and validate a dataset from the canonical CSV format.

    Parameters
    ----------
    path : str or Path
        CSV file to read.
    schema : dict, optional
        Mapping from canonical column names (``client_id``, ``y``, ...) to the
        actual header names in the file, for files using different labels.
        Unmapped canonical names are looked up as-is.

    Raises
    ------
    DataParseError
        Malformed cell, with the offending line number.
    DataValidationError
        Missing required columns, duplicate (client, session) pairs,
        inconsistent session or covariate metadata.
    """
    schema = schema or {}

    def col(name: str) -> str:
        return schema.get(name, name)

    with open(path, "r", encoding="utf-8", newline="") as fh:
        return _read_csv(fh, col)


def _read_csv(fh, col) -> Dataset:
    reader = csv.DictReader(fh)
    if reader.fieldnames is None:
        raise DataValidationError("empty file: header row required")
    header = list(reader.fieldnames)
    missing = [c for c in REQUIRED_COLUMNS if col(c) not in header]
    if missing:
        raise DataValidationError(f"missing required columns: {missing}")
    has_module = col("module_index") in header
    cov_cols = [h for h in header if h.startswith("x_")]

    observations: list[Observation] = []
    session_meta: dict[str, SessionInfo] = {}
    client_order: dict[str, None] = {}
    for row in reader:
        line = reader.line_num
        if any(row.get(c) is None for c in header) or None in row:
            raise DataParseError(f"line {line}: wrong number of fields")
        cid = row[col("client_id")].strip()
        sid = row[col("session_id")].strip()
        gid = row[col("group_id")].strip()
        if not cid or not sid or not gid:
            raise DataParseError(f"line {line}: empty identifier field")
        order = _parse_int(row[col("session_order")].strip(), "session_order", line)
        t = _parse_float(row[col("time_weeks")].strip(), "time_weeks", line)
        ytext = row[col("y")].strip()
        y = None if ytext == "" else _parse_float(ytext, "y", line)
        module = None
        if has_module:
            mtext = row[col("module_index")].strip()
            module = None if mtext == "" else _parse_int(mtext, "module_index", line)
        covs = tuple(
            _parse_float(row[c].strip(), f"covariate {c}", line) for c in cov_cols
        )

        info = SessionInfo(sid, gid, order, module)
        prev = session_meta.setdefault(sid, info)
        if prev != info:
            raise DataValidationError(
                f"session {sid!r} appears with inconsistent metadata "
                f"({prev} vs {info})"
            )
        client_order.setdefault(cid, None)
        observations.append(Observation(cid, sid, t, y, covs))

    if not observations:
        raise DataValidationError("file contains a header but no observations")
    return make_dataset(
        observations,
        list(session_meta.values()),
        [ClientInfo(cid) for cid in client_order],
        covariate_names=tuple(cov_cols),
        center=True,
    )


def _fmt(value: float | int | None) -> str:
    if value is None:
        return ""
    return repr(value) if isinstance(value, float) else str(value)


def write_dataset(dataset: Dataset, path) -> None:
    """Write a Dataset back to the canonical CSV format (stable byte output)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(dumps_dataset(dataset))


def dumps_dataset(dataset: Dataset) -> str:
    """Serialize to the canonical CSV text (used for hashing and writing)."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(
        ["client_id", "session_id", "group_id", "session_order", "module_index",
         "time_weeks", "y", *dataset.covariate_names]
    )
    meta = {s.session_id: s for s in dataset.sessions}
    for o in dataset.observations:
        s = meta[o.session_id]
        writer.writerow(
            [o.client_id, o.session_id, s.group_id, str(s.order_index),
             _fmt(s.module_index), _fmt(o.time_weeks), _fmt(o.outcome),
             *(_fmt(v) for v in o.covariates)]
        )
    return out.getvalue()


# ---------------------------------------------------------------------------
# Derived quantities
# ---------------------------------------------------------------------------


def derive_pattern_indicators(dataset: Dataset, threshold: int) -> Dataset:
    """Set each client's pattern from attendance: 1 if fewer than ``threshold``
    sessions attended (short-stay), else 0.

    Deterministic and independent of observation order. ``threshold`` is
    inclusive on the long-stay side: attending exactly ``threshold`` sessions
    gives pattern 0.
    """
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    counts = dataset.sessions_attended()
    clients = tuple(
        replace(c, pattern=1 if counts[c.client_id] < threshold else 0)
        for c in dataset.clients
    )
    return replace(dataset, clients=clients)


def attendance_summary(dataset: Dataset) -> AttendanceSummary:
    """Histogram of sessions attended per client and per-session head counts."""
    per_client = Counter(o.client_id for o in dataset.observations)
    hist = Counter(per_client[c.client_id] for c in dataset.clients if per_client[c.client_id])
    per_session = Counter(o.session_id for o in dataset.observations)
    return AttendanceSummary(
        sessions_per_client=dict(sorted(hist.items())),
        per_session_counts={s.session_id: per_session.get(s.session_id, 0)
                            for s in dataset.sessions},
    )


def with_masked_outcomes(dataset: Dataset, rows) -> Dataset:
    """Return a copy with the outcomes at the given observation row indices
    removed (marked missing). Used for masking experiments."""
    rows = set(int(r) for r in rows)
    obs = tuple(
        replace(o, outcome=None) if i in rows else o
        for i, o in enumerate(dataset.observations)
    )
    return replace(dataset, observations=obs)
