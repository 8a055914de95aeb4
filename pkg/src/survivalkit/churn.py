"""Player event logs to a labeled survival feature matrix.

Churn is a prolonged gap of inactivity: a player whose last activity lies
``inactivity_days`` or more before the end of the observation window has
churned; everyone else is right-censored at the window end. Times count
calendar days with the convention time = day difference + 1, so a player
who registers and churns the same day has time 1 (survival times stay
positive).

All extracted features are game-independent: attention (daily playtime and
its early/trailing averages, lifetime), loyalty (days played, loyalty
index, purchase recency), intensity (actions, sessions, purchases, the
shift in recent action rate), and level.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from datetime import date, datetime
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from survivalkit.survival import SurvivalDataset

__all__ = [
    "EVENT_KINDS",
    "FEATURE_COLUMNS",
    "SEGMENTS",
    "PlayerEvent",
    "ChurnLabel",
    "FeatureConfig",
    "PlayerFeatureRow",
    "label_churn",
    "extract_features",
    "segment_players",
    "build_dataset",
    "featurize_frame",
    "load_event_log",
    "write_event_log",
    "feature_rows_to_frame",
    "feature_rows_from_frame",
    "write_feature_csv",
    "read_feature_csv",
]

EVENT_KINDS = ("session_start", "session_end", "action", "purchase", "level_up")
SEGMENTS = ("whale", "payer", "non_payer")

UNPAIRED_SESSION_MINUTES = 30.0  # open sessions are closed at +30 minutes


@dataclass(frozen=True)
class PlayerEvent:
    player_id: str
    timestamp: datetime
    kind: str
    amount: Optional[float] = None
    level: Optional[int] = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.kind == "purchase":
            if self.amount is None or self.amount < 0:
                raise ValueError("purchase events carry a non-negative amount")
        if self.kind == "level_up" and self.level is None:
            raise ValueError("level_up events carry a level")


@dataclass(frozen=True)
class ChurnLabel:
    time: float
    event: bool


@dataclass(frozen=True)
class FeatureConfig:
    first_weeks: int = 2          # early-average window, in weeks
    moving_window_days: int = 7   # trailing playtime window
    last_days: int = 7            # trailing action-rate window


@dataclass(frozen=True)
class PlayerFeatureRow:
    player_id: str
    time: float
    event: bool
    playtime_daily_avg: float
    playtime_first_weeks_avg: float
    playtime_moving_avg: float
    lifetime_days: float
    days_played: int
    loyalty_index: float
    days_to_first_purchase: Optional[float]
    days_since_last_purchase: Optional[float]
    n_actions: int
    n_sessions: int
    n_purchases: int
    purchase_amount: float
    action_activity_distance: float
    level: int
    segment: Optional[str] = None


FEATURE_COLUMNS = (
    "playtime_daily_avg",
    "playtime_first_weeks_avg",
    "playtime_moving_avg",
    "lifetime_days",
    "days_played",
    "loyalty_index",
    "days_to_first_purchase",
    "days_since_last_purchase",
    "n_actions",
    "n_sessions",
    "n_purchases",
    "purchase_amount",
    "action_activity_distance",
    "level",
)


def _event_dates(events: Sequence[PlayerEvent]) -> tuple:
    if not events:
        raise ValueError("player has no events")
    stamps = sorted(e.timestamp for e in events)
    return stamps[0].date(), stamps[-1].date()


def label_churn(
    events: Sequence[PlayerEvent], observation_end: date, inactivity_days: int = 10
) -> ChurnLabel:
    """Churn label for one player's events.

    Registration is the date of the first event. If the window end is at
    least ``inactivity_days`` after the last activity the player churned at
    their last active day (time = gap to registration + 1); otherwise the
    player is censored at the window end.
    """
    registration, last_active = _event_dates(events)
    if last_active > observation_end:
        raise ValueError("future events: activity after the observation end")
    if (observation_end - last_active).days >= inactivity_days:
        return ChurnLabel(time=float((last_active - registration).days + 1), event=True)
    return ChurnLabel(time=float((observation_end - registration).days + 1), event=False)


def label_events_frame(
    df: pd.DataFrame, observation_end: Optional[date] = None, inactivity_days: int = 10
) -> pd.DataFrame:
    """Vectorized churn labels for a whole event-log frame.

    Equivalent to applying ``label_churn`` player by player; returns a frame
    with columns player_id, time, event, sorted by player_id. The window end
    defaults to the last timestamp in the log.
    """
    ts = pd.to_datetime(df["timestamp"]).values.astype("datetime64[D]")
    if observation_end is None:
        end = ts.max()
    else:
        end = np.datetime64(observation_end.isoformat(), "D")
    if (ts > end).any():
        raise ValueError("future events: activity after the observation end")
    days = (ts - end).astype(int)  # day offsets, <= 0
    grouped = pd.DataFrame({"player_id": df["player_id"].values, "day": days}).groupby(
        "player_id", sort=True, observed=True
    )["day"]
    first = grouped.min()
    last = grouped.max()
    event = -last >= inactivity_days
    time = np.where(event, last - first + 1, -first + 1).astype(float)
    return pd.DataFrame({"player_id": first.index, "time": time, "event": event.values})


def _session_minutes_by_day(events: Sequence[PlayerEvent], registration: date) -> dict:
    """Total session minutes per day offset; unpaired starts get 30 minutes.

    A session is attributed to the day it starts on. Session ends without a
    pending start are ignored.
    """
    minutes: dict = {}
    pending: list = []
    for e in sorted(events, key=lambda ev: ev.timestamp):
        if e.kind == "session_start":
            pending.append(e.timestamp)
        elif e.kind == "session_end" and pending:
            start = pending.pop(0)
            day = (start.date() - registration).days
            minutes[day] = minutes.get(day, 0.0) + (e.timestamp - start).total_seconds() / 60.0
    for start in pending:
        day = (start.date() - registration).days
        minutes[day] = minutes.get(day, 0.0) + UNPAIRED_SESSION_MINUTES
    return minutes


def extract_features(
    events: Sequence[PlayerEvent],
    observation_end: date,
    config: FeatureConfig = FeatureConfig(),
    inactivity_days: int = 10,
) -> PlayerFeatureRow:
    """All feature fields for one player, including the churn label."""
    events = sorted(events, key=lambda e: e.timestamp)
    label = label_churn(events, observation_end, inactivity_days)
    registration = events[0].timestamp.date()
    lifetime = label.time  # days observed: churned -> through last activity
    anchor_day = lifetime - 1  # day offset of the last counted day

    active_days = {(e.timestamp.date() - registration).days for e in events}
    days_played = len(active_days)

    minutes = _session_minutes_by_day(events, registration)
    total_minutes = sum(minutes.values())
    first_window = min(7.0 * config.first_weeks, lifetime)
    first_minutes = sum(m for d, m in minutes.items() if d < first_window)
    moving_window = min(float(config.moving_window_days), lifetime)
    moving_minutes = sum(
        m for d, m in minutes.items() if d > anchor_day - moving_window
    )

    n_actions = sum(1 for e in events if e.kind == "action")
    n_sessions = sum(1 for e in events if e.kind == "session_start")
    purchases = [e for e in events if e.kind == "purchase"]
    purchase_amount = float(sum(e.amount for e in purchases))
    if purchases:
        first_p = min(e.timestamp.date() for e in purchases)
        last_p = max(e.timestamp.date() for e in purchases)
        days_to_first = float((first_p - registration).days)
        days_since_last = float(anchor_day - (last_p - registration).days)
    else:
        days_to_first = None
        days_since_last = None

    last_window = min(float(config.last_days), lifetime)
    recent_actions = sum(
        1
        for e in events
        if e.kind == "action"
        and (e.timestamp.date() - registration).days > anchor_day - last_window
    )
    activity_distance = abs(n_actions / lifetime - recent_actions / last_window)

    levels = [e.level for e in events if e.kind == "level_up"]
    return PlayerFeatureRow(
        player_id=events[0].player_id,
        time=label.time,
        event=label.event,
        playtime_daily_avg=total_minutes / lifetime,
        playtime_first_weeks_avg=first_minutes / first_window,
        playtime_moving_avg=moving_minutes / moving_window,
        lifetime_days=lifetime,
        days_played=days_played,
        loyalty_index=days_played / lifetime,
        days_to_first_purchase=days_to_first,
        days_since_last_purchase=days_since_last,
        n_actions=n_actions,
        n_sessions=n_sessions,
        n_purchases=len(purchases),
        purchase_amount=purchase_amount,
        action_activity_distance=activity_distance,
        level=max(levels) if levels else 1,
    )


def segment_players(
    rows: Sequence[PlayerFeatureRow], whale_spend_quantile: float = 0.90
) -> list:
    """Assign whale / payer / non_payer segments by spend.

    Zero spend is non_payer; among payers, whales are those at or above the
    given quantile of payer spend (ties at the threshold count as whales).
    """
    rows = list(rows)
    if not rows:
        raise ValueError("empty dataset")
    payer_spend = np.array([r.purchase_amount for r in rows if r.purchase_amount > 0])
    threshold = np.quantile(payer_spend, whale_spend_quantile) if payer_spend.size else np.inf
    out = []
    for r in rows:
        if r.purchase_amount <= 0:
            segment = "non_payer"
        elif r.purchase_amount >= threshold:
            segment = "whale"
        else:
            segment = "payer"
        out.append(replace(r, segment=segment))
    return out


def build_dataset(
    rows: Sequence[PlayerFeatureRow],
    feature_subset: Optional[Sequence[str]] = None,
    segment_filter: Optional[str] = None,
) -> SurvivalDataset:
    """Feature matrix + (time, event) responses from labeled player rows.

    Purchase-recency features of players who never purchased are imputed as
    lifetime_days + 1, a "has not happened within the observed window"
    sentinel that keeps ordered splits meaningful.
    """
    rows = list(rows)
    if segment_filter is not None:
        rows = [r for r in rows if r.segment == segment_filter]
        if not rows:
            raise ValueError(f"empty after filter: no rows with segment {segment_filter!r}")
    if not rows:
        raise ValueError("empty dataset")
    features = list(feature_subset) if feature_subset is not None else list(FEATURE_COLUMNS)
    unknown = [f for f in features if f not in FEATURE_COLUMNS]
    if unknown:
        raise ValueError(f"unknown features: {unknown}")

    def value(row, name):
        v = getattr(row, name)
        if v is None:  # purchase features for never-payers
            return row.lifetime_days + 1.0
        return float(v)

    X = np.array([[value(r, f) for f in features] for r in rows])
    return SurvivalDataset(
        times=[r.time for r in rows],
        events=[r.event for r in rows],
        X=X,
        feature_names=features,
    )


# ---------------------------------------------------------------------------
# Event-log frames (CSV schema: player_id,timestamp,kind,amount,level)


def load_event_log(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"player_id": str}, keep_default_na=False, na_values=[""])
    required = ["player_id", "timestamp", "kind", "amount", "level"]
    if list(df.columns) != required:
        raise ValueError(f"schema mismatch: expected columns {required} in {path}")
    df["timestamp"] = pd.to_datetime(df["timestamp"])
    return df


def write_event_log(df: pd.DataFrame, path) -> None:
    out = df.copy()
    out["timestamp"] = pd.to_datetime(out["timestamp"]).dt.strftime("%Y-%m-%dT%H:%M:%S")
    out["amount"] = ["" if pd.isna(v) else f"{v:.2f}" for v in df["amount"]]
    out["level"] = ["" if pd.isna(v) else str(int(v)) for v in df["level"]]
    out.to_csv(path, index=False, columns=["player_id", "timestamp", "kind", "amount", "level"])


def _events_from_group(player_id: str, group: pd.DataFrame) -> list:
    events = []
    for ts, kind, amount, level in zip(
        group["timestamp"], group["kind"], group["amount"], group["level"]
    ):
        events.append(
            PlayerEvent(
                player_id=player_id,
                timestamp=ts.to_pydatetime(),
                kind=kind,
                amount=None if pd.isna(amount) else float(amount),
                level=None if pd.isna(level) else int(level),
            )
        )
    return events


def featurize_frame(
    df: pd.DataFrame,
    observation_end: Optional[date] = None,
    config: FeatureConfig = FeatureConfig(),
    inactivity_days: int = 10,
    whale_spend_quantile: float = 0.90,
) -> list:
    """Per-player feature rows from an event-log frame, segmented by spend.

    The observation window defaults to the last timestamp in the log.
    Players are processed in player_id order, so the result does not depend
    on the input row order.
    """
    if observation_end is None:
        observation_end = pd.to_datetime(df["timestamp"]).max().date()
    rows = []
    for player_id, group in df.groupby("player_id", sort=True, observed=True):
        events = _events_from_group(str(player_id), group)
        rows.append(extract_features(events, observation_end, config, inactivity_days))
    return segment_players(rows, whale_spend_quantile)


# ---------------------------------------------------------------------------
# Feature-matrix CSV (survival dataset schema plus player_id and segment)


def feature_rows_to_frame(rows: Sequence[PlayerFeatureRow]) -> pd.DataFrame:
    data = {
        "player_id": [r.player_id for r in rows],
        "segment": [r.segment if r.segment is not None else "" for r in rows],
        "time": [r.time for r in rows],
        "event": [int(r.event) for r in rows],
    }
    for col in FEATURE_COLUMNS:
        data[col] = [getattr(r, col) for r in rows]
    return pd.DataFrame(data)


def feature_rows_from_frame(df: pd.DataFrame) -> list:
    rows = []
    for rec in df.to_dict("records"):
        kwargs = {col: rec[col] for col in FEATURE_COLUMNS}
        for opt in ("days_to_first_purchase", "days_since_last_purchase"):
            if pd.isna(kwargs[opt]):
                kwargs[opt] = None
        segment = rec.get("segment")
        if segment is not None and (pd.isna(segment) or segment == ""):
            segment = None
        rows.append(
            PlayerFeatureRow(
                player_id=str(rec["player_id"]),
                time=float(rec["time"]),
                event=bool(int(rec["event"])),
                segment=segment,
                **{
                    k: (v if v is None else (int(v) if k in
                        ("days_played", "n_actions", "n_sessions", "n_purchases", "level")
                        else float(v)))
                    for k, v in kwargs.items()
                },
            )
        )
    return rows


def write_feature_csv(rows: Sequence[PlayerFeatureRow], path) -> None:
    df = feature_rows_to_frame(rows)
    for col in ("days_to_first_purchase", "days_since_last_purchase"):
        df[col] = ["" if pd.isna(v) else repr(float(v)) for v in df[col]]
    for col in (
        "time",
        "playtime_daily_avg",
        "playtime_first_weeks_avg",
        "playtime_moving_avg",
        "lifetime_days",
        "loyalty_index",
        "purchase_amount",
        "action_activity_distance",
    ):
        df[col] = [repr(float(v)) for v in df[col]]
    df.to_csv(path, index=False)


def read_feature_csv(path) -> pd.DataFrame:
    df = pd.read_csv(
        path,
        dtype={"player_id": str},
        keep_default_na=False,
        na_values=[""],
        float_precision="round_trip",
    )
    if "time" not in df.columns or "event" not in df.columns:
        raise ValueError(f"schema mismatch: 'time' and 'event' columns required in {path}")
    return df
