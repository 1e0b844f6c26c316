"""Regenerate the bundled synthetic sample census and its recorded fixtures.

    python scripts/make_sample.py

Writes src/gigcount/data/ (sample census, fixtures, config, survey
responses) and tests/fixtures/trends9/ (a 9-site trends recording).
"""

import json
import shutil
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from gigcount.acquisition import FixtureStore, plan_batches
from gigcount.census import PlatformRecord, serialize_census

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "src" / "gigcount" / "data"
CAPTURED_AT = "2020-09-29T00:00:00+00:00"
START, END = date(2019, 9, 1), date(2020, 9, 1)
ANCHOR = "hubwork.test"

NAMES = [
    "hubwork", "taskmarket", "codebazaar", "gigstream", "microtasker", "designhive",
    "writerly", "translatenow", "voicegig", "dataentryhub", "remotely", "freelancia",
    "crowdlabel", "bidwork", "skillswap", "jobcloud", "tutorlink", "promarket",
    "quickhands", "nichecraft",
]
OBSERVED = {  # name -> (registered, ever_worked, fulltime)
    "hubwork": (15_000_000, None, None),
    "taskmarket": (12_500_000, 1_400_000, 380_000),
    "codebazaar": (2_400_000, 310_000, None),
    "gigstream": (1_100_000, None, None),
    "microtasker": (640_000, 21_000, 2_100),
    "designhive": (230_000, None, None),
    "writerly": (150_000, None, None),
    "translatenow": (48_000, 9_100, 1_500),
    "voicegig": (21_000, None, None),
    "dataentryhub": (9_400, None, None),
    "remotely": (3_100, None, None),
    "freelancia": (780_000, None, None),
}
NO_SITERANK = {"nichecraft", "quickhands"}
NO_UNIQUES = {"tutorlink"}
NO_TRENDS = {"nichecraft", "skillswap"}


def dates():
    n = (END - START).days + 1
    return [START + timedelta(days=i) for i in range(n)]


def latent_popularity(rng):
    pop = {}
    for name in NAMES:
        if name in OBSERVED:
            pop[name] = np.log(OBSERVED[name][0]) + rng.normal(0, 0.4)
        else:
            pop[name] = rng.uniform(7.0, 13.0)
    return pop


def trends_bodies(sites, anchor, level, rng, outage_day=None):
    """Per-batch bodies mimicking a 0-100 index scaled to each batch's peak."""
    days = dates()
    t = np.arange(len(days))
    daily = {}
    for s in [anchor] + list(sites):
        if level.get(s) is None:
            daily[s] = np.zeros(len(days))
            continue
        seasonal = 1 + 0.2 * np.sin(2 * np.pi * t / 365.0 + rng.uniform(0, 6.28))
        daily[s] = np.exp(level[s]) * seasonal * rng.lognormal(0, 0.15, len(days))
    if outage_day is not None:
        daily[anchor][outage_day] = 0.0
    plan = plan_batches(list(sites), anchor, (START, END))
    out = []
    for batch in plan.batches:
        peak = max(daily[s].max() for s in batch)
        series = {s: [float(v) for v in np.round(100 * daily[s] / peak)] for s in batch}
        body = {"dates": [d.isoformat() for d in days], "series": series}
        params = [("terms", ",".join(batch)), ("start", START.isoformat()),
                  ("end", END.isoformat())]
        out.append((params, json.dumps(body, separators=(",", ":")).encode()))
    return out


def main():
    rng = np.random.default_rng(2020)
    pop = latent_popularity(rng)
    urls = {n: f"{n}.test" for n in NAMES}

    records = []
    for n in NAMES:
        reg, ever, full = OBSERVED.get(n, (None, None, None))
        records.append(PlatformRecord(
            name=n, url=urls[n], registered_count=reg, ever_worked_count=ever,
            fulltime_count=full, source="synthetic sample" if reg else "",
            observed_at=date(2020, 9, 29) if reg else None))

    fixtures = DATA / "fixtures"
    shutil.rmtree(fixtures, ignore_errors=True)
    store = FixtureStore(fixtures)

    # trends interest rises with popularity, compressed so small sites are not all zero
    level = {urls[n]: 0.45 * pop[n] for n in NAMES if n not in NO_TRENDS}
    sites = [urls[n] for n in NAMES if urls[n] != ANCHOR]
    for params, body in trends_bodies(sites, ANCHOR, level, rng, outage_day=40):
        store.put("trends", params, body, CAPTURED_AT)

    for n in NAMES:
        if n in NO_SITERANK:
            rank = uniques = None
        else:
            rank = int(max(1, round(np.exp(21.0 - pop[n] + rng.normal(0, 0.5)))))
            uniques = None if n in NO_UNIQUES else int(round(np.exp(pop[n] - 1.5 + rng.normal(0, 0.5))))
        body = json.dumps({"url": urls[n], "alexa_rank": rank, "monthly_uniques": uniques},
                          separators=(",", ":")).encode()
        store.put("siterank", [("url", urls[n])], body, CAPTURED_AT)

    (DATA / "sample_census.csv").write_text(serialize_census(records), encoding="utf-8")

    # survey responses: platforms each respondent is active on
    responses = rng.choice([1, 2, 3, 4, 5, 6], size=400, p=[0.48, 0.26, 0.13, 0.08, 0.03, 0.02])
    (DATA / "multihoming_responses.txt").write_text(
        "".join(f"{int(v)}\n" for v in responses), encoding="utf-8")

    # small 9-site recording for acquisition tests
    t9 = ROOT / "tests" / "fixtures" / "trends9"
    shutil.rmtree(t9, ignore_errors=True)
    store9 = FixtureStore(t9)
    nine = [f"site{i}.test" for i in range(1, 10)]
    lv = {s: rng.uniform(2, 6) for s in nine}
    lv["anchor.test"] = 6.0
    for params, body in trends_bodies(nine, "anchor.test", lv, rng):
        store9.put("trends", params, body, CAPTURED_AT)


if __name__ == "__main__":
    main()
