"""Writes the toy Foursquare-format corpus used by the golden tests.

The corpus is small enough to check by hand and exercises every
preprocessing rule: unpopular locations, sparse users, the cascade between
them, same-hour revisits, single-record weeks, users with too few weeks and
non-zero timezone offsets.
"""

import random
import sys
from datetime import datetime, timedelta, timezone

MONDAY = datetime(2012, 4, 2, tzinfo=timezone.utc)

VENUES = [
    # id, category id, category name, lat, lon
    ("v01", "c_food", "Food", 40.7410, -73.9897),
    ("v02", "c_food", "Food", 40.7306, -73.9866),
    ("v03", "c_work", "Office", 40.7527, -73.9772),
    ("v04", "c_work", "Office", 40.7587, -73.9787),
    ("v05", "c_gym", "Gym", 40.7233, -73.9985),
    ("v06", "c_park", "Park", 40.7829, -73.9654),
    ("v07", "c_bar", "Bar", 40.7265, -73.9815),
    ("v08", "c_bar", "Bar", 40.7195, -74.0021),
    ("v09", "c_shop", "Shop", 40.7484, -73.9857),
    ("v10", "c_home", "Home", 40.6782, -73.9442),
    ("v11", "c_home", "Home", 40.6892, -73.9858),
    ("v12", "c_food", "Food", 40.7061, -74.0087),
    # Rarely visited: removed by the popularity filter.
    ("v13", "c_museum", "Museum", 40.7794, -73.9632),
    ("v14", "c_shop", "Shop", 40.7128, -74.0060),
]
VENUE = {v[0]: v for v in VENUES}


def stamp(week, day, hour, minute):
    return MONDAY + timedelta(weeks=week, days=day, hours=hour, minutes=minute)


def fmt(ts):
    return ts.strftime("%a %b %d %H:%M:%S +0000 %Y")


def main(out):
    rng = random.Random(20240611)
    rows = []

    def add(user, venue, utc, tz):
        v = VENUE[venue]
        rows.append((user, venue, v[1], v[2], v[3], v[4], tz, fmt(utc)))

    common = [f"v{i:02d}" for i in range(1, 13)]
    # Nine regular users over twelve weeks, 4-6 check-ins per week.
    for u in range(1, 10):
        user = f"{100 + u}"
        tz = -240 if u % 3 else -300
        home = "v10" if u % 2 else "v11"
        favourites = rng.sample(common, 5)
        for week in range(12):
            n = rng.randint(4, 6)
            days = sorted(rng.sample(range(7), n))
            for i, day in enumerate(days):
                venue = home if i == 0 else rng.choice(favourites)
                hour = rng.randint(12, 23)
                add(user, venue, stamp(week, day, hour, rng.randint(0, 59)), tz)
        # Same-hour revisit, merged into the first check-in.
        add(user, home, stamp(12, 1, 14, 5), tz)
        add(user, home, stamp(12, 1, 14, 40), tz)
        add(user, favourites[0], stamp(12, 2, 15, 0), tz)

    # Single-record weeks for user 101 (dropped weeks, user kept).
    add("101", "v01", stamp(13, 3, 16, 0), -240)
    add("101", "v02", stamp(15, 3, 16, 0), -240)

    # Rare venues: v13 has 6 check-ins, v14 has 4.
    for i in range(6):
        add(f"{101 + i}", "v13", stamp(i, 5, 13, 30), -240)
    for i in range(4):
        add(f"{106 + i}", "v14", stamp(i, 6, 13, 30), -240)

    # 111: eight check-ins, too sparse.
    for i in range(8):
        add("111", common[i], stamp(i, 2, 18, 0), -240)

    # 112: nine popular check-ins plus one at v13. Once v13 goes, 112 has
    # nine left and is removed too.
    for i in range(9):
        add("112", common[(i * 5) % 12], stamp(i, 4, 19, 0), -240)
    add("112", "v13", stamp(9, 4, 19, 0), -240)

    # 113: plenty of check-ins but only four distinct weeks.
    for week in range(4):
        for day in range(4):
            add("113", common[(week + day) % 12], stamp(week, day, 17, 10), -300)

    # Input order is not time order.
    rng.shuffle(rows)
    with open(out, "w", encoding="utf-8") as f:
        for r in rows:
            f.write("\t".join(str(x) for x in r) + "\n")


if __name__ == "__main__":
    main(sys.argv[1])
