"""Independent reference for the toy corpus golden files.

Reimplements the preprocessing rules and the global graph directly with the
Python standard library and writes the expected counts and edge list.
"""

import math
import sys
from collections import Counter, defaultdict
from datetime import datetime, timedelta

MIN_LOC = 10
MIN_USER = 10


def load(path):
    rows = []
    with open(path, encoding="utf-8") as f:
        for i, line in enumerate(f):
            p = line.rstrip("\n").split("\t")
            utc = datetime.strptime(p[7], "%a %b %d %H:%M:%S %z %Y")
            rows.append(
                dict(
                    order=i,
                    user=p[0],
                    loc=p[1],
                    cat=p[2],
                    lat=float(p[4]),
                    lon=float(p[5]),
                    utc=utc,
                    local=(utc + timedelta(minutes=int(p[6]))).replace(tzinfo=None),
                )
            )
    return rows


def filter_rows(rows):
    live = sorted(rows, key=lambda r: (r["user"], r["utc"], r["order"]))
    while True:
        before = len(live)
        lc = Counter(r["loc"] for r in live)
        live = [r for r in live if lc[r["loc"]] >= MIN_LOC]
        uc = Counter(r["user"] for r in live)
        live = [r for r in live if uc[r["user"]] >= MIN_USER]
        merged = []
        for r in live:
            prev = merged[-1] if merged else None
            if (
                prev is not None
                and prev["user"] == r["user"]
                and prev["loc"] == r["loc"]
                and prev["local"].replace(minute=0, second=0) == r["local"].replace(minute=0, second=0)
            ):
                continue
            merged.append(r)
        live = merged
        if len(live) == before:
            return live


def haversine(a, b):
    la1, lo1, la2, lo2 = map(math.radians, (a[0], a[1], b[0], b[1]))
    h = math.sin((la2 - la1) / 2) ** 2 + math.cos(la1) * math.cos(la2) * math.sin((lo2 - lo1) / 2) ** 2
    return 2 * 6371.0 * math.asin(min(1.0, math.sqrt(h)))


def main(path, out_dir):
    rows = load(path)
    meta = {}
    for r in rows:
        meta.setdefault(r["loc"], (r["lat"], r["lon"], r["cat"]))
    live = filter_rows(rows)

    per_user = defaultdict(list)
    for r in live:
        per_user[r["user"]].append(r)
    trajectories = {}
    for user, recs in per_user.items():
        weeks = defaultdict(list)
        for r in recs:
            weeks[r["local"].isocalendar()[:2]].append(r)
        kept = [weeks[k] for k in sorted(weeks) if len(weeks[k]) >= 2]
        if len(kept) >= 5:
            trajectories[user] = kept

    locs = sorted({r["loc"] for t in trajectories.values() for w in t for r in w})
    cats = sorted({meta[l][2] for l in locs})
    n_records = sum(len(w) for t in trajectories.values() for w in t)
    n_traj = sum(len(t) for t in trajectories.values())
    n_train = {u: min(math.floor(0.8 * len(t)), len(t) - 1) for u, t in trajectories.items()}
    train_samples = test_samples = 0
    for u, t in trajectories.items():
        for p in range(2, len(t)):
            if p < n_train[u]:
                train_samples += len(t[p]) - 1
            else:
                test_samples += len(t[p]) - 1

    edges = {}
    for u, t in trajectories.items():
        for w in t[: n_train[u]]:
            for a, b in zip(w, w[1:]):
                e = edges.setdefault((a["loc"], b["loc"]), [0, [0] * 24])
                e[0] += 1
                e[1][b["local"].hour] += 1

    with open(f"{out_dir}/golden_counts.toml", "w") as f:
        f.write("# Generated by tools/toy_oracle.py from checkins.tsv.\n")
        f.write("[raw]\n")
        f.write(f"checkins = {len(rows)}\nusers = {len({r['user'] for r in rows})}\n")
        f.write(f"locations = {len({r['loc'] for r in rows})}\n\n")
        f.write("[filtered]\n")
        f.write(f"users = {len({r['user'] for r in live})}\nlocations = {len({r['loc'] for r in live})}\n")
        f.write(f"records = {len(live)}\n\n")
        f.write("[dataset]\n")
        f.write(f"users = {len(trajectories)}\nlocations = {len(locs)}\ncategories = {len(cats)}\n")
        f.write(f"records = {n_records}\ntrajectories = {n_traj}\n")
        f.write(f"train_trajectories = {sum(n_train.values())}\ntest_trajectories = {n_traj - sum(n_train.values())}\n")
        f.write(f"train_samples = {train_samples}\ntest_samples = {test_samples}\n\n")
        f.write("[graph]\n")
        f.write(f"nodes = {len(locs)}\nedges = {len(edges)}\n")
        f.write(f"transitions = {sum(e[0] for e in edges.values())}\n")

    with open(f"{out_dir}/golden_edges.tsv", "w") as f:
        f.write("src\tdst\ttrans\tdistance_km\t" + "\t".join(f"flow_{h}" for h in range(24)) + "\n")
        for (a, b) in sorted(edges):
            trans, flow = edges[(a, b)]
            d = haversine(meta[a][:2], meta[b][:2])
            f.write(f"{a}\t{b}\t{trans}\t{d!r}\t" + "\t".join(map(str, flow)) + "\n")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
