"""Dataset readers and writers.

Canonical layout (one directory, UTF-8, LF line endings):

``tm.csv``
    header ``t,od_1,...,od_{n^2}``, one row per timestamp. An empty field
    marks a measurement gap; gaps are imputed on load.
``routing.csv``
    ``m`` rows of ``n^2`` comma-separated ``0``/``1`` values, no header.
``links.csv``
    header ``t,link_1,...,link_m`` (written for convenience, never read back).
``meta.csv``
    a single row ``n,m,timestep_seconds``.
``topology.csv``
    optional, header ``link,from,to`` with 1-based node ids.

Abilene directory (assumed schema): ``routing.txt`` holding ``m`` rows of
121 whitespace-separated 0/1 values, plus traffic files ``tm*.txt`` read in
name order, each row being one 5-minute interval of 121 whitespace-separated
OD volumes in canonical order. ``nan`` tokens are gaps.

GEANT directory (assumed schema): ``topology.xml`` listing
``<node id=.../>`` elements and ``<link><from node=.../><to node=.../></link>``
elements; optional ``routing.txt`` (``m x n^2``, links in topology order),
otherwise hop-count shortest-path routing is derived from the topology; and
one traffic file per 15-minute interval, ``*.xml`` in name order, holding
``<src id=...><dst id=...>value</dst></src>`` elements. A missing
off-diagonal ``(src, dst)`` element is a gap; missing self flows are zero.
"""

import csv
import logging
import warnings
import xml.etree.ElementTree as ET
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .netmodel import LinkSeries, Topology, TrafficSeries, link_counts, routing_matrix

log = logging.getLogger(__name__)

ABILENE_NODES = 11
GEANT_NODES = 23
ABILENE_TIMESTEP = 300.0
GEANT_TIMESTEP = 900.0


class ParseError(ValueError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetBundle:
    A: np.ndarray
    X: TrafficSeries
    topology: Topology = None
    provenance: str = ""

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or A.shape[1] != self.X.values.shape[1]:
            raise ValueError(f"routing shape {A.shape} does not match {self.X.values.shape[1]} OD columns")
        if self.topology is not None and (self.topology.n != self.X.n or self.topology.m != A.shape[0]):
            raise ValueError("topology disagrees with routing/traffic dimensions")
        object.__setattr__(self, "A", A)

    @property
    def n(self):
        return self.X.n

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def T(self):
        return self.X.T

    @property
    def Y(self):
        return link_counts(self.A, self.X)


@dataclass(frozen=True)
class SplitSpec:
    train_len: int
    test_len: int

    def __post_init__(self):
        if self.train_len < 1 or self.test_len < 1:
            raise ValueError("train_len and test_len must be >= 1")


ABILENE_SPLIT = SplitSpec(500, 1500)
GEANT_SPLIT = SplitSpec(1500, 500)


def split(bundle, plan):
    """Contiguous prefix (train) and the following ``test_len`` rows (test)."""
    if plan.train_len + plan.test_len > bundle.T:
        raise ValueError(f"split {plan.train_len}+{plan.test_len} exceeds T={bundle.T}")
    X = bundle.X
    a, b = plan.train_len, plan.train_len + plan.test_len
    train = replace(bundle, X=TrafficSeries(X.values[:a], X.timestep_seconds, X.start_index))
    test = replace(bundle, X=TrafficSeries(X.values[a:b], X.timestep_seconds, X.start_index + a))
    return train, test


def impute_gaps(values, gaps):
    """Fill gaps per column: linear inside, nearest observation at the ends.

    Columns without any observation become zero (with a warning).
    """
    values = np.array(values, dtype=float)
    gaps = np.asarray(gaps, dtype=bool)
    if values.shape != gaps.shape:
        raise ValueError("values and gap mask differ in shape")
    if not gaps.any():
        return values
    t = np.arange(values.shape[0])
    for c in np.flatnonzero(gaps.any(axis=0)):
        ok = ~gaps[:, c]
        if not ok.any():
            warnings.warn(f"OD column {c + 1} has no observations; filled with zeros", stacklevel=2)
            values[:, c] = 0.0
            continue
        values[:, c] = np.interp(t, t[ok], values[ok, c])
    return np.maximum(values, 0.0)


def _fmt(v):
    return format(float(v), ".12g")


def write_canonical(bundle, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    n2 = bundle.n * bundle.n
    t0 = bundle.X.start_index
    with open(d / "tm.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"od_{i}" for i in range(1, n2 + 1)])
        for i, row in enumerate(bundle.X.values):
            w.writerow([t0 + i] + [_fmt(v) for v in row])
    with open(d / "routing.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in bundle.A:
            w.writerow(int(v) for v in row)
    write_link_series(bundle.Y, d / "links.csv", t0)
    with open(d / "meta.csv", "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerow(
            [bundle.n, bundle.m, _fmt(bundle.X.timestep_seconds)])
    if bundle.topology is not None:
        with open(d / "topology.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["link", "from", "to"])
            for i, (a, b) in enumerate(bundle.topology.links, 1):
                w.writerow([i, a, b])


def write_link_series(Y, path, start_index=0):
    values = Y.values if isinstance(Y, LinkSeries) else np.atleast_2d(Y)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"link_{i}" for i in range(1, values.shape[1] + 1)])
        for i, row in enumerate(values):
            w.writerow([start_index + i] + [_fmt(v) for v in row])


def read_meta(path):
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) != 1 or len(rows[0]) != 3:
        raise ParseError("meta.csv must hold a single row n,m,timestep_seconds", path)
    try:
        n, m, dt = int(rows[0][0]), int(rows[0][1]), float(rows[0][2])
    except ValueError:
        raise ParseError("meta.csv values must be numeric", path, 1) from None
    return n, m, dt


def _parse_number(tok, path, line):
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"not a number: {tok!r}", path, line) from None
    if not np.isfinite(v):
        raise ParseError(f"non-finite value {tok!r}", path, line)
    return v


def read_routing_csv(path, n2=None):
    path = Path(path)
    rows = []
    with open(path, encoding="utf-8") as fh:
        for ln, row in enumerate(csv.reader(fh), 1):
            if not row:
                continue
            rows.append(_routing_row(row, path, ln, n2))
    if not rows:
        raise ParseError("routing file is empty", path)
    return np.array(rows)


def _routing_row(tokens, path, ln, n2):
    if n2 is not None and len(tokens) != n2:
        raise ParseError(f"expected {n2} routing entries, found {len(tokens)}", path, ln)
    out = []
    for tok in tokens:
        tok = tok.strip()
        if tok not in ("0", "1", "0.0", "1.0"):
            raise ParseError(f"routing entry {tok!r} is not 0 or 1", path, ln)
        out.append(float(tok))
    return out


def read_tm_csv(path, n2):
    """Returns ``(values, gaps, start_index)``."""
    path = Path(path)
    values, gaps, ts = [], [], []
    with open(path, encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["t"] + [f"od_{i}" for i in range(1, n2 + 1)]
        if header != expected:
            raise ParseError(f"header must be t,od_1..od_{n2}", path, 1)
        for ln, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != n2 + 1:
                raise ParseError(f"expected {n2 + 1} fields, found {len(row)}", path, ln)
            try:
                ts.append(int(row[0]))
            except ValueError:
                raise ParseError(f"bad timestamp {row[0]!r}", path, ln) from None
            vals, gap = [], []
            for tok in row[1:]:
                if tok.strip() == "":
                    vals.append(0.0)
                    gap.append(True)
                    continue
                v = _parse_number(tok, path, ln)
                if v < 0:
                    raise ParseError(f"negative value {tok}", path, ln)
                vals.append(v)
                gap.append(False)
            values.append(vals)
            gaps.append(gap)
    if not values:
        raise ParseError("no traffic rows", path)
    return np.array(values), np.array(gaps), ts[0]


def parse_canonical(tm_path, routing_path, meta, topology_path=None):
    """Read a canonical dataset. ``meta`` is a ``meta.csv`` path or an ``(n, m, dt)`` tuple."""
    n, m, dt = read_meta(meta) if isinstance(meta, (str, Path)) else meta
    A = read_routing_csv(routing_path, n * n)
    if A.shape[0] != m:
        raise ParseError(f"routing has {A.shape[0]} rows, meta says m={m}", routing_path)
    values, gaps, t0 = read_tm_csv(tm_path, n * n)
    X = TrafficSeries(impute_gaps(values, gaps), dt, t0)
    topo = None
    if topology_path is not None and Path(topology_path).exists():
        topo = read_topology_csv(topology_path, n)
    return DatasetBundle(A, X, topo, f"canonical:{Path(tm_path).parent}")


def read_topology_csv(path, n):
    links = []
    with open(path, encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["link", "from", "to"]:
            raise ParseError("header must be link,from,to", path, 1)
        for ln, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                links.append((int(row[1]), int(row[2])))
            except (ValueError, IndexError):
                raise ParseError("malformed topology row", path, ln) from None
    return Topology(n, tuple(links))


def load_canonical(directory):
    d = Path(directory)
    for name in ("tm.csv", "routing.csv", "meta.csv"):
        if not (d / name).exists():
            raise ConfigurationError(f"{d / name} not found")
    return parse_canonical(d / "tm.csv", d / "routing.csv", d / "meta.csv", d / "topology.csv")


def _read_whitespace_routing(path, n2):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            toks = line.split()
            if toks:
                rows.append(_routing_row(toks, path, ln, n2))
    if not rows:
        raise ParseError("routing file is empty", path)
    return np.array(rows)


def parse_abilene(directory, value_unit="kbps"):
    """Read an Abilene-style directory (see module docstring).

    ``value_unit="bytes"`` converts bytes per 5-minute interval to kbps.
    """
    d = Path(directory)
    n2 = ABILENE_NODES ** 2
    routing = d / "routing.txt"
    if not routing.exists():
        raise ConfigurationError(f"missing routing file {routing}")
    A = _read_whitespace_routing(routing, n2)
    files = sorted(d.glob("tm*.txt"))
    if not files:
        raise ConfigurationError(f"no tm*.txt traffic files in {d}")
    values, gaps = [], []
    for path in files:
        with open(path, encoding="utf-8") as fh:
            for ln, line in enumerate(fh, 1):
                toks = line.split()
                if not toks:
                    continue
                if len(toks) != n2:
                    raise ParseError(f"expected {n2} OD columns, found {len(toks)}", path, ln)
                row, gap = [], []
                for tok in toks:
                    if tok.lower() == "nan":
                        row.append(0.0)
                        gap.append(True)
                        continue
                    v = _parse_number(tok, path, ln)
                    if v < 0:
                        raise ParseError(f"negative value {tok}", path, ln)
                    row.append(v)
                    gap.append(False)
                values.append(row)
                gaps.append(gap)
    values = np.array(values)
    if value_unit == "bytes":
        values = values * 8.0 / 1000.0 / ABILENE_TIMESTEP
    elif value_unit != "kbps":
        raise ConfigurationError(f"unknown value_unit {value_unit!r}")
    X = TrafficSeries(impute_gaps(values, np.array(gaps)), ABILENE_TIMESTEP)
    log.info("abilene: %d rows from %d files, m=%d", X.T, len(files), A.shape[0])
    return DatasetBundle(A, X, None, f"abilene:{d}")


def _xml_root(path):
    try:
        return ET.parse(path).getroot()
    except (ET.ParseError, OSError) as exc:
        raise ParseError(f"unparseable XML ({exc})", path) from None


def read_geant_topology(path):
    root = _xml_root(path)
    nodes_el = root.find(".//nodes")
    links_el = root.find(".//links")
    if nodes_el is None or links_el is None:
        raise ParseError("topology needs <nodes> and <links>", path)
    labels = [el.get("id") for el in nodes_el.iter("node")]
    if any(lab is None for lab in labels) or len(set(labels)) != len(labels):
        raise ParseError("node ids must be present and unique", path)
    index = {lab: i + 1 for i, lab in enumerate(labels)}
    links = []
    for el in links_el.iter("link"):
        a, b = el.find("from"), el.find("to")
        if a is None or b is None:
            raise ParseError(f"link {el.get('id')!r} needs <from> and <to>", path)
        try:
            links.append((index[a.get("node")], index[b.get("node")]))
        except KeyError as exc:
            raise ParseError(f"link endpoint {exc.args[0]!r} is not a known node", path) from None
    return Topology(len(labels), tuple(links), tuple(labels))


def _read_geant_tm(path, index):
    n = len(index)
    row = np.zeros(n * n)
    seen = np.zeros(n * n, dtype=bool)
    root = _xml_root(path)
    for src in root.iter("src"):
        s = index.get(src.get("id"))
        if s is None:
            raise ParseError(f"source node {src.get('id')!r} not in topology", path)
        for dst in src.iter("dst"):
            t = index.get(dst.get("id"))
            if t is None:
                raise ParseError(f"destination node {dst.get('id')!r} not in topology", path)
            v = _parse_number((dst.text or "").strip(), path, None)
            if v < 0:
                raise ParseError(f"negative demand {v}", path)
            k = s * n + t
            row[k] = v
            seen[k] = True
    gaps = ~seen
    gaps[np.arange(n) * (n + 1)] = False
    return row, gaps


def parse_geant_xml(directory, workers=4):
    """Read a GEANT-style directory of per-interval XML traffic matrices."""
    d = Path(directory)
    topo_path = d / "topology.xml"
    if not topo_path.exists():
        raise ConfigurationError(f"missing {topo_path}")
    topo = read_geant_topology(topo_path)
    n = topo.n
    routing = d / "routing.txt"
    A = _read_whitespace_routing(routing, n * n) if routing.exists() else routing_matrix(topo)
    if A.shape[0] != topo.m:
        raise ParseError(f"routing has {A.shape[0]} rows but topology has {topo.m} links", routing)
    files = sorted(p for p in d.glob("*.xml") if p.name != "topology.xml")
    if not files:
        raise ConfigurationError(f"no traffic XML files in {d}")
    index = {lab: i for i, lab in enumerate(topo.labels)}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parsed = list(pool.map(lambda p: _read_geant_tm(p, index), files))
    values = np.vstack([r for r, _ in parsed])
    gaps = np.vstack([g for _, g in parsed])
    X = TrafficSeries(impute_gaps(values, gaps), GEANT_TIMESTEP)
    return DatasetBundle(A, X, topo, f"geant:{d}")
