"""Error metrics, empirical CDFs and spectrum/characterisation tables."""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .netmodel import od_pair
from .numerics import numerical_rank


def _pair(x_hat, x):
    x_hat = np.atleast_2d(np.asarray(x_hat, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x_hat.shape != x.shape:
        raise ValueError(f"shape mismatch: {x_hat.shape} vs {x.shape}")
    return x_hat, x


def _relative(num, den):
    # zero truth: 0 when the estimate is also zero, +inf otherwise
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    zero = den == 0
    out[zero] = np.where(num[zero] == 0, 0.0, np.inf)
    return out


def sre(x_hat, x):
    """Per-flow relative l2 error over time; inputs are ``T x n^2``."""
    x_hat, x = _pair(x_hat, x)
    return _relative(np.linalg.norm(x_hat - x, axis=0), np.linalg.norm(x, axis=0))


def tre(x_hat, x):
    """Per-timestamp relative l2 error over flows."""
    x_hat, x = _pair(x_hat, x)
    return _relative(np.linalg.norm(x_hat - x, axis=1), np.linalg.norm(x, axis=1))


def bias_and_stddev(x_hat, x):
    """Per-flow mean error and sample standard deviation (divisor ``T-1``; NaN if ``T < 2``)."""
    x_hat, x = _pair(x_hat, x)
    err = x_hat - x
    bias = err.mean(axis=0)
    T = err.shape[0]
    if T < 2:
        return bias, np.full(err.shape[1], np.nan)
    std = np.sqrt(((err - bias) ** 2).sum(axis=0) / (T - 1))
    return bias, std


@dataclass(frozen=True)
class Cdf:
    values: np.ndarray
    fractions: np.ndarray
    excluded: int


def empirical_cdf(samples):
    """Step CDF over the finite samples: ``fractions[i] = #(samples <= values[i]) / N``."""
    samples = np.asarray(samples, dtype=float).reshape(-1)
    finite = samples[np.isfinite(samples)]
    excluded = samples.size - finite.size
    if finite.size == 0:
        return Cdf(np.zeros(0), np.zeros(0), excluded)
    values, counts = np.unique(finite, return_counts=True)
    return Cdf(values, np.cumsum(counts) / finite.size, excluded)


@dataclass(frozen=True)
class MetricReport:
    sre: np.ndarray
    tre: np.ndarray
    bias: np.ndarray
    stddev: np.ndarray
    od_means: np.ndarray
    cdf_sre: Cdf
    cdf_tre: Cdf


def compute_metrics(x_hat, x):
    x_hat, x = _pair(x_hat, x)
    s, t = sre(x_hat, x), tre(x_hat, x)
    bias, std = bias_and_stddev(x_hat, x)
    return MetricReport(s, t, bias, std, x.mean(axis=0), empirical_cdf(s), empirical_cdf(t))


def fraction_below(cdf, threshold):
    """Share of finite samples ``<= threshold``."""
    i = np.searchsorted(cdf.values, threshold, side="right")
    return float(cdf.fractions[i - 1]) if i > 0 else 0.0


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if np.isnan(v):
        return "nan"
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".12g")


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([x if isinstance(x, str) else _fmt(x) for x in row])


def write_metrics(report, outdir, start_index=0):
    """``metrics.csv``, ``tre.csv``, ``cdf_sre.csv`` and ``cdf_tre.csv``."""
    outdir = Path(outdir)
    n = int(round(np.sqrt(report.sre.size)))
    rows = []
    for i in range(report.sre.size):
        src, dst = od_pair(i + 1, n)
        rows.append((i + 1, src, dst, report.od_means[i], report.sre[i],
                     report.bias[i], report.stddev[i]))
    write_csv(outdir / "metrics.csv", ["od", "src", "dst", "mean", "sre", "bias", "stddev"], rows)
    write_csv(outdir / "tre.csv", ["t", "tre"],
              ((start_index + t, v) for t, v in enumerate(report.tre)))
    for name, cdf in (("cdf_sre.csv", report.cdf_sre), ("cdf_tre.csv", report.cdf_tre)):
        write_csv(outdir / name, ["value", "fraction"], zip(cdf.values, cdf.fractions))


def normalized_spectrum(M):
    s = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    return s / s[0] if s.size and s[0] > 0 else s


@dataclass(frozen=True)
class SpectrumReport:
    a_spectrum: np.ndarray
    phi_spectrum: np.ndarray
    a_rank: int
    phi_rank: int
    a_shape: tuple
    phi_shape: tuple
    phi: np.ndarray

    def surface(self):
        """``(link, source, value)`` triples of ``phi``, 1-based."""
        m, n = self.phi.shape
        return [(l + 1, j + 1, self.phi[l, j]) for l in range(m) for j in range(n)]


def spectrum_report(A, phi):
    A = np.asarray(A, dtype=float)
    phi = np.asarray(phi, dtype=float)
    return SpectrumReport(normalized_spectrum(A), normalized_spectrum(phi),
                          numerical_rank(A), numerical_rank(phi), A.shape, phi.shape, phi)


def write_spectrum(rep, outdir):
    outdir = Path(outdir)
    rows = [("A", i + 1, v) for i, v in enumerate(rep.a_spectrum)]
    rows += [("phi", i + 1, v) for i, v in enumerate(rep.phi_spectrum)]
    write_csv(outdir / "spectrum.csv", ["matrix", "index", "normalized_sv"], rows)
    write_csv(outdir / "spectrum_summary.csv", ["matrix", "rows", "cols", "rank"],
              [("A", *rep.a_shape, rep.a_rank), ("phi", *rep.phi_shape, rep.phi_rank)])
    write_csv(outdir / "phi_surface.csv", ["link", "source", "value"], rep.surface())


def mean_variance_table(X):
    """Rows ``(od, mean, variance)`` sorted by descending mean (sample variance, ``T-1``)."""
    X = np.atleast_2d(np.asarray(getattr(X, "values", X), dtype=float))
    if X.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    mean = X.mean(axis=0)
    var = X.var(axis=0, ddof=1)
    order = np.argsort(-mean, kind="stable")
    return [(int(i) + 1, mean[i], var[i]) for i in order]


def write_mean_var(X, outdir):
    write_csv(Path(outdir) / "mean_var.csv", ["od", "mean", "variance"], mean_variance_table(X))
