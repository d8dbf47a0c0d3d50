"""Friedman omnibus test, Wilcoxon signed-rank post-hoc tests, Bonferroni and letter groupings.

Results files are CSV with header ``inpainting,augmentation,fp32,fp16,int8``;
the ``augmentation`` value ``none`` marks the no-augmentation baseline row.
Lines starting with ``#`` are comments.
"""
from __future__ import annotations

import csv
import io
import itertools
import string
from importlib import resources
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats as sps

from .errors import AllZeroDifferences, SchemaError

BASELINE = "none"
COLUMNS = ("fp32", "fp16", "int8")
EXACT_MAX_N = 25
DIFF_DECIMALS = 12


@dataclass(frozen=True)
class ResultMatrix:
    rows: tuple[str, ...]
    cols: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (len(self.rows), len(self.cols)):
            raise SchemaError(f"values {v.shape} do not match {len(self.rows)} rows x {len(self.cols)} cols")
        object.__setattr__(self, "values", v)

    def require_complete(self) -> "ResultMatrix":
        if not np.all(np.isfinite(self.values)):
            raise SchemaError("result matrix has missing or non-finite cells")
        return self

    def without_baseline(self) -> "ResultMatrix":
        keep = [i for i, r in enumerate(self.rows) if r != BASELINE]
        return ResultMatrix(tuple(self.rows[i] for i in keep), self.cols, self.values[keep])

    def baseline(self) -> np.ndarray | None:
        for i, r in enumerate(self.rows):
            if r == BASELINE:
                return self.values[i]
        return None

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.cols.index(name)]


def parse_results(text: str) -> dict[str, ResultMatrix]:
    """Split a results CSV into one matrix per inpainting setting, in file order."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.reader(io.StringIO("\n".join(lines)))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("empty results file") from None
    if header[:2] != ["inpainting", "augmentation"] or len(header) < 4:
        raise SchemaError(f"unexpected header {header}")
    cols = tuple(header[2:])
    groups: dict[str, tuple[list, list]] = {}
    for lineno, rec in enumerate(reader, 2):
        if len(rec) != len(header):
            raise SchemaError(f"line {lineno}: expected {len(header)} fields, got {len(rec)}")
        try:
            vals = [float(v) for v in rec[2:]]
        except ValueError as e:
            raise SchemaError(f"line {lineno}: {e}") from e
        rows, data = groups.setdefault(rec[0].strip(), ([], []))
        if rec[1].strip() in rows:
            raise SchemaError(f"line {lineno}: duplicate augmentation {rec[1]!r}")
        rows.append(rec[1].strip())
        data.append(vals)
    if not groups:
        raise SchemaError("results file has no data rows")
    return {k: ResultMatrix(tuple(r), cols, np.array(d)).require_complete() for k, (r, d) in groups.items()}


def read_results(path) -> dict[str, ResultMatrix]:
    return parse_results(Path(path).read_text())


def bundled_results(name: str) -> dict[str, ResultMatrix]:
    """Published mAP50 tables shipped with the package: ``yolo11l_map50`` or ``rtdetrl_map50``."""
    ref = resources.files("inpaintq") / "data" / f"{name}.csv"
    if not ref.is_file():
        raise FileNotFoundError(f"no bundled results named {name!r}")
    return parse_results(ref.read_text())


def results_csv(matrices: dict[str, ResultMatrix], comment: str | None = None) -> str:
    cols = next(iter(matrices.values())).cols
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["inpainting", "augmentation", *cols])
    for name, m in matrices.items():
        for r, row in zip(m.rows, m.values):
            w.writerow([name, r, *(repr(float(v)) for v in row)])
    return buf.getvalue()


def friedman(m: ResultMatrix) -> tuple[float, float]:
    """Tie-corrected Friedman chi-square on within-row average ranks."""
    x = m.values
    n, k = x.shape
    if n < 2 or k < 2:
        raise ValueError("Friedman test needs at least 2 rows and 2 columns")
    ranks = np.apply_along_axis(sps.rankdata, 1, x)
    rsum = ranks.sum(axis=0)
    stat = 12.0 / (n * k * (k + 1)) * np.sum(rsum**2) - 3.0 * n * (k + 1)
    ties = 0.0
    for row in x:
        _, counts = np.unique(row, return_counts=True)
        ties += np.sum(counts**3 - counts)
    denom = 1.0 - ties / (n * k * (k * k - 1))
    if denom <= 0:
        return 0.0, 1.0
    stat = max(stat / denom, 0.0)
    return float(stat), float(sps.chi2.sf(stat, k - 1))


def _signed_ranks(x, y):
    d = np.round(np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64), DIFF_DECIMALS)
    if d.shape[0] != np.asarray(y).shape[0] or d.ndim != 1:
        raise ValueError("paired vectors must be 1-D and equal length")
    d = d[d != 0]
    if d.size == 0:
        raise AllZeroDifferences("every paired difference is zero")
    r = sps.rankdata(np.abs(d))
    return d, r


def _exact_cdf(doubled_ranks: np.ndarray, s: int) -> float:
    """P(sum of a uniformly random subset of ``doubled_ranks`` <= s)."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    hi = 0
    for r in doubled_ranks:
        r = int(r)
        counts[r : hi + r + 1] += counts[: hi + 1].copy()
        hi += r
    return float(counts[: s + 1].sum() / 2.0 ** len(doubled_ranks))


def wilcoxon_signed_rank(x, y) -> tuple[float, float]:
    """Two-sided test; statistic is min(W+, W-). Zero differences are dropped.

    Exact null distribution (conditional on tied ranks) for n <= 25 nonzero
    differences; otherwise a normal approximation with continuity and tie
    corrections.
    """
    d, r = _signed_ranks(x, y)
    n = d.size
    w_plus = float(r[d > 0].sum())
    w_minus = float(r[d < 0].sum())
    stat = min(w_plus, w_minus)
    if n <= EXACT_MAX_N:
        doubled = np.rint(2 * r).astype(np.int64)
        p = 2.0 * _exact_cdf(doubled, int(round(2 * stat)))
        return stat, float(min(1.0, p))
    mean = n * (n + 1) / 4.0
    _, counts = np.unique(r, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(counts**3 - counts) / 48.0
    z = max(abs(w_plus - mean) - 0.5, 0.0) / np.sqrt(var)
    return stat, float(min(1.0, 2.0 * sps.norm.sf(z)))


def bonferroni(pvals, m: int) -> np.ndarray:
    p = np.asarray(pvals, dtype=np.float64)
    if m < p.size:
        raise ValueError(f"family size {m} smaller than number of p-values {p.size}")
    return np.minimum(1.0, p * m)


def _letters():
    for n in itertools.count(1):
        for combo in itertools.product(string.ascii_uppercase, repeat=n):
            yield "".join(combo)


def compact_letter_display(labels, significant, means) -> dict[str, str]:
    """Insert-and-absorb letter groups; 'A' goes to the group holding the best mean.

    Treatments sharing a letter are never significantly different.
    """
    labels = list(labels)
    k = len(labels)
    sig = np.asarray(significant, dtype=bool)
    if sig.shape != (k, k) or not np.array_equal(sig, sig.T):
        raise ValueError("significance matrix must be square and symmetric")
    order = sorted(range(k), key=lambda i: (-means[i], i))
    pos = {t: p for p, t in enumerate(order)}
    groups = [frozenset(range(k))]
    for a, b in itertools.combinations(order, 2):
        if not sig[a, b]:
            continue
        nxt = []
        for g in groups:
            if a in g and b in g:
                nxt += [g - {a}, g - {b}]
            else:
                nxt.append(g)
        # absorb: drop duplicates and groups contained in another group
        nxt = list(dict.fromkeys(nxt))
        groups = [g for g in nxt if g and not any(g < h for h in nxt)]
    groups.sort(key=lambda g: sorted(pos[t] for t in g))
    out = {lab: "" for lab in labels}
    for letter, g in zip(_letters(), groups):
        for t in sorted(g):
            out[labels[t]] += letter
    return out


def column_summary(m: ResultMatrix) -> dict[str, tuple[float, float]]:
    """Per-column mean and sample SD (n - 1 denominator)."""
    v = m.values
    sd = v.std(axis=0, ddof=1) if v.shape[0] > 1 else np.zeros(v.shape[1])
    return {c: (float(mu), float(s)) for c, mu, s in zip(m.cols, v.mean(axis=0), sd)}


def pairwise_tests(m: ResultMatrix, family: int | None = None) -> list[dict]:
    """Wilcoxon on every column pair, Bonferroni-adjusted over ``family`` comparisons."""
    pairs = list(itertools.combinations(range(len(m.cols)), 2))
    family = len(pairs) if family is None else family
    out = []
    for i, j in pairs:
        try:
            stat, p = wilcoxon_signed_rank(m.values[:, i], m.values[:, j])
        except AllZeroDifferences:
            stat, p = 0.0, 1.0
        out.append({"a": m.cols[i], "b": m.cols[j], "statistic": stat, "p": p, "p_adj": float(bonferroni([p], family)[0])})
    return out


def analyze_matrix(m: ResultMatrix, alpha: float = 0.05, family: int | None = None) -> dict:
    """Summary, Friedman, post-hoc pairs and letters for one inpainting setting.

    Pairs count as significant only when the omnibus test rejects.
    """
    data = m.require_complete().without_baseline()
    summary = column_summary(data)
    stat, p = friedman(data)
    pairs = pairwise_tests(data, family)
    k = len(data.cols)
    sig = np.zeros((k, k), dtype=bool)
    for rec in pairs:
        rec["significant"] = bool(p < alpha and rec["p_adj"] < alpha)
        i, j = data.cols.index(rec["a"]), data.cols.index(rec["b"])
        sig[i, j] = sig[j, i] = rec["significant"]
    letters = compact_letter_display(data.cols, sig, [summary[c][0] for c in data.cols])
    return {
        "n_rows": len(data.rows),
        "friedman": {"statistic": stat, "p": p},
        "pairwise": pairs,
        "letters": letters,
        "summary": {c: {"mean": mu, "sd": sd} for c, (mu, sd) in summary.items()},
    }


def analyze(matrices: dict[str, ResultMatrix], alpha: float = 0.05, family: str = "setting") -> dict:
    """``family='setting'`` corrects over the pairs of one setting; ``'table'`` over every pair in the file."""
    if family not in ("setting", "table"):
        raise ValueError(f"unknown Bonferroni family {family!r}")
    m = None
    if family == "table":
        m = sum(len(x.cols) * (len(x.cols) - 1) // 2 for x in matrices.values())
    return {name: analyze_matrix(mat, alpha, m) for name, mat in matrices.items()}


def render_table(matrices: dict[str, ResultMatrix], analysis: dict, digits: int = 3) -> str:
    """Markdown table: augmentation rows, then Mean +- SD and group rows."""
    names = list(matrices)
    cols = matrices[names[0]].cols
    head = ["Augmentation"] + [f"{n}/{c}" for n in names for c in cols]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    rows = matrices[names[0]].rows
    for r in rows:
        cells = []
        for n in names:
            m = matrices[n]
            if r in m.rows:
                cells += [f"{v:.{digits}f}" for v in m.values[m.rows.index(r)]]
            else:
                cells += [""] * len(cols)
        label = "No augmentation" if r == BASELINE else f"+{r}%"
        lines.append("| " + " | ".join([label, *cells]) + " |")
    ms = [f"{analysis[n]['summary'][c]['mean']:.{digits}f} ± {analysis[n]['summary'][c]['sd']:.{digits}f}" for n in names for c in cols]
    lines.append("| " + " | ".join(["Mean ± SD", *ms]) + " |")
    gs = [analysis[n]["letters"][c] for n in names for c in cols]
    lines.append("| " + " | ".join(["Group", *gs]) + " |")
    return "\n".join(lines) + "\n"
