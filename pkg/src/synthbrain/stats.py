"""Evaluation and population statistics: Dice scores, soft volumes, ICV,
Cohen's d, ROC/AUC, covariate correction, and the age-trajectory model."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline
from scipy.stats import rankdata

from .errors import ShapeError, ValidationError
from .volume import LabelVolume

SPLINE_DEGREE = 3
N_KNOTS = 10


def hard_dice(x: LabelVolume, y: LabelVolume, label) -> float:
    """2|X∩Y| / (|X|+|Y|); defined as 1.0 when both sets are empty."""
    if x.grid.dims != y.grid.dims:
        raise ShapeError(f"grid mismatch {x.grid.dims} vs {y.grid.dims}")
    a = x.labels == label
    b = y.labels == label
    na = int(a.sum())
    nb = int(b.sum())
    if na + nb == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / (na + nb)


def hard_dice_sets(a_mask, b_mask) -> float:
    """Dice between two boolean masks (same convention as hard_dice)."""
    na = int(a_mask.sum())
    nb = int(b_mask.sum())
    if na + nb == 0:
        return 1.0
    return 2.0 * int((a_mask & b_mask).sum()) / (na + nb)


def soft_volume(channel, voxel_volume_mm3) -> float:
    """Sum of soft probabilities times the voxel volume (64-bit sum)."""
    ch = np.asarray(channel)
    if ch.size and float(ch.min()) < 0:
        raise ValidationError("negative probabilities")
    return float(ch.sum(dtype=np.float64) * voxel_volume_mm3)


@dataclass
class VolumeReport:
    """Per-structure volumes (mm^3), ICV, and attached QC scores."""

    volumes: dict           # structure id -> mm^3
    icv: float
    qc_scores: dict = None  # structure id -> score (optional)

    def to_dict(self, schema=None):
        name = (lambda i: schema.structure(i).name) if schema else str
        doc = {"volumes_mm3": {name(i): v for i, v in self.volumes.items()},
               "icv_mm3": self.icv}
        if self.qc_scores is not None:
            doc["qc_scores"] = {name(i): s for i, s in self.qc_scores.items()}
        return doc


def icv_estimate(report: VolumeReport, schema) -> float:
    """Exact 64-bit sum of the counts_in_icv structure volumes."""
    total = 0.0
    for sid in schema.icv_ids():
        if sid not in report.volumes:
            raise ValidationError(f"missing volume for structure {sid}")
        total += report.volumes[sid]
    return total


def cohens_d(group_a, group_b) -> float:
    """|mean difference| / pooled std (unbiased variances, n_a+n_b-2)."""
    a = np.asarray(group_a, dtype=np.float64)
    b = np.asarray(group_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValidationError("each group needs at least 2 samples")
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    pooled = math.sqrt(((a.size - 1) * va + (b.size - 1) * vb)
                       / (a.size + b.size - 2))
    diff = abs(float(a.mean() - b.mean()))
    if pooled == 0.0:
        return 0.0 if diff == 0.0 else math.inf
    return diff / pooled


def auc_roc(scores, labels, threshold=None):
    """AUC via the rank (Mann-Whitney) formulation, ties get 0.5 credit.

    Returns (auc, roc_points). With a threshold, also returns
    (sensitivity, specificity, accuracy) at that operating point, where a
    case is called positive when score >= threshold.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos = int(y.sum())
    n_neg = int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("both classes must be present")
    ranks = rankdata(s)  # average ranks handle ties with 0.5 credit
    auc = (ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    order = np.argsort(-s, kind="stable")
    tps = np.cumsum(y[order])
    fps = np.cumsum(~y[order])
    points = [(0.0, 0.0)]
    points += [(fp / n_neg, tp / n_pos) for fp, tp in zip(fps, tps)]

    if threshold is None:
        return float(auc), points
    pred = s >= threshold
    tp = int((pred & y).sum())
    tn = int((~pred & ~y).sum())
    sens = tp / n_pos
    spec = tn / n_neg
    acc = (tp + tn) / y.size
    return float(auc), points, (sens, spec, acc)


def covariate_correct(volumes, covariates):
    """OLS residualization of volumes on [1, covariates...].

    Returns (residuals + grand mean, coefficients). Raises on a
    rank-deficient design, naming the offending column.
    """
    v = np.asarray(volumes, dtype=np.float64)
    C = np.atleast_2d(np.asarray(covariates, dtype=np.float64))
    if C.shape[0] != v.size:
        C = C.T
    n, p = C.shape
    if n < p + 2:
        raise ValidationError(f"need at least {p + 2} rows, got {n}")
    X = np.column_stack([np.ones(n), C])
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        for j in range(1, X.shape[1]):
            sub = np.delete(X, j, axis=1)
            if np.linalg.matrix_rank(sub) == rank:
                raise ValidationError(
                    f"rank-deficient design: covariate column {j - 1} is "
                    "collinear")
        raise ValidationError("rank-deficient design")
    coeffs, *_ = np.linalg.lstsq(X, v, rcond=None)
    residuals = v - X @ coeffs
    return residuals + v.mean(), coeffs


# --------------------------------------------------------------------------
# ageing trajectory model

@dataclass
class AgeingModel:
    """Cubic B-spline age trajectory + linear slice-spacing terms + gender
    bias + intercept."""

    spline_knots: np.ndarray        # the 10 equally spaced knots
    spline_coeffs: np.ndarray
    slice_spacing_coeffs: np.ndarray  # (sagittal, coronal, axial)
    gender_bias: float
    intercept: float

    def to_dict(self):
        return {
            "spline_knots": [float(v) for v in self.spline_knots],
            "spline_coeffs": [float(v) for v in self.spline_coeffs],
            "slice_spacing_coeffs":
                [float(v) for v in self.slice_spacing_coeffs],
            "gender_bias": float(self.gender_bias),
            "intercept": float(self.intercept),
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            spline_knots=np.asarray(doc["spline_knots"]),
            spline_coeffs=np.asarray(doc["spline_coeffs"]),
            slice_spacing_coeffs=np.asarray(doc["slice_spacing_coeffs"]),
            gender_bias=float(doc["gender_bias"]),
            intercept=float(doc["intercept"]))


def _knot_vector(knots):
    k = SPLINE_DEGREE
    return np.concatenate([[knots[0]] * k, knots, [knots[-1]] * k])


def _spline_design(ages, knots):
    t = _knot_vector(knots)
    # clamp so boundary ages evaluate inside the support
    x = np.clip(np.asarray(ages, dtype=np.float64),
                knots[0], knots[-1] - 1e-9 * (knots[-1] - knots[0]))
    return BSpline.design_matrix(x, t, SPLINE_DEGREE).toarray()


def ageing_fit(ages, genders, spacings, volumes) -> AgeingModel:
    """Least-squares fit of the ageing model.

    ages: (n,), genders: (n,) in {0,1}, spacings: (n,3) mm
    (sagittal, coronal, axial), volumes: (n,) mm^3.

    The model is linear in its coefficients, so the normal-equation/QR
    minimizer is the global optimum of the residual sum of squares.
    """
    ages = np.asarray(ages, dtype=np.float64)
    volumes = np.asarray(volumes, dtype=np.float64)
    genders = np.asarray(genders, dtype=np.float64)
    spacings = np.asarray(spacings, dtype=np.float64).reshape(-1, 3)
    n = ages.size
    if n < 30:
        raise ValidationError(f"need at least 30 records, got {n}")
    lo, hi = float(ages.min()), float(ages.max())
    if hi <= lo:
        raise ValidationError("degenerate age range")
    knots = np.linspace(lo, hi, N_KNOTS)
    # The clamped basis sums to 1, which is collinear with the intercept;
    # drop the first basis function (reference) to keep the design full rank
    # without shrinking the model's function space.
    B = _spline_design(ages, knots)[:, 1:]
    X = np.column_stack([B, spacings, genders, np.ones(n)])
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise ValidationError("rank-deficient ageing design (consider more "
                              "records or varied covariates)")
    coeffs, *_ = np.linalg.lstsq(X, volumes, rcond=None)
    nb = B.shape[1]
    return AgeingModel(
        spline_knots=knots,
        spline_coeffs=coeffs[:nb],
        slice_spacing_coeffs=coeffs[nb:nb + 3],
        gender_bias=float(coeffs[nb + 3]),
        intercept=float(coeffs[nb + 4]))


def ageing_predict(model: AgeingModel, age, gender, spacings) -> float:
    """Evaluate the fitted trajectory. Ages outside the fitted range are
    clamped to the boundary (flagged extrapolation, not forbidden)."""
    B = _spline_design([age], model.spline_knots)[:, 1:]
    spac = np.asarray(spacings, dtype=np.float64).reshape(3)
    return float(B[0] @ model.spline_coeffs
                 + spac @ model.slice_spacing_coeffs
                 + gender * model.gender_bias
                 + model.intercept)


def dice_table(pred: LabelVolume, truth: LabelVolume, label_ids):
    """Per-label hard Dice plus the macro average over the given labels."""
    table = {int(lab): hard_dice(pred, truth, lab) for lab in label_ids}
    macro = float(np.mean(list(table.values()))) if table else float("nan")
    return table, macro
