"""The 14-student gender/achievement example, rebuilt from its published summaries.

Raw scores were never released. What is available: group means and SDs,
the pooled within-groups SSCP and the total SSCP over Reading, Math and
Language. Group sizes are not printed; 8 males and 6 females is the only
split consistent with the rounding of the means (658.13 = 5265/8,
631.67 = 3790/6) and with the between-groups sums of squares, e.g.
(8 * 6 / 14) * 42.75**2 = 6265.93 for Math.

The printed female Math SD (15.80) cannot be right: with a male SD of 36.54
the Math within-groups SS of 12973.5 leaves 26.94 for females. 15.80 is the
female Reading SD repeated. The corrected value is used and reported.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .moments import DataTable, GroupMoments, PooledMoments, pool

NAME = "gender-achievement"

VARIABLES = ("reading", "math", "language")
GROUPS = ("male", "female")
GROUP_SIZES = (8, 6)

# group totals implied by the printed means
_GROUP_SUMS = {
    "male": (5207.0, 5438.0, 5265.0),
    "female": (3849.0, 3822.0, 3790.0),
}

PRINTED_MEANS = {
    "male": (650.88, 679.75, 658.13),
    "female": (641.50, 637.00, 631.67),
}
PRINTED_SDS = {
    "male": (37.01, 36.54, 27.78),
    "female": (15.80, 15.80, 25.57),
}

WITHIN_SSCP = np.array(
    [
        [10836.375, 10214.750, 7594.125],
        [10214.750, 12973.500, 8535.250],
        [7594.125, 8535.250, 8672.208],
    ]
)
TOTAL_SSCP = np.array(
    [
        [11137.714, 11588.857, 8444.571],
        [11588.857, 19239.429, 12413.286],
        [8444.571, 12413.286, 11072.357],
    ]
)
DET_WITHIN = 1.00888e11
DET_TOTAL = 2.27001e11
WILKS = 0.444
WILKS_P = 0.037

SS_BETWEEN = (301.339, 6265.929, 2400.149)
SS_WITHIN = (10836.375, 12973.500, 8672.208)
BETA = (-9.375, -42.75, -26.46)
SE = (16.23, 17.76, 14.52)
F_RATIO = (0.334, 5.796, 3.321)
F_P = (0.574, 0.033, 0.093)
R_SQUARE = (0.03, 0.33, 0.22)
CORRELATIONS = {("reading", "math"): 0.79, ("reading", "language"): 0.76, ("math", "language"): 0.85}

# MIMIC figure
GAMMA = -42.73
GAMMA_STD = -0.57
RESIDUAL_STD = 0.67
LATENT_R2 = 0.33
MIN_LOADING_STD = 0.79


def means() -> dict[str, np.ndarray]:
    return {g: np.array(_GROUP_SUMS[g]) / n for g, n in zip(GROUPS, GROUP_SIZES)}


def corrected_female_math_sd() -> float:
    male_ss = (GROUP_SIZES[0] - 1) * PRINTED_SDS["male"][1] ** 2
    return float(np.sqrt((WITHIN_SSCP[1, 1] - male_ss) / (GROUP_SIZES[1] - 1)))


def note() -> str:
    return (
        f"fixture {NAME}: female Math SD corrected from 15.80 to "
        f"{corrected_female_math_sd():.2f} (within-groups SS 12973.5 minus 7 * 36.54^2, "
        "divided by 5); 15.80 duplicates the female Reading SD"
    )


def _split_within() -> dict[str, np.ndarray]:
    # male diagonal from printed SDs, female takes the remainder; both groups
    # share one within-group correlation matrix so the pieces add up to the
    # pooled matrix exactly and stay positive definite
    n_m = GROUP_SIZES[0]
    dm = np.sqrt((n_m - 1) * np.array(PRINTED_SDS["male"]) ** 2)
    df = np.sqrt(np.diag(WITHIN_SSCP) - dm**2)
    r = WITHIN_SSCP / (np.outer(dm, dm) + np.outer(df, df))
    np.fill_diagonal(r, 1.0)
    return {"male": r * np.outer(dm, dm), "female": WITHIN_SSCP - r * np.outer(dm, dm)}


@dataclass(frozen=True)
class GenderFixture:
    groups: tuple[GroupMoments, ...]
    pooled: PooledMoments
    variables: tuple[str, ...] = VARIABLES

    @property
    def n_total(self) -> int:
        return self.pooled.n_total

    def mimic_moments(self) -> PooledMoments:
        """Moments over (female, reading, math, language) with female coded 0/1."""
        n = np.array([g.n for g in self.groups], dtype=float)
        code = np.array([0.0, 1.0])
        x_mean = n @ code / n.sum()
        names = ("female",) + self.variables
        gms = [
            GroupMoments(
                g.label,
                g.n,
                np.concatenate([[c], g.mean]),
                np.pad(g.within_sscp, ((1, 0), (1, 0))),
            )
            for g, c in zip(self.groups, code)
        ]
        out = pool(gms, names)
        assert abs(out.grand_mean[0] - x_mean) < 1e-12
        return out


def load() -> GenderFixture:
    """Group moments built from the exact means and the split within SSCP."""
    mu = means()
    parts = _split_within()
    gms = tuple(GroupMoments(g, n, mu[g], parts[g]) for g, n in zip(GROUPS, GROUP_SIZES))
    return GenderFixture(gms, pool(gms, VARIABLES))


def raw_table(seed: int = 0) -> DataTable:
    """Synthetic raw scores whose group means and SSCPs equal the fixture's.

    Each group's standard-normal draws are centred and whitened to an
    identity SSCP, then mapped through the Cholesky factor of the target
    SSCP and shifted to the target mean.
    """
    rng = np.random.default_rng(seed)
    fx = load()
    rows = []
    for code, g in enumerate(fx.groups):
        z = rng.standard_normal((g.n, len(VARIABLES)))
        z -= z.mean(axis=0)
        lz = np.linalg.cholesky(z.T @ z)
        white = np.linalg.solve(lz, z.T).T
        y = white @ np.linalg.cholesky(g.within_sscp).T + g.mean
        rows.append(np.column_stack([np.full(g.n, float(code)), y]))
    data = np.vstack(rows)
    return DataTable(("female",) + VARIABLES, data)
