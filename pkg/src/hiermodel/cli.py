"""``hiermodel`` command line.

Exit codes: 0 success, 2 input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fixture as fx
from .manova import SingularMatrixError, sscp_partition, wilks_test
from .moments import DataError, correlation_matrix, group_moments, ingest_csv, load_summary_json, pool
from .multilevel import (
    SimulationConfig,
    TwoLevelPattern,
    components_from_moments,
    decompose_two_level,
    fit_two_level_sem,
    simulate,
    summarize,
)
from .optimize import ConvergenceError
from .report import Report, matrix_rows, render
from .sem import ModelError, PathModel, fit_ml, sem_summary
from .univariate import anova_oneway, ols_two_group, ols_dummies

COMMANDS = ("describe", "regress", "anova", "manova", "sem", "mlm-fit", "mlm-decompose", "simulate")
FIXTURES = (fx.NAME,)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class InputError(Exception):
    pass


def _split(s):
    return [v.strip() for v in s.split(",") if v.strip()] if s else None


class _Data:
    """Group moments (and optionally the raw table) behind one request."""

    def __init__(self, args):
        self.table = None
        self.reference = args.reference
        self.notes = []
        if args.fixture:
            if args.fixture not in FIXTURES:
                raise InputError(f"unknown fixture {args.fixture!r}; available: {', '.join(FIXTURES)}")
            f = fx.load()
            self.variables = list(f.variables)
            self.groups = list(f.groups)
            self.pooled = f.pooled
            self.reference = self.reference or "male"
            self.mimic = f.mimic_moments()
            self.notes.append(fx.note())
            self.exogenous = ["female"]
            return
        if not args.input:
            raise InputError("either --input or --fixture is required")
        path = Path(args.input)
        if not path.exists():
            raise InputError(f"input file not found: {path}")
        if path.suffix.lower() == ".json":
            self.groups, self.pooled = load_summary_json(path)
            self.variables = list(self.pooled.variables)
            self.mimic = None
            self.exogenous = None
        else:
            self.table = ingest_csv(path, group=args.group, cluster=args.cluster)
            if self.table.n_dropped:
                self.notes.append(f"{self.table.n_dropped} row(s) with missing values dropped")
            self.variables = _split(args.vars) or [
                c for c in self.table.column_names if c != args.group
            ]
            if args.group:
                self.groups = group_moments(self.table, args.group, self.variables)
            else:
                self.groups = None
            self.pooled = None
            self.mimic = None
            self.exogenous = None
        if args.vars and self.table is None:
            wanted = _split(args.vars)
            missing = [v for v in wanted if v not in self.variables]
            if missing:
                raise InputError(f"unknown variable(s): {', '.join(missing)}")

    def need_groups(self):
        if not self.groups:
            raise InputError("this command needs --group (or a fixture / summary JSON)")
        return self.groups

    def outcomes(self, args):
        if args.outcome:
            if args.outcome not in self.variables:
                raise InputError(f"unknown outcome {args.outcome!r}")
            return [args.outcome]
        return _split(args.vars) or list(self.variables)


def _describe(args, rep):
    d = _Data(args)
    groups = d.need_groups()
    idx = [d.variables.index(v) for v in d.outcomes(args)]
    cols = ["Variable"]
    for g in groups:
        cols += [f"{g.label} Mean", f"{g.label} SD"]
    rows = []
    for k in idx:
        row = [d.variables[k]]
        for g in groups:
            row += [float(g.mean[k]), float(g.sd[k])]
        rows.append(row)
    rep.add("Descriptive statistics", cols, rows, [None] + [2] * (len(cols) - 1))
    rep.add("Group sizes", ["Group", "n"], [[g.label, g.n] for g in groups])
    pooled = d.pooled or pool(groups, d.variables)
    names = [d.variables[k] for k in idx]
    r = correlation_matrix(pooled.subset(names))
    rep.add("Correlations", ["Variable"] + names, matrix_rows(names, r), [None] + [2] * len(names))
    rep.notes.extend(d.notes)


def _regress(args, rep):
    d = _Data(args)
    groups = d.need_groups()
    rows = []
    if len(groups) == 2:
        for v in d.outcomes(args):
            r = ols_two_group(groups, v, d.variables, reference=d.reference)
            rows.append([v, r.coded, r.beta, r.se, r.t, r.p, r.r2, r.intercept])
        rep.add(
            f"OLS on group dummy (reference: {r.reference})",
            ["Outcome", "Dummy", "Beta", "SE", "t", "p", "R-Square", "Intercept"],
            rows,
            [None, None, 3, 2, 3, 3, 2, 3],
        )
    else:
        for v in d.outcomes(args):
            r = ols_dummies(groups, v, d.variables, reference=d.reference)
            for lab, b, s, t, p in zip(r.labels, r.beta, r.se, r.t, r.p):
                rows.append([v, lab, float(b), float(s), float(t), float(p), r.r2, r.intercept])
        rep.add(
            "OLS on group dummies",
            ["Outcome", "Dummy", "Beta", "SE", "t", "p", "R-Square", "Intercept"],
            rows,
            [None, None, 3, 2, 3, 3, 2, 3],
        )
    rep.notes.extend(d.notes)


def _anova(args, rep):
    d = _Data(args)
    groups = d.need_groups()
    rows = []
    for v in d.outcomes(args):
        a = anova_oneway(groups, v, d.variables)
        rows.append([v, a.ss_between, a.df_between, a.ss_within, a.df_within, a.f, a.p, a.r2])
    rep.add(
        "One-way ANOVA",
        ["Outcome", "SS Between", "df", "SS Within", "df", "F", "p", "R-Square"],
        rows,
        [None, 3, None, 3, None, 3, 3, 2],
    )
    rep.notes.extend(d.notes)


def _manova(args, rep):
    d = _Data(args)
    groups = d.need_groups()
    names = d.outcomes(args)
    idx = [d.variables.index(v) for v in names]
    from .moments import GroupMoments

    sub = [GroupMoments(g.label, g.n, g.mean[idx], g.within_sscp[np.ix_(idx, idx)]) for g in groups]
    part = sscp_partition(sub, names)
    w = wilks_test(part)
    prec = [None] + [3] * len(names)
    rep.add("Within-groups SSCP", ["Variable"] + names, matrix_rows(names, part.within), prec)
    rep.add("Between-groups SSCP", ["Variable"] + names, matrix_rows(names, part.between), prec)
    rep.add("Total SSCP", ["Variable"] + names, matrix_rows(names, part.total), prec)
    rep.add(
        "Wilks's lambda",
        ["Statistic", "Value"],
        [
            ["det(within)", w.det_within],
            ["det(total)", w.det_total],
            ["lambda", w.lam],
            ["F (Rao)", w.f_approx],
            ["df1", w.df1],
            ["df2", w.df2],
            ["p", w.p],
            ["Bartlett chi-square", w.bartlett_chi2],
            ["Bartlett df", w.bartlett_df],
            ["Bartlett p", w.bartlett_p],
        ],
        [None, 3],
    )
    rep.notes.extend(d.notes)


def _sem(args, rep):
    d = _Data(args)
    if args.model:
        model = PathModel.from_json(Path(args.model).read_text(encoding="utf-8"))
    else:
        exo = _split(args.exogenous) or d.exogenous
        if not exo:
            raise InputError("sem needs --exogenous or --model")
        indicators = _split(args.vars) or [v for v in d.variables if v not in exo]
        anchor = args.anchor or ("math" if args.fixture else None)
        model = PathModel.mimic(exo, indicators, anchor=anchor, latent=args.latent)
    if d.mimic is not None:
        sample = d.mimic
    elif d.table is not None:
        cols = list(model.observed)
        y = d.table.select(cols)
        dev = y - y.mean(axis=0)
        from .moments import PooledMoments

        sample = PooledMoments(tuple(cols), y.shape[0], y.mean(axis=0), dev.T @ dev)
    else:
        raise InputError("sem needs raw data (--input CSV) or the fixture")
    r = fit_ml(model, sample)
    se = r.standard_errors
    rows = [
        [n, float(v), None if se is None else float(se[i])]
        for i, (n, v) in enumerate(zip(r.estimates.names, r.estimates.values))
    ]
    rep.add("ML estimates", ["Parameter", "Estimate", "SE"], rows, [None, 3, 3])
    s = sem_summary(r) if len(model.latents) == 1 else None
    st = r.standardized
    std_rows = []
    for j, lat in enumerate(model.latents):
        for k, x in enumerate(model.exogenous):
            std_rows.append([f"{lat}~{x}", float(st.gamma_std[j, k])])
        for i, y in enumerate(model.indicators):
            if model.loadings_free[i, j] or model.loadings[i, j] != 0:
                std_rows.append([f"{lat}=~{y}", float(st.loadings_std[i, j])])
        std_rows.append([f"{lat} residual variance", float(st.residual_variance_std[j])])
        std_rows.append([f"{lat} R-Square", float(st.r2_latent[j])])
    rep.add("Standardized solution", ["Parameter", "Value"], std_rows, [None, 2])
    rep.add(
        "Fit",
        ["Statistic", "Value"],
        [["fml", r.fml], ["chi-square", r.chi_square], ["df", r.df], ["p", r.p], ["N", r.n], ["iterations", r.iterations]],
        [None, 3],
    )
    rep.notes.extend(d.notes)
    rep.notes.extend(r.notes)
    if s is not None and args.fixture:
        rep.notes.append("the Math loading is fixed at 1.0 to set the latent metric")


def _need_cluster_table(args):
    if args.fixture:
        raise InputError("the fixture has no cluster structure; use --input with --cluster")
    if not args.input:
        raise InputError("--input is required")
    if not args.cluster:
        raise InputError("--cluster is required")
    path = Path(args.input)
    if not path.exists():
        raise InputError(f"input file not found: {path}")
    table = ingest_csv(path, cluster=args.cluster)
    return table


def _mlm_decompose(args, rep):
    table = _need_cluster_table(args)
    names = _split(args.vars) or list(table.column_names)
    m = decompose_two_level(table, names)
    rep.add("Pooled within-cluster covariance (S_PW)", ["Variable"] + names, matrix_rows(names, m.s_pw), [None] + [3] * len(names))
    rep.add("Scaled between-cluster covariance (S_B)", ["Variable"] + names, matrix_rows(names, m.s_b), [None] + [3] * len(names))
    rep.add(
        "Design",
        ["Statistic", "Value"],
        [["N", m.n_total], ["J", m.j_clusters], ["c", m.c_scale], ["min n_j", int(m.cluster_sizes.min())], ["max n_j", int(m.cluster_sizes.max())]],
        [None, 3],
    )
    if table.n_dropped:
        rep.notes.append(f"{table.n_dropped} row(s) with missing values dropped")


def _mlm_fit(args, rep):
    table = _need_cluster_table(args)
    if args.factor:
        names = _split(args.vars) or list(table.column_names)
        m = decompose_two_level(table, names)
        r = fit_two_level_sem(m, TwoLevelPattern.one_factor(len(names)))
        se = r.standard_errors
        rows = [
            [n, float(v), None if se is None else float(se[i])]
            for i, (n, v) in enumerate(zip(r.estimates.names, r.estimates.values))
        ]
        rep.add("Two-level factor model (pseudo-balanced ML)", ["Parameter", "Estimate", "SE"], rows, [None, 3, 3])
        rep.add(
            "Fit",
            ["Statistic", "Value"],
            [["discrepancy", r.discrepancy], ["chi-square", r.chi_square], ["df", r.df], ["p", r.p], ["c", m.c_scale]],
            [None, 3],
        )
        rep.notes.extend(r.notes)
        return
    outcomes = [args.outcome] if args.outcome else (_split(args.vars) or list(table.column_names))
    m = decompose_two_level(table, outcomes)
    rows = []
    for k, v in enumerate(outcomes):
        c = components_from_moments(m, k)
        rows.append([v, c.gamma00, c.sigma2_between, c.sigma2_within, c.icc])
        if c.truncated:
            rep.notes.append(f"{v}: negative between-cluster variance estimate truncated at 0")
    rep.add(
        "Random-intercept model (unconditional)",
        ["Outcome", "gamma00", "sigma2 between", "sigma2 within", "ICC"],
        rows,
        [None, 3, 3, 3, 3],
    )


def _simulate(args, rep):
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise InputError(f"config file not found: {path}")
        cfg = SimulationConfig.from_json(path.read_text(encoding="utf-8"))
        over = {}
        if args.seed is not None:
            over["seed"] = args.seed
        if args.reps is not None:
            over["replications"] = args.reps
        if over:
            cfg = SimulationConfig(
                cfg.mu, cfg.sigma_b, cfg.sigma_w, cfg.clusters, cfg.cluster_size,
                over.get("seed", cfg.seed), over.get("replications", cfg.replications),
            )
    else:
        if args.clusters is None or args.cluster_size is None:
            raise InputError("simulate needs --config or both --clusters and --cluster-size")
        if args.clusters < 2:
            raise InputError(f"--clusters must be at least 2, got {args.clusters}")
        if args.cluster_size < 1:
            raise InputError(f"--cluster-size must be at least 1, got {args.cluster_size}")
        mu = json.loads(args.mu) if args.mu else [0.0]
        sb = json.loads(args.sigma_b) if args.sigma_b else [[25.0]]
        sw = json.loads(args.sigma_w) if args.sigma_w else [[75.0]]
        cfg = SimulationConfig(mu, sb, sw, args.clusters, args.cluster_size, args.seed or 0, args.reps or 1)
    if cfg.clusters < 2:
        raise InputError(f"clusters must be at least 2, got {cfg.clusters}")
    stats, data = simulate(cfg, workers=args.workers, keep_data=bool(args.out_dir))
    summ = summarize(stats)
    p = cfg.mu.size
    names = ["y"] if p == 1 else [f"y{i + 1}" for i in range(p)]
    rows = []
    for k, v in enumerate(names):
        rows.append(
            [
                v,
                summ["sigma2_within"]["mean"][k],
                summ["sigma2_within"]["mc_se"][k],
                summ["sigma2_between"]["mean"][k],
                summ["sigma2_between"]["mc_se"][k],
                summ["icc"]["mean"][k],
                summ["icc"]["mc_se"][k],
                summ["truncated_fraction"][k],
            ]
        )
    rep.add(
        f"Monte Carlo summary ({cfg.replications} replications, J={cfg.clusters}, seed={cfg.seed})",
        ["Variable", "sigma2_W mean", "MC SE", "sigma2_B mean", "MC SE", "ICC mean", "MC SE", "truncated"],
        rows,
        [None, 3, 4, 3, 4, 4, 4, 3],
    )
    if args.out_dir:
        from .moments import DataTable

        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        width = len(str(cfg.replications - 1))
        for r, (y, codes) in enumerate(data):
            t = DataTable(tuple(names), y, cluster_column="cluster", cluster_labels=codes.astype(str))
            (out / f"rep_{r:0{width}d}.csv").write_text(t.to_csv(), encoding="utf-8")
        rep.notes.append(f"wrote {len(data)} CSV file(s) to {out}")


HANDLERS = {
    "describe": _describe,
    "regress": _regress,
    "anova": _anova,
    "manova": _manova,
    "sem": _sem,
    "mlm-fit": _mlm_fit,
    "mlm-decompose": _mlm_decompose,
    "simulate": _simulate,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hiermodel", description="Single-level and two-level analyses of grouped data.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--input", help="CSV file or summary-moments JSON")
    p.add_argument("--fixture", help=f"built-in dataset ({', '.join(FIXTURES)})")
    p.add_argument("--outcome")
    p.add_argument("--group")
    p.add_argument("--cluster")
    p.add_argument("--vars", help="comma-separated variable list")
    p.add_argument("--reference", help="reference group for dummy coding")
    p.add_argument("--exogenous", help="comma-separated exogenous variables (sem)")
    p.add_argument("--anchor", help="indicator whose loading is fixed at 1 (sem)")
    p.add_argument("--latent", default="achievement", help="latent variable name (sem)")
    p.add_argument("--model", help="model-specification JSON (sem)")
    p.add_argument("--factor", action="store_true", help="mlm-fit: one-factor two-level model over --vars")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--config", help="simulator config JSON")
    p.add_argument("--clusters", type=int)
    p.add_argument("--cluster-size", type=int)
    p.add_argument("--mu", help="JSON vector")
    p.add_argument("--sigma-b", help="JSON matrix")
    p.add_argument("--sigma-w", help="JSON matrix")
    p.add_argument("--out-dir", help="simulate: write one CSV per replication here")
    return p


def run(argv=None) -> tuple[Report, int, str]:
    """Parse ``argv`` and dispatch. Returns (report, exit code, error message)."""
    rep = Report()
    try:
        args = build_parser().parse_args(argv)
        rep.format = args.format
        if args.reps is not None and args.reps < 1:
            raise InputError(f"--reps must be at least 1, got {args.reps}")
        HANDLERS[args.command](args, rep)
    except (InputError, DataError, ModelError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        return rep, EXIT_INPUT, f"error: {exc}"
    except (ConvergenceError, SingularMatrixError, np.linalg.LinAlgError, ArithmeticError) as exc:
        return rep, EXIT_NUMERIC, f"numerical failure: {exc}"
    return rep, EXIT_OK, ""


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    rep, code, msg = run(argv)
    if code:
        print(msg, file=sys.stderr)
        return code
    sys.stdout.buffer.write(render(rep, rep.format))
    sys.stdout.flush()
    return code


if __name__ == "__main__":
    sys.exit(main())
