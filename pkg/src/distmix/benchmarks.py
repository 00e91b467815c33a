"""Benchmark suites: scaled-down replications of the simulation designs.

Each suite iterates a grid of settings and seeds, fits the contending
methods and returns long-format metric rows suitable for box plots,
together with a median summary.  Replication seeds are derived as
``base_seed + replication`` so results are reproducible and individual
replications are independent.
"""

from __future__ import annotations

import numpy as np

from . import em, metrics, mixture, optim, simulate

SUITES = ("em-vs-sgd", "optimizers", "additive", "sparsity")


def _sgd_config(seed, restarts=1, **overrides):
    defaults = dict(
        method="adam",
        learning_rate=0.01,
        batch_size=128,
        max_epochs=250,
        patience=25,
        val_fraction=0.1,
    )
    defaults.update(overrides)
    return optim.OptimConfig(seed=seed, restarts=restarts, **defaults)


def _linear_metrics(dataset, test, state, method, setting, rep):
    resp = mixture.responsibilities(state)
    est_labels = resp.argmax(axis=1)
    perm = metrics.optimal_assignment(dataset.labels, est_labels)
    pi_est = mixture.marginal_weights(state)
    rows = []
    values = {
        "rmse_coef": metrics.coefficient_rmse(
            state.design, dataset.psi_true, state.psi, perm
        ),
        "rmse_pi": metrics.weight_rmse(dataset.pi_true, pi_est, perm),
        "pls": metrics.predictive_log_score(state, test.X, test.y),
        "acc": metrics.accuracy(dataset.labels, est_labels),
        "ari": metrics.adjusted_rand_index(dataset.labels, est_labels),
    }
    for name, value in values.items():
        rows.append(
            dict(scenario=setting, method=method, rep=rep, metric=name, value=value)
        )
    return rows


def _fit_sgd(dataset, seed, restarts, **overrides):
    state = mixture.build_state(dataset.spec, dataset.X, dataset.y)
    result = optim.fit(state, _sgd_config(seed, restarts=restarts, **overrides))
    if not result.ok:
        return None
    return state.replace_psi(result.psi)


def run_em_vs_sgd_suite(reps=2, seed=1000, quick=True, em_restarts=20):
    """Linear mixtures: EM against gradient fits with one and three restarts."""
    if quick:
        grid = [("normal", 300, 2, 2)]
    else:
        grid = [
            (family, n, m, p)
            for family in ("normal", "laplace", "logistic")
            for n in (300, 2500)
            for m in (2, 3)
            for p in (2, 10)
        ]
    rows = []
    for family, n, m, p in grid:
        setting = f"{family}-n{n}-M{m}-p{p}"
        for rep in range(reps):
            rep_seed = seed + rep
            dataset = simulate.gen_linear_mixture(
                simulate.LinearMixtureDesign(
                    n=n, n_components=m, n_features=p, family=family, seed=rep_seed
                )
            )
            test = simulate.gen_linear_mixture(
                simulate.LinearMixtureDesign(
                    n=n, n_components=m, n_features=p, family=family,
                    seed=rep_seed + 505000,
                )
            )
            em_result = em.em_fit(
                dataset.spec, dataset.X, dataset.y,
                em.EmConfig(restarts=em_restarts, seed=rep_seed),
            )
            if em_result.ok:
                em_state = mixture.build_state(
                    dataset.spec, dataset.X, dataset.y, em_result.psi
                )
                rows.extend(_linear_metrics(dataset, test, em_state, "em", setting, rep))
            else:
                rows.append(
                    dict(scenario=setting, method="em", rep=rep,
                         metric="failed", value=1.0)
                )
            for method, restarts in (("sgd", 1), ("sgd3", 3)):
                state = _fit_sgd(dataset, rep_seed, restarts)
                if state is None:
                    rows.append(
                        dict(scenario=setting, method=method, rep=rep,
                             metric="diverged", value=1.0)
                    )
                    continue
                rows.extend(_linear_metrics(dataset, test, state, method, setting, rep))
    return rows


def run_optimizer_suite(reps=2, seed=2000, quick=True):
    """Rank the four optimizers (optionally with a cyclic schedule) per setting."""
    if quick:
        grid = [("normal", 300, 2, 2)]
    else:
        grid = [
            ("normal", n, m, 2) for n in (300, 2500) for m in (2, 3, 5)
        ]
    methods = [
        ("sgd", None), ("rmsprop", None), ("adam", None), ("adadelta", None),
        ("adam", optim.CyclicLR(1e-4, 1e-2, 40)),
    ]
    rows = []
    for family, n, m, p in grid:
        setting = f"{family}-n{n}-M{m}-p{p}"
        for rep in range(reps):
            rep_seed = seed + rep
            dataset = simulate.gen_linear_mixture(
                simulate.LinearMixtureDesign(
                    n=n, n_components=m, n_features=p, family=family, seed=rep_seed
                )
            )
            test = simulate.gen_linear_mixture(
                simulate.LinearMixtureDesign(
                    n=n, n_components=m, n_features=p, family=family,
                    seed=rep_seed + 505000,
                )
            )
            for method, clr in methods:
                label = method if clr is None else f"{method}+clr"
                state = _fit_sgd(dataset, rep_seed, 1, method=method,
                                 learning_rate=None, cyclic_lr=clr)
                if state is None:
                    rows.append(
                        dict(scenario=setting, method=label, rep=rep,
                             metric="diverged", value=1.0)
                    )
                    continue
                rows.extend(_linear_metrics(dataset, test, state, label, setting, rep))
    return rows


def run_additive_suite(reps=2, seed=3000, quick=True):
    """Smooth mean mixtures: gradient fit against the known-labels oracle."""
    if quick:
        grid = [("normal", 2.0, 3)]
    else:
        grid = [
            (family, scale, n_noise)
            for family in ("normal", "poisson")
            for scale in (2.0, 4.0)
            for n_noise in (3, 10)
        ]
    rows = []
    for family, scale, n_noise in grid:
        setting = f"{family}-scale{scale:g}-noise{n_noise}"
        df = 10.0 if family == "normal" else 6.0
        for rep in range(reps):
            rep_seed = seed + rep
            design = simulate.AdditiveMixtureDesign(
                family=family, scale=scale, n_noise=n_noise, seed=rep_seed, df=df
            )
            dataset = simulate.gen_additive_mixture(design)
            test = simulate.gen_additive_mixture(
                simulate.AdditiveMixtureDesign(
                    family=family, scale=scale, n_noise=n_noise,
                    seed=rep_seed + 505000, df=df,
                )
            )
            state = _fit_sgd(dataset, rep_seed, 2, batch_size=256)
            if state is not None:
                resp = mixture.responsibilities(state)
                est_labels = resp.argmax(axis=1)
                for metric, value in (
                    ("pls", metrics.predictive_log_score(state, test.X, test.y)),
                    ("ls", float(np.mean(
                        mixture.predict_log_density(state, dataset.X, dataset.y)
                    ))),
                    ("acc", metrics.accuracy(dataset.labels, est_labels)),
                    ("ari", metrics.adjusted_rand_index(dataset.labels, est_labels)),
                ):
                    rows.append(dict(scenario=setting, method="sgd", rep=rep,
                                     metric=metric, value=value))
            else:
                rows.append(dict(scenario=setting, method="sgd", rep=rep,
                                 metric="diverged", value=1.0))
            oracle = simulate.oracle_fit(dataset)
            rows.append(dict(scenario=setting, method="oracle", rep=rep, metric="pls",
                             value=oracle.predictive_log_score(test.X, test.y)))
            rows.append(dict(scenario=setting, method="oracle", rep=rep, metric="ls",
                             value=oracle.predictive_log_score(dataset.X, dataset.y)))
    return rows


def run_sparsity_suite(reps=2, seed=4000, quick=True,
                       entropy_weights=(0.0, 1e-3, 1e-2, 1e-1)):
    """Overfitted mixtures across entropy penalty strengths."""
    surplus = [5] if quick else [3, 5, 10]
    rows = []
    for n_fit in surplus:
        for rep in range(reps):
            rep_seed = seed + rep
            design = simulate.OverfitMixtureDesign(seed=rep_seed)
            dataset = simulate.gen_overfit_mixture(design)
            test = simulate.gen_overfit_mixture(
                simulate.OverfitMixtureDesign(seed=rep_seed + 505000)
            )
            for xi in entropy_weights:
                setting = f"surplus{n_fit}"
                spec = simulate.overfit_mixture_spec(design, n_fit, entropy_weight=xi)
                state = mixture.build_state(spec, dataset.X, dataset.y)
                result = optim.fit(state, _sgd_config(rep_seed, restarts=2, batch_size=256))
                method = f"xi={xi:g}"
                if not result.ok:
                    rows.append(dict(scenario=setting, method=method, rep=rep,
                                     metric="diverged", value=1.0))
                    continue
                state = state.replace_psi(result.psi)
                pi_est = np.sort(mixture.marginal_weights(state))[::-1]
                pi_true = np.sort(dataset.pi_true)[::-1]
                padded = np.zeros(n_fit)
                padded[: pi_true.size] = pi_true
                for metric, value in (
                    ("pls", metrics.predictive_log_score(state, test.X, test.y)),
                    ("rmse_pi", float(np.sqrt(np.mean((pi_est - padded) ** 2)))),
                    ("entropy_pi", mixture.entropy(pi_est)),
                ):
                    rows.append(dict(scenario=setting, method=method, rep=rep,
                                     metric=metric, value=value))
    return rows


def run_suite(name, reps=2, seed=None, quick=True):
    """Dispatch a named suite; returns long-format rows."""
    runners = {
        "em-vs-sgd": (run_em_vs_sgd_suite, 1000),
        "optimizers": (run_optimizer_suite, 2000),
        "additive": (run_additive_suite, 3000),
        "sparsity": (run_sparsity_suite, 4000),
    }
    if name not in runners:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(runners)}")
    runner, default_seed = runners[name]
    return runner(reps=reps, seed=default_seed if seed is None else seed, quick=quick)


def summarize(rows):
    """Median metric value per (scenario, method, metric)."""
    groups = {}
    for row in rows:
        key = (row["scenario"], row["method"], row["metric"])
        groups.setdefault(key, []).append(row["value"])
    return [
        dict(scenario=s, method=m, metric=t, median=float(np.median(v)), n=len(v))
        for (s, m, t), v in sorted(groups.items())
    ]
