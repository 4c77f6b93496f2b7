"""Command-line entry point.

Subcommands: score | select | eval | igcurve | calibrate | sweep | report.
Exit codes: 0 success, 2 config error, 3 data error, 4 runtime failure.
Every artifact carries a provenance record (config hash, seed, tool
version); report paths render matplotlib figures next to the CSV output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import plots
from .agent import AgentConfig, run_training
from .artifacts import provenance, read_csv_rows, read_json, write_csv, write_json, write_jsonl
from .attacks import AttackConfig, calibrate_sigma, run_attack
from .baselines import lasso_select, random_select, topk_metric_select
from .config import RunConfig, config_hash, derive_seed, load_config
from .data import Dataset, SyntheticSpec, allocate, generate_synthetic, load_csv, to_manifest
from .env import EnvConfig, FeatureSelectionEnv
from .errors import CalibrationError, ConfigError, DataError
from .harness import (
    REMOVAL_MODES,
    evaluate_features,
    filter_adversarial_pairs,
    ig_removal_curve,
    metric_sweep,
    prepare_attack_suite,
)
from .nn import TrainConfig, mlp_init, train
from .robust_loss import DatasetEvaluator, EvalConfig, FeatureMask
from .scoring import (
    METRICS,
    ForestConfig,
    ScoreTable,
    ScoringConfig,
    build_queues,
    compute_score_table,
    load_score_table,
    save_score_table,
)

log = logging.getLogger("robustsel")

VALID_METHODS = ("robusta", "lasso", "random") + tuple(f"topk:{m}" for m in METRICS)


# ---------------------------------------------------------------------------
# shared pipeline pieces


def _train_cfg(cfg: RunConfig, seed: int) -> TrainConfig:
    m = cfg.model
    return TrainConfig(
        learning_rate=m.learning_rate,
        epochs=m.epochs,
        batch_size=m.batch_size,
        optimizer=m.optimizer,
        seed=seed,
    )


def _load_dataset(cfg: RunConfig) -> Dataset:
    d = cfg.data
    if d.path:
        if not os.path.exists(d.path):
            raise DataError(f"dataset file not found: {d.path}")
        dataset = load_csv(d.path, d.label_column)
    elif d.synthetic is not None:
        spec = SyntheticSpec(**d.synthetic)
        dataset = generate_synthetic(spec)
    else:
        raise ConfigError("config must set data.path or data.synthetic")
    return allocate(
        dataset,
        fractions=tuple(d.fractions),
        seed=derive_seed(cfg.seed, "data"),
        test_fraction=d.test_fraction,
    )


def _fit_full_model(cfg: RunConfig, dataset: Dataset, seed_label: str = "eval"):
    seed = derive_seed(cfg.seed, seed_label)
    model = mlp_init(dataset.n_features, cfg.model.hidden, dataset.num_classes, seed=seed)
    x, y = dataset.split("train")
    model, _ = train(model, x, y, _train_cfg(cfg, seed))
    return model


def _attack_cfg(cfg: RunConfig, eps: float | None = None, kind: str | None = None) -> AttackConfig:
    a = cfg.attack
    return AttackConfig(
        kind=kind or a.kind,
        eps=eps if eps is not None else a.eps_list[0],
        pgd_alpha=a.pgd_alpha,
        pgd_iters=a.pgd_iters,
        random_start=a.random_start,
        seed=derive_seed(cfg.seed, "attack"),
    )


def _compute_score_table(cfg: RunConfig, dataset: Dataset) -> ScoreTable:
    model = _fit_full_model(cfg, dataset)
    rng = np.random.default_rng(derive_seed(cfg.seed, "scoring"))
    x, y = dataset.split("rl_train")
    take = min(cfg.scoring.attack_sample, len(y))
    idx = rng.permutation(len(y))[:take]
    x_sub, y_sub = x[idx], y[idx]
    x_adv = run_attack(model, x_sub, y_sub, _attack_cfg(cfg))
    scoring_cfg = ScoringConfig(
        bins=cfg.scoring.bins,
        forest=ForestConfig(
            n_trees=cfg.scoring.n_trees,
            max_depth=cfg.scoring.max_depth,
            min_leaf=cfg.scoring.min_leaf,
            seed=derive_seed(cfg.seed, "scoring"),
        ),
        ig_steps=cfg.scoring.ig_steps,
    )
    return compute_score_table(dataset, model, x_sub, x_adv, y_sub, scoring_cfg)


def _score_table(cfg: RunConfig, dataset: Dataset, out_dir: str) -> ScoreTable:
    path = os.path.join(out_dir, "score_table.csv")
    if os.path.exists(path):
        table = load_score_table(path)
        if table.n_features == dataset.n_features:
            log.info("score table cache hit: %s", path)
            return table
        log.info("score table at %s does not match the dataset; recomputing", path)
    return _compute_score_table(cfg, dataset)


def _resolve_sigma(cfg: RunConfig, dataset: Dataset) -> float:
    if cfg.attack.sigma is not None:
        return float(cfg.attack.sigma)
    model = _fit_full_model(cfg, dataset)
    x, y = dataset.split("rl_val")
    return calibrate_sigma(
        model,
        x,
        y,
        mu=cfg.attack.mu,
        tol=cfg.attack.calibration_tol,
        seed=derive_seed(cfg.seed, "sigma"),
    )


def _eval_config(cfg: RunConfig, sigma: float) -> EvalConfig:
    return EvalConfig(
        train_cfg=_train_cfg(cfg, 0),
        hidden=cfg.model.hidden,
        sigma=sigma,
        l_per_sample=cfg.env.l_per_sample,
        lambda_nat=cfg.env.lambda_nat,
        lambda_gauss=cfg.env.lambda_gauss,
        repeats=cfg.env.eval_repeats,
        seed=derive_seed(cfg.seed, "eval"),
    )


def _suite(cfg: RunConfig, dataset: Dataset, out_dir: str, eps: float):
    return prepare_attack_suite(
        dataset,
        eps=eps,
        twin_seed=derive_seed(cfg.seed, "twin"),
        train_cfg=_train_cfg(cfg, 0),
        hidden=cfg.model.hidden,
        pgd_iters=cfg.attack.pgd_iters,
        attack_seed=derive_seed(cfg.seed, "attack"),
        cache_dir=os.path.join(out_dir, "adv_cache"),
    )


def _mask_path(out_dir: str, method: str) -> str:
    slug = method.replace(":", "_")
    return os.path.join(out_dir, f"mask_{slug}.json")


def _write_mask(path, mask: FeatureMask, method: str, prov: dict, **extra) -> None:
    payload = {
        "method": method,
        "n_features": mask.n_features,
        "k": mask.popcount,
        "bits": mask.bits(),
        "indices": sorted(mask.selected),
        "eliminated": sorted(mask.eliminated),
    }
    payload.update(extra)
    write_json(path, payload, prov=prov)


def _load_mask(path: str) -> tuple[FeatureMask, str]:
    payload = read_json(path)
    if "bits" not in payload or "n_features" not in payload:
        raise DataError(f"{path} is not a mask file")
    mask = FeatureMask.from_indices(
        [j for j, b in enumerate(payload["bits"]) if b], payload["n_features"]
    )
    return mask, payload.get("method", os.path.basename(path))


# ---------------------------------------------------------------------------
# subcommands


def cmd_score(cfg: RunConfig, out_dir: str, args) -> int:
    dataset = _load_dataset(cfg)
    table = _compute_score_table(cfg, dataset)
    prov = provenance(config_hash(cfg), cfg.seed, artifact="score_table")
    path = os.path.join(out_dir, "score_table.csv")
    os.makedirs(out_dir, exist_ok=True)
    save_score_table(table, path, header_comment="provenance: " + json.dumps(prov, sort_keys=True))
    write_json(os.path.join(out_dir, "dataset_manifest.json"), to_manifest(dataset), prov=prov)
    log.info("wrote %s (%d features x %d metrics)", path, table.n_features, len(METRICS))
    return 0


def cmd_select(cfg: RunConfig, out_dir: str, args) -> int:
    method = args.method
    if method not in VALID_METHODS:
        raise ConfigError(f"unknown method {method!r}; valid: {', '.join(VALID_METHODS)}")
    dataset = _load_dataset(cfg)
    os.makedirs(out_dir, exist_ok=True)
    k = args.k if args.k is not None else cfg.select.k
    prov = provenance(config_hash(cfg), cfg.seed, artifact="mask", method=method)

    if method == "random":
        result = random_select(dataset.n_features, k, seed=derive_seed(cfg.seed, "agent"))
        _write_mask(_mask_path(out_dir, method), result.mask, method, prov, hyper=result.hyper)
    elif method == "lasso":
        result = lasso_select(dataset, cfg.select.lasso_lambda, k, max_iter=cfg.select.lasso_iters)
        _write_mask(
            _mask_path(out_dir, method),
            result.mask,
            method,
            prov,
            hyper=result.hyper,
            objective_trace=result.score_trace,
        )
    elif method.startswith("topk:"):
        metric = method.split(":", 1)[1]
        table = _score_table(cfg, dataset, out_dir)
        result = topk_metric_select(table.columns[metric], k, metric=metric)
        _write_mask(_mask_path(out_dir, method), result.mask, method, prov, hyper=result.hyper)
    else:  # robusta
        table = _score_table(cfg, dataset, out_dir)
        sigma = _resolve_sigma(cfg, dataset)
        evaluator = DatasetEvaluator(
            dataset,
            _eval_config(cfg, sigma),
            log_path=os.path.join(out_dir, "runlog_robusta.jsonl"),
        )
        env = FeatureSelectionEnv(
            build_queues(table),
            evaluator,
            EnvConfig(
                k_window=cfg.env.k_window,
                elim_threshold=cfg.env.elim_threshold,
                gamma=cfg.agent.gamma,
                step_cap=cfg.agent.steps,
            ),
        )
        agent_cfg = AgentConfig(
            steps=cfg.agent.steps,
            lr=cfg.agent.lr,
            batch=cfg.agent.batch,
            gamma=cfg.agent.gamma,
            eps_final=cfg.agent.eps_final,
            eps_decay_steps=cfg.agent.eps_decay_steps,
            warmup=cfg.agent.warmup,
            target_sync=cfg.agent.target_sync,
            buffer_cap=cfg.agent.buffer_cap,
            seed=derive_seed(cfg.seed, "agent"),
        )
        result = run_training(env, agent_cfg)
        if result.best_mask is None:
            raise RuntimeError("training finished without evaluating any mask")
        _write_mask(
            _mask_path(out_dir, method),
            result.best_mask,
            method,
            prov,
            best_combined=result.best_combined,
            sigma=sigma,
            steps=result.final_step,
        )
        write_jsonl(os.path.join(out_dir, "history_robusta.jsonl"), result.step_history, prov=prov)
        total_counts = {m: 0 for m in METRICS}
        for ep in result.episode_history:
            for m, c in ep["action_counts"].items():
                total_counts[m] += c
        write_json(
            os.path.join(out_dir, "action_counts_robusta.json"),
            {
                "total": total_counts,
                "episodes": result.episode_history,
                "eliminated": sorted(env.eliminated),
            },
            prov=prov,
        )
        plots.plot_training_history(
            result.step_history, os.path.join(out_dir, "training_curves_robusta.png")
        )
        log.info(
            "robusta: best combined loss %.4f with %d features after %d steps",
            result.best_combined,
            result.best_mask.popcount,
            result.final_step,
        )
    return 0


def cmd_eval(cfg: RunConfig, out_dir: str, args) -> int:
    if not args.masks:
        raise ConfigError("eval needs at least one mask file")
    dataset = _load_dataset(cfg)
    os.makedirs(out_dir, exist_ok=True)
    masks = []
    for path in args.masks:
        if not os.path.exists(path):
            raise DataError(f"mask file not found: {path}")
        masks.append(_load_mask(path))
    eps_values = [args.eps] if args.eps is not None else list(cfg.attack.eps_list)
    rows = []
    for eps in eps_values:
        suite = _suite(cfg, dataset, out_dir, eps)
        for mask, method in masks:
            row = evaluate_features(
                mask,
                dataset,
                suite,
                _train_cfg(cfg, 0),
                hidden=cfg.model.hidden,
                repeats=cfg.harness.repeats,
                seed=derive_seed(cfg.seed, "eval"),
                method=method,
            )
            rows.append(row.as_dict())
    prov = provenance(config_hash(cfg), cfg.seed, artifact="eval_report", eps=eps_values)
    header = list(rows[0].keys())
    write_csv(
        os.path.join(out_dir, "eval_report.csv"),
        header,
        [[r[h] for h in header] for r in rows],
        prov=prov,
    )
    write_json(os.path.join(out_dir, "eval_report.json"), {"rows": rows}, prov=prov)
    plots.plot_eval_report(rows, os.path.join(out_dir, "eval_report.png"))
    log.info("wrote eval report for %d mask(s) x %d epsilon(s)", len(masks), len(eps_values))
    return 0


def cmd_igcurve(cfg: RunConfig, out_dir: str, args) -> int:
    dataset = _load_dataset(cfg)
    os.makedirs(out_dir, exist_ok=True)
    eps = args.eps if args.eps is not None else cfg.attack.eps_list[0]
    model = _fit_full_model(cfg, dataset)
    suite = _suite(cfg, dataset, out_dir, eps)
    x_clean, x_adv, y = filter_adversarial_pairs(
        model, suite.x_clean, suite.adv[cfg.attack.kind], suite.y
    )
    if len(y) == 0:
        raise DataError("no usable adversarial pairs: the attack fooled nothing")
    take = min(cfg.harness.ig_pairs, len(y))
    x_clean, x_adv, y = x_clean[:take], x_adv[:take], y[:take]
    k_grid = [min(k, dataset.n_features) for k in cfg.harness.ig_k_grid]
    prov = provenance(config_hash(cfg), cfg.seed, artifact="igcurve", eps=eps)
    curves = {}
    for mode in REMOVAL_MODES:
        rows = ig_removal_curve(
            model,
            x_clean,
            x_adv,
            y,
            mode=mode,
            k_grid=k_grid,
            seed=derive_seed(cfg.seed, "eval"),
            ig_steps=cfg.scoring.ig_steps,
            per_sample=cfg.harness.ig_per_sample,
        )
        curves[mode] = rows
        write_csv(
            os.path.join(out_dir, f"igcurve_{mode}.csv"),
            ["k", "benign", "same_wrong", "new_wrong"],
            [[r["k"], r["benign"], r["same_wrong"], r["new_wrong"]] for r in rows],
            prov=prov,
        )
    plots.plot_ig_removal(curves, os.path.join(out_dir, "igcurve.png"))
    log.info("wrote removal curves over %d pairs at eps %.4g", take, eps)
    return 0


def cmd_calibrate(cfg: RunConfig, out_dir: str, args) -> int:
    dataset = _load_dataset(cfg)
    os.makedirs(out_dir, exist_ok=True)
    sigma = _resolve_sigma(cfg, dataset)
    prov = provenance(config_hash(cfg), cfg.seed, artifact="sigma")
    write_json(os.path.join(out_dir, "sigma.json"), {"sigma": sigma, "mu": cfg.attack.mu}, prov=prov)
    log.info("calibrated sigma %.5f for target error %.3f", sigma, cfg.attack.mu)
    return 0


def cmd_sweep(cfg: RunConfig, out_dir: str, args) -> int:
    metric = args.metric
    if metric not in ("mi", "tree", "f", "random"):
        raise ConfigError(f"sweep metric must be mi|tree|f|random, got {metric!r}")
    dataset = _load_dataset(cfg)
    os.makedirs(out_dir, exist_ok=True)
    scores = None
    if metric != "random":
        table = _score_table(cfg, dataset, out_dir)
        scores = table.columns[metric]
    eps = args.eps if args.eps is not None else cfg.attack.eps_list[0]
    suite = _suite(cfg, dataset, out_dir, eps)
    k_grid = [k for k in cfg.harness.k_grid if k <= dataset.n_features]
    rows = metric_sweep(
        dataset,
        metric,
        scores,
        k_grid,
        suite,
        _train_cfg(cfg, 0),
        hidden=cfg.model.hidden,
        attack_kind=cfg.attack.kind,
        seed=derive_seed(cfg.seed, "eval"),
    )
    prov = provenance(config_hash(cfg), cfg.seed, artifact="sweep", metric=metric, eps=eps)
    write_csv(
        os.path.join(out_dir, f"sweep_{metric}.csv"),
        ["k", "train_acc", "test_acc", "robust_acc"],
        [[r["k"], r["train_acc"], r["test_acc"], r["robust_acc"]] for r in rows],
        prov=prov,
    )
    plots.plot_metric_sweep(rows, os.path.join(out_dir, f"sweep_{metric}.png"), metric=metric)
    return 0


def cmd_report(cfg: RunConfig, out_dir: str, args) -> int:
    report_path = os.path.join(out_dir, "eval_report.json")
    if not os.path.exists(report_path):
        raise DataError(f"no eval report at {report_path}; run `eval` first")
    payload = read_json(report_path)
    rows = payload["rows"]
    prov = provenance(config_hash(cfg), cfg.seed, artifact="report")
    report_dir = os.path.join(out_dir, "report")
    tables = {
        "performance": ("benign_acc", "benign_std"),
        "robustness_pgd": ("pgd_acc", "pgd_std"),
        "robustness_fgsm": ("fgsm_acc", "fgsm_std"),
        "average": ("avg_acc", None),
        "tradeoff_ratio": ("tradeoff_ratio", None),
    }
    for name, (key, std_key) in tables.items():
        header = ["method", "eps", name] + ([f"{name}_std"] if std_key else [])
        out_rows = []
        for r in rows:
            line = [r["method"], r["eps"], r[key]]
            if std_key:
                line.append(r[std_key])
            out_rows.append(line)
        write_csv(os.path.join(report_dir, f"table_{name}.csv"), header, out_rows, prov=prov)
    plots.plot_eval_report(rows, os.path.join(report_dir, "summary.png"))
    log.info("wrote %d tables to %s", len(tables), report_dir)
    return 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robustsel",
        description="Robust feature selection: score features, run selectors, evaluate masks.",
    )
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="root seed override")

    p = sub.add_parser("score", help="compute and cache the six-metric score table")
    common(p)

    p = sub.add_parser("select", help="run a selection method and write its mask")
    common(p)
    p.add_argument("--method", required=True, help="robusta | lasso | random | topk:<metric>")
    p.add_argument("--k", type=int, default=None, help="subset size for baselines")

    p = sub.add_parser("eval", help="evaluate mask files on benign + adversarial test sets")
    common(p)
    p.add_argument("masks", nargs="*", help="mask JSON files")
    p.add_argument("--eps", type=float, default=None)

    p = sub.add_parser("igcurve", help="attribution-ranked perturbation removal curves")
    common(p)
    p.add_argument("--eps", type=float, default=None)

    p = sub.add_parser("calibrate", help="calibrate the corruption sigma to the target error rate")
    common(p)

    p = sub.add_parser("sweep", help="top-k curve for a single metric")
    common(p)
    p.add_argument("--metric", required=True, help="mi | tree | f | random")
    p.add_argument("--eps", type=float, default=None)

    p = sub.add_parser("report", help="assemble final tables and figures from eval output")
    common(p)
    return parser


COMMANDS = {
    "score": cmd_score,
    "select": cmd_select,
    "eval": cmd_eval,
    "igcurve": cmd_igcurve,
    "calibrate": cmd_calibrate,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        out_dir = args.out or os.environ.get("ROBUSTSEL_OUT") or cfg.out_dir
        return COMMANDS[args.command](cfg, out_dir, args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 2
    except DataError as exc:
        log.error("data error: %s", exc)
        return 3
    except CalibrationError as exc:
        log.error("calibration failed: %s (achievable band %s)", exc, exc.achievable)
        return 4
    except Exception as exc:  # pragma: no cover - defensive
        log.error("runtime failure: %s", exc, exc_info=True)
        return 4


if __name__ == "__main__":
    sys.exit(main())
