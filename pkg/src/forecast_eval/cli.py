"""Command-line front end.

::

    forecast-eval evaluate --effects effects.csv --forecasts forecasts.csv --out run/report.json
    forecast-eval replication --replication replication.csv --out run/report.json
    forecast-eval synth --preset exercise --out fixtures/exercise
    forecast-eval report run/report.json
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import (
    gibbs_regression_replication,
    linear_interpolation_predictions,
    null_effect_predictions,
    null_replication_predictions,
    random_chance_predictions,
)
from .data_model import (
    DataValidationError,
    load_effect_study,
    load_effort_conditions,
    load_replication_study,
    write_effect_study,
    write_replication_study,
)
from .empirical_bayes import (
    PosteriorSampler,
    ReplicationLink,
    fit_nonparametric_eb,
    fit_parametric_eb,
    oracle_predictions,
    resolve_eb_kind,
)
from .inference import (
    BootstrapDraws,
    category_bias,
    per_treatment_bias_simultaneous,
    subgroup_bias,
)
from .losses import LossKind, LossDomainError, check_probabilities
from .report import EvaluationReport, format_table, write_outputs
from . import synthetic

log = logging.getLogger("forecast_eval")

EFFECT_MODELS = ("null", "oracle", "selfish", "altruistic")
REPLICATION_MODELS = ("null", "random", "linear_regression", "oracle")


class ConfigError(ValueError):
    pass


def _models(text: str | None, allowed, default) -> list[str]:
    if not text:
        return list(default)
    names = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in names if m not in allowed]
    if bad:
        raise ConfigError(f"unknown model(s) {bad}; choose from {list(allowed)}")
    return list(dict.fromkeys(names))


def _anchors(text: str) -> list[tuple[float, float]]:
    try:
        pairs = [tuple(float(v) for v in part.split("=")) for part in text.split(",")]
    except ValueError:
        raise ConfigError(f"anchors must look like '0=1500,1=2000,10=2100', got {text!r}") from None
    if len(pairs) != 3 or any(len(p) != 2 for p in pairs):
        raise ConfigError("exactly three payment=points anchors are required")
    return pairs


def _fit(estimates, kind: str, seed: int, link=None):
    kind = resolve_eb_kind(estimates, kind)
    fit = fit_parametric_eb(estimates) if kind == "parametric" else fit_nonparametric_eb(estimates)
    return kind, PosteriorSampler.from_fit(fit, seed=seed, link=link)


def _config(args, keys) -> dict:
    out = {"command": args.command}
    for key in keys:
        val = getattr(args, key, None)
        out[key] = str(val) if isinstance(val, Path) else val
    return out


def _effort_models(args, estimates, names):
    preds = {}
    wanted = [m for m in names if m in ("selfish", "altruistic")]
    if not wanted:
        return preds
    if not args.effort_conditions or not args.anchors:
        raise ConfigError("selfish/altruistic models need --effort-conditions and --anchors")
    conditions = {c.condition_id: c for c in load_effort_conditions(args.effort_conditions)}
    missing = [t for t in estimates.treatment_ids if t not in conditions]
    if missing:
        raise ConfigError(f"effort conditions missing for treatments {missing}")
    ordered = [conditions[t] for t in estimates.treatment_ids]
    anchors = _anchors(args.anchors)
    for mode in wanted:
        preds[mode] = linear_interpolation_predictions(ordered, anchors, mode)
    return preds


def run_evaluate(args) -> EvaluationReport:
    loss = LossKind.parse(args.loss)
    names = _models(args.models, EFFECT_MODELS, ("null", "oracle"))
    estimates, forecasts = load_effect_study(args.effects, args.forecasts, args.covariance,
                                             args.categories)
    if loss.requires_probabilities:
        try:
            check_probabilities(estimates.estimates, "effect estimates")
            check_probabilities(forecasts.predictions, "forecasts")
        except LossDomainError as exc:
            raise LossDomainError(f"{exc}; use --loss squared_error for effect studies") from None
    models = {}
    if "null" in names:
        models["null"] = null_effect_predictions(estimates.K)
    models.update(_effort_models(args, estimates, names))

    eb_kind, sampler = _fit(estimates, args.eb, args.seed)
    if "oracle" in names:
        models["oracle"] = oracle_predictions(sampler, loss)

    config = _config(args, ["effects", "forecasts", "covariance", "categories", "framing",
                            "effort_conditions", "anchors", "eb", "loss", "models",
                            "samples", "seed", "units", "study"])
    report = EvaluationReport(args.study, config, args.seed, eb_kind, args.units or "")
    report.metadata["n_treatments"] = estimates.K
    report.metadata["n_forecasters"] = forecasts.F
    draws = BootstrapDraws(forecasts, sampler, args.samples, args.seed)
    _add_risks(report, draws, loss, models)
    bias = draws.summarize(draws.bias(), "bias")
    report.add(bias)
    report.add_bias_point(bias, "overall")

    if forecasts.treatment_categories:
        cb = category_bias(forecasts, sampler, args.samples, args.seed,
                           framing=args.framing or ())
        report.add(cb.overall)
        for res in cb.estimates.values():
            report.add(res)
        report.add_bands("categories", cb.bands, "category:")
    if forecasts.forecaster_groups and len(forecasts.group_labels()) >= 2:
        sg = subgroup_bias(forecasts, sampler, args.samples, args.seed)
        for res in sg.estimates.values():
            report.add(res)
        report.add_bands("groups", sg.bands, "group:")
    if estimates.K >= 2:
        pt = per_treatment_bias_simultaneous(forecasts, sampler, args.samples, args.seed)
        report.add_bands("treatments", pt, "treatment:")
    return report


def _add_risks(report, draws: BootstrapDraws, loss: LossKind, models: dict) -> None:
    report.add(draws.summarize(draws.forecaster_risk(loss), "risk:forecasters", loss),
               predictor="forecasters")
    for name, pred in models.items():
        report.add(draws.summarize(draws.predictor_risk(loss, pred), f"risk:{name}", loss),
                   predictor=name)
    for name, pred in models.items():
        report.add(draws.summarize(draws.comparative_risk(loss, pred),
                                   f"comparative_risk:{name}", loss))


def run_replication(args) -> EvaluationReport:
    names = _models(args.models, REPLICATION_MODELS, REPLICATION_MODELS)
    dataset = load_replication_study(args.replication, args.forecasts)
    estimates = dataset.effect_estimates()
    link = ReplicationLink(dataset.replication_n, dataset.alpha)
    eb_kind, sampler = _fit(estimates, args.eb, args.seed, link=link)
    loss = LossKind.BRIER

    models = {}
    floor_rate = None
    if "null" in names:
        models["null"] = null_replication_predictions(dataset.K, dataset.alpha)
    if "random" in names:
        models["random"] = random_chance_predictions(dataset.K)
    if "linear_regression" in names:
        gibbs = gibbs_regression_replication(dataset, args.gibbs_draws, args.seed)
        # redrawn per Monte Carlo draw with the regression's parameter uncertainty
        models["linear_regression"] = gibbs.parameter_draws
        floor_rate = gibbs.floor_hit_rate
    if "oracle" in names:
        models["oracle"] = oracle_predictions(sampler, loss)

    config = _config(args, ["replication", "forecasts", "eb", "models", "samples",
                            "gibbs_draws", "seed", "units", "study"])
    report = EvaluationReport(args.study, config, args.seed, eb_kind,
                              args.units or "Pr. replication")
    report.metadata["n_studies"] = dataset.K
    report.metadata["n_forecasters"] = dataset.forecasts.F
    report.metadata["variance_floor_hit_rate"] = floor_rate
    if "linear_regression" in names:
        report.metadata["gibbs_draws"] = args.gibbs_draws
    draws = BootstrapDraws(dataset.forecasts, sampler, args.samples, args.seed)
    _add_risks(report, draws, loss, models)
    bias = draws.summarize(draws.bias(), "bias")
    report.add(bias)
    report.add_bias_point(bias, "overall")
    return report


def run_synth(args) -> dict:
    out = Path(args.out)
    seed = args.seed
    if args.preset == "reproducibility":
        rng = np.random.default_rng(seed)
        K = args.K or 44
        orig = rng.uniform(0.1, 0.8, K)
        # mostly null effects plus a strong minority, about a third replicate
        true = np.where(rng.random(K) < 0.6, 0.0, orig)
        data, _, _ = synthetic.generate_replication(
            K, args.F or 30, original_effect=orig, true_effect=true,
            n=rng.integers(40, 200, K), forecast_mean=0.54, forecast_sd=0.15, seed=seed)
        return {k: str(v) for k, v in write_replication_study(out, data).items()}
    presets = {
        "exercise": dict(K=53, F=90, true_effect_prior=synthetic.NormalPrior(0.17, 0.01),
                         noise_sd=0.05, forecaster_bias=2.3, forecaster_noise_sd=1.0,
                         forecaster_effect_sd=0.5, correlation=0.2),
        "rct": dict(K=126, F=60, true_effect_prior=synthetic.NormalPrior(1.6, 4.0),
                    noise_sd=1.0, forecaster_noise_sd=3.0, missing_rate=0.85,
                    group_biases=(("novice", 4.4), ("moderate", 2.9), ("experienced", 2.2))),
        "effect": dict(K=20, F=10),
    }
    params = dict(presets[args.preset])
    if args.K:
        params["K"] = args.K
    if args.F:
        params["F"] = args.F
    study = synthetic.generate(synthetic.SyntheticStudySpec(seed=seed, **params))
    return {k: str(v) for k, v in
            write_effect_study(out, study.estimates, study.forecasts).items()}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forecast-eval", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--eb", choices=["parametric", "nonparametric", "auto"], default="auto")
        p.add_argument("--models", default=None, help="comma-separated baseline models")
        p.add_argument("--samples", type=int, default=10_000)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", type=Path, required=True, help="report JSON path")
        p.add_argument("--units", default=None)
        p.add_argument("--study", default="study")

    ev = sub.add_parser("evaluate", help="evaluate forecasts of treatment effects")
    ev.add_argument("--effects", type=Path, required=True)
    ev.add_argument("--forecasts", type=Path, required=True)
    ev.add_argument("--covariance", type=Path, default=None)
    ev.add_argument("--categories", type=Path, default=None)
    ev.add_argument("--framing", action="append", default=None,
                    help="category measured as a loss-minus-gain framing difference")
    ev.add_argument("--effort-conditions", type=Path, default=None)
    ev.add_argument("--anchors", default=None, help="payment=points,... e.g. 0=1521,1=2029,10=2175")
    ev.add_argument("--loss", default="squared_error", choices=[k.value for k in LossKind])
    common(ev)

    rep = sub.add_parser("replication", help="evaluate replication-probability forecasts")
    rep.add_argument("--replication", type=Path, required=True)
    rep.add_argument("--forecasts", type=Path, default=None,
                     help="defaults to replication_forecasts.csv beside --replication")
    rep.add_argument("--gibbs-draws", type=int, default=5000)
    common(rep)

    syn = sub.add_parser("synth", help="write a synthetic fixture in the input CSV schemas")
    syn.add_argument("--preset", choices=["exercise", "rct", "reproducibility", "effect"],
                     default="effect")
    syn.add_argument("--K", type=int, default=None)
    syn.add_argument("--F", type=int, default=None)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--out", type=Path, required=True, help="output directory")

    show = sub.add_parser("report", help="print a saved report as a table")
    show.add_argument("path", type=Path)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "evaluate":
            report = run_evaluate(args)
            write_outputs(report, args.out)
            log.info("wrote %s", args.out)
        elif args.command == "replication":
            report = run_replication(args)
            write_outputs(report, args.out)
            log.info("wrote %s", args.out)
        elif args.command == "synth":
            for name, path in run_synth(args).items():
                print(f"{name}: {path}")
        else:
            print(format_table(json.loads(args.path.read_text(encoding="utf-8"))))
    except (DataValidationError, ConfigError, ValueError, RuntimeError, OSError) as exc:
        print(f"forecast-eval: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
