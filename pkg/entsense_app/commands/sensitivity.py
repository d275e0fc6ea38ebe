import logging
from dataclasses import replace

from entsense_app.commands.base import RunContext, common_parser
from entsense_app.config import ExperimentConfig, SensitivityModel
from entsense_app.protocols import SensitivityParams, gain_db, optimal_deer_time, sensitivity

logger = logging.getLogger(__name__)

PERTURB_STEP = 1.1


def _monotonicity(params: SensitivityParams, eta: float) -> dict:
    """Whether eta drops when each of these parameters grows by 10%."""
    report = {}
    for name in ("A_eff", "T2", "C", "n_avg"):
        value = getattr(params, name) * PERTURB_STEP
        if name == "C":
            if params.C >= 1.0:
                continue
            value = min(value, 1.0)
        report[name] = sensitivity(replace(params, **{name: value})) < eta
    return report


def _analyse(model: SensitivityModel) -> tuple[dict, float]:
    params = SensitivityParams(**model.model_dump())
    t_star, eta_star = optimal_deer_time(params)
    entry = {"params": model.model_dump(), "t_star_us": t_star, "eta_at_t_star": eta_star}
    if params.t_deer is not None:
        entry["eta_at_t_deer"] = sensitivity(params)
    entry["monotonic"] = _monotonicity(replace(params, t_deer=t_star), eta_star)
    return entry, eta_star


def cmd_sensitivity(config: ExperimentConfig, ctx: RunContext):
    run = config.require("sensitivity")
    reference, eta_ref = _analyse(run.reference)
    entangled, eta_new = _analyse(run.entangled)
    gain = gain_db(eta_ref, eta_new)
    logger.info("Sensitivity gain %.2f dB", gain)
    return [ctx.writer.write_json("sensitivity.json", {
        "reference": reference,
        "entangled": entangled,
        "gain_db": gain,
    })]


def register(subparsers):
    parser = subparsers.add_parser("sensitivity", parents=[common_parser()], help="DEER sensitivity and entanglement gain")
    parser.set_defaults(run=cmd_sensitivity)
