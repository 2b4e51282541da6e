import pandas as pd
from flask import Blueprint, current_app, jsonify, request

from oll_dac.errors import OllDacError
from oll_dac.harness import baseline_table
from oll_dac.seeding import derive_seed_list

baselines_bp = Blueprint("baselines", __name__)

MAX_BASELINE_N = 1000
MAX_BASELINE_SEEDS = 2000


def _parse_int(value, default: int, lower: int, upper: int) -> int:
    try:
        parsed = int(value)
    except (TypeError, ValueError):
        parsed = default
    return min(max(lower, parsed), upper)


@baselines_bp.get("")
def baselines():
    if "n" not in request.args:
        return jsonify({"error": "Query parameter 'n' is required."}), 400
    n = _parse_int(request.args.get("n"), 0, 0, MAX_BASELINE_N)
    if n < 1:
        return jsonify({"error": "n must be a positive integer."}), 400
    seeds = _parse_int(request.args.get("seeds"), 100, 2, MAX_BASELINE_SEEDS)
    master_seed = _parse_int(request.args.get("master_seed"), 0, 0, 2**31 - 1)

    try:
        table = baseline_table(n, derive_seed_list(master_seed, 0, "eval", seeds),
                               workers=current_app.config["EVAL_WORKERS"])
    except OllDacError as exc:
        return jsonify({"error": str(exc)}), 400
    rows = table.astype(object).where(pd.notna(table), None).to_dict(orient="records")
    return jsonify({"n": n, "seeds": seeds, "master_seed": master_seed, "results": rows})
