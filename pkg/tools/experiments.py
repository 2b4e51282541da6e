import glob
import json
import os

import pandas as pd
from flask import Blueprint, current_app, jsonify, request, send_file
from werkzeug.utils import safe_join

from oll_dac.errors import ConfigurationError
from oll_dac.harness import ExperimentConfig, run_experiment
from tools.upload_utils import CONFIG_EXTENSIONS, is_allowed_filename, parse_config_upload

experiments_bp = Blueprint("experiments", __name__)


def _without_nan(value):
    if isinstance(value, dict):
        return {k: _without_nan(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_without_nan(v) for v in value]
    if isinstance(value, float) and pd.isna(value):
        return None
    return value


def _experiment_dir(job_dir: str, config: dict) -> str:
    return os.path.join(job_dir, config.get("name") or "experiment")


def run_experiment_job(job_id, job_dir, config_mapping):
    config = ExperimentConfig.from_mapping(config_mapping)
    exit_code = run_experiment(config, output_dir=job_dir)
    experiment_dir = os.path.join(job_dir, config.name)
    failed = []
    for manifest_path in glob.glob(os.path.join(experiment_dir, "**", "manifest.json"), recursive=True):
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
        if manifest.get("status") != "finished":
            failed.append({"run": os.path.relpath(os.path.dirname(manifest_path), experiment_dir),
                           "error": manifest.get("error")})
    if exit_code != 0:
        raise RuntimeError(f"{len(failed)} run(s) failed: {failed}")
    return {"summary_url": f"/api/experiments/{job_id}/summary", "exit_code": exit_code}


def _load_config_payload() -> dict:
    file = request.files.get("config")
    if file:
        if not is_allowed_filename(file.filename or "", CONFIG_EXTENSIONS):
            raise ValueError("Invalid config type. Use .yaml, .yml or .json only.")
        return parse_config_upload(file.filename or "", file.read())
    payload = request.get_json(silent=True)
    if not isinstance(payload, dict) or not payload:
        raise ValueError("Send a config file as 'config' or a JSON body.")
    return payload


# ---------------------------
# Experiment API endpoints
# ---------------------------

@experiments_bp.post("")
def submit():
    try:
        mapping = _load_config_payload()
        mapping.pop("output_dir", None)
        config = ExperimentConfig.from_mapping(mapping)
    except (ValueError, ConfigurationError) as exc:
        return jsonify({"error": str(exc)}), 400

    job_queue = current_app.config["JOB_QUEUE"]
    job_id, job_dir = job_queue.create_job(f"experiment_{config.algorithm}")
    with open(os.path.join(job_dir, "config.json"), "w", encoding="utf-8") as f:
        json.dump(config.as_dict(), f, indent=2)
    job_queue.submit(job_id, "tools.experiments:run_experiment_job", job_id, job_dir, config.as_dict())
    return jsonify({"job_id": job_id, "status_url": f"/job/{job_id}/status"}), 202


def _job_or_error(job_id: str):
    job = current_app.config["JOB_QUEUE"].get_job(job_id)
    if not job or not job.get("job_dir"):
        return None, (jsonify({"error": "Job not found or expired."}), 404)
    return job, None


@experiments_bp.get("/<job_id>/summary")
def summary(job_id):
    job, error = _job_or_error(job_id)
    if error:
        return error
    config_path = os.path.join(job["job_dir"], "config.json")
    try:
        with open(config_path, "r", encoding="utf-8") as f:
            config = json.load(f)
    except OSError:
        return jsonify({"error": "Job config missing."}), 404

    experiment_dir = _experiment_dir(job["job_dir"], config)
    runs = []
    for summary_path in sorted(glob.glob(os.path.join(experiment_dir, "**", "summary.json"), recursive=True)):
        run_dir = os.path.dirname(summary_path)
        with open(summary_path, "r", encoding="utf-8") as f:
            run_summary = json.load(f)
        table_path = os.path.join(run_dir, "summary_table.csv")
        table = pd.read_csv(table_path).to_dict(orient="records") if os.path.exists(table_path) else []
        runs.append({
            "run": os.path.relpath(run_dir, experiment_dir),
            "summary": _without_nan(run_summary),
            "comparison": _without_nan(table),
            "artifacts": sorted(
                os.path.relpath(p, experiment_dir)
                for p in glob.glob(os.path.join(run_dir, "**", "*"), recursive=True) if os.path.isfile(p)
            ),
        })
    return jsonify({"job_id": job_id, "status": job.get("status"), "runs": runs})


@experiments_bp.get("/<job_id>/download/<path:artifact>")
def download(job_id, artifact):
    job, error = _job_or_error(job_id)
    if error:
        return error
    with open(os.path.join(job["job_dir"], "config.json"), "r", encoding="utf-8") as f:
        config = json.load(f)
    path = safe_join(_experiment_dir(job["job_dir"], config), artifact)
    if path is None or not os.path.isfile(path):
        return jsonify({"error": "Artifact not found."}), 404
    return send_file(path, as_attachment=True, download_name=os.path.basename(path))
