import logging
import os

from flask import Flask, jsonify

from oll_dac import __version__
from oll_dac.metrics import DEFAULT_EVAL_WORKERS

BASE_DIR = os.path.dirname(os.path.abspath(__file__))


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    try:
        return int(raw) if raw else default
    except (TypeError, ValueError):
        return default


def create_app(overrides: dict = None) -> Flask:
    app = Flask(__name__)
    app.config["MAX_CONTENT_LENGTH"] = _env_int("MAX_CONTENT_LENGTH", 1024 * 1024)
    app.config["MAX_CONCURRENT_JOBS"] = _env_int("MAX_CONCURRENT_JOBS", 2)
    app.config["JOB_TTL_HOURS"] = _env_int("JOB_TTL_HOURS", 24)
    app.config["EVAL_WORKERS"] = _env_int("EVAL_WORKERS", DEFAULT_EVAL_WORKERS)
    app.config["JOB_BASE_DIR"] = os.environ.get("OLL_DAC_OUTPUT_ROOT") or os.path.join(BASE_DIR, ".data", "jobs")
    app.config["REDIS_URL"] = os.environ.get("REDIS_URL", "")
    app.config["START_JOB_CLEANUP"] = True
    app.config.update(overrides or {})
    os.makedirs(app.config["JOB_BASE_DIR"], exist_ok=True)

    from tools.job_queue import JobQueue

    app.config["JOB_QUEUE"] = JobQueue(
        app,
        max_concurrent=app.config["MAX_CONCURRENT_JOBS"],
        job_ttl_hours=app.config["JOB_TTL_HOURS"],
        base_dir=app.config["JOB_BASE_DIR"],
        redis_url=app.config["REDIS_URL"] or None,
        start_cleanup=app.config["START_JOB_CLEANUP"],
    )

    from tools.baselines import baselines_bp
    from tools.experiments import experiments_bp

    app.register_blueprint(experiments_bp, url_prefix="/api/experiments")
    app.register_blueprint(baselines_bp, url_prefix="/api/baselines")

    from cli import cli

    app.cli.add_command(cli, name="olldac")

    @app.route("/")
    def index():
        return jsonify({
            "service": "oll-dac",
            "version": __version__,
            "endpoints": ["/api/experiments", "/api/baselines", "/job/<job_id>/status"],
        })

    @app.route("/job/<job_id>/status")
    def job_status(job_id):
        job = app.config["JOB_QUEUE"].get_job(job_id)
        if not job:
            return jsonify({"status": "missing", "error": "Job not found or expired."}), 404

        status = job.get("status") or "unknown"
        payload = {
            "status": status,
            "result": job.get("result"),
            "error": job.get("error"),
        }
        if status == "failed" and not payload["error"]:
            payload["error"] = "Job failed."
        return jsonify(payload), 200

    return app


app = create_app()


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    host = os.environ.get("FLASK_RUN_HOST", "127.0.0.1")
    debug = os.environ.get("FLASK_DEBUG", "0") == "1"
    app.run(host=host, port=5000, debug=debug)
