"""
Background execution of experiment jobs.

With REDIS_URL set (and redis/rq importable) jobs are enqueued on rq and their
records live in Redis hashes, so any gunicorn worker can answer status calls.
Otherwise a local thread pool runs them and records stay in process memory.
"""
import importlib
import json
import logging
import os
import shutil
import tempfile
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor

try:
    import redis
    from rq import Queue
except Exception:  # pragma: no cover - optional dependency
    redis = None
    Queue = None

logger = logging.getLogger(__name__)

JOB_KEY_PREFIX = "olldac:job:"
JOB_INDEX_KEY = "olldac:jobs"
CLEANUP_INTERVAL_SECONDS = 30 * 60


def _import_callable(path):
    if callable(path):
        return path
    module_name, func_name = path.split(":", 1)
    return getattr(importlib.import_module(module_name), func_name)


def _encode_result(result):
    try:
        return json.dumps(result)
    except TypeError:
        return json.dumps({"error": "Result not serializable."})


def _decode_result(value):
    if not value:
        return None
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return None


class _MemoryRecords:
    def __init__(self):
        self._lock = threading.Lock()
        self._jobs = {}

    def put(self, record):
        with self._lock:
            self._jobs[record["id"]] = dict(record)

    def update(self, job_id, **fields):
        with self._lock:
            job = self._jobs.get(job_id)
            if job:
                job.update(fields, updated_ts=time.time())

    def get(self, job_id):
        with self._lock:
            job = self._jobs.get(job_id)
            return dict(job) if job else None

    def remove(self, job_id):
        with self._lock:
            self._jobs.pop(job_id, None)

    def ids(self):
        with self._lock:
            return list(self._jobs)


class _RedisRecords:
    def __init__(self, conn):
        self._conn = conn

    def put(self, record):
        flat = {k: ("" if v is None else v) for k, v in record.items()}
        self._conn.hset(JOB_KEY_PREFIX + record["id"], mapping=flat)
        self._conn.sadd(JOB_INDEX_KEY, record["id"])

    def update(self, job_id, **fields):
        if "result" in fields:
            fields["result"] = _encode_result(fields["result"])
        fields = {k: ("" if v is None else v) for k, v in fields.items()}
        self._conn.hset(JOB_KEY_PREFIX + job_id, mapping={**fields, "updated_ts": time.time()})

    def get(self, job_id):
        data = self._conn.hgetall(JOB_KEY_PREFIX + job_id)
        if not data:
            return None
        raw = {k.decode("utf-8"): v.decode("utf-8") for k, v in data.items()}
        return {
            "id": raw.get("id"),
            "kind": raw.get("kind"),
            "status": raw.get("status"),
            "created_ts": float(raw.get("created_ts") or 0),
            "updated_ts": float(raw.get("updated_ts") or 0),
            "job_dir": raw.get("job_dir"),
            "error": raw.get("error") or None,
            "result": _decode_result(raw.get("result")),
        }

    def remove(self, job_id):
        self._conn.delete(JOB_KEY_PREFIX + job_id)
        self._conn.srem(JOB_INDEX_KEY, job_id)

    def ids(self):
        return [i.decode("utf-8") if isinstance(i, bytes) else i for i in self._conn.smembers(JOB_INDEX_KEY)]


def _execute(records, job_id, func_path, args, kwargs):
    records.update(job_id, status="running")
    try:
        result = _import_callable(func_path)(*args, **kwargs)
        if result is not None:
            records.update(job_id, result=result)
        records.update(job_id, status="finished")
        return True
    except Exception as exc:
        logger.exception("Job %s failed: %s", job_id, exc)
        records.update(job_id, error=str(exc), status="failed")
        return False


def run_job_wrapper(job_id, func_path, args, kwargs, redis_url):
    """rq entry point; the worker process reconnects to Redis on its own."""
    if redis is None:
        raise RuntimeError("redis module is required to run background jobs.")
    records = _RedisRecords(redis.Redis.from_url(redis_url))
    if not _execute(records, job_id, func_path, args, kwargs):
        raise RuntimeError(f"Job {job_id} failed.")
    return True


class JobQueue:
    def __init__(self, app=None, max_concurrent=2, job_ttl_hours=24, base_dir=None, redis_url=None,
                 start_cleanup=True):
        self._app = app
        self._executor = ThreadPoolExecutor(max_workers=max(1, max_concurrent))
        self._ttl_seconds = max(1, int(job_ttl_hours * 3600))
        self._base_dir = base_dir or tempfile.gettempdir()
        os.makedirs(self._base_dir, exist_ok=True)
        self._redis_url = redis_url
        self._queue = None
        self._records = _MemoryRecords()
        if redis_url and redis and Queue:
            try:
                conn = redis.Redis.from_url(redis_url)
                self._queue = Queue(connection=conn)
                self._records = _RedisRecords(conn)
            except Exception as exc:
                logger.exception("Failed to connect to Redis: %s", exc)
        elif redis_url:
            logger.warning("Redis URL set but redis/rq not installed; falling back to thread pool.")
        if start_cleanup:
            threading.Thread(target=self._cleanup_loop, daemon=True).start()

    @property
    def uses_redis(self) -> bool:
        return self._queue is not None

    def create_job(self, kind):
        job_id = uuid.uuid4().hex
        job_dir = tempfile.mkdtemp(prefix="olldac_job_", dir=self._base_dir)
        now = time.time()
        record = {
            "id": job_id,
            "kind": kind,
            "status": "queued",
            "created_ts": now,
            "updated_ts": now,
            "job_dir": job_dir,
            "error": None,
            "result": None,
        }
        try:
            self._records.put(record)
        except Exception as exc:
            logger.exception("Failed to register job %s: %s", job_id, exc)
        return job_id, job_dir

    def submit(self, job_id, func_path, *args, **kwargs):
        if self._queue is not None:
            self._queue.enqueue(run_job_wrapper, job_id, func_path, args, kwargs, self._redis_url,
                                job_id=job_id, job_timeout=-1)
            return None
        return self._executor.submit(_execute, self._records, job_id, func_path, args, kwargs)

    def get_job(self, job_id):
        try:
            return self._records.get(job_id)
        except Exception:
            return None

    def get_public_status(self, job_id):
        job = self.get_job(job_id)
        if not job:
            return None
        return {
            "job_id": job["id"],
            "kind": job.get("kind"),
            "status": job["status"],
            "error": job.get("error"),
            "result": job.get("result"),
        }

    def finalize_job(self, job_id):
        job = self.get_job(job_id)
        if not job:
            return False
        if job.get("job_dir"):
            shutil.rmtree(job["job_dir"], ignore_errors=True)
        try:
            self._records.remove(job_id)
        except Exception:
            pass
        return True

    def cleanup_expired(self):
        now = time.time()
        try:
            job_ids = self._records.ids()
        except Exception:
            job_ids = []
        for job_id in job_ids:
            job = self.get_job(job_id)
            if job and job.get("status") != "running" and now - job.get("created_ts", 0) > self._ttl_seconds:
                self.finalize_job(job_id)

    def _cleanup_loop(self):
        while True:
            time.sleep(CLEANUP_INTERVAL_SECONDS)
            try:
                self.cleanup_expired()
            except Exception as exc:
                logger.exception("Job cleanup failed: %s", exc)
