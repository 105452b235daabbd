"""HTTP front end wrapping the experiment runners.

POST bodies are plain config objects (same keys as the JSON config files,
minus ``experiment``, which comes from the URL).  Results land on the
server's filesystem under the config's ``out_dir``; the response carries
the manifest content.
"""

import os

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..csvio import sanitize
from ..errors import UsageError
from ..experiments import EXPERIMENTS, make_config, run
from .models import ExperimentList, HealthResponse, RunResponse


def create_app() -> FastAPI:
    app = FastAPI(title="hardylab", version=__version__)

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(version=__version__)

    @app.get("/experiments", response_model=ExperimentList)
    def experiments():
        return ExperimentList(experiments=list(EXPERIMENTS))

    @app.post("/experiments/{name}/run", response_model=RunResponse)
    def run_experiment(name: str, body: dict | None = None):
        payload = dict(body or {})
        payload["experiment"] = name
        try:
            config = make_config(payload)
        except UsageError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        record = run(config)
        return RunResponse(
            experiment=record.experiment,
            status=record.status,
            passed=record.passed,
            failures=[str(f) for f in record.failures],
            artifacts=[os.path.basename(a) for a in record.artifacts],
            summary=sanitize(record.summary),
            error=record.error,
            started=record.started,
            finished=record.finished,
            out_dir=config.out_dir,
        )

    return app


app = create_app()
