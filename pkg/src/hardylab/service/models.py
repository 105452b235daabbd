"""Request/response schemas for the experiment service."""

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class ExperimentList(BaseModel):
    experiments: list[str]


class RunResponse(BaseModel):
    """Outcome of one experiment run, mirroring the on-disk manifest."""

    experiment: str
    status: str                      # ok / invariant / usage / numerical / error
    passed: bool
    failures: list[str] = Field(default_factory=list)
    artifacts: list[str] = Field(default_factory=list)
    summary: dict = Field(default_factory=dict)
    error: str | None = None
    started: str
    finished: str
    out_dir: str
