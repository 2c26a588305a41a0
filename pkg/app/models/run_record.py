"""Run record model module for storing the history of host runs.

Traces and reports stay free of wall-clock time; the timestamp of a run
lives only here.
"""

from datetime import datetime
from . import db


class RunRecord(db.Model):
    """SQLAlchemy model representing one recorded ``host run``.

    Attributes:
        id (int): Primary key for the run record
        scenario (str): Name of the scenario that was run
        scenario_sha256 (str): Digest of the scenario file
        seed (int): Scheduler seed, or None for round-robin
        exit_status (int): Exit status of the run
        trace_sha256 (str): Digest of the rendered trace
        violations (int): Number of violations over all containers
        warnings (int): Number of warnings delivered to components
        sanctions (int): Number of sanctions permanently applied
        report (str): The run report as JSON
        created_at (datetime): Timestamp when the run was recorded
    """

    __tablename__ = 'run_records'

    id = db.Column(db.Integer, primary_key=True)
    scenario = db.Column(db.String(255), nullable=False)
    scenario_sha256 = db.Column(db.String(64), nullable=False)
    seed = db.Column(db.Integer)
    exit_status = db.Column(db.Integer, nullable=False)
    trace_sha256 = db.Column(db.String(64), nullable=False)
    violations = db.Column(db.Integer, default=0)
    warnings = db.Column(db.Integer, default=0)
    sanctions = db.Column(db.Integer, default=0)
    report = db.Column(db.Text, nullable=False)
    created_at = db.Column(db.DateTime, default=datetime.utcnow)

    def summary(self):
        """One-line description used by ``host history``."""
        seed = '-' if self.seed is None else self.seed
        return (f"{self.id}\t{self.created_at:%Y-%m-%d %H:%M:%S}\t{self.scenario}\tseed={seed}\t"
                f"exit={self.exit_status}\tviolations={self.violations}\twarnings={self.warnings}\t"
                f"sanctions={self.sanctions}\ttrace={self.trace_sha256[:12]}")

    def __repr__(self):
        return f'<RunRecord {self.id}: {self.scenario} exit={self.exit_status}>'
