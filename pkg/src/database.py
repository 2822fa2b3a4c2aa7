"""
Optional run history: every evolution and sweep point can be recorded in a
SQL database (SQLite by default) for later comparison.
"""
import json
import logging
from contextlib import contextmanager
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Generator, List, Optional

import pandas as pd
from sqlalchemy import (
    CheckConstraint, Column, DateTime, Float, ForeignKey, Index, Integer, String, Text, create_engine, event
)
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, declarative_base, relationship, sessionmaker

from .settings import get_runtime_config

logger = logging.getLogger(__name__)

DEFAULT_DATABASE_URL = 'sqlite:///data/hamsim_runs.db'

_engines: Dict[str, Engine] = {}
_session_factories: Dict[str, sessionmaker] = {}


def resolve_database_url(url: Optional[str] = None) -> str:
    """Explicit URL, else HAMSIM_DATABASE_URL, else the default SQLite file."""
    url = url or get_runtime_config()['database_url'] or DEFAULT_DATABASE_URL
    if url.startswith('sqlite:///') and ':memory:' not in url:
        db_path = Path(url.split('///', 1)[-1])
        db_path.parent.mkdir(parents=True, exist_ok=True)
    return url


def get_engine(url: Optional[str] = None) -> Engine:
    """Create (once per URL) and configure the SQLAlchemy engine."""
    url = resolve_database_url(url)
    if url in _engines:
        return _engines[url]

    connect_args = {}
    if url.startswith('sqlite'):
        connect_args['check_same_thread'] = False  # sweep workers share the engine
    engine = create_engine(url, connect_args=connect_args)

    if url.startswith('sqlite'):
        @event.listens_for(engine, 'connect')
        def set_sqlite_pragma(dbapi_connection, connection_record):
            cursor = dbapi_connection.cursor()
            cursor.execute('PRAGMA foreign_keys=ON')
            cursor.close()

    Base.metadata.create_all(bind=engine)
    _engines[url] = engine
    _session_factories[url] = sessionmaker(autocommit=False, autoflush=False, bind=engine)
    logger.info(f"Run history database: {url}")
    return engine


class TimestampMixin:
    """Mixin that adds timestamp fields to models."""
    created_at = Column(DateTime, default=datetime.utcnow, nullable=False,
                        comment='Timestamp when the record was created')


Base = declarative_base()


class RunRow(Base, TimestampMixin):
    """One evolution run."""
    __tablename__ = 'runs'

    id = Column(Integer, primary_key=True, index=True, comment='Primary key')
    label = Column(String(200), index=True, comment='Hamiltonian source (file name or family)')
    mode = Column(String(20), nullable=False, index=True, comment='psd, hermitian or density')
    n = Column(Integer, nullable=False, comment='Number of qubits')
    t = Column(Float, nullable=False, comment='Evolution time')
    eps = Column(Float, nullable=False)
    delta = Column(Float, nullable=False)
    K = Column(Integer, nullable=False, comment='Truncation order')
    M = Column(Integer, nullable=False, comment='Sample count')
    alpha = Column(Float, nullable=False, default=0.0, comment='Trace shift')
    seed = Column(Integer, nullable=False)
    error_vs_exact = Column(Float, nullable=True, comment='‖ψ̂ - e^{iHt}ψ‖ when computed')
    total_ms = Column(Float, nullable=True, comment='Total wall time in milliseconds')
    payload = Column(Text, nullable=False, comment='Full run record as JSON')

    sweep_points = relationship('SweepPointRow', back_populates='run', cascade='all, delete-orphan')

    __table_args__ = (
        CheckConstraint('K >= 1', name='positive_order'),
        CheckConstraint('M >= 1', name='positive_samples'),
        Index('idx_run_mode_n', 'mode', 'n'),
    )

    def __repr__(self) -> str:
        return f"<RunRow(id={self.id}, mode='{self.mode}', n={self.n}, K={self.K}, M={self.M})>"

    def to_dict(self) -> Dict[str, Any]:
        return json.loads(self.payload)


class SweepPointRow(Base, TimestampMixin):
    """One grid point of a convergence sweep."""
    __tablename__ = 'sweep_points'

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey('runs.id', ondelete='CASCADE'), nullable=False, index=True,
                    comment='Base run the sweep varied')
    axis = Column(String(10), nullable=False, comment='M, K or t')
    axis_value = Column(Float, nullable=False)
    seed_count = Column(Integer, nullable=False)
    median_error = Column(Float, nullable=False)
    q10 = Column(Float, nullable=False)
    q90 = Column(Float, nullable=False)
    wall_ms = Column(Float, nullable=False)

    run = relationship('RunRow', back_populates='sweep_points')

    def __repr__(self) -> str:
        return f"<SweepPointRow(axis='{self.axis}', value={self.axis_value}, median={self.median_error})>"


@contextmanager
def get_db_session(url: Optional[str] = None, commit: bool = True) -> Generator[Session, None, None]:
    """
    Session with automatic transaction handling: commit on success (unless
    ``commit`` is False), roll back and log on error.
    """
    get_engine(url)
    session = _session_factories[resolve_database_url(url)]()
    try:
        yield session
        if commit:
            session.commit()
    except Exception as e:
        session.rollback()
        logger.error("Database error: %s", str(e), exc_info=True)
        raise
    finally:
        session.close()


def save_run(record: Dict[str, Any], url: Optional[str] = None) -> int:
    """Store a run record (as produced by RunRecord.to_dict) and return its id."""
    plan = record['plan']
    wall = record.get('wallTimes') or {}
    row = RunRow(
        label=record.get('label'),
        mode=plan['mode'],
        n=record['n'],
        t=plan['t'],
        eps=plan['eps'],
        delta=plan['delta'],
        K=plan['K'],
        M=plan['M'],
        alpha=plan.get('alpha', 0.0),
        seed=plan['seed'],
        error_vs_exact=record.get('errorVsExact'),
        total_ms=wall.get('total'),
        payload=json.dumps(record, sort_keys=True),
    )
    with get_db_session(url) as session:
        session.add(row)
        session.flush()
        run_id = row.id
    logger.info(f"Recorded run {run_id}")
    return run_id


def save_sweep(run_id: int, axis: str, table: pd.DataFrame, url: Optional[str] = None) -> int:
    """Store the rows of a sweep table under an existing run; returns the row count."""
    with get_db_session(url) as session:
        for item in table.to_dict(orient='records'):
            session.add(SweepPointRow(
                run_id=run_id,
                axis=axis,
                axis_value=float(item['axisValue']),
                seed_count=int(item['seedCount']),
                median_error=float(item['medianError']),
                q10=float(item['q10']),
                q90=float(item['q90']),
                wall_ms=float(item['wallMs']),
            ))
    logger.info(f"Recorded {len(table)} sweep points for run {run_id}")
    return len(table)


def list_runs(url: Optional[str] = None, mode: Optional[str] = None, limit: int = 50) -> List[Dict[str, Any]]:
    """Most recent runs first."""
    with get_db_session(url, commit=False) as session:
        query = session.query(RunRow)
        if mode:
            query = query.filter(RunRow.mode == mode)
        rows = query.order_by(RunRow.id.desc()).limit(limit).all()
        return [
            {'id': r.id, 'label': r.label, 'mode': r.mode, 'n': r.n, 't': r.t, 'K': r.K, 'M': r.M,
             'seed': r.seed, 'errorVsExact': r.error_vs_exact, 'createdAt': r.created_at.isoformat()}
            for r in rows
        ]


def runs_dataframe(url: Optional[str] = None) -> pd.DataFrame:
    """All runs as a DataFrame, for exports."""
    return pd.DataFrame(list_runs(url, limit=10 ** 9))
