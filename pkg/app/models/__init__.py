"""Database initialization module.

This module provides the SQLAlchemy database instance that stores the run
history of the host, and the function binding it to the application.
"""

from flask_sqlalchemy import SQLAlchemy

db = SQLAlchemy()

def init_db(app):
    """Initialize the database with the Flask application.

    Args:
        app (Flask): The Flask application instance
    """
    from . import run_record  # noqa: F401  registers the table

    db.init_app(app)
    with app.app_context():
        db.create_all()
