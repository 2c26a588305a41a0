"""Database migration management script.

This script provides commands for managing the run-history database with
Flask-Migrate, next to the ``host`` command group of the platform.
"""

from flask.cli import FlaskGroup
from flask_migrate import Migrate
from app import create_app
from app.models import db

app = create_app()
migrate = Migrate(app, db)
cli = FlaskGroup(create_app=lambda: app)

if __name__ == '__main__':
    cli()
