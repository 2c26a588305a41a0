"""Flask application factory module.

This module contains the application factory function that creates
and configures the host platform application.
"""

from flask import Flask
import os
from dotenv import load_dotenv
from .models import init_db
from .controllers.host_controller import host_bp
from .utils.trace import setup_logging

# Load environment variables from .env file
load_dotenv()

def create_app(config=None):
    """Create and configure the Flask application.

    Args:
        config (dict, optional): Settings overriding the environment

    Returns:
        Flask: Configured Flask application instance
    """
    app = Flask(__name__)

    # Configuration
    app.config['JAMUS_HOME'] = os.getenv('JAMUS_HOME', '/home/jamus')
    app.config['JAMUS_LOG_LEVEL'] = os.getenv('JAMUS_LOG_LEVEL', 'INFO')
    app.config['JAMUS_REPORT_DIR'] = os.getenv('JAMUS_REPORT_DIR', 'reports')
    app.config['DATABASE_URL'] = os.getenv('DATABASE_URL', 'sqlite:///jamus.db')
    app.config['SQLALCHEMY_DATABASE_URI'] = app.config['DATABASE_URL']
    app.config['SQLALCHEMY_TRACK_MODIFICATIONS'] = False
    if config:
        app.config.update(config)
        if 'DATABASE_URL' in config and 'SQLALCHEMY_DATABASE_URI' not in config:
            app.config['SQLALCHEMY_DATABASE_URI'] = config['DATABASE_URL']

    setup_logging(app.config['JAMUS_LOG_LEVEL'])
    app.logger.setLevel(app.config['JAMUS_LOG_LEVEL'])

    # Initialize database
    init_db(app)

    # Register blueprints
    app.register_blueprint(host_bp)

    return app
