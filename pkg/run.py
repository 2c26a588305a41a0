"""Application entry point.

Runs the ``host`` commands directly, e.g. ``python run.py run scenarios/jmailer.json``.
"""

from app import create_app
from app.controllers.host_controller import host_bp

app = create_app()

if __name__ == '__main__':
    with app.app_context():
        host_bp.cli.main(prog_name='host')
