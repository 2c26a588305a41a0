"""Test configuration and fixtures for pytest.

This module contains pytest fixtures that can be used across all tests:
the application and its CLI runner, the JMailer contracts and capacity,
paths to the bundled scenarios and a generator of random scenarios.
"""

import os
import random
import sys
import pytest
from pathlib import Path

# Add the project root directory to Python path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from app import create_app
from app.models import db as _db
from app.models.contract import (
    KO,
    MO,
    AmendmentClause,
    AmendmentOp,
    Amendment,
    AvailabilityPolicy,
    Contract,
    FilePattern,
    FilePermission,
    FileQuota,
    MemoryPattern,
    MemoryPermission,
    MemoryQuota,
    ResourceUtilisationProfile,
)
from app.services.broker_service import PlatformCapacity, ResourceBroker
from app.utils.codec import decode_scenario

SCENARIO_DIR = Path(project_root) / 'scenarios'

BEST_EFFORT = AvailabilityPolicy.BEST_EFFORT
RESERVATION = AvailabilityPolicy.RESERVATION


@pytest.fixture(scope='session')
def app(tmp_path_factory):
    """Create application for the tests."""
    app = create_app({
        'TESTING': True,
        'DATABASE_URL': 'sqlite:///:memory:',
        'JAMUS_REPORT_DIR': str(tmp_path_factory.mktemp('reports')),
        'JAMUS_LOG_LEVEL': 'WARNING',
    })

    with app.app_context():
        _db.create_all()

    yield app

    with app.app_context():
        _db.session.remove()
        _db.drop_all()

@pytest.fixture(scope='function')
def runner(app):
    """CLI runner for the ``host`` commands."""
    return app.test_cli_runner()

@pytest.fixture(scope='function')
def db(app):
    """Database fixture for tests."""
    with app.app_context():
        _db.create_all()
        yield _db
        _db.session.remove()
        _db.drop_all()

@pytest.fixture
def scenario_path():
    """Path of a bundled scenario or contract file."""
    def path(name):
        return SCENARIO_DIR / name
    return path


# JMailer contracts

@pytest.fixture
def r1():
    return ResourceUtilisationProfile('r1', FilePattern('~/.jmailer'), FilePermission.ALL,
                                      FileQuota(500 * KO, 500 * KO), BEST_EFFORT)

@pytest.fixture
def r2():
    return ResourceUtilisationProfile('r2', FilePattern('~/.jaddrbook'), FilePermission.ALL,
                                      FileQuota(1 * MO, 1 * MO), BEST_EFFORT)

@pytest.fixture
def r3():
    return ResourceUtilisationProfile('r3', MemoryPattern(), MemoryPermission.ALL, MemoryQuota(1 * MO), RESERVATION)

@pytest.fixture
def r4():
    return ResourceUtilisationProfile('r4', MemoryPattern(), MemoryPermission.ALL, MemoryQuota(2 * MO), RESERVATION)

@pytest.fixture
def r5():
    return ResourceUtilisationProfile('r5', FilePattern('/tmp'), FilePermission.ALL,
                                      FileQuota(2 * MO, 2 * MO), BEST_EFFORT)

@pytest.fixture
def contract1(r1, r2, r4):
    return Contract('contract1', (r1, r2, r4))

@pytest.fixture
def contract2(r1, r3):
    return Contract('contract2', (r1, r3))

@pytest.fixture
def a1(r5):
    return Amendment('contract2', (AmendmentClause(AmendmentOp.ADD, r5),), 'a1')

@pytest.fixture
def capacity():
    """Home directory, /tmp and 2 Mo of memory."""
    return PlatformCapacity.from_profiles([
        (FilePattern('~'), FilePermission.ALL, FileQuota(10 * MO, 10 * MO)),
        (FilePattern('/tmp'), FilePermission.ALL, FileQuota(4 * MO, 4 * MO)),
        (MemoryPattern(), MemoryPermission.ALL, MemoryQuota(2 * MO)),
    ])

@pytest.fixture
def broker(capacity):
    return ResourceBroker(capacity)


# Random scenarios

FILE_PATHS = ['~/.a/x', '~/.a/b/y', '~/.a/seed', '~/.b/seed', '~/.b/new', '/tmp/z']
HOSTS = ['mail.example.com', 'web.example.com']
MODES = ['read', 'write', 'read+write']


def _file_profile(rng, profile_id, path):
    read, write = rng.choice([(True, True), (True, False), (False, True)])
    return {
        'id': profile_id,
        'pattern': {'kind': 'file', 'path': path},
        'permission': {'kind': 'file', 'read': read, 'write': write},
        'quota': {'kind': 'file', 'read_bytes': rng.randint(1, 8) * 512, 'write_bytes': rng.randint(1, 8) * 512},
        'policy': rng.choice(['best_effort', 'reservation']),
    }


def _component(rng, index):
    profiles = [_file_profile(rng, 'fa', '~/.a')]
    if rng.random() < 0.5:
        profiles.append(_file_profile(rng, 'fb', '~/.a/b'))
    if rng.random() < 0.7:
        profiles.append({
            'id': 'mem',
            'pattern': {'kind': 'memory'},
            'permission': {'kind': 'memory', 'allocate': True},
            'quota': {'kind': 'memory', 'bytes': rng.randint(1, 8) * KO},
            'policy': rng.choice(['best_effort', 'reservation']),
        })
    if rng.random() < 0.6:
        connect, accept = rng.choice([(True, False), (False, True), (True, True)])
        profiles.append({
            'id': 'net',
            'pattern': {'kind': 'socket', 'host': '*', 'port': rng.choice(['any', 25])},
            'permission': {'kind': 'socket', 'connect': connect, 'accept': accept},
            'quota': {'kind': 'socket', 'sent_bytes': rng.randint(1, 8) * 512,
                      'received_bytes': rng.randint(1, 8) * 512},
        })

    amendments = [{'id': 'm1', 'contract_id': 'k',
                   'clauses': [{'op': 'modify', 'target_profile_id': 'fa',
                                'profile': _file_profile(rng, 'fa', rng.choice(['~/.a', '~']))}]},
                  {'id': 'm2', 'contract_id': 'k',
                   'clauses': [{'op': 'add', 'profile': _file_profile(rng, 'ft', '/tmp')}]}]
    if any(profile['id'] == 'fb' for profile in profiles):
        amendments.append({'id': 'm3', 'contract_id': 'k',
                           'clauses': [{'op': 'remove', 'target_profile_id': 'fb'}]})
    amendment_ids = [amendment['id'] for amendment in amendments]

    script, aliases = [], []
    for step in range(rng.randint(4, 16)):
        roll = rng.random()
        if not aliases or roll < 0.2:
            alias = f"h{step}"
            if rng.random() < 0.75:
                script.append({'op': 'open_file', 'path': rng.choice(FILE_PATHS), 'mode': rng.choice(MODES),
                               'as': alias})
            else:
                script.append({'op': 'open_socket', 'host': rng.choice(HOSTS), 'port': rng.choice([25, 80]),
                               'as': alias})
            aliases.append(alias)
        elif roll < 0.6:
            script.append({'op': rng.choice(['read', 'write', 'send', 'receive']), 'handle': rng.choice(aliases),
                           'bytes': rng.randint(0, 2048)})
        elif roll < 0.75:
            script.append({'op': rng.choice(['allocate', 'free']), 'bytes': rng.randint(1, 4096)})
        elif roll < 0.85:
            script.append({'op': 'close', 'handle': rng.choice(aliases)})
        elif roll < 0.97:
            script.append({'op': 'amend', 'amendment': rng.choice(amendment_ids)})
        else:
            script.append({'op': 'terminate'})

    component = {
        'id': f"c{index}",
        'contracts': [{'id': 'k', 'profiles': profiles}],
        'subscribe': 'k',
        'amendments': amendments,
        'files': {'~/.a/seed': 2048, '~/.b/seed': 512},
        'script': script,
    }
    reaction = rng.choice([None, {'amend': 'm1'}, {'terminate': True}])
    if reaction is not None:
        component['on_warning'] = reaction
    return component


def random_scenario_document(seed):
    """A valid scenario exercising every step kind, drawn from ``seed``."""
    rng = random.Random(seed)
    capacity = [
        {'pattern': {'kind': 'file', 'path': '~'},
         'permission': {'kind': 'file', 'read': True, 'write': True},
         'quota': {'kind': 'file', 'read_bytes': rng.randint(4, 64) * KO, 'write_bytes': rng.randint(4, 64) * KO}},
        {'pattern': {'kind': 'memory'},
         'permission': {'kind': 'memory', 'allocate': True},
         'quota': {'kind': 'memory', 'bytes': rng.randint(2, 24) * KO}},
        {'pattern': {'kind': 'socket', 'host': '*', 'port': 'any'},
         'permission': {'kind': 'socket', 'connect': True, 'accept': True},
         'quota': {'kind': 'socket', 'sent_bytes': rng.randint(1, 16) * KO, 'received_bytes': rng.randint(1, 16) * KO}},
    ]
    if rng.random() < 0.7:
        capacity.append({'pattern': {'kind': 'file', 'path': '/tmp'},
                         'permission': {'kind': 'file', 'read': True, 'write': True},
                         'quota': {'kind': 'file', 'read_bytes': 8 * KO, 'write_bytes': 8 * KO}})

    sanctions = []
    if rng.random() < 0.7:
        sanctions.append({'id': 'files', 'kind': 'deferred', 'pattern': {'kind': 'file', 'path': '~/.a'},
                          'action': rng.choice(['reject', 'lock']), 'threshold': rng.randint(1, 3)})
    if rng.random() < 0.5:
        sanctions.append({'id': 'web', 'kind': 'immediate', 'pattern': {'kind': 'socket', 'host': '*', 'port': 80},
                          'action': rng.choice(['reject', 'lock'])})
    if rng.random() < 0.4:
        sanctions.append({'id': 'memory', 'kind': 'deferred', 'pattern': {'kind': 'memory'},
                          'action': rng.choice(['reject', 'lock']), 'threshold': rng.randint(1, 3)})

    return {
        'schema_version': 1,
        'name': f"random-{seed}",
        'capacity': capacity,
        'sanctions': sanctions,
        'components': [_component(rng, index) for index in range(rng.randint(1, 3))],
    }


@pytest.fixture
def make_scenario():
    """Build a random scenario from a seed."""
    def make(seed):
        return decode_scenario(random_scenario_document(seed))
    return make
