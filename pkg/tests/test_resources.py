import pytest

from app.errors import FreeUnderflow, HandleClosed, HandleLocked, InvalidEndpoint, InvalidPath, KindMismatch, Vetoed
from app.models.contract import MO, FilePermission
from app.models.resource import (
    AccessKind,
    AccessVerdict,
    EventType,
    HandleState,
    ResourceDescriptor,
    Verdict,
    normalize_path,
)
from app.services.resource_service import VirtualEnvironment, register_listener
from app.utils.trace import EventLog, format_event, parse_trace, render_trace

READ_WRITE = FilePermission.ALL


@pytest.fixture
def env():
    return VirtualEnvironment('JMailer', EventLog('JMailer'), files={'~/.jmailer/inbox': 100})


def types(env):
    return [event.type for event in env.log.events]


class TestPaths:
    @pytest.mark.parametrize('raw, expected', [
        ('~/.jmailer/', '~/.jmailer'),
        ('~//a/./b', '~/a/b'),
        ('~', '~'),
        ('/', '/'),
        ('/tmp//x/', '/tmp/x'),
    ])
    def test_normalize(self, raw, expected):
        assert normalize_path(raw) == expected

    @pytest.mark.parametrize('raw', ['', 'relative', '~/a/../b', '~user/a'])
    def test_refused(self, raw):
        with pytest.raises(InvalidPath):
            normalize_path(raw)

    def test_home_is_canonicalized(self, env):
        assert env.canonical_path('/home/jamus/.jmailer/outbox') == '~/.jmailer/outbox'
        assert env.canonical_path('/home/jamus') == '~'
        assert env.canonical_path('/home/jamusX/a') == '/home/jamusX/a'

    def test_descriptor_text_parses_back(self):
        for descriptor in (ResourceDescriptor.file('~/.jmailer/a'), ResourceDescriptor.socket('example.org', 25),
                           ResourceDescriptor.memory('JMailer')):
            assert ResourceDescriptor.parse(str(descriptor)) == descriptor


class TestHandles:
    def test_open_emits_created_and_broadcast(self, env):
        handle = env.open_file('~/.jmailer/inbox', FilePermission(read=True))
        assert types(env) == [EventType.CREATED, EventType.REGISTRY_BROADCAST]
        assert env.log.events[0].access == 'read'
        assert handle in env.registry

    def test_write_open_creates_missing_file(self, env):
        handle = env.open_file('/home/jamus/.jmailer/outbox', READ_WRITE)
        env.access(handle, AccessKind.WRITE, 1024)
        assert env.files['~/.jmailer/outbox'] == 1024
        assert handle.transferred == {AccessKind.WRITE: 1024}

    def test_read_open_of_missing_file(self, env):
        with pytest.raises(InvalidPath):
            env.open_file('~/.jmailer/missing', FilePermission(read=True))
        assert env.log.events == []

    def test_access_events(self, env):
        handle = env.open_file('~/.jmailer/inbox', READ_WRITE)
        verdict = env.access(handle, AccessKind.READ, 10)
        assert verdict.allowed
        completed = env.log.events[-1]
        assert completed.type is EventType.ACCESS_COMPLETED
        assert (completed.access, completed.amount, completed.verdict) == ('read', 10, Verdict.ALLOW)

    def test_sequence_numbers_increase(self, env):
        handle = env.open_file('~/.jmailer/inbox', READ_WRITE)
        env.access(handle, AccessKind.READ, 1)
        env.close(handle)
        numbers = [event.sequence_number for event in env.log.events]
        assert numbers == list(range(1, len(numbers) + 1))

    def test_closed_handle(self, env):
        handle = env.open_file('~/.jmailer/inbox', READ_WRITE)
        env.close(handle)
        assert handle not in env.registry
        with pytest.raises(HandleClosed):
            env.access(handle, AccessKind.READ, 1)
        with pytest.raises(HandleClosed):
            env.close(handle)

    def test_kind_mismatch(self, env):
        handle = env.open_file('~/.jmailer/inbox', READ_WRITE)
        with pytest.raises(KindMismatch):
            env.access(handle, AccessKind.SEND, 1)

    def test_invalid_endpoint(self, env):
        with pytest.raises(InvalidEndpoint):
            env.open_socket('not a host', 25)
        with pytest.raises(InvalidEndpoint):
            env.open_socket('example.org', 0)

    def test_shutdown_closes_in_creation_order(self, env):
        first = env.open_file('~/.jmailer/inbox', READ_WRITE)
        second = env.open_socket('example.org', 25)
        env.shutdown()
        destroyed = env.log.of_type(EventType.DESTROYED)
        assert [event.handle_id for event in destroyed] == [first.handle_id, second.handle_id]
        assert env.registry.live_handles() == []


class TestInterception:
    def test_reject_changes_no_ledger(self, env):
        handle = env.open_file('~/.jmailer/inbox', READ_WRITE)
        register_listener(handle, lambda event, h: AccessVerdict.reject('no')
                          if event.type is EventType.ACCESS_REQUESTED else None)
        before = env.snapshot()
        verdict = env.access(handle, AccessKind.WRITE, 50)
        assert verdict.outcome is Verdict.REJECT
        assert env.snapshot() == before
        assert env.log.events[-1].type is EventType.ACCESS_DENIED

    def test_lock_wins_over_reject(self, env):
        handle = env.open_file('~/.jmailer/inbox', READ_WRITE)
        register_listener(handle, lambda event, h: AccessVerdict.reject('first'))
        register_listener(handle, lambda event, h: AccessVerdict.lock('second'))
        verdict = env.access(handle, AccessKind.READ, 1)
        assert verdict.outcome is Verdict.LOCK
        assert handle.state is HandleState.LOCKED
        assert env.log.events[-1].type is EventType.HANDLE_LOCKED
        with pytest.raises(HandleLocked):
            env.access(handle, AccessKind.READ, 1)

    def test_cancelled_listener_is_silent(self, env):
        handle = env.open_file('~/.jmailer/inbox', READ_WRITE)
        subscription = register_listener(handle, lambda event, h: AccessVerdict.reject('no'))
        subscription.cancel()
        subscription.cancel()
        assert env.access(handle, AccessKind.READ, 1).allowed

    def test_creation_veto(self, env):
        register_listener(env.registry, lambda event, h: AccessVerdict.reject('not in contract'))
        with pytest.raises(Vetoed):
            env.open_file('~/.other', READ_WRITE)
        assert types(env) == [EventType.CREATED, EventType.REGISTRY_BROADCAST, EventType.VETOED,
                              EventType.DESTROYED]
        assert '~/.other' not in env.files
        assert env.registry.live_handles() == []


class TestMemory:
    def test_allocate_and_free(self, env):
        env.allocate(1 * MO)
        env.free(MO // 2)
        assert env.allocated == MO // 2
        memory = env.log.of_type(EventType.CREATED)
        assert [str(event.subject) for event in memory] == ['memory:JMailer']

    def test_free_underflow(self, env):
        env.allocate(10)
        with pytest.raises(FreeUnderflow):
            env.free(11)
        assert env.allocated == 10

    def test_positive_amounts(self, env):
        with pytest.raises(ValueError):
            env.allocate(0)
        with pytest.raises(ValueError):
            env.free(-1)


class TestTraceText:
    def test_format_uses_dashes(self, env):
        env.open_file('~/.jmailer/inbox', FilePermission(read=True))
        assert format_event(env.log.events[1]) == '2\tJMailer\tRegistryBroadcast\tfile:~/.jmailer/inbox\t-\t-\t-'

    def test_parse_rendered_trace(self, env):
        handle = env.open_file('~/.jmailer/inbox', READ_WRITE)
        env.access(handle, AccessKind.READ, 7)
        lines = parse_trace(render_trace(env.log.events))
        assert [line.type for line in lines] == types(env)
        assert lines[-1].amount == 7
        assert lines[-1].verdict is Verdict.ALLOW
