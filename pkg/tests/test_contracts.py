import pytest
from hypothesis import given, strategies as st

from app.errors import (
    ContractIdMismatch,
    DuplicateProfileId,
    InvalidAmendment,
    InvalidPattern,
    KindMismatch,
    UnknownTargetProfile,
)
from app.models.contract import (
    ANY_PORT,
    KO,
    Amendment,
    AmendmentClause,
    AmendmentOp,
    Contract,
    FilePattern,
    FilePermission,
    FileQuota,
    IssueCode,
    MemoryPattern,
    MemoryPermission,
    MemoryQuota,
    ResourceUtilisationProfile,
    SocketPattern,
    apply_amendment,
    matches,
    parse_permission,
    permits,
    select_most_specific,
    validate_contract,
)
from app.models.resource import AccessKind, ResourceDescriptor, ResourceKind


def file_profile(profile_id, path, read=True, write=True, quota=KO):
    return ResourceUtilisationProfile(profile_id, FilePattern(path), FilePermission(read, write),
                                      FileQuota(quota, quota))


class TestMatching:
    def test_file_pattern_matches_subtree(self):
        assert matches(FilePattern('~/.jmailer'), ResourceDescriptor.file('~/.jmailer/drafts/a.txt'))

    def test_file_pattern_matches_its_own_path(self):
        assert matches(FilePattern('~/.jmailer'), ResourceDescriptor.file('~/.jmailer'))

    def test_file_pattern_is_segment_aware(self):
        assert not matches(FilePattern('~/.jmailer'), ResourceDescriptor.file('~/.jmailerX/a.txt'))

    def test_home_and_root_are_distinct_trees(self):
        assert not matches(FilePattern('/'), ResourceDescriptor.file('~/.jmailer/a'))
        assert matches(FilePattern('/'), ResourceDescriptor.file('/tmp/a'))

    def test_socket_wildcard_host(self):
        assert matches(SocketPattern('*', 80), ResourceDescriptor.socket('example.org', 80))
        assert not matches(SocketPattern('*', 80), ResourceDescriptor.socket('example.org', 25))
        assert matches(SocketPattern('example.org', ANY_PORT), ResourceDescriptor.socket('example.org', 25))

    def test_memory_pattern_matches_any_pool(self):
        assert matches(MemoryPattern(), ResourceDescriptor.memory('JMailer'))
        assert not matches(MemoryPattern(), ResourceDescriptor.file('~/a'))

    def test_invalid_patterns(self):
        with pytest.raises(InvalidPattern):
            FilePattern('relative/path')
        with pytest.raises(InvalidPattern):
            SocketPattern('bad host!', 80)
        with pytest.raises(InvalidPattern):
            SocketPattern('*', 70000)

    def test_most_specific_wins(self):
        patterns = [FilePattern('~'), FilePattern('~/.jmailer/drafts'), FilePattern('~/.jmailer')]
        descriptor = ResourceDescriptor.file('~/.jmailer/drafts/a')
        chosen = select_most_specific([p for p in patterns if p.matches(descriptor)], lambda p: p)
        assert chosen == FilePattern('~/.jmailer/drafts')

    def test_ties_do_not_depend_on_order(self):
        first = [SocketPattern('example.org', ANY_PORT), SocketPattern('*', 80)]
        assert select_most_specific(first, lambda p: p) == select_most_specific(first[::-1], lambda p: p)

    @given(st.lists(st.sampled_from(['a', 'b', 'c']), min_size=1, max_size=5),
           st.lists(st.sampled_from(['a', 'b', 'c']), max_size=3),
           st.lists(st.sampled_from(['a', 'b', 'c']), max_size=3))
    def test_file_matching_is_monotone(self, prefix, extension, rest):
        shorter = FilePattern('~/' + '/'.join(prefix))
        longer = FilePattern('~/' + '/'.join(prefix + extension))
        descriptor = ResourceDescriptor.file('~/' + '/'.join(prefix + extension + rest))
        assert longer.matches(descriptor)
        assert shorter.matches(descriptor)


class TestPermissions:
    def test_file_all_permits_write(self, r1):
        assert permits(r1, AccessKind.WRITE)

    def test_unset_flag_refuses(self):
        assert not permits(file_profile('ro', '~/a', write=False), AccessKind.WRITE)

    def test_memory_allocate(self, r3):
        assert permits(r3, AccessKind.ALLOCATE)
        assert permits(r3, AccessKind.FREE)

    def test_kind_mismatch(self, r1):
        with pytest.raises(KindMismatch):
            permits(r1, AccessKind.SEND)

    def test_labels_round_trip(self):
        assert FilePermission.ALL.label == 'read+write'
        assert parse_permission(ResourceKind.FILE, 'read') == FilePermission(read=True)
        assert parse_permission(ResourceKind.MEMORY, 'allocate') == MemoryPermission.ALL


class TestAmendments:
    def test_add_r5(self, contract2, a1):
        amended = apply_amendment(contract2, a1)
        assert amended.profile_ids == ['r1', 'r3', 'r5']
        assert contract2.profile_ids == ['r1', 'r3']

    def test_remove_then_add_replaces(self, contract2, r1):
        replacement = file_profile('r1', '~/.jmailer', quota=2 * KO)
        amendment = Amendment('contract2', (AmendmentClause(AmendmentOp.REMOVE, target_profile_id='r1'),
                                            AmendmentClause(AmendmentOp.ADD, replacement)))
        amended = apply_amendment(contract2, amendment)
        assert set(amended.profiles) == {replacement, contract2.profile('r3')}

    def test_modify_keeps_the_target_id(self, contract2):
        payload = file_profile('other', '~/.mail', read=True, write=False)
        amendment = Amendment('contract2', (AmendmentClause(AmendmentOp.MODIFY, payload, 'r1'),))
        amended = apply_amendment(contract2, amendment)
        assert amended.profile('r1').pattern == FilePattern('~/.mail')
        assert amended.profile_ids == ['r1', 'r3']

    def test_remove_add_equals_modify(self, contract2):
        payload = file_profile('r1', '~/.mail')
        via_modify = apply_amendment(contract2, Amendment('contract2', (
            AmendmentClause(AmendmentOp.MODIFY, payload, 'r1'),)))
        via_remove_add = apply_amendment(contract2, Amendment('contract2', (
            AmendmentClause(AmendmentOp.REMOVE, target_profile_id='r1'),
            AmendmentClause(AmendmentOp.ADD, payload))))
        assert set(via_modify.profiles) == set(via_remove_add.profiles)

    def test_unknown_target(self, contract2):
        with pytest.raises(UnknownTargetProfile):
            apply_amendment(contract2, Amendment('contract2', (
                AmendmentClause(AmendmentOp.REMOVE, target_profile_id='r9'),)))

    def test_contract_id_mismatch(self, contract1, a1):
        with pytest.raises(ContractIdMismatch):
            apply_amendment(contract1, a1)

    def test_duplicate_add(self, contract2, r1):
        with pytest.raises(DuplicateProfileId):
            apply_amendment(contract2, Amendment('contract2', (AmendmentClause(AmendmentOp.ADD, r1),)))

    def test_clause_shape(self, r1):
        with pytest.raises(InvalidAmendment):
            AmendmentClause(AmendmentOp.ADD, r1, 'r1')
        with pytest.raises(InvalidAmendment):
            AmendmentClause(AmendmentOp.MODIFY, r1)
        with pytest.raises(InvalidAmendment):
            Amendment('contract2', ())

    @given(st.lists(st.sampled_from(['~/a', '~/b', '/tmp', '~/a/b']), min_size=1, max_size=4),
           st.sampled_from(['~/new', '/var']))
    def test_add_is_pure_and_counts(self, paths, added_path):
        contract = Contract('c', tuple(file_profile(f"p{i}", path) for i, path in enumerate(paths)))
        added = file_profile('added', added_path)
        amendment = Amendment('c', (AmendmentClause(AmendmentOp.ADD, added),))
        first = apply_amendment(contract, amendment)
        assert first == apply_amendment(contract, amendment)
        assert len(first.profiles) == len(contract.profiles) + 1
        assert added in first.profiles
        assert len(contract.profiles) == len(paths)


class TestValidation:
    def test_contract1_is_valid(self, contract1):
        assert validate_contract(contract1) == []

    def test_two_memory_profiles(self, r3, r4):
        issues = validate_contract(Contract('mem', (r3, r4)))
        assert [issue.code for issue in issues] == [IssueCode.DUPLICATE_MEMORY_PROFILE]

    def test_empty_contract(self):
        assert [issue.code for issue in validate_contract(Contract('empty'))] == [IssueCode.EMPTY_CONTRACT]

    def test_duplicate_ids_and_kinds(self, r1):
        bad = ResourceUtilisationProfile('m', MemoryPattern(), FilePermission.ALL, MemoryQuota(KO))
        codes = [issue.code for issue in validate_contract(Contract('c', (r1, r1, bad)))]
        assert IssueCode.DUPLICATE_PROFILE_ID in codes
        assert IssueCode.KIND_MISMATCH in codes

    def test_empty_permission(self):
        profile = ResourceUtilisationProfile('m', MemoryPattern(), MemoryPermission(), MemoryQuota(KO))
        assert [issue.code for issue in validate_contract(Contract('c', (profile,)))] == \
            [IssueCode.EMPTY_PERMISSION]
