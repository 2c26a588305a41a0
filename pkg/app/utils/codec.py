"""Utility module for the JSON documents of the platform.

Scenario, contract and capacity files are validated against JSON schemas
with jsonschema before being decoded into model objects. Decoding errors
are reported as ``SchemaError`` carrying the JSON pointer of the offending
element, or the line number for syntax errors. Output documents are dumped
with sorted keys so identical runs give identical bytes.
"""

import json
import logging
from pathlib import Path
from typing import Any, Iterable, List

from jsonschema import Draft202012Validator
from jsonschema.exceptions import best_match

from ..errors import InvalidAmendment, InvalidPattern, InvalidQuota, SchemaError
from ..models.contract import (
    ANY_PORT,
    PERMISSION_TYPES,
    QUOTA_TYPES,
    Amendment,
    AmendmentClause,
    AmendmentOp,
    AvailabilityPolicy,
    Contract,
    FilePattern,
    MemoryPattern,
    ResourceUtilisationProfile,
    SocketPattern,
    is_valid_host,
    parse_permission,
)
from ..models.resource import ResourceKind
from ..models.sanction import Sanction, SanctionAction, SanctionKind
from ..models.scenario import (
    SCHEMA_VERSION,
    CapacitySpec,
    ComponentSpec,
    Scenario,
    ScriptStep,
    StepOp,
    WarningHandler,
)
from .trace import create_directory

logger = logging.getLogger(__name__)

BYTES = {'type': 'integer', 'minimum': 0}
IDENTIFIER = {'type': 'string', 'minLength': 1}
KINDS = [kind.value for kind in ResourceKind]

PATTERN_SCHEMA = {
    'type': 'object',
    'required': ['kind'],
    'properties': {
        'kind': {'enum': KINDS},
        'path': {'type': 'string', 'minLength': 1},
        'host': {'type': 'string', 'minLength': 1},
        'port': {'anyOf': [{'type': 'integer', 'minimum': 1, 'maximum': 65535}, {'const': 'any'}]},
    },
    'allOf': [
        {'if': {'properties': {'kind': {'const': 'file'}}},
         'then': {'required': ['path'], 'additionalProperties': False,
                  'properties': {'kind': True, 'path': True}}},
        {'if': {'properties': {'kind': {'const': 'socket'}}},
         'then': {'required': ['host', 'port'], 'additionalProperties': False,
                  'properties': {'kind': True, 'host': True, 'port': True}}},
        {'if': {'properties': {'kind': {'const': 'memory'}}},
         'then': {'additionalProperties': False, 'properties': {'kind': True}}},
    ],
}


def _kind_variant(fields: dict) -> dict:
    """Schema of an object tagged by ``kind`` whose other keys depend on the kind."""
    variants = []
    for kind, names in fields.items():
        variants.append({
            'if': {'properties': {'kind': {'const': kind}}},
            'then': {
                'additionalProperties': False,
                'properties': {'kind': True, **{name: True for name in names}},
            },
        })
    properties = {'kind': {'enum': KINDS}}
    for names in fields.values():
        properties.update(names)
    return {'type': 'object', 'required': ['kind'], 'properties': properties, 'allOf': variants}


PERMISSION_SCHEMA = _kind_variant({
    'file': {'read': {'type': 'boolean'}, 'write': {'type': 'boolean'}},
    'socket': {'connect': {'type': 'boolean'}, 'accept': {'type': 'boolean'}},
    'memory': {'allocate': {'type': 'boolean'}},
})

QUOTA_SCHEMA = _kind_variant({
    'file': {'read_bytes': BYTES, 'write_bytes': BYTES},
    'socket': {'sent_bytes': BYTES, 'received_bytes': BYTES},
    'memory': {'bytes': BYTES},
})

PROFILE_SCHEMA = {
    'type': 'object',
    'required': ['id', 'pattern', 'permission', 'quota'],
    'additionalProperties': False,
    'properties': {
        'id': IDENTIFIER,
        'pattern': {'$ref': '#/$defs/pattern'},
        'permission': {'$ref': '#/$defs/permission'},
        'quota': {'$ref': '#/$defs/quota'},
        'policy': {'enum': [policy.value for policy in AvailabilityPolicy]},
    },
}

CONTRACT_SCHEMA = {
    'type': 'object',
    'required': ['id', 'profiles'],
    'properties': {
        'schema_version': {'const': SCHEMA_VERSION},
        'id': IDENTIFIER,
        'profiles': {'type': 'array', 'items': {'$ref': '#/$defs/profile'}},
    },
    'additionalProperties': False,
}

AMENDMENT_SCHEMA = {
    'type': 'object',
    'required': ['contract_id', 'clauses'],
    'additionalProperties': False,
    'properties': {
        'id': IDENTIFIER,
        'contract_id': IDENTIFIER,
        'clauses': {
            'type': 'array',
            'minItems': 1,
            'items': {
                'type': 'object',
                'required': ['op'],
                'additionalProperties': False,
                'properties': {
                    'op': {'enum': [op.value for op in AmendmentOp]},
                    'profile': {'$ref': '#/$defs/profile'},
                    'target_profile_id': IDENTIFIER,
                },
            },
        },
    },
}

CAPACITY_ENTRY_SCHEMA = {
    'type': 'object',
    'required': ['pattern', 'permission', 'quota'],
    'additionalProperties': False,
    'properties': {
        'pattern': {'$ref': '#/$defs/pattern'},
        'permission': {'$ref': '#/$defs/permission'},
        'quota': {'$ref': '#/$defs/quota'},
    },
}

SANCTION_SCHEMA = {
    'type': 'object',
    'required': ['kind', 'pattern', 'action'],
    'additionalProperties': False,
    'properties': {
        'id': IDENTIFIER,
        'kind': {'enum': [kind.value for kind in SanctionKind]},
        'pattern': {'$ref': '#/$defs/pattern'},
        'action': {'enum': [action.value for action in SanctionAction]},
        'threshold': {'type': 'integer', 'minimum': 1},
    },
    'if': {'properties': {'kind': {'const': 'deferred'}}},
    'then': {'required': ['threshold']},
    'else': {'not': {'required': ['threshold']}},
}

STEP_FIELDS = {
    StepOp.OPEN_FILE: {'path': {'type': 'string', 'minLength': 1},
                       'mode': {'enum': ['read', 'write', 'read+write']},
                       'as': IDENTIFIER},
    StepOp.OPEN_SOCKET: {'host': {'type': 'string', 'minLength': 1},
                         'port': {'type': 'integer', 'minimum': 1, 'maximum': 65535},
                         'as': IDENTIFIER},
    StepOp.READ: {'handle': IDENTIFIER, 'bytes': BYTES},
    StepOp.WRITE: {'handle': IDENTIFIER, 'bytes': BYTES},
    StepOp.SEND: {'handle': IDENTIFIER, 'bytes': BYTES},
    StepOp.RECEIVE: {'handle': IDENTIFIER, 'bytes': BYTES},
    StepOp.CLOSE: {'handle': IDENTIFIER},
    StepOp.ALLOCATE: {'bytes': {'type': 'integer', 'minimum': 1}},
    StepOp.FREE: {'bytes': {'type': 'integer', 'minimum': 1}},
    StepOp.AMEND: {'amendment': IDENTIFIER},
    StepOp.TERMINATE: {},
}

STEP_SCHEMA = {
    'type': 'object',
    'required': ['op'],
    'properties': {'op': {'enum': [op.value for op in StepOp]}},
    'allOf': [
        {
            'if': {'properties': {'op': {'const': op.value}}},
            'then': {
                'required': list(names),
                'additionalProperties': False,
                'properties': {'op': True, **names},
            },
        }
        for op, names in STEP_FIELDS.items()
    ],
}

COMPONENT_SCHEMA = {
    'type': 'object',
    'required': ['id', 'contracts'],
    'additionalProperties': False,
    'properties': {
        'id': IDENTIFIER,
        'contracts': {'type': 'array', 'items': {'$ref': '#/$defs/contract'}},
        'subscribe': IDENTIFIER,
        'amendments': {'type': 'array', 'items': {'$ref': '#/$defs/amendment'}},
        'files': {'type': 'object', 'additionalProperties': BYTES},
        'on_warning': {
            'oneOf': [
                {'type': 'object', 'required': ['amend'], 'additionalProperties': False,
                 'properties': {'amend': IDENTIFIER}},
                {'type': 'object', 'required': ['terminate'], 'additionalProperties': False,
                 'properties': {'terminate': {'const': True}}},
            ],
        },
        'script': {'type': 'array', 'items': {'$ref': '#/$defs/step'}},
    },
}

DEFS = {
    'pattern': PATTERN_SCHEMA,
    'permission': PERMISSION_SCHEMA,
    'quota': QUOTA_SCHEMA,
    'profile': PROFILE_SCHEMA,
    'contract': CONTRACT_SCHEMA,
    'amendment': AMENDMENT_SCHEMA,
    'capacity_entry': CAPACITY_ENTRY_SCHEMA,
    'sanction': SANCTION_SCHEMA,
    'step': STEP_SCHEMA,
    'component': COMPONENT_SCHEMA,
}

SCENARIO_SCHEMA = {
    '$defs': DEFS,
    'type': 'object',
    'required': ['schema_version', 'capacity', 'components'],
    'additionalProperties': False,
    'properties': {
        'schema_version': {'const': SCHEMA_VERSION},
        'name': {'type': 'string'},
        'home': {'type': 'string', 'pattern': '^/'},
        'capacity': {'type': 'array', 'items': {'$ref': '#/$defs/capacity_entry'}},
        'sanctions': {'type': 'array', 'items': {'$ref': '#/$defs/sanction'}},
        'components': {'type': 'array', 'items': {'$ref': '#/$defs/component'}},
    },
}

CONTRACT_FILE_SCHEMA = {'$defs': DEFS, '$ref': '#/$defs/contract'}

CAPACITY_FILE_SCHEMA = {
    '$defs': DEFS,
    'type': 'object',
    'required': ['schema_version', 'capacity'],
    'additionalProperties': False,
    'properties': {
        'schema_version': {'const': SCHEMA_VERSION},
        'capacity': {'type': 'array', 'items': {'$ref': '#/$defs/capacity_entry'}},
    },
}


# Reading

def _pointer(parts: Iterable[Any]) -> str:
    return '/' + '/'.join(str(part) for part in parts)


def load_json(text: str) -> Any:
    """Parse JSON text.

    Raises:
        SchemaError: With the line number of a syntax error
    """
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(e.msg, line=e.lineno) from e


def read_json(path: Path) -> Any:
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise SchemaError(f"cannot read {path}: {e.strerror}") from e
    return load_json(text)


def validate(document: Any, schema: dict):
    """Raise the most relevant schema violation of ``document``, if any."""
    error = best_match(Draft202012Validator(schema).iter_errors(document))
    if error is not None:
        raise SchemaError(error.message, path=_pointer(error.absolute_path))


class _Decoder:
    """Builds model objects, keeping the JSON pointer of the current element."""

    def __init__(self):
        self._path: List[Any] = []

    def at(self, *parts):
        decoder = _Decoder()
        decoder._path = self._path + list(parts)
        return decoder

    def fail(self, message: str):
        raise SchemaError(message, path=_pointer(self._path))

    def pattern(self, data: dict):
        try:
            if data['kind'] == 'file':
                return FilePattern(data['path'])
            if data['kind'] == 'socket':
                port = ANY_PORT if data['port'] == 'any' else data['port']
                return SocketPattern(data['host'], port)
            return MemoryPattern()
        except InvalidPattern as e:
            self.fail(str(e))

    def permission(self, data: dict):
        permission_type = PERMISSION_TYPES[ResourceKind(data['kind'])]
        return permission_type(**{name: value for name, value in data.items() if name != 'kind'})

    def quota(self, data: dict):
        quota_type = QUOTA_TYPES[ResourceKind(data['kind'])]
        try:
            return quota_type(**{name: value for name, value in data.items() if name != 'kind'})
        except InvalidQuota as e:
            self.fail(str(e))

    def profile(self, data: dict) -> ResourceUtilisationProfile:
        return ResourceUtilisationProfile(
            id=data['id'],
            pattern=self.at('pattern').pattern(data['pattern']),
            permission=self.at('permission').permission(data['permission']),
            quota=self.at('quota').quota(data['quota']),
            policy=AvailabilityPolicy(data.get('policy', AvailabilityPolicy.BEST_EFFORT.value)),
        )

    def contract(self, data: dict) -> Contract:
        profiles = tuple(self.at('profiles', index).profile(item) for index, item in enumerate(data['profiles']))
        return Contract(data['id'], profiles)

    def amendment(self, data: dict) -> Amendment:
        clauses = []
        for index, item in enumerate(data['clauses']):
            at = self.at('clauses', index)
            profile = at.at('profile').profile(item['profile']) if 'profile' in item else None
            try:
                clauses.append(AmendmentClause(AmendmentOp(item['op']), profile, item.get('target_profile_id')))
            except InvalidAmendment as e:
                at.fail(str(e))
        return Amendment(data['contract_id'], tuple(clauses), data.get('id'))

    def capacity_entry(self, data: dict) -> CapacitySpec:
        return CapacitySpec(
            self.at('pattern').pattern(data['pattern']),
            self.at('permission').permission(data['permission']),
            self.at('quota').quota(data['quota']),
        )

    def capacity(self, items: list) -> tuple:
        entries = tuple(self.at(index).capacity_entry(item) for index, item in enumerate(items))
        patterns = [entry.pattern for entry in entries]
        for index, pattern in enumerate(patterns):
            if pattern in patterns[:index]:
                self.at(index).fail(f"capacity pattern {pattern} declared twice")
        return entries

    def sanction(self, data: dict) -> Sanction:
        pattern = self.at('pattern').pattern(data['pattern'])
        action = SanctionAction(data['action'])
        if data['kind'] == SanctionKind.IMMEDIATE.value:
            return Sanction.immediate(pattern, action, data.get('id'))
        return Sanction.deferred(pattern, action, data['threshold'], data.get('id'))

    def step(self, data: dict) -> ScriptStep:
        op = StepOp(data['op'])
        if op is StepOp.OPEN_SOCKET and not is_valid_host(data['host']):
            self.at('host').fail(f"invalid host {data['host']!r}")
        mode = parse_permission(ResourceKind.FILE, data['mode']) if 'mode' in data else None
        return ScriptStep(
            op=op,
            path=data.get('path'),
            mode=mode,
            alias=data.get('as'),
            handle=data.get('handle'),
            bytes=data.get('bytes'),
            host=data.get('host'),
            port=data.get('port'),
            amendment=data.get('amendment'),
        )

    def component(self, data: dict) -> ComponentSpec:
        handler = None
        if 'on_warning' in data:
            reaction = data['on_warning']
            handler = WarningHandler('amend', reaction['amend']) if 'amend' in reaction \
                else WarningHandler('terminate')
        return ComponentSpec(
            id=data['id'],
            contracts=tuple(self.at('contracts', index).contract(item)
                            for index, item in enumerate(data['contracts'])),
            subscribe=data.get('subscribe'),
            amendments=tuple(self.at('amendments', index).amendment(item)
                             for index, item in enumerate(data.get('amendments', []))),
            files=dict(data.get('files', {})),
            on_warning=handler,
            script=tuple(self.at('script', index).step(item) for index, item in enumerate(data.get('script', []))),
        )

    def scenario(self, data: dict, name: str) -> Scenario:
        return Scenario(
            name=data.get('name', name),
            capacity=self.at('capacity').capacity(data['capacity']),
            sanctions=tuple(self.at('sanctions', index).sanction(item)
                            for index, item in enumerate(data.get('sanctions', []))),
            components=tuple(self.at('components', index).component(item)
                             for index, item in enumerate(data['components'])),
            home=data.get('home'),
        )


def decode_scenario(document: Any, name: str = 'scenario') -> Scenario:
    validate(document, SCENARIO_SCHEMA)
    return _Decoder().scenario(document, name)


def decode_contract(document: Any) -> Contract:
    validate(document, CONTRACT_FILE_SCHEMA)
    return _Decoder().contract(document)


def decode_capacity(document: Any) -> tuple:
    validate(document, CAPACITY_FILE_SCHEMA)
    return _Decoder().at('capacity').capacity(document['capacity'])


def decode_amendment(document: Any) -> Amendment:
    validate(document, {'$defs': DEFS, '$ref': '#/$defs/amendment'})
    return _Decoder().amendment(document)


def decode_sanction(document: Any) -> Sanction:
    validate(document, {'$defs': DEFS, '$ref': '#/$defs/sanction'})
    return _Decoder().sanction(document)


def load_scenario(path: Path) -> Scenario:
    path = Path(path)
    return decode_scenario(read_json(path), path.stem)


# Writing

def pattern_json(pattern) -> dict:
    if isinstance(pattern, FilePattern):
        return {'kind': 'file', 'path': pattern.path_prefix}
    if isinstance(pattern, SocketPattern):
        return {'kind': 'socket', 'host': pattern.host_glob,
                'port': 'any' if pattern.port is ANY_PORT else pattern.port}
    return {'kind': 'memory'}


def permission_json(permission) -> dict:
    return {'kind': permission.kind.value, **permission.flags()}


def quota_json(quota) -> dict:
    return {'kind': quota.kind.value, **quota.components()}


def profile_json(profile: ResourceUtilisationProfile) -> dict:
    return {
        'id': profile.id,
        'pattern': pattern_json(profile.pattern),
        'permission': permission_json(profile.permission),
        'quota': quota_json(profile.quota),
        'policy': profile.policy.value,
    }


def contract_json(contract: Contract) -> dict:
    return {'id': contract.id, 'profiles': [profile_json(profile) for profile in contract.profiles]}


def amendment_json(amendment: Amendment) -> dict:
    clauses = []
    for clause in amendment.clauses:
        entry = {'op': clause.op.value}
        if clause.profile is not None:
            entry['profile'] = profile_json(clause.profile)
        if clause.target_profile_id is not None:
            entry['target_profile_id'] = clause.target_profile_id
        clauses.append(entry)
    document = {'contract_id': amendment.contract_id, 'clauses': clauses}
    if amendment.id is not None:
        document['id'] = amendment.id
    return document


def sanction_json(sanction: Sanction) -> dict:
    document = {'kind': sanction.kind.value, 'pattern': pattern_json(sanction.pattern),
                'action': sanction.action.value}
    if sanction.deferred_kind:
        document['threshold'] = sanction.threshold
    if sanction.id is not None:
        document['id'] = sanction.id
    return document


def dump_json(document: Any) -> str:
    return json.dumps(document, sort_keys=True, indent=2) + '\n'


def write_json(document: Any, path: Path) -> Path:
    path = Path(path)
    create_directory(path.parent)
    path.write_text(dump_json(document), encoding='utf-8')
    logger.info(f"Wrote {path}")
    return path
