import json
from pathlib import Path


def host(runner, *args):
    return runner.invoke(args=['host', *[str(arg) for arg in args]])


class TestRun:
    def test_writes_trace_and_report(self, runner, scenario_path, tmp_path):
        trace, report = tmp_path / 'out' / 'jmailer.trace', tmp_path / 'out' / 'jmailer.json'
        result = host(runner, 'run', scenario_path('jmailer.json'), '--trace', trace, '--report', report)
        assert result.exit_code == 0
        document = json.loads(report.read_text())
        assert document['exit_status'] == 0
        assert document['trace']['path'] == str(trace)
        assert trace.read_text().startswith('# jamus-trace v1\n')

    def test_report_on_stdout(self, runner, scenario_path):
        result = host(runner, 'run', scenario_path('quota.json'))
        assert result.exit_code == 0
        assert json.loads(result.output)['violations'][0]['amount'] == 204800

    def test_sanctioned_run(self, runner, scenario_path):
        assert host(runner, 'run', scenario_path('sanctions.json')).exit_code == 3

    def test_save_uses_the_report_dir(self, app, runner, scenario_path):
        assert host(runner, 'run', scenario_path('open-write.json'), '--save').exit_code == 0
        out_dir = Path(app.config['JAMUS_REPORT_DIR'])
        assert (out_dir / 'open-write.trace').exists()
        assert (out_dir / 'open-write.report.json').exists()

    def test_malformed_scenario(self, runner, tmp_path):
        broken = tmp_path / 'broken.json'
        broken.write_text('{"schema_version": 1,\n"capacity": [\n')
        result = host(runner, 'run', broken)
        assert result.exit_code == 2
        assert 'error' in result.output

    def test_dangling_reference(self, runner, scenario_path, tmp_path):
        document = json.loads(scenario_path('quota.json').read_text())
        document['components'][0]['subscribe'] = 'missing'
        dangling = tmp_path / 'dangling.json'
        dangling.write_text(json.dumps(document))
        assert host(runner, 'run', dangling).exit_code == 2


class TestCheck:
    def test_accepted(self, runner, scenario_path):
        result = host(runner, 'check', scenario_path('contract2.json'), scenario_path('capacity-2Mo.json'))
        assert result.exit_code == 0
        assert json.loads(result.output)['accepted'] is True

    def test_rejected(self, runner, scenario_path):
        result = host(runner, 'check', scenario_path('contract1.json'), scenario_path('capacity-1Mo-memory.json'))
        assert result.exit_code == 1
        assert 'r4' in result.output

    def test_invalid_contract(self, runner, scenario_path, tmp_path):
        contract = tmp_path / 'contract.json'
        contract.write_text('{"id": "c", "profiles": [{"id": "r1"}]}')
        assert host(runner, 'check', contract, scenario_path('capacity-2Mo.json')).exit_code == 2


class TestVerify:
    def test_sound_trace(self, runner, scenario_path, tmp_path):
        trace = tmp_path / 'sanctions.trace'
        host(runner, 'run', scenario_path('sanctions.json'), '--trace', trace, '--report', tmp_path / 'r.json')
        result = host(runner, 'verify', trace, scenario_path('sanctions.json'))
        assert result.exit_code == 0
        assert result.output.strip() == 'ok'

    def test_tampered_trace(self, runner, scenario_path, tmp_path):
        trace = tmp_path / 'quota.trace'
        host(runner, 'run', scenario_path('quota.json'), '--trace', trace, '--report', tmp_path / 'r.json')
        trace.write_text(trace.read_text().replace('AccessDenied', 'AccessCompleted'))
        result = host(runner, 'verify', trace, scenario_path('quota.json'))
        assert result.exit_code == 1
        assert 'line ' in result.output

    def test_missing_header(self, runner, scenario_path, tmp_path):
        trace = tmp_path / 'bare.trace'
        trace.write_text('1\tJMailer\tCreated\tfile:~/.jmailer/outbox\twrite\t-\t-\n')
        assert host(runner, 'verify', trace, scenario_path('quota.json')).exit_code == 2


class TestHistory:
    def test_empty(self, runner, db):
        result = host(runner, 'history')
        assert result.exit_code == 0
        assert 'no recorded runs' in result.output

    def test_recorded_run(self, runner, db, scenario_path):
        assert host(runner, 'run', scenario_path('sanctions.json'), '--record').exit_code == 3
        result = host(runner, 'history', '--limit', 5)
        assert result.exit_code == 0
        assert 'sanctions' in result.output
        assert 'exit=3' in result.output
