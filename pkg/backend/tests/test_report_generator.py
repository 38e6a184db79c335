import json
import math

import numpy as np

from report_generator import ARTIFACT_VERSION, ReportGenerator, format_real, to_plain


class TestFormatReal:
    def test_round_trips(self):
        for value in (0.1, 1.0 / 3.0, 2.0 ** -1074, 1.7976931348623157e308, -1.23456789012345e-7):
            assert float(format_real(value)) == value

    def test_seventeen_digits(self):
        assert format_real(0.1) == '0.10000000000000001'


class TestToPlain:
    def test_numpy_values(self):
        plain = to_plain({'a': np.float64(1.5), 'b': np.arange(3), 'c': np.bool_(True)})
        assert plain == {'a': 1.5, 'b': [0, 1, 2], 'c': True}
        assert type(plain['b'][0]) is int

    def test_non_finite(self):
        assert to_plain([math.inf, -math.inf, math.nan]) == ['inf', '-inf', 'nan']


class TestReportGenerator:
    def test_csv_layout(self):
        report = ReportGenerator('calibrate', {'reps': 3}, seed=1)
        text = report.to_csv([{'alpha': 0.5, 'mae': 0.1, 'ok': True}, {'alpha': 1.0, 'mae': 0.2, 'ok': False}])
        lines = text.split('\n')
        assert lines[0].startswith('# ')
        provenance = json.loads(lines[0][2:])
        assert provenance == {'command': 'calibrate', 'parameters': {'reps': 3}, 'seed': 1,
                              'version': ARTIFACT_VERSION}
        assert lines[1] == 'alpha,mae,ok'
        assert lines[2] == '0.5,0.10000000000000001,1'
        assert text.endswith('\n')

    def test_csv_without_records(self):
        text = ReportGenerator('estimate', {}, seed=None).to_csv([])
        assert text.count('\n') == 1

    def test_json_document(self):
        report = ReportGenerator('generator', {'alpha': 1.0}, seed=None)
        document = json.loads(report.to_json({'pi': np.array([1 / 3, 2 / 3])}))
        assert set(document) == {'provenance', 'results'}
        assert document['results']['pi'] == [1 / 3, 2 / 3]

    def test_render_is_stable(self):
        report = ReportGenerator('sample', {'n': 2, 'alpha': 1.5}, seed=4)
        records = [{'value': 1.25}, {'value': -3.5}]
        assert report.render(records, 'csv') == report.render(records, 'csv')
        assert report.render({'x': 1}, 'json') == report.render({'x': 1}, 'json')

    def test_render_wraps_single_record_for_csv(self):
        text = ReportGenerator('estimate', {}, seed=None).render({'alpha_hat': 1.5}, 'csv')
        assert text.split('\n')[1:3] == ['alpha_hat', '1.5']
