import csv
import io
import json
import math

import numpy as np

ARTIFACT_VERSION = '1.0.0'


def format_real(value):
    """17 significant digits, enough to round-trip any float64"""
    return f"{value:.17g}"


def to_plain(value):
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values"""
    if isinstance(value, dict):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_plain(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else repr(value)
    return value


def _cell(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_real(float(value))
    if value is None:
        return ''
    return str(value)


class ReportGenerator:
    """Render result tables as CSV or JSON, each prefixed with its provenance"""

    def __init__(self, command, parameters, seed=None):
        self.provenance = {
            'command': command,
            'parameters': to_plain(parameters),
            'seed': seed,
            'version': ARTIFACT_VERSION,
        }

    def provenance_line(self):
        return json.dumps(self.provenance, sort_keys=True)

    def to_csv(self, records):
        """`#`-prefixed provenance line, then a header row and one row per record"""
        buffer = io.StringIO()
        buffer.write('# ' + self.provenance_line() + '\n')
        if records:
            fieldnames = list(records[0].keys())
            writer = csv.DictWriter(buffer, fieldnames=fieldnames, lineterminator='\n')
            writer.writeheader()
            for record in records:
                writer.writerow({k: _cell(record.get(k)) for k in fieldnames})
        return buffer.getvalue()

    def to_json(self, results):
        document = {'provenance': self.provenance, 'results': to_plain(results)}
        return json.dumps(document, sort_keys=True, indent=2) + '\n'

    def render(self, results, fmt):
        """CSV needs a list of flat records; JSON accepts any nested structure"""
        if fmt == 'csv':
            records = results if isinstance(results, list) else [results]
            return self.to_csv(records)
        return self.to_json(results)
