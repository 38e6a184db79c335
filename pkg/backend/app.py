from flask import Flask, request, jsonify, Response
from flask_cors import CORS
import os
import traceback

import numpy as np

from errors import LabError, ParameterDomainError
from metastability import Landscape1D, double_well_pi, generator, stationary
from report_generator import ARTIFACT_VERSION, ReportGenerator, to_plain
from stable_sampler import (char_fn, char_fn_standard_error, empirical_char_fn, moment_exists,
                            sample, validate_params)
from tail_estimator import Grouping, choose_grouping, estimate_alpha, hill_estimate

app = Flask(__name__)
CORS(app)

# Configuration
HOST = os.environ.get('TAILLAB_HOST', '127.0.0.1')
PORT = int(os.environ.get('TAILLAB_PORT', '5000'))
MAX_SAMPLE = 1_000_000

_MISSING = object()


def field(data, name, cast=float, default=_MISSING):
    """Typed field from a JSON body; a missing or mistyped value is a domain error"""
    if name not in data or data[name] is None:
        if default is _MISSING:
            raise ParameterDomainError(name, "missing")
        return default
    try:
        return cast(data[name])
    except (TypeError, ValueError):
        raise ParameterDomainError(name, f"cannot read {data[name]!r}")


def reals(value):
    return [float(v) for v in value]


def lab_error(e):
    return jsonify({'error': str(e), 'type': type(e).__name__}), 400


@app.route('/')
def index():
    return jsonify({'service': 'tail-index lab', 'version': ARTIFACT_VERSION,
                    'endpoints': sorted(str(rule) for rule in app.url_map.iter_rules()
                                        if str(rule).startswith('/api/'))})


@app.route('/api/health', methods=['GET'])
def health():
    return jsonify({'success': True, 'version': ARTIFACT_VERSION})


@app.route('/api/grouping', methods=['POST'])
def grouping():
    """Group size K1 closest to sqrt(K) and the resulting K2"""
    try:
        data = request.get_json(silent=True) or {}
        g = choose_grouping(field(data, 'K', int))
        return jsonify({'success': True, 'K': g.K, 'K1': g.K1, 'K2': g.K2, 'dropped': g.dropped})
    except LabError as e:
        return lab_error(e)
    except Exception as e:
        return jsonify({'error': str(e), 'trace': traceback.format_exc()}), 500


@app.route('/api/estimate', methods=['POST'])
def estimate():
    """Block-sum tail-index estimate of the posted values"""
    try:
        data = request.get_json(silent=True) or {}
        x = np.asarray(field(data, 'values', reals))
        k1 = field(data, 'k1', int, None)
        if k1 is not None:
            k2 = field(data, 'k2', int, len(x) // k1)
            g = Grouping(K=k1 * k2, K1=k1, K2=k2)
        else:
            g = choose_grouping(len(x))
        return jsonify({'success': True, 'estimate': to_plain(estimate_alpha(x, g).to_dict())})
    except LabError as e:
        return lab_error(e)
    except Exception as e:
        return jsonify({'error': str(e), 'trace': traceback.format_exc()}), 500


@app.route('/api/hill', methods=['POST'])
def hill():
    try:
        data = request.get_json(silent=True) or {}
        x = np.asarray(field(data, 'values', reals))
        k = field(data, 'k', int, len(x) // 10)
        return jsonify({'success': True, 'alpha_hill': hill_estimate(x, k), 'k': k})
    except LabError as e:
        return lab_error(e)
    except Exception as e:
        return jsonify({'error': str(e), 'trace': traceback.format_exc()}), 500


@app.route('/api/sample', methods=['POST'])
def draw_sample():
    """SaS draws as JSON, or as CSV with a provenance line when format=csv"""
    try:
        data = request.get_json(silent=True) or {}
        params = validate_params(field(data, 'alpha'), field(data, 'sigma', float, 1.0))
        n = field(data, 'n', int)
        seed = field(data, 'seed', int, 0)
        if n > MAX_SAMPLE:
            raise ParameterDomainError('n', f"at most {MAX_SAMPLE} draws per request, got {n}")
        batch = sample(params, n, seed)

        if data.get('format') == 'csv':
            report = ReportGenerator('sample', {'alpha': params.alpha, 'sigma': params.sigma, 'n': n},
                                     seed)
            text = report.to_csv([{'value': float(v)} for v in batch.values])
            return Response(text, mimetype='text/csv')
        return jsonify({'success': True, 'alpha': params.alpha, 'sigma': params.sigma, 'seed': seed,
                        'values': to_plain(batch.values),
                        'moments': {str(r): moment_exists(params, r) for r in (1, 2)}})
    except LabError as e:
        return lab_error(e)
    except Exception as e:
        return jsonify({'error': str(e), 'trace': traceback.format_exc()}), 500


@app.route('/api/char-fn', methods=['POST'])
def characteristic_function():
    """exp(-|sigma omega|^alpha), plus the empirical value when n is given"""
    try:
        data = request.get_json(silent=True) or {}
        params = validate_params(field(data, 'alpha'), field(data, 'sigma', float, 1.0))
        omega = field(data, 'omega')
        result = {'success': True, 'value': char_fn(params, omega)}

        n = field(data, 'n', int, None)
        if n is not None:
            if n > MAX_SAMPLE:
                raise ParameterDomainError('n', f"at most {MAX_SAMPLE} draws per request, got {n}")
            batch = sample(params, n, field(data, 'seed', int, 0))
            result['empirical'] = empirical_char_fn(batch, omega)
            result['standard_error'] = char_fn_standard_error(batch, omega)
        return jsonify(result)
    except LabError as e:
        return lab_error(e)
    except Exception as e:
        return jsonify({'error': str(e), 'trace': traceback.format_exc()}), 500


@app.route('/api/generator', methods=['POST'])
def generator_matrix():
    """Generator Q and stationary law for posted minima and saddles"""
    try:
        data = request.get_json(silent=True) or {}
        landscape = Landscape1D(tuple(field(data, 'minima', reals)), tuple(field(data, 'saddles', reals)))
        gen = generator(landscape, field(data, 'alpha'))
        dist = stationary(gen)
        return jsonify({'success': True, 'Q': to_plain(gen.Q), 'pi': to_plain(dist.pi),
                        'exit_rates': to_plain(gen.exit_rates), 'residual': dist.residual})
    except LabError as e:
        return lab_error(e)
    except Exception as e:
        return jsonify({'error': str(e), 'trace': traceback.format_exc()}), 500


@app.route('/api/double-well', methods=['POST'])
def double_well():
    try:
        data = request.get_json(silent=True) or {}
        m1, m2, alpha = field(data, 'm1'), field(data, 'm2'), field(data, 'alpha')
        pi1, pi2 = double_well_pi(m1, m2, alpha)
        return jsonify({'success': True, 'pi': [pi1, pi2], 'ratio': pi2 / pi1})
    except LabError as e:
        return lab_error(e)
    except Exception as e:
        return jsonify({'error': str(e), 'trace': traceback.format_exc()}), 500


if __name__ == '__main__':
    print("=" * 60)
    print("Tail-Index Lab - analytics API")
    print("=" * 60)
    print(f"Server starting on http://{HOST}:{PORT}")
    print("=" * 60)

    app.run(debug=False, host=HOST, port=PORT)
