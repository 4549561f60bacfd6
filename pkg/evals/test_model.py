import copy

import numpy as np
import pytest

from mmapprox.errors import SpecValidationError
from mmapprox.model import (
    ExponentialIntensity,
    LogisticIntensity,
    TabulatedIntensity,
    build_curve,
    canonicalize,
    load_spec,
    spec_from_dict,
    spec_to_dict,
    validate,
)

from evals.helpers import DATA_DIR, load_doc as _doc


def test_reference_specs_validate():
    for name in ('ref1', 'ref2', 'general2'):
        spec = validate(load_spec(str(DATA_DIR / f"{name}.json")))
        assert spec.d == len(_doc(name)['assets'])


def test_ref1_fields():
    spec = validate(load_spec(str(DATA_DIR / "ref1.json")))
    assert spec.objective == 'B'
    assert spec.xi == 0.0
    assert np.allclose(spec.cov, [[0.04]])
    assert np.allclose(spec.mu, [0.0])
    assert spec.floor is None
    assert not spec.general
    assert spec.is_symmetric()
    assert [(c.side, c.size) for c in spec.channels] == [('bid', 1.0), ('ask', 1.0)]
    assert np.allclose(spec.jumps, [[1.0], [-1.0]])


def test_objective_a_uses_gamma_as_xi():
    doc = _doc('ref1')
    doc['objective'] = 'A'
    assert validate(spec_from_dict(doc)).xi == 1.0


def test_general_channels_are_ordered_asset_tier_side_atom():
    spec = validate(load_spec(str(DATA_DIR / "general2.json")))
    assert spec.general
    first = spec.channels[:6]
    assert [(c.tier, c.side, c.size) for c in first] == [
        (0, 'bid', 1.0), (0, 'bid', 2.0), (0, 'ask', 1.0), (0, 'ask', 2.0),
        (1, 'bid', 1.0), (1, 'ask', 1.0),
    ]
    assert all(c.asset == 0 for c in first)
    assert spec.channels[0].cost == 0.05
    assert spec.jumps[3].tolist() == [-2.0, 0.0]
    assert not spec.is_symmetric()


def test_canonicalize_is_idempotent():
    spec = spec_from_dict(_doc('ref2'))
    once = canonicalize(spec)
    assert canonicalize(once) == once
    tier = once.assets[0].tiers[0]
    assert tier.bid.sizes.atoms == ((1.0, 1.0),)
    assert tier.bid.cost == 0.0
    assert once.drift == (0.0, 0.0)


def test_spec_document_survives_export():
    spec = validate(spec_from_dict(_doc('general2')))
    again = validate(spec_from_dict(spec_to_dict(spec)))
    assert spec_to_dict(again) == spec_to_dict(spec)


def test_correlation_out_of_range_rejected():
    doc = _doc('ref2')
    doc['correlation'] = [[1.0, 1.2], [1.2, 1.0]]
    with pytest.raises(SpecValidationError, match="out of range"):
        validate(spec_from_dict(doc))


def test_correlation_not_psd_rejected():
    doc = {
        'assets': [dict(_doc('ref1')['assets'][0], name=f'a{i}') for i in range(3)],
        'correlation': [[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]],
        'gamma': 1.0, 'objective': 'B', 'horizon': 1.0,
    }
    with pytest.raises(SpecValidationError, match="positive semidefinite"):
        validate(spec_from_dict(doc))


def test_risk_limit_must_be_multiple_of_size():
    doc = _doc('ref1')
    doc['assets'][0]['risk_limit'] = 2.5
    with pytest.raises(SpecValidationError, match="not a multiple"):
        validate(spec_from_dict(doc))


def test_tiers_need_a_floor():
    doc = _doc('general2')
    del doc['delta_floor']
    with pytest.raises(SpecValidationError, match="delta_floor"):
        validate(spec_from_dict(doc))


def test_size_weights_must_sum_to_one():
    doc = _doc('general2')
    doc['assets'][0]['tiers'][0]['bid']['sizes'] = [[1.0, 0.6], [2.0, 0.3]]
    with pytest.raises(SpecValidationError, match="sum to 1"):
        validate(spec_from_dict(doc))


def test_sizes_must_sit_on_the_lattice():
    doc = _doc('general2')
    doc['assets'][0]['tiers'][0]['bid']['sizes'] = [[1.5, 1.0]]
    with pytest.raises(SpecValidationError, match="multiple of the lattice unit"):
        validate(spec_from_dict(doc))


def test_gamma_zero_only_for_objective_b():
    doc = _doc('ref1')
    doc['gamma'] = 0.0
    assert validate(spec_from_dict(doc)).gamma == 0.0
    doc['objective'] = 'A'
    with pytest.raises(SpecValidationError):
        validate(spec_from_dict(doc))


def test_zero_horizon_accepted():
    doc = _doc('ref1')
    doc['horizon'] = 0.0
    assert validate(spec_from_dict(doc)).horizon == 0.0


def test_unknown_and_missing_keys_rejected():
    doc = _doc('ref1')
    doc['leverage'] = 3
    with pytest.raises(SpecValidationError, match="Unknown top-level"):
        spec_from_dict(doc)
    doc = _doc('ref1')
    del doc['gamma']
    with pytest.raises(SpecValidationError):
        spec_from_dict(doc)


def test_missing_file_raises_os_error(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_spec(str(tmp_path / "nope.json"))


def test_curves():
    exp = build_curve({'kind': 'exponential', 'scale': 2.0, 'decay': 0.5})
    assert isinstance(exp, ExponentialIntensity)
    assert exp.intensity(0.0) == pytest.approx(2.0)

    logistic = build_curve({'kind': 'logistic', 'scale': 1.0, 'decay': 2.0, 'center': 0.5})
    assert isinstance(logistic, LogisticIntensity)
    assert logistic.intensity(0.5) == pytest.approx(0.5)
    assert np.all(np.diff(logistic.intensity(np.linspace(-5, 5, 50))) < 0)
    assert logistic.intensity(800.0) >= 0.0

    table = build_curve({'kind': 'tabulated', 'deltas': [0.0, 1.0, 2.0], 'values': [1.0, 0.5, 0.2]})
    assert isinstance(table, TabulatedIntensity)
    assert table.intensity(1.0) == pytest.approx(0.5)
    grid = np.linspace(-3.0, 6.0, 200)
    values = table.intensity(grid)
    assert np.all(values > 0)
    assert np.all(np.diff(values) < 0)


def test_bad_curves_rejected():
    with pytest.raises(SpecValidationError, match="Unknown intensity kind"):
        build_curve({'kind': 'power'})
    with pytest.raises(SpecValidationError, match="missing parameter"):
        build_curve({'kind': 'exponential', 'scale': 1.0})
    with pytest.raises(SpecValidationError):
        build_curve({'kind': 'exponential', 'scale': 1.0, 'decay': -1.0})
    with pytest.raises(SpecValidationError, match="strictly decreasing"):
        build_curve({'kind': 'tabulated', 'deltas': [0.0, 1.0], 'values': [0.5, 1.0]})


def test_asymmetric_base_sides():
    doc = copy.deepcopy(_doc('ref1'))
    asset = doc['assets'][0]
    del asset['intensity']
    asset['bid_intensity'] = {'kind': 'exponential', 'scale': 1.0, 'decay': 1.0}
    asset['ask_intensity'] = {'kind': 'exponential', 'scale': 2.0, 'decay': 1.0}
    spec = validate(spec_from_dict(doc))
    assert not spec.is_symmetric()
    assert spec.channels[1].curve.scale == 2.0
