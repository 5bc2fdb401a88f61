from fractions import Fraction

import pytest

from hypothesis import given, strategies as st

from lib.Certificates import WrCertificate, exact, number_from_document, number_to_document, replay
from lib.ConstantCalculus import blc_from_dilation, fibered_constant, product_certificate, pullback_certificate
from lib.Errors import (
    EmptyIntersection, EmptyList, NonpositiveF, NonpositiveInput, ParameterOutOfRange, ValidationError
)
from lib.WrCertifier import combine_sets, intersection_certificate, single_set_constant, union_certificate

positive_fractions = st.fractions(min_value=Fraction(1, 100), max_value=100)


def test_exact_conversions():
    assert exact(3) == Fraction(3)
    assert exact("5/8") == Fraction(5, 8)
    assert isinstance(exact(0.25), float)
    with pytest.raises(ValidationError):
        exact(True)
    with pytest.raises(ValidationError):
        exact("a/b")
    with pytest.raises(ValidationError):
        exact(None)


def test_number_documents():
    assert number_to_document(Fraction(3, 2)) == {'exact': '3/2', 'value': 1.5}
    assert number_to_document(Fraction(4)) == {'exact': '4', 'value': 4.0}
    assert number_to_document(0.5) == {'value': 0.5}
    assert number_from_document({'exact': '3/2', 'value': 1.5}) == Fraction(3, 2)
    assert number_from_document({'value': 0.5}) == 0.5


def test_certificate_rejects_nonpositive_constants():
    with pytest.raises(ValidationError):
        WrCertificate(C=Fraction(0), T0=Fraction(0), eps0=Fraction(1))
    with pytest.raises(ValidationError):
        WrCertificate.given(2, eps0=0)
    assert WrCertificate.given(4).eps0 == Fraction(1, 4)


def test_single_set_constant():
    cert = single_set_constant(1, 4)
    assert cert.C == Fraction(1, 2)
    assert cert.eps0 == Fraction(2)
    with pytest.raises(NonpositiveInput):
        single_set_constant(0, 1)


def test_intersection_and_union_constants():
    meet, join = combine_sets(1, 2, 3, 5, 2, 6)
    assert meet.C == Fraction(16)
    assert join.C == Fraction(16, 3)
    assert meet.eps0 == Fraction(1, 16)
    with pytest.raises(EmptyIntersection):
        intersection_certificate(1, 2, 3, 5, 0)
    with pytest.raises(NonpositiveInput):
        union_certificate(1, 2, -3, 5, 6)


def test_pullback_uses_max_with_one():
    small = WrCertificate.given(Fraction(1, 2))
    assert pullback_certificate(small, 3).C == Fraction(3)
    assert pullback_certificate(WrCertificate.given(5), Fraction(1, 5)).C == Fraction(1)
    with pytest.raises(NonpositiveF):
        pullback_certificate(small, 0)


def test_product_folds_from_the_left():
    certs = [WrCertificate.given(2), WrCertificate.given(5, T0=7), WrCertificate.given(1)]
    cert = product_certificate(certs, F=2)
    assert cert.C == Fraction(90)
    assert cert.T0 == Fraction(7)
    assert product_certificate(certs[:1]).C == Fraction(2)
    with pytest.raises(EmptyList):
        product_certificate([])
    with pytest.raises(NonpositiveF):
        product_certificate(certs, F=-1)


@given(st.lists(positive_fractions, min_size=1, max_size=5), positive_fractions)
def test_product_dominates_each_factor_scaled(constants, F):
    cert = product_certificate([WrCertificate.given(c) for c in constants], F=F)
    assert cert.C >= F * max(max(constants), 1)
    assert cert.eps0 == 1 / cert.C


def test_fibered_constant_exact():
    cert = fibered_constant(16, 8, 1, Fraction(5, 2), Fraction(9, 2))
    assert cert.C == Fraction(4512, 5)
    assert cert.eps0 == Fraction(1, 280)
    with pytest.raises(ParameterOutOfRange):
        fibered_constant(Fraction(1, 2), 8, 1, 1, 1)
    with pytest.raises(ParameterOutOfRange):
        fibered_constant(16, 8, 1, 0, 1)


def test_blc_from_dilation():
    assert blc_from_dilation(2, 3, 2) == 16 ** 3 * 3 * 2
    with pytest.raises(ParameterOutOfRange):
        blc_from_dilation(Fraction(1, 2), 1, 2)


def test_trace_lists_inputs_before_rule():
    leaf = single_set_constant(1, 4)
    cert = pullback_certificate(product_certificate([leaf, WrCertificate.given(3)]), 2)
    rules = [step['rule'] for step in cert.trace()]
    assert rules == ['single_set', 'given', 'product', 'pullback']
    document = cert.to_document()
    assert document['C'] == {'exact': '18', 'value': 18.0}
    assert document['provenance'][-1]['params'] == {'F': {'exact': '2', 'value': 2.0}}


def test_replay_reproduces_constants():
    meet = intersection_certificate(1, 2, 3, 5, 2)
    cert = pullback_certificate(product_certificate([meet, single_set_constant(2, 3)], F=Fraction(3, 2)), 2)
    assert replay(cert) == cert
    assert replay(fibered_constant(16, 8, 1, 2, 3)).C == fibered_constant(16, 8, 1, 2, 3).C


def test_replay_unknown_rule():
    with pytest.raises(ValidationError):
        replay(WrCertificate(C=Fraction(1), T0=Fraction(0), eps0=Fraction(1), rule='mystery'))
