import logging

from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Callable, Dict, List, Tuple, Union

from .Errors import ValidationError

logger = logging.getLogger(__name__)

Number = Union[int, float, Fraction]

LEAF_RULES = ('given', 'monte_carlo')

_RULES: Dict[str, Tuple[Callable[..., 'WrCertificate'], str]] = {}


def exact(value: Any) -> Number:
    """Ints, Fractions and 'p/q' strings become Fractions; floats stay floats."""
    if isinstance(value, bool):
        raise ValidationError(f"Expected a number, got {value!r}")
    if isinstance(value, (int, Fraction)):
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except ValueError:
            raise ValidationError(f"Cannot read {value!r} as a rational number")
    if isinstance(value, float):
        return value
    raise ValidationError(f"Expected a number, got {type(value).__name__}")


def number_to_document(value: Number) -> Any:
    if isinstance(value, Fraction):
        if value.denominator == 1:
            return {'exact': str(value.numerator), 'value': float(value)}
        return {'exact': f"{value.numerator}/{value.denominator}", 'value': float(value)}
    return {'value': float(value)}


def number_from_document(doc: Any) -> Number:
    if isinstance(doc, dict):
        return exact(doc['exact']) if 'exact' in doc else float(doc['value'])
    return exact(doc)


def register_rule(name: str, inputs: str = 'none') -> Callable:
    """Register a certificate rule for replay; `inputs` is "none", "one" or "many"."""
    def decorator(fn: Callable[..., 'WrCertificate']) -> Callable[..., 'WrCertificate']:
        _RULES[name] = (fn, inputs)
        return fn
    return decorator


@dataclass(frozen=True)
class WrCertificate:
    """
    Lipschitz well-roundedness parameters (C, T0, eps0) together with the rule that produced them.

    `params` and `inputs` are exactly the arguments of that rule, so `replay` can recompute the
    constants from the trace alone.
    """
    C: Number
    T0: Number
    eps0: Number
    rule: str = 'given'
    params: Tuple[Tuple[str, Any], ...] = ()
    inputs: Tuple['WrCertificate', ...] = ()

    def __post_init__(self):
        if not self.C > 0:
            raise ValidationError(f"Certificate constant must be positive, got {self.C}")
        if not self.eps0 > 0:
            raise ValidationError(f"Certificate eps0 must be positive, got {self.eps0}")

    @classmethod
    def given(cls, C: Any, T0: Any = 0, eps0: Any = None) -> 'WrCertificate':
        C = exact(C)
        eps0 = exact(eps0) if eps0 is not None else 1 / C
        return cls(C=C, T0=exact(T0), eps0=eps0)

    def trace(self) -> List[Dict[str, Any]]:
        """Depth-first list of the rules applied, inputs before the rule that consumed them."""
        steps: List[Dict[str, Any]] = []
        for cert in self.inputs:
            steps.extend(cert.trace())
        steps.append({
            'rule': self.rule,
            'params': {k: _param_document(v) for k, v in self.params},
            'C': number_to_document(self.C),
        })
        return steps

    def to_document(self) -> Dict[str, Any]:
        return {
            'C': number_to_document(self.C),
            'T0': number_to_document(self.T0),
            'eps0': number_to_document(self.eps0),
            'rule': self.rule,
            'provenance': self.trace(),
        }


def _param_document(value: Any) -> Any:
    if isinstance(value, (int, float, Fraction)) and not isinstance(value, bool):
        return number_to_document(value)
    return value


def replay(cert: WrCertificate) -> WrCertificate:
    """Recompute a certificate from its provenance."""
    if cert.rule in LEAF_RULES:
        return cert
    if cert.rule not in _RULES:
        raise ValidationError(f"No rule registered under {cert.rule!r}")
    rule, arity = _RULES[cert.rule]
    inputs = [replay(c) for c in cert.inputs]
    params = dict(cert.params)
    if arity == 'many':
        return rule(inputs, **params)
    if arity == 'one':
        return rule(inputs[0], **params)
    return rule(**params)
