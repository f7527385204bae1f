"""Bounded verification workbench for concurrent matching logic."""
from .cml import Assertion, CSLTriple, Pattern, Verdict, check_validity, parse_assertion, s2m
from .config import Limits
from .proof import RuleInstance, check_derivation, check_rule, parse_derivation

__all__ = [
    "Assertion", "CSLTriple", "Limits", "Pattern", "RuleInstance", "Verdict",
    "check_derivation", "check_rule", "check_validity", "parse_assertion",
    "parse_derivation", "s2m",
]
