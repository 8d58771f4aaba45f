class BSTNNError(Exception):
    """Base class for all errors raised by this package"""


class DimensionError(BSTNNError, ValueError):
    """Operand shapes do not agree"""


class ContractError(BSTNNError, ValueError):
    """A precondition of an operation was violated"""


class DomainError(BSTNNError, ValueError):
    """A numeric argument lies outside its valid domain"""


class DataError(BSTNNError):
    """Input data is missing, malformed or inconsistent"""


class NumericError(BSTNNError, ArithmeticError):
    """A NaN or infinite value was produced"""


def describe_shape(shape) -> str:
    return "×".join(str(int(s)) for s in shape) or "scalar"
