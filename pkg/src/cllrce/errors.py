class ContractError(ValueError):
    """Raised when an input violates an operation's preconditions."""


def require(cond: bool, msg: str) -> None:
    if not cond:
        raise ContractError(msg)
