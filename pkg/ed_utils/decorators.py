import abc


class InvalidValueException(Exception):
    pass


class Decorator(abc.ABC):
    """
    Tags a test function with a value stored as __<ClassName>__.
    run_tests.py reads the tags to filter the suite.
    """

    def __init__(self, v) -> None:
        res = self.validate(v)
        if res:
            raise InvalidValueException(res)
        self.v = v

    def validate(self, v):
        return None

    def __call__(self, func):
        setattr(func, self.get_attr_name(), self.v)
        return func

    @classmethod
    def get_attr_name(cls):
        return f"__{cls.__name__}__"

    @classmethod
    def value_of(cls, func, default=None):
        return getattr(func, cls.get_attr_name(), default)


class number(Decorator):
    """@number("M.k"): test k of module M."""

    def validate(self, v):
        if not isinstance(v, str) or "." not in v:
            return "Number should look like '3.1'."


class advanced(Decorator):
    """Slow acceptance runs; only executed with run_tests.py -a."""

    def __init__(self) -> None:
        self.v = True
