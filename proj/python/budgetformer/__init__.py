from budgetformer._core import *  # noqa: F401,F403
from budgetformer._core import __doc__  # noqa: F401
