__version__ = "0.1.0"

from .app import *
from .archgraph import *
from .augment import *
from .boxes import *
from .builders import *
from .checks import *
from .commands import *
from .config import *
from .context import *
from .converters import *
from .enums import *
from .errors import *
from .evalmap import *
from .formatters import *
from .groups import *
from .layers import *
from .losses import *
from .parameters import *
from .postprocess import *
from .refexec import *
from .schedule import *
from .state import *
from .tensor import *
