# utils/logger.py
import logging, os, sys

__all__ = ["logger", "get_logger", "LOG_FORMAT"]

# relativeCreated: milliseconds since the logging module was loaded
LOG_FORMAT = "[%(relativeCreated)9.0fms %(levelname)-7s %(name)s] %(message)s"


def _configure_root() -> logging.Logger:
	root = logging.getLogger("ousuper")
	if not root.handlers:
		root.setLevel(os.environ.get("OUSUPER_LOG_LEVEL", "INFO").upper())
		h = logging.StreamHandler(sys.stderr)
		h.setFormatter(logging.Formatter(LOG_FORMAT))
		root.addHandler(h)
		root.propagate = False
	return root


def get_logger(name: str | None = None) -> logging.Logger:
	"""Child of the "ousuper" root; module names lose their package prefix (lab.tools.quadrature -> quadrature)."""
	root = _configure_root()
	if not name:
		return root
	return root.getChild(name.rsplit(".", 1)[-1])


logger = _configure_root()
