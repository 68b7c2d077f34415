# main.py
import sys

# settings come from the environment / a .env file (loaded by sdgm.config):
#   SDGM_THREADS    benchmark worker processes (default 1)
#   SDGM_LOG_LEVEL  DEBUG | INFO | WARNING (default INFO)

from sdgm.cli import main


if __name__ == "__main__":
    sys.exit(main())
