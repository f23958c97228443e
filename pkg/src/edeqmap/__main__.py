"""
Standalone entry point: `edeqmap <subcommand> ...` without a Django project.

Configures a minimal settings module when none is active and runs the same
management command `python manage.py edeqmap` would.
"""

import sys

import django
from django.conf import settings


def main(argv=None):
    if not settings.configured:
        settings.configure(INSTALLED_APPS=["edeqmap"], USE_TZ=True)
    django.setup()

    from edeqmap.management.commands.edeqmap import Command

    argv = sys.argv if argv is None else argv
    Command().run_from_argv(["edeqmap", "edeqmap", *argv[1:]])


if __name__ == "__main__":
    main()
