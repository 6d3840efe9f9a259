"""
WSGI config for battopf project.

It exposes the WSGI callable as a module-level variable named ``application``.
Only the admin and the read-only run review endpoints are served.
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'battopf.settings')

application = get_wsgi_application()
