"""
URL configuration for battopf project.

Recorded solves are reviewed in the admin or fetched as JSON under /runs/.
"""
from django.contrib import admin
from django.urls import path, include

urlpatterns = [
    path('admin/', admin.site.urls),
    path('runs/', include('battopf.runs.urls')),
]
