from django.contrib import admin
from django.utils.html import format_html

from .models import IterationRecord, SolveRun, ValidationRun


class IterationRecordInline(admin.TabularInline):
    """
    Inline admin for the iteration log of a run.
    """
    model = IterationRecord
    extra = 0
    readonly_fields = ['iteration', 'num_variables', 'num_constraints', 'objective', 'line_cuts', 'speed_cuts',
                       'charge_cuts', 'disjunctive_cuts', 'wall_time']
    can_delete = False

    def has_add_permission(self, request, obj=None):
        return False


class ValidationRunInline(admin.TabularInline):
    model = ValidationRun
    extra = 0
    readonly_fields = ['samples', 'seed', 'passed', 'violating_samples', 'max_violation', 'created_at']
    fields = readonly_fields
    can_delete = False

    def has_add_permission(self, request, obj=None):
        return False


@admin.register(SolveRun)
class SolveRunAdmin(admin.ModelAdmin):
    """
    Admin interface for SolveRun model.
    """
    list_display = ['id', 'case_name', 'periods', 'status_display', 'objective', 'iterations', 'time_s', 'created_at']
    list_filter = ['status', 'periods', 'created_at']
    search_fields = ['case_name', 'case_path', 'scenario_path']
    readonly_fields = ['status', 'objective', 'iterations', 'num_variables', 'num_constraints', 'time_s',
                       'results', 'message', 'created_at', 'updated_at']
    inlines = [IterationRecordInline, ValidationRunInline]
    ordering = ['-created_at']

    fieldsets = (
        ('Inputs', {
            'fields': ('case_name', 'case_path', 'scenario_path', 'periods', 'options')
        }),
        ('Outcome', {
            'fields': ('status', 'objective', 'iterations', 'num_variables', 'num_constraints', 'time_s', 'message'),
        }),
        ('Results Document', {
            'fields': ('results',),
            'classes': ('collapse',)
        }),
        ('Timestamps', {
            'fields': ('created_at', 'updated_at'),
            'classes': ('collapse',)
        }),
    )

    def status_display(self, obj):
        colors = {
            SolveRun.Status.OPTIMAL: 'green',
            SolveRun.Status.INFEASIBLE: 'red',
            SolveRun.Status.FAILED: 'red',
        }
        color = colors.get(obj.status, 'orange')
        return format_html('<span style="color: {};">{}</span>', color, obj.get_status_display())
    status_display.short_description = 'Status'
    status_display.admin_order_field = 'status'


@admin.register(ValidationRun)
class ValidationRunAdmin(admin.ModelAdmin):
    list_display = ['run', 'samples', 'seed', 'passed', 'violating_samples', 'created_at']
    list_filter = ['passed', 'created_at']
    readonly_fields = ['run', 'samples', 'seed', 'passed', 'violating_samples', 'max_violation', 'report',
                       'created_at']
