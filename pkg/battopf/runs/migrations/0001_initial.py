# Generated by Django 5.1.4 on 2026-10-18 09:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='SolveRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('case_path', models.CharField(help_text='MATPOWER case file', max_length=500)),
                ('scenario_path', models.CharField(help_text='Scenario JSON file', max_length=500)),
                ('case_name', models.CharField(blank=True, max_length=200)),
                ('status', models.CharField(choices=[('pending', 'Pending'), ('running', 'Running'), ('optimal', 'Optimal'), ('infeasible', 'Infeasible'), ('iteration_limit', 'Iteration limit'), ('stalled', 'Stalled'), ('failed', 'Failed')], default='pending', help_text='Solver verdict, or pending/running/failed for queued runs', max_length=20)),
                ('objective', models.FloatField(blank=True, help_text='Final master objective, $/h summed over periods', null=True)),
                ('iterations', models.PositiveIntegerField(default=0)),
                ('periods', models.PositiveIntegerField(default=1, help_text='Horizon length T')),
                ('num_variables', models.PositiveIntegerField(default=0, help_text='Master LP columns at the last iteration')),
                ('num_constraints', models.PositiveIntegerField(default=0, help_text='Master LP rows at the last iteration')),
                ('time_s', models.FloatField(default=0.0, help_text='Wall time of the solve in seconds')),
                ('options', models.JSONField(blank=True, default=dict, help_text='Solver options used')),
                ('results', models.JSONField(blank=True, default=dict, help_text='Results document as written by the solve command')),
                ('message', models.TextField(blank=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
            ],
            options={
                'verbose_name': 'Solve Run',
                'verbose_name_plural': 'Solve Runs',
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='IterationRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('iteration', models.PositiveIntegerField()),
                ('num_variables', models.PositiveIntegerField(help_text='n')),
                ('num_constraints', models.PositiveIntegerField(help_text='m')),
                ('objective', models.FloatField()),
                ('line_cuts', models.PositiveIntegerField(default=0)),
                ('speed_cuts', models.PositiveIntegerField(default=0)),
                ('charge_cuts', models.PositiveIntegerField(default=0)),
                ('disjunctive_cuts', models.PositiveIntegerField(default=0)),
                ('wall_time', models.FloatField(default=0.0, help_text='Seconds since the solve started')),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='iteration_log', to='runs.solverun')),
            ],
            options={
                'verbose_name': 'Iteration',
                'verbose_name_plural': 'Iterations',
                'ordering': ['iteration'],
                'unique_together': {('run', 'iteration')},
            },
        ),
        migrations.CreateModel(
            name='ValidationRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('samples', models.PositiveIntegerField()),
                ('seed', models.IntegerField()),
                ('passed', models.BooleanField(default=False)),
                ('violating_samples', models.PositiveIntegerField(default=0)),
                ('max_violation', models.JSONField(default=dict, help_text='Largest violation per constraint family')),
                ('report', models.JSONField(blank=True, default=dict, help_text='Full validation report')),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='validations', to='runs.solverun')),
            ],
            options={
                'verbose_name': 'Validation',
                'verbose_name_plural': 'Validations',
                'ordering': ['-created_at'],
            },
        ),
    ]
