from django.db import models, transaction


class SolveRun(models.Model):
    """
    A recorded robust solve: inputs, options, final status and the results document.
    """

    class Status(models.TextChoices):
        PENDING = 'pending', 'Pending'
        RUNNING = 'running', 'Running'
        OPTIMAL = 'optimal', 'Optimal'
        INFEASIBLE = 'infeasible', 'Infeasible'
        ITERATION_LIMIT = 'iteration_limit', 'Iteration limit'
        STALLED = 'stalled', 'Stalled'
        FAILED = 'failed', 'Failed'

    case_path = models.CharField(max_length=500, help_text="MATPOWER case file")
    scenario_path = models.CharField(max_length=500, help_text="Scenario JSON file")
    case_name = models.CharField(max_length=200, blank=True)
    status = models.CharField(
        max_length=20,
        choices=Status.choices,
        default=Status.PENDING,
        help_text="Solver verdict, or pending/running/failed for queued runs"
    )
    objective = models.FloatField(null=True, blank=True, help_text="Final master objective, $/h summed over periods")
    iterations = models.PositiveIntegerField(default=0)
    periods = models.PositiveIntegerField(default=1, help_text="Horizon length T")
    num_variables = models.PositiveIntegerField(default=0, help_text="Master LP columns at the last iteration")
    num_constraints = models.PositiveIntegerField(default=0, help_text="Master LP rows at the last iteration")
    time_s = models.FloatField(default=0.0, help_text="Wall time of the solve in seconds")
    options = models.JSONField(default=dict, blank=True, help_text="Solver options used")
    results = models.JSONField(default=dict, blank=True, help_text="Results document as written by the solve command")
    message = models.TextField(blank=True)
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        ordering = ['-created_at']
        verbose_name = 'Solve Run'
        verbose_name_plural = 'Solve Runs'

    def __str__(self):
        return f"{self.case_name or self.case_path} ({self.get_status_display()})"

    @property
    def is_robust(self):
        return self.status == self.Status.OPTIMAL

    def record(self, report, results):
        """Store a RunReport and its results document, replacing any earlier log."""
        with transaction.atomic():
            self.status = report.status
            self.objective = report.objective
            self.iterations = report.iterations
            self.periods = results.get('T', self.periods)
            self.num_variables = report.num_variables
            self.num_constraints = report.num_constraints
            self.time_s = report.time_s
            self.results = results
            self.message = report.message
            self.save()
            self.iteration_log.all().delete()
            IterationRecord.objects.bulk_create([
                IterationRecord(
                    run=self,
                    iteration=row.iteration,
                    num_variables=row.num_variables,
                    num_constraints=row.num_constraints,
                    objective=row.objective,
                    line_cuts=row.cuts.get('line', 0),
                    speed_cuts=row.cuts.get('speed', 0),
                    charge_cuts=row.cuts.get('charge', 0),
                    disjunctive_cuts=row.cuts.get('disjunctive', 0),
                    wall_time=row.wall_time,
                )
                for row in report.log
            ])
        return self


class IterationRecord(models.Model):
    """
    One cutting-plane iteration: master size before its cuts, objective and cuts added.
    """
    run = models.ForeignKey(
        SolveRun,
        on_delete=models.CASCADE,
        related_name='iteration_log',
    )
    iteration = models.PositiveIntegerField()
    num_variables = models.PositiveIntegerField(help_text="n")
    num_constraints = models.PositiveIntegerField(help_text="m")
    objective = models.FloatField()
    line_cuts = models.PositiveIntegerField(default=0)
    speed_cuts = models.PositiveIntegerField(default=0)
    charge_cuts = models.PositiveIntegerField(default=0)
    disjunctive_cuts = models.PositiveIntegerField(default=0)
    wall_time = models.FloatField(default=0.0, help_text="Seconds since the solve started")

    class Meta:
        ordering = ['iteration']
        unique_together = ['run', 'iteration']
        verbose_name = 'Iteration'
        verbose_name_plural = 'Iterations'

    def __str__(self):
        return f"Run {self.run_id} iteration {self.iteration}"

    @property
    def total_cuts(self):
        return self.line_cuts + self.speed_cuts + self.charge_cuts + self.disjunctive_cuts


class ValidationRun(models.Model):
    """
    A Monte Carlo check of a recorded solve.
    """
    run = models.ForeignKey(
        SolveRun,
        on_delete=models.CASCADE,
        related_name='validations',
    )
    samples = models.PositiveIntegerField()
    seed = models.IntegerField()
    passed = models.BooleanField(default=False)
    violating_samples = models.PositiveIntegerField(default=0)
    max_violation = models.JSONField(default=dict, help_text="Largest violation per constraint family")
    report = models.JSONField(default=dict, blank=True, help_text="Full validation report")
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['-created_at']
        verbose_name = 'Validation'
        verbose_name_plural = 'Validations'

    def __str__(self):
        verdict = 'passed' if self.passed else 'failed'
        return f"Validation of run {self.run_id}: {verdict} ({self.samples} samples)"

    @classmethod
    def from_report(cls, run, report):
        return cls.objects.create(
            run=run,
            samples=report.samples,
            seed=report.seed,
            passed=report.passed,
            violating_samples=report.violating_samples,
            max_violation=report.max_violation,
            report=report.to_dict(),
        )
