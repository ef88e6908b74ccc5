"""
Uniform refinement study with observed convergence orders.
Usage: python manage.py convergence --driver poisson-dg --tau -1 --order 1 --levels 4
"""

from django.core.management.base import BaseCommand, CommandError

from drivers.services import Driver, format_convergence_table, run_convergence


class Command(BaseCommand):
    help = 'Run a driver on refined meshes and print errors with log2 ratios as TSV'

    def add_arguments(self, parser):
        parser.add_argument('--driver', choices=Driver.values, default=Driver.POISSON_CG)
        parser.add_argument('--order', type=int, default=1)
        parser.add_argument('--levels', type=int, default=4)
        parser.add_argument('--dim', type=int, default=2)
        parser.add_argument('--base-cells', type=int, default=2, help='Cells per direction on the coarsest level')
        parser.add_argument('--topology', choices=['n_cube', 'simplex'], default='n_cube')
        parser.add_argument('--case', default=None, help='Manufactured case (driver default when omitted)')
        parser.add_argument('--tau', type=float, default=None,
                            help='poisson-dg variant: 1 symmetric (default), -1 non-symmetric, 0 incomplete')
        parser.add_argument('--penalty', type=float, default=None, help='poisson-dg penalty gamma (default 10 (k+1)^2)')

    def handle(self, *args, **options):
        driver_options = {name: options[name] for name in ('tau', 'penalty') if options[name] is not None}
        if driver_options and options['driver'] != Driver.POISSON_DG:
            raise CommandError(f'--{" / --".join(driver_options)} only apply to {Driver.POISSON_DG}')
        try:
            results = run_convergence(options['driver'], options['order'], options['levels'], options['dim'],
                                      options['base_cells'], options['topology'], options['case'], **driver_options)
        except (ValueError, RuntimeError) as e:
            raise CommandError(str(e))

        self.stdout.write(format_convergence_table(results), ending='')
        self.stdout.write(self.style.SUCCESS(f'✓ {len(results)} level(s) of {options["driver"]}'))
