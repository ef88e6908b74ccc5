"""
Solve a manufactured Poisson problem with continuous or interior penalty FEs.
Usage: python manage.py poisson --method dg --order 2 --cells 8 --vtk output/poisson.vtk
"""

from django.core.management.base import BaseCommand, CommandError

from drivers.manufactured import PoissonCase
from drivers.services import build_triangulation, run_poisson_cg, run_poisson_dg
from drivers.vtk import write_vtk


class Command(BaseCommand):
    help = 'Solve -div(grad u) = f with a manufactured solution and report the errors'

    def add_arguments(self, parser):
        parser.add_argument('--method', choices=['cg', 'dg'], default='cg')
        parser.add_argument('--order', type=int, default=1, help='Polynomial order k')
        parser.add_argument('--dim', type=int, default=2)
        parser.add_argument('--cells', default='4', help='Cells per direction: n or nx,ny[,nz]')
        parser.add_argument('--topology', choices=['n_cube', 'simplex'], default='n_cube')
        parser.add_argument('--mesh', default=None, help='ASCII mesh file used instead of a structured mesh')
        parser.add_argument('--case', choices=PoissonCase.values, default=PoissonCase.SINE)
        parser.add_argument('--penalty', type=float, default=None, help='DG penalty gamma (default 10 (k+1)^2)')
        parser.add_argument('--tau', type=float, default=1.0, help='DG variant: 1 symmetric, -1 non-symmetric, 0 incomplete')
        parser.add_argument('--vtk', default=None, help='Write the solution to this VTK file')

    def handle(self, *args, **options):
        try:
            triangulation = build_triangulation(options['dim'], options['cells'], options['topology'], options['mesh'])
            if options['method'] == 'cg':
                result = run_poisson_cg(triangulation, options['order'], options['case'])
            else:
                result = run_poisson_dg(triangulation, options['order'], options['case'],
                                        tau=options['tau'], penalty=options['penalty'])
            if options['vtk']:
                write_vtk(triangulation, {'u': (result.fe_function, 0)}, options['vtk'])
        except (ValueError, RuntimeError, OSError) as e:
            raise CommandError(str(e))

        self.stdout.write(f'free_dofs\t{result.num_free_dofs}')
        self.stdout.write(f'fixed_dofs\t{result.num_fixed_dofs}')
        self.stdout.write(f'l2_error\t{result.l2_error:.6e}')
        self.stdout.write(f'h1_error\t{result.h1_error:.6e}')
        self.stdout.write(self.style.SUCCESS(f'✓ {result.summary()}'))
