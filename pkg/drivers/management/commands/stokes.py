"""
Solve a manufactured Stokes problem with Taylor-Hood Q_(k+1)/Q_k FEs.
Usage: python manage.py stokes --order 1 --cells 8
"""

from django.core.management.base import BaseCommand, CommandError

from drivers.manufactured import StokesCase
from drivers.services import build_triangulation, run_stokes
from drivers.vtk import write_vtk


class Command(BaseCommand):
    help = 'Solve the Stokes problem with a manufactured solution and report the errors'

    def add_arguments(self, parser):
        parser.add_argument('--order', type=int, default=1, help='Pressure order k (velocity k+1)')
        parser.add_argument('--cells', default='4', help='Cells per direction: n or nx,ny')
        parser.add_argument('--mesh', default=None, help='ASCII mesh file used instead of a structured mesh')
        parser.add_argument('--case', choices=StokesCase.values, default=StokesCase.TRIGONOMETRIC)
        parser.add_argument('--viscosity', type=float, default=1.0)
        parser.add_argument('--blocks', action='store_true', help='One block per field instead of a monolithic system')
        parser.add_argument('--vtk', default=None, help='Write velocity and pressure to this VTK file')

    def handle(self, *args, **options):
        if options['order'] < 1:
            raise CommandError('Taylor-Hood needs a pressure order of at least 1')
        try:
            triangulation = build_triangulation(2, options['cells'], mesh=options['mesh'])
            result = run_stokes(triangulation, options['order'], options['case'], options['viscosity'],
                                blocks=options['blocks'])
            if options['vtk']:
                write_vtk(triangulation, {'velocity': (result.fe_function, 0), 'pressure': (result.fe_function, 1)},
                          options['vtk'])
        except (ValueError, RuntimeError, OSError) as e:
            raise CommandError(str(e))

        self.stdout.write(f'free_dofs\t{result.num_free_dofs}')
        self.stdout.write(f'velocity_l2_error\t{result.l2_error:.6e}')
        self.stdout.write(f'velocity_h1_error\t{result.h1_error:.6e}')
        self.stdout.write(f'pressure_l2_error\t{result.pressure_l2_error:.6e}')
        self.stdout.write(self.style.SUCCESS(f'✓ {result.summary()}'))
