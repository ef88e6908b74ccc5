"""
Generate a structured mesh and export it in the ASCII mesh format.
Usage: python manage.py mesh --dim 2 --cells 4,4 --output output/square.msh
"""

from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from drivers.services import build_triangulation
from fem.mesh_io import export_mesh


class Command(BaseCommand):
    help = 'Generate a structured box mesh and export it'

    def add_arguments(self, parser):
        parser.add_argument('--dim', type=int, default=2, help='Space dimension')
        parser.add_argument('--cells', default='4', help='Cells per direction: n or nx,ny[,nz]')
        parser.add_argument('--topology', choices=['n_cube', 'simplex'], default='n_cube')
        parser.add_argument('--output', default=None, help='Mesh file to write')

    def handle(self, *args, **options):
        output = options['output'] or Path(settings.FEM_OUTPUT_DIR) / 'mesh.msh'
        try:
            triangulation = build_triangulation(options['dim'], options['cells'], options['topology'])
            export_mesh(triangulation, output)
        except (ValueError, OSError) as e:
            raise CommandError(str(e))

        self.stdout.write(self.style.SUCCESS(
            f'✓ Wrote {triangulation.num_cells} cells, {triangulation.num_vertices} vertices to {output}'
        ))
