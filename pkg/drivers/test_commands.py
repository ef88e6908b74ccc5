import tempfile
from io import StringIO
from pathlib import Path
from unittest import mock

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from drivers.services import run_convergence


def run(*args) -> dict:
    """Run a command and collect its 'key<TAB>value' lines."""
    out = StringIO()
    call_command(*args, stdout=out)
    rows = [line.split('\t') for line in out.getvalue().splitlines()]
    return {row[0]: row[1] for row in rows if len(row) == 2}


class PoissonCommandTest(SimpleTestCase):
    def test_cg(self):
        values = run('poisson', '--cells', '4', '--case', 'linear')
        self.assertEqual(values['free_dofs'], '9')
        self.assertEqual(values['fixed_dofs'], '16')
        self.assertLess(float(values['l2_error']), 1e-8)

    def test_dg_with_vtk_output(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'poisson.vtk'
            values = run('poisson', '--method', 'dg', '--cells', '2', '--tau', '-1', '--vtk', str(path))
            self.assertTrue(path.read_text().startswith('# vtk DataFile'))
        self.assertEqual(values['free_dofs'], '16')
        self.assertEqual(values['fixed_dofs'], '0')

    def test_bad_cells(self):
        with self.assertRaises(CommandError):
            call_command('poisson', '--cells', '4,x', stdout=StringIO())

    def test_generated_mesh_matches_the_structured_run(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'square.msh'
            out = StringIO()
            call_command('mesh', '--cells', '3', '--topology', 'simplex', '--output', str(path), stdout=out)
            self.assertIn('18 cells', out.getvalue())
            from_file = run('poisson', '--mesh', str(path), '--order', '2')
        structured = run('poisson', '--cells', '3', '--topology', 'simplex', '--order', '2')
        self.assertEqual(from_file['free_dofs'], structured['free_dofs'])
        self.assertAlmostEqual(float(from_file['l2_error']), float(structured['l2_error']), places=12)


class StokesCommandTest(SimpleTestCase):
    def test_polynomial_case(self):
        values = run('stokes', '--cells', '2', '--case', 'polynomial', '--blocks')
        self.assertEqual(values['free_dofs'], str(2 * 9 + 8))
        self.assertLess(float(values['velocity_l2_error']), 1e-8)
        self.assertLess(float(values['pressure_l2_error']), 1e-7)

    def test_order_zero_is_rejected(self):
        with self.assertRaises(CommandError):
            call_command('stokes', '--order', '0', stdout=StringIO())


class ConvergenceCommandTest(SimpleTestCase):
    def test_table(self):
        out = StringIO()
        call_command('convergence', '--levels', '2', '--base-cells', '2', '--case', 'linear', stdout=out)
        lines = out.getvalue().splitlines()
        self.assertTrue(lines[0].startswith('level\tcells\th\tfree_dofs'))
        self.assertEqual(lines[1].split('\t')[1], '4')
        self.assertEqual(lines[2].split('\t')[1], '16')

    def test_unknown_case(self):
        with self.assertRaises(CommandError):
            call_command('convergence', '--case', 'cosine', stdout=StringIO())

    def test_dg_variant_options(self):
        out = StringIO()
        with mock.patch('drivers.management.commands.convergence.run_convergence', wraps=run_convergence) as study:
            call_command('convergence', '--driver', 'poisson-dg', '--tau', '-1', '--penalty', '20', '--levels', '1',
                         '--case', 'linear', stdout=out)
        kwargs = study.call_args.kwargs
        self.assertEqual(kwargs['tau'], -1.0)
        self.assertEqual(kwargs['penalty'], 20.0)
        self.assertIn('1 level(s) of poisson-dg', out.getvalue())

    def test_dg_options_need_the_dg_driver(self):
        with self.assertRaises(CommandError):
            call_command('convergence', '--driver', 'stokes', '--tau', '1', stdout=StringIO())
