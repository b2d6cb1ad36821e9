from setuptools import setup
from os.path import join, dirname

with open(join(dirname(__file__), 'ehrisk', 'VERSION')) as file:
    version = file.read().strip()

setup(
    name = 'ehr-risk-machine',
    version = version,
    description = 'Longitudinal EHR risk classification with a transformer built on a hand-written autodiff tape.',
    packages = ['ehrisk', 'ehrisk.util', 'ehrisk.tests'],
    python_requires='>=3.10',
    entry_points = dict(
        console_scripts = [
            'ehrisk = ehrisk.cli:main',
        ]
    ),
    package_data = {
        'ehrisk': [
            'VERSION'
        ],
    },
    test_suite = 'ehrisk.tests',
    install_requires = [
        # https://numpy.org/
        'numpy >= 1.22',

        # Streams checkpoint documents
        'ijson >= 3.2',
    ]
)
