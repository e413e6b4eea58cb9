from setuptools import setup, find_packages

setup(
    name='lowlight-structure',
    packages=[
        'lowlight_structure',
        'lowlight_structure.cli',
        'lowlight_structure.config',
        'lowlight_structure.csv',
        'lowlight_structure.data',
        'lowlight_structure.errors',
        'lowlight_structure.imaging',
        'lowlight_structure.nets',
        'lowlight_structure.training',
    ],
    version='1.0.0',
    classifiers=[
        'License :: OSI Approved :: MIT License',
        'Programming Language :: Python :: 3.9',
    ],
    description="Structure-guided low-light image enhancement: training, inference and evaluation",
    license="MIT license",
    include_package_data=True,
    zip_safe=False,
    python_requires=">=3.9",
    install_requires=[
        "torch>=2.1",
        "numpy>=1.23",
        "scipy>=1.9",
        "Pillow>=9.2",
        "structlog>=22.1.0",
        "marshmallow>=3.18,<4",
        "marshmallow-objects>=2.3.0",
        "pandas>=1.4.4",
        "flatten-json>=0.1.13",
        "matplotlib>=3.5",
    ],
    extras_require={
        "vgg": ["torchvision>=0.16"],
    },
    entry_points={
        "console_scripts": [
            "lowlight-structure=lowlight_structure.cli:main",
        ],
    },
)
