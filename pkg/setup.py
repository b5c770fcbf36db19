from setuptools import setup

setup(
    name="likertnet",
    version="1.0.0",
    py_modules=[
        "errors", "mcmc_settings", "system_optimizer", "workers", "survey_data", "explore",
        "mrf", "grm", "simulate", "exporters", "run_manifest", "report", "main",
    ],
    data_files=[("data", ["data/demo_codebook.json", "data/demo_mrf_spec.json", "data/demo_grm_spec.json"])],
    install_requires=[
        "numpy>=1.24",
        "scipy>=1.10",
        "pandas>=2.0",
        "pydantic~=2.10.6",
        "psutil~=7.0.0",
        "rich~=13.9.4",
        "tqdm>=4.66",
    ],
    entry_points={"console_scripts": ["likertnet=main:main"]},
)
