from setuptools import setup

exec(open("bayesimp/_version.py").read())

setup(
    name="bayes-imp",
    version=version,  # noqa: F821
    keywords="causal inference kernel mean embeddings gaussian processes",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "License :: OSI Approved :: BSD License",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Topic :: Scientific/Engineering :: Mathematics",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
    license="BSD",
    description="Bayesian interventional mean processes for two-stage causal data fusion",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    packages=["bayesimp", "bayesimp.tests"],
    package_data={"bayesimp": ["data/*.csv"]},
    entry_points="""
        [console_scripts]
        bayesimp=bayesimp.cli:main
      """,
    install_requires=["numpy>=1.17", "scipy>=1.4", "setuptools"],
    extras_require={"test": ["pytest"]},
    python_requires=">=3.8",
    zip_safe=False,
)
