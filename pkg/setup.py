from setuptools import setup, find_packages

setup(  name='delay-adapt',
        version='1.0.0',
        author='Sungmin Lee',
        author_email='il.sungminlee@gmail.com',
        description="Vehicle delay estimation at signalized intersections with domain-adapted gradient boosting",
        license="BSD License",
        package_dir = {'':'src'},
        packages=find_packages(where='src'),
        package_data={'delayadapt.conf': ['defaults.yaml']},
        python_requires='>=3.9',
        install_requires=["numpy","scipy","pandas","joblib",
                          "python-dotenv","PyYAML"],
        extras_require={'test': ["pytest"]},
        entry_points={'console_scripts': ['delay-adapt=delayadapt.cli:main']} )
