import hypothesis

hypothesis.settings.register_profile(
    "suite", deadline=None, max_examples=30,
    suppress_health_check=[hypothesis.HealthCheck.too_slow,
                           hypothesis.HealthCheck.function_scoped_fixture],
)
hypothesis.settings.load_profile("suite")
