from hypothesis import settings

settings.register_profile("metareason", deadline=None, max_examples=50, derandomize=True)
settings.load_profile("metareason")
