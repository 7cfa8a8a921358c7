from .main import MetricsReport, mape, mae, rmse, evaluate

__all__ = ["MetricsReport","mape","mae","rmse","evaluate"]
