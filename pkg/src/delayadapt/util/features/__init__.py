from .main import (FeatureRow, FeatureTable, Category, MANIFEST, MANIFEST_VERSION, CSV_COLUMNS,
                   HOUR_MS, hour_floor, hour_of_day, collapse_state, occupancy_time, categorize,
                   waiting_time, stop_delay_label, extract_features)

__all__ = ["FeatureRow","FeatureTable","Category","MANIFEST","MANIFEST_VERSION","CSV_COLUMNS",
           "HOUR_MS","hour_floor","hour_of_day","collapse_state","occupancy_time","categorize",
           "waiting_time","stop_delay_label","extract_features"]
