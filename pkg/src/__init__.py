"""Source package for the cardiora ECG pipeline."""
