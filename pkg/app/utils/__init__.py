# CSV and config-file helpers
