# Model, filter, inference and experiment services
